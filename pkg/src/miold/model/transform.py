"""Mechanical diffeomorphisms and feedback acting on mechanical systems.

A transformation is ``x~ = phi(x)``, ``v~ = (dphi/dx) v`` together with the
feedback ``u_r = v^T gamma^r v + alpha^r + sum_s beta^r_s u~_s``.  Feedback
changes the system data by::

    Gamma~^i_jk = Gamma^i_jk - sum_r g_r^i gamma^r_jk
    e~          = e + sum_r g_r alpha^r
    g~_s        = sum_r beta^r_s g_r
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..expr import (
    ZERO, Expr, Var, as_expr, evaluate, free_vars, is_zero, sdiff, simplify, substitute,
)
from ..expr.canon import canon, to_expr
from ..expr.linalg import inverse as rat_inverse
from .system import MechanicalSystem, ValidationError


class NotInvertibleError(ValidationError):
    """The coordinate change could not be inverted symbolically."""


@dataclass(frozen=True, eq=False)
class MechanicalTransformation:
    """``phi`` (None for the identity), feedback ``gamma``, ``alpha``, ``beta``.

    ``beta[r][s]`` is the coefficient of ``u~_s`` in ``u_r``.  ``phi_inverse``
    may be given explicitly as expressions in the new coordinates.
    """

    phi: tuple | None
    gamma: tuple
    alpha: tuple
    beta: tuple
    phi_inverse: tuple | None = None

    def __post_init__(self):
        if self.phi is not None:
            object.__setattr__(self, "phi", tuple(as_expr(p) for p in self.phi))
        if self.phi_inverse is not None:
            object.__setattr__(self, "phi_inverse", tuple(as_expr(p) for p in self.phi_inverse))
        object.__setattr__(self, "gamma", tuple(
            tuple(tuple(as_expr(x) for x in row) for row in mat) for mat in self.gamma))
        object.__setattr__(self, "alpha", tuple(as_expr(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(tuple(as_expr(b) for b in row) for row in self.beta))
        m = len(self.alpha)
        if len(self.gamma) != m or len(self.beta) != m or any(len(r) != m for r in self.beta):
            raise ValidationError("feedback dimensions do not match the number of inputs")
        for r, mat in enumerate(self.gamma):
            n = len(mat)
            for j in range(n):
                for k in range(j + 1, n):
                    if mat[j][k] is not mat[k][j] and not is_zero(mat[j][k] - mat[k][j]):
                        raise ValidationError(f"gamma^{r + 1} is not symmetric")

    @classmethod
    def identity(cls, n: int, m: int) -> "MechanicalTransformation":
        return cls(None, [[[ZERO] * n for _ in range(n)] for _ in range(m)], [ZERO] * m,
                   [[1 if r == s else 0 for s in range(m)] for r in range(m)])

    @classmethod
    def feedback(cls, gamma, alpha, beta) -> "MechanicalTransformation":
        return cls(None, gamma, alpha, beta)

    def check_at(self, x: Sequence[float], params: Mapping[str, float]):
        """Invertibility of ``beta`` and of the Jacobian of ``phi`` at ``x``."""
        B = np.array([[evaluate(b, x, params) for b in row] for row in self.beta], dtype=float)
        if B.size and np.linalg.matrix_rank(B) < len(B):
            raise ValidationError("beta is singular at the analysis point")
        if self.phi is not None:
            J = jacobian_values(self.phi, len(x), x, params)
            if np.linalg.matrix_rank(J) < len(x):
                raise ValidationError("Jacobian of phi is singular at the analysis point")

    def inverse_feedback(self) -> "MechanicalTransformation":
        """Feedback undoing this one (identity ``phi`` only)."""
        if self.phi is not None:
            raise ValidationError("inverse_feedback needs a feedback-only transformation")
        B = [[canon(b) for b in row] for row in self.beta]
        Binv, _ = rat_inverse(B)
        m = len(self.alpha)
        n = len(self.gamma[0]) if self.gamma else 0
        # u~ = Binv (u - v^T gamma v - alpha)
        alpha = [to_expr(-_dot(Binv[s], [canon(a) for a in self.alpha])) for s in range(m)]
        gamma = []
        for s in range(m):
            mat = [[to_expr(-_dot(Binv[s], [canon(self.gamma[r][j][k]) for r in range(m)]))
                    for k in range(n)] for j in range(n)]
            gamma.append(mat)
        beta = [[to_expr(Binv[s][r]) for r in range(m)] for s in range(m)]
        return MechanicalTransformation(None, gamma, alpha, beta)


def _dot(row, vec):
    acc = canon(ZERO)
    for a, b in zip(row, vec):
        if a.is_zero or b.is_zero:
            continue
        acc = acc + a * b
    return acc


def jacobian(phi: Sequence[Expr], n: int) -> list[list[Expr]]:
    return [[sdiff(p, j + 1) for j in range(n)] for p in phi]


def jacobian_values(phi, n, x, params) -> np.ndarray:
    return np.array([[evaluate(d, x, params) for d in row] for row in jacobian(phi, n)])


def apply_feedback(S: MechanicalSystem, T: MechanicalTransformation) -> MechanicalSystem:
    n, m = S.n, S.m
    if len(T.alpha) != m:
        raise ValidationError("feedback has the wrong number of inputs")
    g = [[canon(x) for x in col] for col in S.g]
    Gamma = [[[None] * n for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            for k in range(j, n):
                acc = canon(S.Gamma[i][j][k])
                for r in range(m):
                    if g[r][i].is_zero:
                        continue
                    gam = canon(T.gamma[r][j][k])
                    if not gam.is_zero:
                        acc = acc - g[r][i] * gam
                Gamma[i][j][k] = Gamma[i][k][j] = to_expr(acc)
    e = []
    for i in range(n):
        acc = canon(S.e[i])
        for r in range(m):
            a = canon(T.alpha[r])
            if not a.is_zero and not g[r][i].is_zero:
                acc = acc + g[r][i] * a
        e.append(to_expr(acc))
    new_g = []
    for s in range(m):
        col = []
        for i in range(n):
            acc = canon(ZERO)
            for r in range(m):
                b = canon(T.beta[r][s])
                if not b.is_zero and not g[r][i].is_zero:
                    acc = acc + b * g[r][i]
            col.append(to_expr(acc))
        new_g.append(col)
    return MechanicalSystem(Gamma, e, new_g, S.h, S.var_names, S.params, S.name, check=False)


def invert_map(phi: Sequence[Expr], n: int) -> list[Expr]:
    """Solve ``x~ = phi(x)`` for ``x`` when each step is affine in one unknown.

    Components are used in any order: repeatedly pick a component that,
    after substituting the unknowns already solved, depends on exactly one
    remaining unknown and is affine in it.  Maps with a constant Jacobian are
    solved in one step.
    """
    new_vars = [Var(i + 1) for i in range(n)]
    J = [[canon(d) for d in row] for row in jacobian(phi, n)]
    if all(d.constant_value() is not None for row in J for d in row):
        Jinv, detJ = rat_inverse(J)
        if detJ.is_zero:
            raise NotInvertibleError("phi is affine with a singular matrix")
        shift = [canon(substitute(p, {i + 1: ZERO for i in range(n)})) for p in phi]
        rhs = [canon(new_vars[a]) - shift[a] for a in range(n)]
        return [to_expr(_dot(Jinv[i], rhs)) for i in range(n)]
    # work in a scratch namespace: original x^i are Var(n+i)
    shifted = [substitute(p, {i + 1: Var(n + i + 1) for i in range(n)}) for p in phi]
    solved: dict[int, Expr] = {}
    used: set[int] = set()
    progress = True
    while progress and len(solved) < n:
        progress = False
        for a, comp in enumerate(shifted):
            if a in used:
                continue
            expr = simplify(substitute(comp, {n + i + 1: s for i, s in solved.items()}))
            unknown = sorted(i for i in free_vars(expr) if i > n)
            if len(unknown) != 1:
                continue
            var = unknown[0]
            coef = sdiff(expr, var)
            if var in free_vars(coef) or is_zero(coef):
                continue
            rest = simplify(substitute(expr, {var: ZERO}))
            solved[var - n - 1] = simplify((new_vars[a] - rest) / coef)
            used.add(a)
            progress = True
    if len(solved) < n:
        raise NotInvertibleError(
            "phi is not symbolically invertible by triangular solving; provide inverse explicitly")
    return [solved[i] for i in range(n)]


def pushforward(S: MechanicalSystem, phi: Sequence[Expr], phi_inverse: Sequence[Expr] | None = None,
                var_names: Sequence[str] | None = None) -> MechanicalSystem:
    """Express ``S`` in the coordinates ``x~ = phi(x)``."""
    n = S.n
    if len(phi) != n:
        raise ValidationError("phi needs n components")
    psi = list(phi_inverse) if phi_inverse is not None else invert_map(phi, n)
    back = {i + 1: psi[i] for i in range(n)}
    J = [[canon(d) for d in row] for row in jacobian(phi, n)]
    Jinv, detJ = rat_inverse(J)
    if detJ.is_zero:
        raise ValidationError("Jacobian of phi is identically singular")
    frame = pushforward_frame(S, phi, J, Jinv)
    names = list(var_names) if var_names else [f"{s}t" for s in S.var_names]

    def in_new(r) -> Expr:
        return simplify(substitute(to_expr(r), back))

    Gamma = [[[in_new(frame["Gamma"][a][b][c]) for c in range(n)] for b in range(n)]
             for a in range(n)]
    e = [in_new(x) for x in frame["e"]]
    g = [[in_new(x) for x in col] for col in frame["g"]]
    h = [simplify(substitute(x, back)) for x in S.h]
    return MechanicalSystem(Gamma, e, g, h, names, S.params, S.name, check=False)


def pushforward_frame(S: MechanicalSystem, phi: Sequence[Expr], J=None, Jinv=None) -> dict:
    """Transformed data as functions of the *original* coordinates.

    ``Gamma~^a_bc = (J^a_i Gamma^i_jk - d^2 phi^a / dx^j dx^k) Jinv^j_b Jinv^k_c``,
    ``e~ = J e`` and ``g~_r = J g_r``; no inverse of ``phi`` is needed.
    """
    n = S.n
    if J is None:
        J = [[canon(d) for d in row] for row in jacobian(phi, n)]
    if Jinv is None:
        Jinv, _ = rat_inverse(J)
    Gam = [[[canon(S.Gamma[i][j][k]) for k in range(n)] for j in range(n)] for i in range(n)]
    zero = canon(ZERO)
    # T^a_jk = J^a_i Gamma^i_jk - d^2 phi^a
    T = [[[None] * n for _ in range(n)] for _ in range(n)]
    for a in range(n):
        for j in range(n):
            for k in range(j, n):
                acc = J[a][k].diff(j + 1)
                acc = -acc
                for i in range(n):
                    if not J[a][i].is_zero and not Gam[i][j][k].is_zero:
                        acc = acc + J[a][i] * Gam[i][j][k]
                T[a][j][k] = T[a][k][j] = acc
    Gt = [[[zero] * n for _ in range(n)] for _ in range(n)]
    for a in range(n):
        # (Jinv^T T^a Jinv)_bc
        left = [[zero] * n for _ in range(n)]  # left[b][k] = sum_j Jinv[j][b] T[a][j][k]
        for b in range(n):
            for k in range(n):
                acc = zero
                for j in range(n):
                    if not Jinv[j][b].is_zero and not T[a][j][k].is_zero:
                        acc = acc + Jinv[j][b] * T[a][j][k]
                left[b][k] = acc
        for b in range(n):
            for c in range(b, n):
                acc = zero
                for k in range(n):
                    if not left[b][k].is_zero and not Jinv[k][c].is_zero:
                        acc = acc + left[b][k] * Jinv[k][c]
                Gt[a][b][c] = Gt[a][c][b] = acc
    e = [canon(x) for x in S.e]
    et = [_dot(J[a], e) for a in range(n)]
    gt = [[_dot(J[a], [canon(x) for x in col]) for a in range(n)] for col in S.g]
    return {"Gamma": Gt, "e": et, "g": gt, "J": J, "Jinv": Jinv}


def apply_transformation(S: MechanicalSystem, T: MechanicalTransformation,
                         point: Sequence[float] | None = None,
                         var_names: Sequence[str] | None = None) -> MechanicalSystem:
    """Feedback first, then the coordinate change (if ``T.phi`` is given)."""
    if point is not None:
        T.check_at(point, S.params)
    fb = apply_feedback(S, T)
    if T.phi is None:
        return fb
    return pushforward(fb, T.phi, T.phi_inverse, var_names)
