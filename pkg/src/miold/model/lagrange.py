"""Mechanical systems from an inertia matrix, a potential and force fields."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from ..expr import ZERO, Expr, as_expr, evaluate, is_zero, to_string
from ..expr.canon import Rat, canon, to_expr
from ..expr.linalg import adjugate, det
from .system import MechanicalSystem, ValidationError

_HALF = Fraction(1, 2)


@dataclass(frozen=True, eq=False)
class LagrangianSpec:
    """``L = 1/2 v^T M(x) v - V(x)`` with forces ``tau0(x) + sum_r tau_r(x) u_r``."""

    M: tuple
    V: Expr
    tau0: tuple
    tau: tuple
    var_names: tuple = ()
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.M)
        object.__setattr__(self, "M", tuple(tuple(as_expr(x) for x in row) for row in self.M))
        object.__setattr__(self, "V", as_expr(self.V))
        tau0 = self.tau0 if self.tau0 else [ZERO] * n
        object.__setattr__(self, "tau0", tuple(as_expr(x) for x in tau0))
        object.__setattr__(self, "tau", tuple(tuple(as_expr(x) for x in col) for col in self.tau))
        if not self.var_names:
            object.__setattr__(self, "var_names", tuple(f"x{i}" for i in range(1, n + 1)))
        if any(len(row) != n for row in self.M):
            raise ValidationError("inertia matrix must be square")
        if len(self.tau0) != n or any(len(col) != n for col in self.tau):
            raise ValidationError("force fields need n components")
        for i in range(n):
            for j in range(i + 1, n):
                if self.M[i][j] is not self.M[j][i] and not is_zero(self.M[i][j] - self.M[j][i]):
                    raise ValidationError(f"inertia matrix not symmetric at ({i + 1},{j + 1})")

    @property
    def n(self) -> int:
        return len(self.M)

    def kinetic_matrix(self, x, params=None) -> np.ndarray:
        params = self.params if params is None else params
        return np.array([[evaluate(e, x, params) for e in row] for row in self.M])

    def energy(self, x, v, params=None) -> float:
        """Total energy ``1/2 v^T M v + V``."""
        params = self.params if params is None else params
        M = self.kinetic_matrix(x, params)
        v = np.asarray(v, dtype=float)
        return 0.5 * float(v @ M @ v) + evaluate(self.V, x, params)

    def check_positive_definite(self, points: Sequence[Sequence[float]] | None = None,
                                samples: int = 8, seed: int = 0):
        """Cholesky factorisation of the evaluated inertia matrix at sample points."""
        if points is None:
            rng = random.Random(seed)
            points = [[rng.uniform(-2.0, 2.0) for _ in range(self.n)] for _ in range(samples)]
        for x in points:
            M = self.kinetic_matrix(x)
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError as exc:
                raise ValidationError(
                    f"inertia matrix is not positive definite at x={list(x)}") from exc


def christoffel_first_kind(M: Sequence[Sequence[Rat]]) -> list:
    """``c[l][j][k] = 1/2 (d_j m_lk + d_k m_lj - d_l m_jk)``."""
    n = len(M)
    dM = [[[M[a][b].diff(c + 1) for c in range(n)] for b in range(n)] for a in range(n)]
    c = [[[None] * n for _ in range(n)] for _ in range(n)]
    for l in range(n):
        for j in range(n):
            for k in range(j, n):
                val = (dM[l][k][j] + dM[l][j][k] - dM[j][k][l]).scale(_HALF)
                c[l][j][k] = c[l][k][j] = val
    return c


def from_lagrangian(L: LagrangianSpec, outputs: Sequence[Expr], name: str = "",
                    check_definite: bool = True) -> MechanicalSystem:
    """Levi-Civita Christoffel symbols, ``e = M^-1 (-dV/dx + tau0)``, ``g_r = M^-1 tau_r``."""
    n = L.n
    if check_definite and L.params:
        L.check_positive_definite()
    M = [[canon(x) for x in row] for row in L.M]
    d = det(M)
    if d.is_zero or is_zero(to_expr(d)):
        raise ValidationError("degenerate metric: det M vanishes identically")
    inv_d = d.inverse()
    adj = adjugate(M)
    c = christoffel_first_kind(M)

    def apply_inverse(vec: Sequence[Rat]) -> list[Rat]:
        out = []
        for i in range(n):
            acc = Rat({}, ())
            for l in range(n):
                if adj[i][l].is_zero or vec[l].is_zero:
                    continue
                acc = acc + adj[i][l] * vec[l]
            out.append(acc * inv_d)
        return out

    Gamma = [[[ZERO] * n for _ in range(n)] for _ in range(n)]
    for j in range(n):
        for k in range(j, n):
            col = apply_inverse([c[l][j][k] for l in range(n)])
            for i in range(n):
                Gamma[i][j][k] = Gamma[i][k][j] = to_expr(col[i])

    V = canon(L.V)
    P = [canon(L.tau0[i]) - V.diff(i + 1) for i in range(n)]
    e = [to_expr(x) for x in apply_inverse(P)]
    g = [[to_expr(x) for x in apply_inverse([canon(t) for t in col])] for col in L.tau]
    return MechanicalSystem(Gamma, e, g, list(outputs), L.var_names, L.params, name)


def describe_lagrangian(L: LagrangianSpec) -> str:
    names = L.var_names
    lines = [f"M[{i + 1}][{j + 1}] = {to_string(L.M[i][j], names)}"
             for i in range(L.n) for j in range(i, L.n)]
    lines.append(f"V = {to_string(L.V, names)}")
    return "\n".join(lines)
