"""Construction of the linearizing and decoupling mechanical transformation.

Given outputs with half-degrees ``nu`` that satisfy MR1/MR2, the new
configuration coordinates are the Lie chains ``L_e^q h_l`` (``q < nu_l``)
completed by some original coordinates, and the feedback

    u = D(x)^-1 (-C(x, v) - A(x) + u~)

with ``A_l = L_e^nu_l h_l``, ``D`` the decoupling matrix and
``C_l = v^T (nabla d L_e^(nu_l - 1) h_l) v`` turns every chain into a string
of ``2 nu_l`` integrators driven by ``u~_l``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import DEFAULT_SEED, ONE, ZERO, Expr, Var, evaluate, is_zero, parse, simplify, to_string
from .expr.canon import ZERO as RZERO, canon, to_expr
from .expr.linalg import inverse as rat_inverse
from .geometry import HalfDegreeReport, Point, _nabla_d, _christoffel, half_degree
from .model.system import MechanicalSystem, quadratic_form, velocity_name
from .model.transform import (
    MechanicalTransformation, NotInvertibleError, apply_feedback, invert_map, jacobian,
    pushforward, pushforward_frame,
)


class SynthesisError(ValueError):
    """The conditions for the construction fail, or the construction is singular."""


@dataclass
class FeedbackLaw:
    system: MechanicalSystem
    nu: list
    A: list                 # m expressions
    Dmat: list              # m x m
    Dinv: list              # m x m
    Cmat: list              # m symmetric n x n coefficient matrices
    phi: list               # n expressions
    Jphi: list              # n x n
    mu_offsets: list        # mu_0 = 0, ..., mu_m = mu
    completion: list        # expressions appended after the chains
    gamma: list
    alpha: list
    beta: list

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def mu(self) -> int:
        return self.mu_offsets[-1]

    def chain_indices(self, l: int) -> range:
        """0-based coordinate indices of chain ``l`` (0-based)."""
        return range(self.mu_offsets[l], self.mu_offsets[l + 1])

    def C(self) -> list[Expr]:
        """Rows ``C_l(x, v)`` as expressions in ``(x, v)`` (velocities are ``x^(n+i)``)."""
        v = [Var(self.n + i + 1) for i in range(self.n)]
        return [simplify(quadratic_form(mat, v)) for mat in self.Cmat]

    def transformation(self) -> MechanicalTransformation:
        return MechanicalTransformation(self.phi, self.gamma, self.alpha, self.beta)

    def feedback_only(self) -> MechanicalTransformation:
        return MechanicalTransformation(None, self.gamma, self.alpha, self.beta)

    def corrupted(self, drop_gamma: bool = True) -> "FeedbackLaw":
        """Copy with the velocity-quadratic compensation removed (negative control)."""
        n = self.n
        zero_mat = [[ZERO] * n for _ in range(n)]
        return FeedbackLaw(self.system, self.nu, self.A, self.Dmat, self.Dinv,
                           [zero_mat for _ in self.Cmat] if drop_gamma else self.Cmat,
                           self.phi, self.Jphi, self.mu_offsets, self.completion,
                           [zero_mat for _ in self.gamma] if drop_gamma else self.gamma,
                           self.alpha, self.beta)

    def to_dict(self) -> dict:
        names = self.system.var_names
        full = list(names) + [velocity_name(s) for s in names]
        return {
            "nu": self.nu,
            "mu_offsets": self.mu_offsets,
            "phi": [to_string(p, names) for p in self.phi],
            "A": [to_string(a, names) for a in self.A],
            "D": [[to_string(d, names) for d in row] for row in self.Dmat],
            "C": [to_string(c, full) for c in self.C()],
            "completion": [to_string(c, names) for c in self.completion],
        }

    def controller_card(self) -> str:
        """Plain-text controller; every right-hand side parses with the expression grammar."""
        names = self.system.var_names
        full = list(names) + [velocity_name(s) for s in names]
        lines = [f"# controller for {self.system.name or 'system'}",
                 "# u = inverse(D) * (-C - A + ut)",
                 "vars = " + " ".join(full),
                 "params = " + " ".join(f"{k}={v!r}" for k, v in sorted(self.system.params.items()))]
        for l, a in enumerate(self.A):
            lines.append(f"A[{l + 1}] = {to_string(a, names)}")
        for l, row in enumerate(self.Dmat):
            for r, d in enumerate(row):
                lines.append(f"D[{l + 1}][{r + 1}] = {to_string(d, names)}")
        for l, c in enumerate(self.C()):
            lines.append(f"C[{l + 1}] = {to_string(c, full)}")
        for i, p in enumerate(self.phi):
            lines.append(f"phi[{i + 1}] = {to_string(p, names)}")
        return "\n".join(lines) + "\n"


def read_controller_card(text: str) -> dict:
    """Parse a controller card back into expressions keyed by their labels."""
    names: list[str] = []
    out: dict = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rhs = line.partition("=")
        key, rhs = key.strip(), rhs.strip()
        if key == "vars":
            names = rhs.split()
        elif key == "params":
            out["params"] = {k: float(v) for k, v in (p.split("=") for p in rhs.split())}
        else:
            out[key] = parse(rhs, names)
    return out


@dataclass
class NormalFormDescription:
    chain_lengths: list
    observable_dim: int
    unobserved_dim: int
    checks: list = field(default_factory=list)     # (label, verdict kind)
    residual: dict = field(default_factory=dict)   # unobserved block, printed
    certified: bool = True

    @property
    def holds(self) -> bool:
        return all(kind != "NonZero" for _, kind in self.checks)

    def to_dict(self) -> dict:
        return {
            "chain_lengths": self.chain_lengths,
            "observable_dim": self.observable_dim,
            "unobserved_dim": self.unobserved_dim,
            "normal_form_holds": self.holds,
            "certified": self.certified,
            "failed_checks": [label for label, kind in self.checks if kind == "NonZero"],
            "unobserved_block": self.residual,
        }


def _eval_matrix(rows, x, params) -> np.ndarray:
    return np.array([[evaluate(e, x, params) for e in row] for row in rows], dtype=float)


def choose_completion(chain_exprs: Sequence[Expr], n: int, x, params) -> list[int]:
    """Coordinate indices (0-based) completing the chains with the best-conditioned Jacobian."""
    k = n - len(chain_exprs)
    if k == 0:
        return []
    top = _eval_matrix(jacobian(chain_exprs, n), x, params)
    best, best_idx = -1.0, None
    for subset in itertools.combinations(range(n), k):
        rows = np.zeros((k, n))
        for r, i in enumerate(subset):
            rows[r, i] = 1.0
        J = np.vstack([top, rows])
        smin = np.linalg.svd(J, compute_uv=False)[-1]
        if smin > best * (1 + 1e-12):
            best, best_idx = smin, list(subset)
    return best_idx


def synthesize(S: MechanicalSystem, report: HalfDegreeReport | None, point,
               completion: Sequence[Expr] | None = None, seed: int = DEFAULT_SEED,
               verify: bool = True) -> tuple[FeedbackLaw, NormalFormDescription]:
    """Build ``phi`` and the feedback; verify the resulting normal form symbolically."""
    if not isinstance(point, Point):
        point = Point.for_system(S, point)
    if report is None:
        report = half_degree(S, point, seed)
    if not report.mr1:
        raise SynthesisError(f"MR1 violated: {report.mr1_reason}")
    if not report.mr2_holds:
        raise SynthesisError("MR2 violated: some connection Hessian of the Lie chain is non-zero")
    n, m = S.n, S.m
    params = dict(S.params)
    params.update(point.params)
    nu = list(report.nu)
    offsets = [0]
    for v in nu:
        offsets.append(offsets[-1] + v)
    mu = offsets[-1]
    if mu > n:
        raise SynthesisError(f"sum of half-degrees {mu} exceeds n = {n}")
    chain_exprs = [report.chains[l][q] for l in range(m) for q in range(nu[l])]
    if completion is None:
        idx = choose_completion(chain_exprs, n, point.x, params)
        comp = [Var(i + 1) for i in idx]
    else:
        comp = list(completion)
        if len(comp) != n - mu:
            raise SynthesisError(f"completion needs {n - mu} functions, got {len(comp)}")
    phi = chain_exprs + comp
    J = jacobian(phi, n)
    Jval = _eval_matrix(J, point.x, params)
    sv = np.linalg.svd(Jval, compute_uv=False)
    if sv[-1] <= 1e-8 * sv[0]:
        raise SynthesisError(f"Jacobian of phi is singular at the point (sigma_min = {sv[-1]:.3g})")

    A = [canon(report.chains[l][nu[l]]) for l in range(m)]
    Dr = [[canon(d) for d in row] for row in report.D]
    Dval = _eval_matrix(report.D, point.x, params)
    dsv = np.linalg.svd(Dval, compute_uv=False)
    if dsv[-1] <= 1e-8 * dsv[0]:
        raise SynthesisError(f"D is singular at the point (sigma_min = {dsv[-1]:.3g})")
    Dinv, _ = rat_inverse(Dr)
    gam = _christoffel(S)
    Cmat = [_nabla_d(gam, canon(report.chains[l][nu[l] - 1]), n) for l in range(m)]

    def mix(values_per_l):
        return [sum_rats(Dinv[r][l] * values_per_l[l] for l in range(m)
                         if not Dinv[r][l].is_zero and not values_per_l[l].is_zero)
                for r in range(m)]

    alpha = [to_expr(-a) for a in mix(A)]
    gamma = []
    for r in range(m):
        mat = [[None] * n for _ in range(n)]
        for j in range(n):
            for k in range(j, n):
                acc = sum_rats(Dinv[r][l] * Cmat[l][j][k] for l in range(m)
                               if not Dinv[r][l].is_zero and not Cmat[l][j][k].is_zero)
                mat[j][k] = mat[k][j] = to_expr(-acc)
        gamma.append(mat)
    beta = [[to_expr(Dinv[r][l]) for l in range(m)] for r in range(m)]
    law = FeedbackLaw(
        system=S, nu=nu, A=[to_expr(a) for a in A], Dmat=[list(row) for row in report.D],
        Dinv=[[to_expr(x) for x in row] for row in Dinv],
        Cmat=[[[to_expr(x) for x in row] for row in mat] for mat in Cmat],
        phi=phi, Jphi=J, mu_offsets=offsets, completion=comp,
        gamma=gamma, alpha=alpha, beta=beta)
    nf = NormalFormDescription([2 * v for v in nu], 2 * mu, 2 * (n - mu))
    if verify:
        closed = closed_loop_system(S, law)
        nf = closed.normal_form(seed)
    return law, nf


def sum_rats(items):
    acc = RZERO
    for x in items:
        acc = acc + x
    return acc


@dataclass
class ClosedLoopSystem:
    """The closed loop expressed in the new frame, as functions of the original ``x``.

    ``Gamma[a][b][c]``, ``e[a]``, ``g[s][a]`` are the data of the transformed
    system evaluated at ``x~ = phi(x)``.  ``to_system()`` rewrites them in the
    new coordinates when ``phi`` can be inverted symbolically.
    """

    law: FeedbackLaw
    Gamma: list
    e: list
    g: list

    def normal_form(self, seed: int = DEFAULT_SEED) -> NormalFormDescription:
        law = self.law
        n, m, mu = law.n, law.m, law.mu
        checks = []
        certified = True

        def record(label, expr):
            nonlocal certified
            v = is_zero(expr, seed=seed, n_vars=n)
            checks.append((label, v.kind))
            if v and not v.certified:
                certified = False

        for l in range(m):
            idx = list(law.chain_indices(l))
            for i in idx:
                for j in range(n):
                    for k in range(j, n):
                        record(f"Gamma~^{i + 1}_{j + 1}{k + 1}", self.Gamma[i][j][k])
                last = i == idx[-1]
                target = ZERO if last else law.phi[i + 1]
                record(f"e~^{i + 1} - {'0' if last else f'x~{i + 2}'}", self.e[i] - target)
                for s in range(m):
                    want = 1 if (last and s == l) else 0
                    record(f"g~_{s + 1}^{i + 1} - {want}", self.g[s][i] - want)
        names = law.system.var_names
        residual = {}
        for i in range(mu, n):
            residual[f"e~^{i + 1}"] = to_string(self.e[i], names)
            for s in range(m):
                residual[f"g~_{s + 1}^{i + 1}"] = to_string(self.g[s][i], names)
            for j in range(n):
                for k in range(j, n):
                    if self.Gamma[i][j][k] is not ZERO:
                        residual[f"Gamma~^{i + 1}_{j + 1}{k + 1}"] = to_string(self.Gamma[i][j][k], names)
        return NormalFormDescription([2 * v for v in law.nu], 2 * mu, 2 * (n - mu), checks,
                                     residual, certified)

    def to_system(self, phi_inverse: Sequence[Expr] | None = None) -> MechanicalSystem:
        law = self.law
        fb = apply_feedback(law.system, law.feedback_only())
        names = [f"{s}t" for s in law.system.var_names]
        return pushforward(fb, law.phi, phi_inverse, names)

    def has_inverse(self) -> bool:
        try:
            invert_map(self.law.phi, self.law.n)
        except NotInvertibleError:
            return False
        return True


def closed_loop_system(S: MechanicalSystem, law: FeedbackLaw) -> ClosedLoopSystem:
    """Feedback of ``law`` followed by the change of frame ``phi``."""
    fb = apply_feedback(S, law.feedback_only())
    frame = pushforward_frame(fb, law.phi)
    return ClosedLoopSystem(
        law,
        [[[to_expr(x) for x in row] for row in plane] for plane in frame["Gamma"]],
        [to_expr(x) for x in frame["e"]],
        [[to_expr(x) for x in col] for col in frame["g"]],
    )


def flatness_remark(law: FeedbackLaw) -> dict:
    """Differential weight of the outputs as a flat output (full linearization only)."""
    n, m = law.n, law.m
    if law.mu != n:
        return {"applicable": False,
                "statement": f"not applicable: the chains cover {law.mu} of {n} configuration "
                             "coordinates, so the outputs are not a flat output"}
    return {
        "applicable": True,
        "differential_weight": 2 * n + m,
        "statement": (f"the outputs form a flat output of differential weight 2n+m = {2 * n + m}; "
                      "configurations depend only on even time derivatives of the outputs and "
                      "velocities are linear in the odd ones"),
    }


def normal_form_system(law: FeedbackLaw) -> MechanicalSystem:
    """The closed loop in the new coordinates, as a system driven by ``u~``.

    With full linearization this is the bare integrator chain and needs no
    inverse of ``phi``; otherwise the unobserved block comes from pushing the
    feedback system forward, which needs ``phi`` to be invertible.
    """
    n, m = law.n, law.m
    names = [f"{s}t" for s in law.system.var_names]
    if law.mu < n:
        return closed_loop_system(law.system, law).to_system()
    Gamma = [[[ZERO] * n for _ in range(n)] for _ in range(n)]
    e = [ZERO] * n
    g = [[ZERO] * n for _ in range(m)]
    h = []
    for l in range(m):
        idx = list(law.chain_indices(l))
        h.append(Var(idx[0] + 1))
        for i in idx[:-1]:
            e[i] = Var(i + 2)
        g[l][idx[-1]] = ONE
    return MechanicalSystem(Gamma, e, g, h, names, law.system.params,
                            f"{law.system.name} normal form", check=False)
