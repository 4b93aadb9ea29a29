"""Lie and covariant derivatives, relative (half-)degrees, decoupling matrices.

Zero claims are decided globally with ``is_zero`` (exact canonical forms,
sampling as a fallback); ranks are decided at the analysis point with the
singular value threshold ``RANK_TOL * sigma_max``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import (
    DEFAULT_SEED, PROVEN_ZERO, DomainError, Expr, evaluate, is_zero, to_string,
)
from .expr.canon import ZERO as RZERO, Rat, canon, to_expr
from .model.system import MechanicalSystem, ValidationError, tangent_lift

RANK_TOL = 1e-8
GENERIC_SAMPLES = 16


class EvaluationError(ValueError):
    """An expression could not be evaluated at the analysis point."""


@dataclass(frozen=True)
class Point:
    """Analysis point: configuration ``x``, optional velocity ``v``, parameter values."""

    x: tuple
    v: tuple | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(a) for a in self.x))
        if self.v is not None:
            object.__setattr__(self, "v", tuple(float(a) for a in self.v))
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def for_system(cls, S: MechanicalSystem, x, v=None) -> "Point":
        if len(x) != S.n or (v is not None and len(v) != S.n):
            raise ValidationError(f"point dimension does not match n={S.n}")
        return cls(x, v, S.params)

    @property
    def state(self) -> tuple:
        v = self.v if self.v is not None else (0.0,) * len(self.x)
        return self.x + v


# ------------------------------------------------------------ derivatives


def _lie(f: Sequence[Rat], phi: Rat) -> Rat:
    acc = RZERO
    for i, fi in enumerate(f):
        if fi.is_zero:
            continue
        d = phi.diff(i + 1)
        if not d.is_zero:
            acc = acc + fi * d
    return acc


def lie_derivative(f: Sequence[Expr], phi: Expr) -> Expr:
    """``L_f phi = sum_i f^i dphi/dx^i``, simplified."""
    return to_expr(_lie([canon(x) for x in f], canon(phi)))


def _christoffel(S: MechanicalSystem):
    return [[[canon(S.Gamma[i][j][k]) for k in range(S.n)] for j in range(S.n)]
            for i in range(S.n)]


def _cov_oneform(gam, omega: Sequence[Rat]) -> list[list[Rat]]:
    n = len(omega)
    out = [[None] * n for _ in range(n)]
    for j in range(n):
        for k in range(n):
            acc = omega[j].diff(k + 1)
            for i in range(n):
                if not gam[i][j][k].is_zero and not omega[i].is_zero:
                    acc = acc - gam[i][j][k] * omega[i]
            out[j][k] = acc
    return out


def covariant_derivative_oneform(S: MechanicalSystem, omega: Sequence[Expr]) -> list[list[Expr]]:
    """``(nabla omega)_{jk} = d omega_j / dx^k - Gamma^i_jk omega_i``."""
    if len(omega) != S.n:
        raise ValidationError("one-form needs n components")
    mat = _cov_oneform(_christoffel(S), [canon(w) for w in omega])
    return [[to_expr(x) for x in row] for row in mat]


def _nabla_d(gam, phi: Rat, n: int) -> list[list[Rat]]:
    grad = [phi.diff(i + 1) for i in range(n)]
    out = [[None] * n for _ in range(n)]
    for j in range(n):
        for k in range(j, n):
            acc = grad[j].diff(k + 1)
            for i in range(n):
                if not gam[i][j][k].is_zero and not grad[i].is_zero:
                    acc = acc - gam[i][j][k] * grad[i]
            out[j][k] = out[k][j] = acc
    return out


def nabla_d(S: MechanicalSystem, phi: Expr) -> list[list[Expr]]:
    """Connection Hessian ``d^2 phi/dx^j dx^k - Gamma^i_jk dphi/dx^i``."""
    mat = _nabla_d(_christoffel(S), canon(phi), S.n)
    return [[to_expr(x) for x in row] for row in mat]


def differential(phi: Expr, n: int) -> list[Expr]:
    r = canon(phi)
    return [to_expr(r.diff(i + 1)) for i in range(n)]


# ----------------------------------------------------------------- reports


@dataclass
class ZeroCheck:
    label: str
    expr: Expr
    verdict: object

    @property
    def zero(self) -> bool:
        return bool(self.verdict)


@dataclass
class MR2Entry:
    output: int          # 1-based
    q: int
    zero: bool
    certified: bool
    residuals: list      # (j, k, Expr) of non-zero entries, 1-based indices


@dataclass
class HalfDegreeReport:
    nu: list
    D: list
    D_value: np.ndarray | None
    singular_values: list
    rank: int
    mr1: bool
    mr2: list
    chains: list             # chains[l][q] = L_e^q h_l  (q = 0..nu_l)
    checks: list
    certified: bool
    var_names: tuple
    point: Point
    warnings: list = field(default_factory=list)
    mr1_reason: str = ""

    @property
    def m(self) -> int:
        return len(self.nu)

    @property
    def mr2_holds(self) -> bool:
        return all(e.zero for e in self.mr2)

    @property
    def defined(self) -> bool:
        return all(v is not None for v in self.nu)

    @property
    def mu(self) -> int | None:
        return sum(self.nu) if self.defined else None

    @property
    def solvable(self) -> bool:
        return self.mr1 and self.mr2_holds

    def witness(self) -> float | None:
        return min(self.singular_values) if self.singular_values else None

    def to_dict(self) -> dict:
        names = self.var_names
        return {
            "nu": [v if v is not None else "undefined" for v in self.nu],
            "D": [[to_string(x, names) if x is not None else None for x in row] for row in self.D],
            "D_at_point": None if self.D_value is None else self.D_value.tolist(),
            "rank_at_point": self.rank,
            "singular_values": self.singular_values,
            "MR1": self.mr1,
            "MR1_reason": self.mr1_reason,
            "MR2": [{"output": e.output, "q": e.q, "holds": e.zero, "certified": e.certified,
                     "residuals": [{"j": j, "k": k, "expr": to_string(x, names)}
                                   for j, k, x in e.residuals]}
                    for e in self.mr2],
            "MR2_holds": self.mr2_holds,
            "solvable": self.solvable,
            "certified": self.certified,
            "lie_chains": [[to_string(x, names) for x in chain] for chain in self.chains],
            "warnings": self.warnings,
        }

    def to_text(self) -> str:
        names = self.var_names
        nu = ", ".join(str(v) if v is not None else "undefined" for v in self.nu)
        lines = [f"relative half-degree nu = ({nu})"]
        for l, row in enumerate(self.D):
            for r, x in enumerate(row):
                if x is not None:
                    lines.append(f"  D[{l + 1}][{r + 1}] = {to_string(x, names)}")
        sv = ", ".join(f"{s:.3g}" for s in self.singular_values)
        lines.append(f"rank D at point = {self.rank} (singular values: {sv})")
        lines.append(f"MR1: {'holds' if self.mr1 else 'violated'}"
                     + (f" ({self.mr1_reason})" if self.mr1_reason else ""))
        if not self.mr2:
            lines.append("MR2: vacuous")
        for e in self.mr2:
            status = "holds" if e.zero else "violated"
            cert = "" if e.certified or not e.zero else " (numerical)"
            lines.append(f"MR2 for h_{e.output}, q = {e.q}: {status}{cert}")
            for j, k, x in e.residuals[:6]:
                lines.append(f"    nabla d[{j}][{k}] = {to_string(x, names)}")
        lines.append(f"certified: {'yes' if self.certified else 'no (some zero claims are numerical)'}")
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def _values(exprs, x, params) -> np.ndarray:
    try:
        return np.array([[evaluate(e, x, params) for e in row] for row in exprs], dtype=float)
    except (DomainError, KeyError, IndexError) as exc:
        raise EvaluationError(f"cannot evaluate at x={list(x)}: {exc}") from exc


def _rank(mat: np.ndarray) -> tuple[int, list]:
    if mat.size == 0:
        return 0, []
    sv = np.linalg.svd(mat, compute_uv=False)
    if not np.all(np.isfinite(sv)):
        return 0, [float(s) for s in sv]
    top = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > RANK_TOL * top)) if top > 0 else 0
    return rank, [float(s) for s in sv]


def _escalate(h: Sequence[Rat], drift: Sequence[Rat], controls: Sequence[Sequence[Rat]],
              cap: int, seed: int, n_vars: int, label: str):
    """Shared escalation for relative degrees.  Returns (degrees, chains, D rows, checks)."""
    degrees, chains, rows, checks = [], [], [], []
    for l, hl in enumerate(h):
        chain = [hl]
        degree = None
        row = None
        for q in range(cap):
            entries = [_lie(g, chain[q]) for g in controls]
            nonzero = False
            for r, ent in enumerate(entries):
                v = is_zero(to_expr(ent), seed=seed, n_vars=n_vars)
                checks.append(ZeroCheck(f"{label}_{{g{r + 1}}} L^{q} h{l + 1}", to_expr(ent), v))
                if not v:
                    nonzero = True
            if nonzero:
                degree = q + 1
                row = [to_expr(ent) for ent in entries]
                break
            chain.append(_lie(drift, chain[q]))
        degrees.append(degree)
        chains.append(chain)
        rows.append(row)
    return degrees, chains, rows, checks


def half_degree(S: MechanicalSystem, point: Point | Sequence[float] | None = None,
                seed: int = DEFAULT_SEED, generic_check: bool = True) -> HalfDegreeReport:
    """Vector relative half-degree, decoupling matrix ``D`` and the MR1/MR2 verdicts."""
    if point is None:
        raise ValidationError("an analysis point is required")
    if not isinstance(point, Point):
        point = Point.for_system(S, point)
    n, m = S.n, S.m
    params = dict(S.params)
    params.update(point.params)
    e = [canon(x) for x in S.e]
    g = [[canon(x) for x in col] for col in S.g]
    h = [canon(x) for x in S.h]
    nu, chains, rows, checks = _escalate(h, e, g, 2 * n, seed, n, "L")
    for l in range(m):
        if nu[l] is not None:
            chains[l].append(_lie(e, chains[l][-1]))  # L_e^nu h, used by the feedback
    warnings = []
    D = [row if row is not None else [None] * m for row in rows]
    D_value = None
    sv: list = []
    rank = 0
    reason = ""
    if all(v is not None for v in nu):
        D_value = _values(D, point.x, params)
        rank, sv = _rank(D_value)
        mr1 = rank == m
        if not mr1:
            reason = f"D is rank deficient at the point (smallest singular value {sv[-1]:.3g})"
        if generic_check:
            ranks = _generic_ranks(D, n, params, seed)
            if len(set(ranks)) > 1:
                warnings.append(f"rank of D varies over random points {sorted(set(ranks))}: "
                                "the point may be near a singular locus")
    else:
        mr1 = False
        undefined = [l + 1 for l, v in enumerate(nu) if v is None]
        reason = f"relative half-degree undefined for outputs {undefined} (cap q < {2 * n})"

    gam = _christoffel(S)
    mr2 = []
    for l in range(m):
        if nu[l] is None:
            continue
        for q in range(nu[l] - 1):
            mat = _nabla_d(gam, chains[l][q], n)
            residuals = []
            certified = True
            for j in range(n):
                for k in range(j, n):
                    expr = to_expr(mat[j][k])
                    v = is_zero(expr, seed=seed, n_vars=n)
                    checks.append(ZeroCheck(f"nabla d L^{q} h{l + 1} [{j + 1}{k + 1}]", expr, v))
                    if not v:
                        residuals.append((j + 1, k + 1, expr))
                    elif not v.certified:
                        certified = False
            mr2.append(MR2Entry(l + 1, q, not residuals, certified, residuals))
    certified = all(c.verdict.kind == PROVEN_ZERO for c in checks if c.zero)
    return HalfDegreeReport(
        nu=nu, D=D, D_value=D_value, singular_values=sv, rank=rank, mr1=mr1, mr2=mr2,
        chains=[[to_expr(c) for c in chain] for chain in chains], checks=checks,
        certified=certified, var_names=S.var_names, point=point, warnings=warnings,
        mr1_reason=reason)


def _generic_ranks(D, n, params, seed) -> list[int]:
    rng = random.Random(f"generic:{seed}")
    ranks = []
    for _ in range(GENERIC_SAMPLES):
        x = [rng.uniform(-2.0, 2.0) for _ in range(n)]
        try:
            val = _values(D, x, params)
        except EvaluationError:
            continue
        ranks.append(_rank(val)[0])
    return ranks


@dataclass
class RelativeDegreeReport:
    rho: list
    D: list
    D_value: np.ndarray | None
    rank: int
    singular_values: list
    checks: list
    var_names: tuple
    certified: bool

    def to_dict(self) -> dict:
        return {
            "rho": [r if r is not None else "undefined" for r in self.rho],
            "D": [[to_string(x, self.var_names) if x is not None else None for x in row]
                  for row in self.D],
            "rank_at_point": self.rank,
            "singular_values": self.singular_values,
            "certified": self.certified,
        }


def full_relative_degree(S: MechanicalSystem, point: Point, seed: int = DEFAULT_SEED
                         ) -> RelativeDegreeReport:
    """Relative degree of the first-order system on the tangent bundle."""
    if point.v is None:
        raise ValidationError("the relative degree on the tangent bundle needs a velocity")
    n, m = S.n, S.m
    F, G, names = tangent_lift(S)
    Fr = [canon(x) for x in F]
    Gr = [[canon(x) for x in col] for col in G]
    h = [canon(x) for x in S.h]
    rho, _chains, rows, checks = _escalate(h, Fr, Gr, 4 * n + 2, seed, 2 * n, "L_G")
    D = [row if row is not None else [None] * m for row in rows]
    D_value, rank, sv = None, 0, []
    params = dict(S.params)
    params.update(point.params)
    if all(r is not None for r in rho):
        D_value = _values(D, point.state, params)
        rank, sv = _rank(D_value)
    certified = all(c.verdict.kind == PROVEN_ZERO for c in checks if c.zero)
    return RelativeDegreeReport(rho, D, D_value, rank, sv, checks, tuple(names), certified)


@dataclass
class MFVerdict:
    linearizable: bool
    report: HalfDegreeReport
    reason: str

    def to_dict(self) -> dict:
        return {"linearizable": self.linearizable, "reason": self.reason,
                "report": self.report.to_dict()}


def check_mf_linearizable(S: MechanicalSystem, candidates: Sequence[Expr], point,
                          seed: int = DEFAULT_SEED) -> MFVerdict:
    """Do the candidate outputs fully linearize the system by mechanical transformations?"""
    cand = S.with_outputs(list(candidates))
    rep = half_degree(cand, point, seed)
    if not rep.mr1:
        return MFVerdict(False, rep, f"MR1 violated: {rep.mr1_reason}")
    if not rep.mr2_holds:
        return MFVerdict(False, rep, "MR2 violated: a connection Hessian is non-zero")
    if rep.mu != S.n:
        return MFVerdict(False, rep, f"sum of half-degrees is {rep.mu}, not n = {S.n}")
    return MFVerdict(True, rep, f"MR1, MR2 hold and sum of half-degrees = n = {S.n}")


def finite_difference_check(f, x: Sequence[float], step: float = 1e-6):
    """Central differences of a scalar function; used by oracle tests and diagnostics."""
    grad = []
    for i in range(len(x)):
        xp = list(x)
        xm = list(x)
        xp[i] += step
        xm[i] -= step
        grad.append((f(xp) - f(xm)) / (2 * step))
    return grad
