"""Zero testing: canonical simplification first, random evaluation second."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from . import nodes as N
from .canon import Rat, canon, poly_terms, rat_value, to_expr
from .nodes import DomainError

PROVEN_ZERO = "ProvenZero"
NUMERICALLY_ZERO = "NumericallyZero"
NONZERO = "NonZero"

DEFAULT_SEED = 20240611
DEFAULT_SAMPLES = 32
ZERO_TOL = 1e-9
MAX_RETRIES = 10


class UndecidableError(ValueError):
    """Every attempt to sample a point hit a domain error."""


@dataclass(frozen=True)
class ZeroVerdict:
    kind: str
    samples: int = 0
    witness: dict | None = None
    value: float | None = None
    max_residual: float = 0.0

    def __bool__(self):
        return self.kind != NONZERO

    @property
    def certified(self) -> bool:
        return self.kind == PROVEN_ZERO

    @property
    def confidence(self) -> float:
        """Heuristic confidence of a numerical zero claim (1 for proofs)."""
        if self.kind == PROVEN_ZERO:
            return 1.0
        if self.kind == NONZERO:
            return 0.0
        return 1.0 - 0.5 ** self.samples

    def to_dict(self) -> dict:
        out = {"verdict": self.kind}
        if self.kind == NUMERICALLY_ZERO:
            out["samples"] = self.samples
            out["max_residual"] = self.max_residual
        if self.witness is not None:
            out["witness"] = self.witness
            out["value"] = self.value
        return out


@dataclass
class Sampler:
    """Reproducible random points: rationals in [-2, 2] and parameters in (0.1, 10).

    Parameters listed in ``fixed`` keep the given values instead of being drawn.
    """

    seed: int = DEFAULT_SEED
    fixed: Mapping[str, float] = field(default_factory=dict)

    def rng(self, salt: str = "") -> random.Random:
        return random.Random(f"{self.seed}:{salt}")

    @staticmethod
    def draw(rng: random.Random, n_vars: int, params) -> tuple[list[float], dict]:
        x = [float(Fraction(rng.randint(-2000, 2000), 1000)) for _ in range(n_vars)]
        p = {name: rng.uniform(0.1, 10.0) for name in sorted(params)}
        return x, p


_RAT_SYMBOLS: dict = {}


def _symbols(r: Rat):
    """Highest variable index and parameter names used by ``r``."""
    hit = _RAT_SYMBOLS.get(r.key)
    if hit is None:
        expr = to_expr(r)
        hit = (max(N.free_vars(expr), default=0), N.free_params(expr))
        _RAT_SYMBOLS[r.key] = hit
    return hit


def is_zero(expr: N.Expr, seed: int | None = None, samples: int = DEFAULT_SAMPLES,
            fixed_params: Mapping[str, float] | None = None, n_vars: int | None = None,
            tol: float = ZERO_TOL) -> ZeroVerdict:
    """Decide whether ``expr`` vanishes identically.

    The canonical form decides most cases exactly.  Otherwise the numerator
    is evaluated at ``samples`` random points; a value is treated as zero when
    ``|value| < tol * max(1, sum of |terms|)`` so that large cancelling terms do
    not trip the threshold.
    """
    r = canon(expr)
    if r.is_zero:
        return ZeroVerdict(PROVEN_ZERO)
    top_var, params = _symbols(r)
    n = max(top_var, n_vars or 0)
    sampler = Sampler(DEFAULT_SEED if seed is None else seed, fixed_params or {})
    rng = sampler.rng(str(r.key)[:200])
    free = [p for p in params if p not in sampler.fixed]
    worst = 0.0
    for _ in range(samples):
        for _attempt in range(MAX_RETRIES + 1):
            x, p = Sampler.draw(rng, n, free)
            p.update(sampler.fixed)
            try:
                memo: dict = {}
                value, scale = poly_terms(r.num, x, p, memo)
                # the denominator must be defined and nonzero too
                rat_value(Rat({(): Fraction(1)}, r.den), x, p, memo)
            except (DomainError, OverflowError, ZeroDivisionError):
                continue
            break
        else:
            raise UndecidableError("undecidable at sampled points: every retry hit a domain error")
        residual = abs(value) / max(1.0, scale)
        if residual >= tol:
            witness = {"x": x, "params": p}
            return ZeroVerdict(NONZERO, witness=witness, value=rat_value(r, x, p))
        worst = max(worst, residual)
    return ZeroVerdict(NUMERICALLY_ZERO, samples=samples, max_residual=worst)
