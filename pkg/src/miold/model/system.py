"""Mechanical control systems with configuration outputs.

Dynamics in coordinates ``(x, v)``::

    x' = v
    v' = -v^T Gamma(x) v + e(x) + sum_r g_r(x) u_r
    y  = h(x)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..expr import (
    ZERO, Expr, Var, as_expr, free_vars, is_zero, parse, simplify, to_string,
)


class ValidationError(ValueError):
    """A system, transformation or file violates a structural requirement."""


def _tupled(values) -> tuple:
    return tuple(as_expr(v) for v in values)


@dataclass(frozen=True, eq=False)
class MechanicalSystem:
    """The data ``(Gamma, e, g_1..g_m, h)`` in one coordinate chart.

    ``Gamma[i][j][k]`` is the Christoffel symbol with upper index ``i`` (all
    indices 0-based here).  ``g[r]`` is the r-th control field.
    """

    Gamma: tuple
    e: tuple
    g: tuple
    h: tuple
    var_names: tuple = ()
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""
    check: bool = True

    def __post_init__(self):
        n = len(self.e)
        object.__setattr__(self, "e", _tupled(self.e))
        object.__setattr__(self, "g", tuple(_tupled(col) for col in self.g))
        object.__setattr__(self, "h", _tupled(self.h))
        gam = tuple(tuple(_tupled(row) for row in plane) for plane in self.Gamma)
        object.__setattr__(self, "Gamma", gam)
        if not self.var_names:
            object.__setattr__(self, "var_names", tuple(f"x{i}" for i in range(1, n + 1)))
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "params", dict(self.params))
        if len(gam) != n or any(len(p) != n or any(len(r) != n for r in p) for p in gam):
            raise ValidationError(f"Christoffel array must be {n}x{n}x{n}")
        if len(self.var_names) != n:
            raise ValidationError("number of variable names does not match n")
        if any(len(col) != n for col in self.g):
            raise ValidationError("every control field needs n components")
        if len(self.h) != len(self.g):
            raise ValidationError(
                f"need as many outputs as inputs (m={len(self.g)}, got {len(self.h)} outputs)")
        if self.m > n:
            raise ValidationError("more outputs than configuration variables (m > n)")
        if self.check:
            self.validate()

    @property
    def n(self) -> int:
        return len(self.e)

    @property
    def m(self) -> int:
        return len(self.g)

    def all_exprs(self):
        for plane in self.Gamma:
            for row in plane:
                yield from row
        yield from self.e
        for col in self.g:
            yield from col
        yield from self.h

    def validate(self):
        n = self.n
        for expr in self.all_exprs():
            bad = [i for i in free_vars(expr) if i > n]
            if bad:
                raise ValidationError(
                    f"expression {to_string(expr)!r} depends on a non-configuration variable")
        for i in range(n):
            for j in range(n):
                for k in range(j + 1, n):
                    a, b = self.Gamma[i][j][k], self.Gamma[i][k][j]
                    if a is b:
                        continue
                    if not is_zero(a - b):
                        raise ValidationError(
                            f"Christoffel symbols not symmetric: Gamma^{i + 1}_{j + 1}{k + 1} "
                            f"!= Gamma^{i + 1}_{k + 1}{j + 1}")

    # convenience -----------------------------------------------------
    def with_outputs(self, h: Sequence, name: str | None = None) -> "MechanicalSystem":
        h = [parse(s, self.var_names) if isinstance(s, str) else s for s in h]
        return MechanicalSystem(self.Gamma, self.e, self.g, h, self.var_names, self.params,
                                self.name if name is None else name, check=False)._checked_outputs()

    def _checked_outputs(self) -> "MechanicalSystem":
        if len(self.h) != self.m:
            raise ValidationError("need as many outputs as inputs")
        for expr in self.h:
            if any(i > self.n for i in free_vars(expr)):
                raise ValidationError("outputs must depend on configuration variables only")
        return self

    def with_params(self, params: Mapping[str, float]) -> "MechanicalSystem":
        merged = dict(self.params)
        merged.update(params)
        return MechanicalSystem(self.Gamma, self.e, self.g, self.h, self.var_names, merged,
                                self.name, check=False)

    def simplified(self) -> "MechanicalSystem":
        gam = [[[simplify(x) for x in row] for row in plane] for plane in self.Gamma]
        return MechanicalSystem(gam, [simplify(x) for x in self.e],
                                [[simplify(x) for x in col] for col in self.g],
                                [simplify(x) for x in self.h], self.var_names, self.params,
                                self.name, check=False)

    def structurally_equal(self, other: "MechanicalSystem") -> bool:
        """Identity of all simplified expressions."""
        if (self.n, self.m) != (other.n, other.m):
            return False
        a, b = self.simplified(), other.simplified()
        return all(x is y for x, y in zip(a.all_exprs(), b.all_exprs()))

    def describe(self) -> str:
        names = self.var_names
        lines = [f"system {self.name or '(unnamed)'}: n={self.n}, m={self.m}"]
        for i in range(self.n):
            for j in range(self.n):
                for k in range(j, self.n):
                    gam = self.Gamma[i][j][k]
                    if gam is not ZERO:
                        lines.append(f"  G^{i + 1}_{j + 1}{k + 1} = {to_string(gam, names)}")
        lines += [f"  e^{i + 1} = {to_string(x, names)}" for i, x in enumerate(self.e)]
        for r, col in enumerate(self.g):
            lines += [f"  g_{r + 1}^{i + 1} = {to_string(x, names)}"
                      for i, x in enumerate(col) if x is not ZERO]
        lines += [f"  h_{l + 1} = {to_string(x, names)}" for l, x in enumerate(self.h)]
        return "\n".join(lines)


def quadratic_form(matrix, v: Sequence[Expr]) -> Expr:
    """``sum_jk matrix[j][k] v^j v^k`` with symmetric pairs merged."""
    terms = []
    n = len(v)
    for j in range(n):
        if matrix[j][j] is not ZERO:
            terms.append(matrix[j][j] * v[j] * v[j])
        for k in range(j + 1, n):
            a, b = matrix[j][k], matrix[k][j]
            if a is ZERO and b is ZERO:
                continue
            coef = 2 * a if a is b else a + b
            terms.append(coef * v[j] * v[k])
    if not terms:
        return ZERO
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def tangent_lift(S: MechanicalSystem) -> tuple[list[Expr], list[list[Expr]], list[str]]:
    """Drift ``F = (v, -v^T Gamma v + e)`` and ``G_r = (0, g_r)`` on the tangent bundle.

    Velocities are the variables ``n+1 .. 2n``.  Returns ``(F, G, names)``.
    """
    n = S.n
    v = [Var(n + i + 1) for i in range(n)]
    accel = [simplify(-quadratic_form(S.Gamma[i], v) + S.e[i]) for i in range(n)]
    F = list(v) + accel
    G = [[ZERO] * n + [simplify(x) for x in col] for col in S.g]
    names = list(S.var_names) + [velocity_name(s) for s in S.var_names]
    return F, G, names


def velocity_name(name: str) -> str:
    return "v" + name[1:] if name.startswith("x") else "v_" + name
