"""Canonical forms for expressions.

An expression is normalised to a fraction ``num / prod(F_i ** e_i)``:

* ``num`` is a polynomial with rational coefficients in *atoms* (variables,
  parameters, ``sin``/``cos`` of base angles, ``exp``/``ln`` of normalised
  arguments, rational roots);
* the denominator is kept factored; every factor is a monic polynomial
  without monomial content, or a single atom.

Trigonometric functions of polynomial arguments are expanded with the angle
addition and multiple-angle formulas down to base angles ``m/q`` (``m`` a
monomial), and ``cos(t)**2`` is rewritten to ``1 - sin(t)**2``.  The
resulting ring is an integral domain, so a fraction is identically zero
exactly when its numerator reduces to the zero polynomial.  Relations among
``exp``, ``ln``, roots and unrelated base angles (``x`` vs ``x/2``) are not
known to the normaliser; ``is_zero`` falls back to sampling for those.
"""

from __future__ import annotations

import heapq
import itertools
import math
import threading
import weakref
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Mapping, Sequence

from . import nodes as N
from .nodes import DomainError

PARAM, VAR, SIN, COS, EXP, LN, ROOT = range(7)
_KIND_NAMES = {SIN: "sin", COS: "cos", EXP: "exp", LN: "ln"}

Mono = tuple  # tuple[(Atom, int), ...] sorted by Atom.key
Poly = Dict[Mono, Fraction]

_ZERO_F = Fraction(0)
_ONE_F = Fraction(1)
_rank_counter = itertools.count()
_lock = threading.RLock()


class Atom:
    """An indeterminate of the polynomial ring.

    ``data`` is the variable index, the parameter name, or the ``Rat``
    argument; ``root`` atoms carry ``(arg, q)`` for ``arg ** (1/q)``.
    """

    __slots__ = ("kind", "data", "key", "rank", "partner", "__weakref__")

    def __repr__(self):
        return f"Atom({self.key!r})"


_atoms: Dict[tuple, Atom] = {}


def _atom(kind: int, data, key: tuple) -> Atom:
    with _lock:
        a = _atoms.get(key)
        if a is None:
            a = Atom()
            a.kind = kind
            a.data = data
            a.key = key
            a.rank = next(_rank_counter)
            a.partner = None
            _atoms[key] = a
        return a


def var_atom(index: int) -> Atom:
    return _atom(VAR, index, (VAR, index))


def param_atom(name: str) -> Atom:
    return _atom(PARAM, name, (PARAM, name))


def trig_atoms(angle: "Rat") -> tuple[Atom, Atom]:
    """The ``(sin, cos)`` atoms of a base angle."""
    s = _atom(SIN, angle, (SIN, angle.key))
    c = _atom(COS, angle, (COS, angle.key))
    s.partner = c
    c.partner = s
    return s, c


# ---------------------------------------------------------------- monomials


@lru_cache(maxsize=None)
def mono_mul(a: Mono, b: Mono) -> Mono:
    if not a:
        return b
    if not b:
        return a
    exps: Dict[Atom, int] = dict(a)
    for atom, e in b:
        exps[atom] = exps.get(atom, 0) + e
    return tuple(sorted(exps.items(), key=lambda p: p[0].key))


@lru_cache(maxsize=None)
def _needs_reduce(m: Mono) -> bool:
    for atom, e in m:
        if atom.kind == COS and e >= 2:
            return True
        if atom.kind == ROOT and e >= atom.data[1] and atom.data[0].is_poly:
            return True
    return False


@lru_cache(maxsize=None)
def reduce_mono(m: Mono) -> tuple:
    """Normal form of a monomial as a tuple of ``(mono, coeff)`` pairs."""
    for idx, (atom, e) in enumerate(m):
        rest = m[:idx] + m[idx + 1:]
        if atom.kind == COS and e >= 2:
            sin_atom = atom.partner
            half, odd = divmod(e, 2)
            keep: Mono = ((atom, 1),) if odd else ()
            # (1 - s^2)^half
            expansion: Poly = {}
            for j in range(half + 1):
                coeff = Fraction(math.comb(half, j) * (-1) ** j)
                mono = ((sin_atom, 2 * j),) if j else ()
                expansion[mono] = coeff
            out: Poly = {}
            for mono, c in expansion.items():
                full = mono_mul(mono_mul(rest, keep), mono)
                for m2, c2 in reduce_mono(full):
                    out[m2] = out.get(m2, _ZERO_F) + c * c2
            return tuple((k, v) for k, v in out.items() if v)
        if atom.kind == ROOT:
            arg, q = atom.data
            if e >= q and arg.is_poly:
                whole, part = divmod(e, q)
                base = p_pow(arg.num, whole)
                keep = ((atom, part),) if part else ()
                out = {}
                for mono, c in base.items():
                    for m2, c2 in reduce_mono(mono_mul(mono_mul(rest, keep), mono)):
                        out[m2] = out.get(m2, _ZERO_F) + c * c2
                return tuple((k, v) for k, v in out.items() if v)
    return ((m, _ONE_F),)


def mono_div(a: Mono, b: Mono) -> Mono | None:
    exps = dict(a)
    for atom, e in b:
        have = exps.get(atom, 0)
        if have < e:
            return None
        if have == e:
            del exps[atom]
        else:
            exps[atom] = have - e
    return tuple(sorted(exps.items(), key=lambda p: p[0].key))


@lru_cache(maxsize=None)
def mono_key(m: Mono) -> tuple:
    return tuple((a.key, e) for a, e in m)


_SENTINEL = (float("inf"), 0)


@lru_cache(maxsize=None)
def lex_key(m: Mono) -> tuple:
    """Sort key; ascending order is descending lexicographic monomial order."""
    return tuple(sorted((a.rank, -e) for a, e in m)) + (_SENTINEL,)


# -------------------------------------------------------------- polynomials


def p_const(c) -> Poly:
    c = Fraction(c)
    return {(): c} if c else {}


def p_add(a: Poly, b: Poly, scale: Fraction = _ONE_F) -> Poly:
    out = dict(a)
    for m, c in b.items():
        v = out.get(m, _ZERO_F) + scale * c
        if v:
            out[m] = v
        else:
            out.pop(m, None)
    return out


def p_scale(a: Poly, c: Fraction) -> Poly:
    if not c:
        return {}
    return {m: v * c for m, v in a.items()}


def p_mul(a: Poly, b: Poly) -> Poly:
    if not a or not b:
        return {}
    if len(a) < len(b):
        a, b = b, a
    out: Poly = {}
    get = out.get
    for mb, cb in b.items():
        for ma, ca in a.items():
            m = mono_mul(ma, mb)
            c = ca * cb
            if _needs_reduce(m):
                for m2, c2 in reduce_mono(m):
                    out[m2] = get(m2, _ZERO_F) + c * c2
            else:
                out[m] = get(m, _ZERO_F) + c
    return {m: c for m, c in out.items() if c}


def p_pow(a: Poly, k: int) -> Poly:
    result = p_const(1)
    base = a
    while k:
        if k & 1:
            result = p_mul(result, base)
        k >>= 1
        if k:
            base = p_mul(base, base)
    return result


def p_key(a: Poly) -> tuple:
    return tuple(sorted((mono_key(m), (c.numerator, c.denominator)) for m, c in a.items()))


def p_sorted(a: Poly) -> list:
    return sorted(a.items(), key=lambda item: mono_key(item[0]))


def p_atoms(a: Poly) -> set:
    out = set()
    for m in a:
        for atom, _ in m:
            out.add(atom)
    return out


def _p_plain_divexact(num: Poly, den: Poly) -> Poly | None:
    """Exact division in the free polynomial ring, or None if not exact."""
    if not den:
        raise DomainError("division by zero")
    lead = min(den, key=lex_key)
    lead_c = den[lead]
    rem = dict(num)
    heap = [(lex_key(m), m) for m in rem]
    heapq.heapify(heap)
    quotient: Poly = {}
    while heap:
        _, m = heapq.heappop(heap)
        c = rem.get(m)
        if not c:
            continue
        qm = mono_div(m, lead)
        if qm is None:
            return None
        qc = c / lead_c
        quotient[qm] = quotient.get(qm, _ZERO_F) + qc
        for dm, dc in den.items():
            pm = mono_mul(qm, dm)
            v = rem.get(pm, _ZERO_F) - qc * dc
            if v:
                if pm not in rem:
                    heapq.heappush(heap, (lex_key(pm), pm))
                rem[pm] = v
            else:
                rem.pop(pm, None)
    return {m: c for m, c in quotient.items() if c}


def _flip_cos(a: Poly, atom: Atom) -> Poly:
    out = {}
    for m, c in a.items():
        e = dict(m).get(atom, 0)
        out[m] = -c if e % 2 else c
    return out


def p_divexact(num: Poly, den: Poly) -> Poly | None:
    """Exact quotient ``num / den`` in the trigonometric quotient ring, or None.

    A ``cos`` atom in the divisor is eliminated by multiplying through by the
    conjugate (``cos -> -cos``), which leaves a ``cos``-free norm.
    """
    if not num:
        return {}
    cos_atoms = sorted((a for a in p_atoms(den) if a.kind == COS), key=lambda a: a.key)
    if not cos_atoms:
        return _p_plain_divexact(num, den)
    atom = cos_atoms[0]
    conj = _flip_cos(den, atom)
    norm = p_mul(den, conj)
    return p_divexact(p_mul(num, conj), norm)


def p_diff_atom(a: Poly, atom: Atom) -> Poly:
    out: Poly = {}
    for m, c in a.items():
        for idx, (at, e) in enumerate(m):
            if at is atom:
                if e == 1:
                    dm = m[:idx] + m[idx + 1:]
                else:
                    dm = m[:idx] + ((at, e - 1),) + m[idx + 1:]
                out[dm] = out.get(dm, _ZERO_F) + c * e
    return {m: c for m, c in out.items() if c}


# ------------------------------------------------------------------ factors


class Factor:
    """A monic denominator factor (interned)."""

    __slots__ = ("poly", "key", "atom", "__weakref__")

    def __repr__(self):
        return f"Factor({self.key!r})"


_factors: Dict[tuple, Factor] = {}


def _factor(poly: Poly) -> Factor:
    key = p_key(poly)
    with _lock:
        f = _factors.get(key)
        if f is None:
            f = Factor()
            f.poly = poly
            f.key = key
            f.atom = None
            if len(poly) == 1:
                (m, _), = poly.items()
                if len(m) == 1 and m[0][1] == 1:
                    f.atom = m[0][0]
            _factors[key] = f
        return f


def _split_content(a: Poly):
    """Split ``a`` as ``c * mono * P`` with ``P`` monic and free of monomial content."""
    items = p_sorted(a)
    lead_c = items[0][1]
    common: Dict[Atom, int] | None = None
    for m, _ in items:
        exps = dict(m)
        if common is None:
            common = exps
        else:
            common = {at: min(e, exps[at]) for at, e in common.items() if at in exps}
        if not common:
            break
    mono = tuple(sorted(common.items(), key=lambda p: p[0].key)) if common else ()
    rest = {}
    for m, c in a.items():
        rest[mono_div(m, mono) if mono else m] = c / lead_c
    return lead_c, mono, rest


# --------------------------------------------------------------------- Rat


class Rat:
    """Canonical fraction ``num / prod(factor ** exp)``."""

    __slots__ = ("num", "den", "_key", "__weakref__")

    def __init__(self, num: Poly, den: tuple = ()):
        self.num = num
        self.den = den
        self._key = None

    @property
    def key(self) -> tuple:
        if self._key is None:
            self._key = (p_key(self.num), tuple((f.key, e) for f, e in self.den))
        return self._key

    def __eq__(self, other):
        return isinstance(other, Rat) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"Rat({N.to_string(to_expr(self))})"

    @property
    def is_poly(self) -> bool:
        return not self.den

    @property
    def is_zero(self) -> bool:
        return not self.num

    def constant_value(self) -> Fraction | None:
        if self.den:
            return None
        if not self.num:
            return _ZERO_F
        if len(self.num) == 1 and () in self.num:
            return self.num[()]
        return None

    # arithmetic -----------------------------------------------------
    def __neg__(self):
        return Rat({m: -c for m, c in self.num.items()}, self.den)

    def __add__(self, other: "Rat") -> "Rat":
        return _combine(self, other, _ONE_F)

    def __sub__(self, other: "Rat") -> "Rat":
        return _combine(self, other, -_ONE_F)

    def __mul__(self, other: "Rat") -> "Rat":
        if not self.num or not other.num:
            return ZERO
        num = p_mul(self.num, other.num)
        den = dict(self.den)
        for f, e in other.den:
            den[f] = den.get(f, 0) + e
        return _make(num, den)

    def scale(self, c) -> "Rat":
        c = Fraction(c)
        if not c or not self.num:
            return ZERO
        return Rat(p_scale(self.num, c), self.den)

    def inverse(self) -> "Rat":
        if not self.num:
            raise DomainError("division by zero")
        num = p_const(1)
        for f, e in self.den:
            num = p_mul(num, p_pow(f.poly, e))
        c, mono, rest = _split_content(self.num)
        den: Dict[Factor, int] = {}
        for atom, e in mono:
            f = _factor({((atom, 1),): _ONE_F})
            den[f] = den.get(f, 0) + e
        # 1 - sin(t)^2 is cos(t)^2; pull such factors out as cos atoms
        for atom in sorted(p_atoms(rest), key=lambda a: a.key):
            if atom.kind != SIN:
                continue
            pyth = {(): _ONE_F, ((atom, 2),): -_ONE_F}
            while True:
                q = _p_plain_divexact(rest, pyth)
                if q is None:
                    break
                f = _factor({((atom.partner, 1),): _ONE_F})
                den[f] = den.get(f, 0) + 2
                c2, _, rest = _split_content(q)
                c = c * c2
        if not (len(rest) == 1 and () in rest):
            f = _factor(rest)
            den[f] = den.get(f, 0) + 1
        return _make(p_scale(num, 1 / c), den)

    def __truediv__(self, other: "Rat") -> "Rat":
        return self * other.inverse()

    def __pow__(self, k: int) -> "Rat":
        if k < 0:
            return self.inverse() ** (-k)
        if k == 0:
            return ONE_RAT
        if not self.num:
            return ZERO
        den = {f: e * k for f, e in self.den}
        return _make(p_pow(self.num, k), den)

    # calculus -------------------------------------------------------
    def diff(self, index: int) -> "Rat":
        """Derivative with respect to ``x^index``."""
        return _rat_diff(self, index)

    def atoms(self) -> set:
        out = p_atoms(self.num)
        for f, _ in self.den:
            out |= p_atoms(f.poly)
        return out


def _make(num: Poly, den: Dict[Factor, int]) -> Rat:
    if not num:
        return ZERO
    den = {f: e for f, e in den.items() if e > 0}
    for f in sorted(den, key=lambda f: f.key):
        e = den[f]
        if f.atom is not None:
            atom = f.atom
            low = e
            for m in num:
                have = 0
                for at, k in m:
                    if at is atom:
                        have = k
                        break
                low = min(low, have)
                if not low:
                    break
            if low:
                num = {mono_div(m, ((atom, low),)): c for m, c in num.items()}
                e -= low
            if e and atom.kind == COS:
                while e:
                    q = p_divexact(num, f.poly)
                    if q is None:
                        break
                    num, e = q, e - 1
        else:
            while e:
                q = p_divexact(num, f.poly)
                if q is None:
                    break
                num, e = q, e - 1
        den[f] = e
    den_t = tuple(sorted(((f, e) for f, e in den.items() if e), key=_factor_order))
    return Rat(num, den_t)


def _factor_order(item) -> tuple:
    f = item[0]
    return (f.atom is None, f.key)


def _combine(a: Rat, b: Rat, sign: Fraction) -> Rat:
    if not b.num:
        return a
    if not a.num:
        return b if sign > 0 else -b
    if a.den == b.den:
        return _make(p_add(a.num, b.num, sign), dict(a.den))
    da, db = dict(a.den), dict(b.den)
    lcm = dict(da)
    for f, e in db.items():
        lcm[f] = max(lcm.get(f, 0), e)
    num_a, num_b = a.num, b.num
    for f, e in lcm.items():
        ka = e - da.get(f, 0)
        kb = e - db.get(f, 0)
        if ka:
            num_a = p_mul(num_a, p_pow(f.poly, ka))
        if kb:
            num_b = p_mul(num_b, p_pow(f.poly, kb))
    return _make(p_add(num_a, num_b, sign), lcm)


ZERO = Rat({}, ())
ONE_RAT = Rat(p_const(1), ())


def rat_const(c) -> Rat:
    return Rat(p_const(c), ())


def rat_atom(atom: Atom, power: int = 1) -> Rat:
    return Rat({((atom, power),): _ONE_F}, ())


def rat_poly(poly: Poly) -> Rat:
    return Rat(poly, ())


# ------------------------------------------------------------- derivatives

_atom_diff_cache: Dict[tuple, Rat] = {}


def atom_diff(atom: Atom, index: int) -> Rat:
    key = (atom.key, index)
    hit = _atom_diff_cache.get(key)
    if hit is not None:
        return hit
    if atom.kind == VAR:
        out = ONE_RAT if atom.data == index else ZERO
    elif atom.kind == PARAM:
        out = ZERO
    elif atom.kind in (SIN, COS):
        d_angle = atom.data.diff(index)
        if d_angle.is_zero:
            out = ZERO
        elif atom.kind == SIN:
            out = rat_atom(atom.partner) * d_angle
        else:
            out = -(rat_atom(atom.partner) * d_angle)
    elif atom.kind == EXP:
        d_arg = atom.data.diff(index)
        out = ZERO if d_arg.is_zero else rat_atom(atom) * d_arg
    elif atom.kind == LN:
        d_arg = atom.data.diff(index)
        out = ZERO if d_arg.is_zero else d_arg / atom.data
    elif atom.kind == ROOT:
        arg, q = atom.data
        d_arg = arg.diff(index)
        out = ZERO if d_arg.is_zero else (rat_atom(atom) * d_arg / arg).scale(Fraction(1, q))
    else:
        raise TypeError(atom)
    _atom_diff_cache[key] = out
    return out


def _poly_diff(poly: Poly, index: int) -> Rat:
    total = ZERO
    for atom in sorted(p_atoms(poly), key=lambda a: a.key):
        da = atom_diff(atom, index)
        if da.is_zero:
            continue
        partial = p_diff_atom(poly, atom)
        if partial:
            total = total + rat_poly(partial) * da
    return total


def _rat_diff(r: Rat, index: int) -> Rat:
    result = _poly_diff(r.num, index)
    if not r.den:
        return result
    den_rat = Rat(p_const(1), r.den)
    result = result * den_rat
    for f, e in r.den:
        df = _poly_diff(f.poly, index)
        if df.is_zero:
            continue
        term = Rat(r.num, r.den) * df * Rat(p_const(-e), ((f, 1),))
        result = result + term
    return result


# ------------------------------------------------------ expr -> canonical

_canon_cache: "weakref.WeakKeyDictionary[N.Expr, Rat]" = weakref.WeakKeyDictionary()


def canon(expr: N.Expr) -> Rat:
    """Canonical fraction of ``expr``."""
    hit = _canon_cache.get(expr)
    if hit is not None:
        return hit
    for node in N.walk(expr):
        if node in _canon_cache:
            continue
        _canon_cache[node] = _canon_node(node)
    return _canon_cache[expr]


def _canon_node(node: N.Expr) -> Rat:
    c = _canon_cache
    if isinstance(node, N.Const):
        return rat_const(node.value)
    if isinstance(node, N.Param):
        return rat_atom(param_atom(node.name))
    if isinstance(node, N.Var):
        return rat_atom(var_atom(node.index))
    if isinstance(node, N.Neg):
        return -c[node.arg]
    if isinstance(node, N.Add):
        return c[node.left] + c[node.right]
    if isinstance(node, N.Sub):
        return c[node.left] - c[node.right]
    if isinstance(node, N.Mul):
        return c[node.left] * c[node.right]
    if isinstance(node, N.Div):
        return c[node.left] * _inverse_of(node.right)
    if isinstance(node, N.Pow):
        return _canon_pow(c[node.base], node.exponent, node.base)
    if isinstance(node, N.Func):
        return _canon_func(node.name, c[node.arg])
    raise TypeError(f"unexpected node {node!r}")


def _inverse_of(node: N.Expr) -> Rat:
    """Inverse of a denominator expression, keeping its product structure."""
    if isinstance(node, N.Mul):
        return _inverse_of(node.left) * _inverse_of(node.right)
    if isinstance(node, N.Div):
        return canon(node.right) * _inverse_of(node.left)
    if isinstance(node, N.Neg):
        return -_inverse_of(node.arg)
    if isinstance(node, N.Pow) and node.exponent.denominator == 1 and node.exponent > 0:
        return _inverse_of(node.base) ** int(node.exponent)
    return canon(node).inverse()


def _exact_root(c: Fraction, q: int) -> Fraction | None:
    if c < 0:
        if q % 2 == 0:
            return None
        r = _exact_root(-c, q)
        return None if r is None else -r
    out = []
    for part in (c.numerator, c.denominator):
        r = round(part ** (1.0 / q))
        for cand in (r - 1, r, r + 1):
            if cand >= 0 and cand ** q == part:
                out.append(cand)
                break
        else:
            return None
    return Fraction(out[0], out[1])


def _canon_pow(base: Rat, q: Fraction, base_expr: N.Expr | None = None) -> Rat:
    if q.denominator == 1:
        k = int(q)
        if k < 0 and base_expr is not None:
            return _inverse_of(base_expr) ** (-k)
        return base ** k
    p, d = q.numerator, q.denominator
    cv = base.constant_value()
    if cv is not None:
        if cv == 0:
            if q < 0:
                raise DomainError("division by zero")
            return ZERO
        root = _exact_root(cv, d)
        if root is not None:
            return rat_const(root) ** p
    atom = _atom(ROOT, (base, d), (ROOT, d, base.key))
    return rat_atom(atom) ** p if p > 0 else rat_atom(atom).inverse() ** (-p)


def _lead_negative(r: Rat) -> bool:
    items = p_sorted(r.num)
    return bool(items) and items[0][1] < 0


def _cos_sin_multiple(angle: Rat, k: int) -> tuple[Rat, Rat]:
    """``(cos(k*a), sin(k*a))`` for a base angle ``a`` and integer ``k``."""
    s_atom, c_atom = trig_atoms(angle)
    s1, c1 = rat_atom(s_atom), rat_atom(c_atom)
    neg = k < 0
    k = abs(k)
    cos_k, sin_k = ONE_RAT, ZERO
    base_c, base_s = c1, s1
    while k:
        if k & 1:
            cos_k, sin_k = cos_k * base_c - sin_k * base_s, sin_k * base_c + cos_k * base_s
        k >>= 1
        if k:
            base_c, base_s = base_c * base_c - base_s * base_s, (base_s * base_c).scale(2)
    return cos_k, (-sin_k if neg else sin_k)


def _trig_pair(arg: Rat) -> tuple[Rat, Rat]:
    """``(cos(arg), sin(arg))`` fully expanded."""
    if not arg.is_poly:
        if _lead_negative(arg):
            c, s = _trig_pair(-arg)
            return c, -s
        s_atom, c_atom = trig_atoms(arg)
        return rat_atom(c_atom), rat_atom(s_atom)
    cos_t, sin_t = ONE_RAT, ZERO
    for m, coef in p_sorted(arg.num):
        if m == ():
            if coef < 0:
                angle, k = rat_const(-coef), -1
            else:
                angle, k = rat_const(coef), 1
        else:
            angle = rat_poly({m: Fraction(1, coef.denominator)})
            k = coef.numerator
        ck, sk = _cos_sin_multiple(angle, k)
        cos_t, sin_t = cos_t * ck - sin_t * sk, sin_t * ck + cos_t * sk
    return cos_t, sin_t


def _canon_func(name: str, arg: Rat) -> Rat:
    if name in ("sin", "cos", "tan", "sec"):
        c, s = _trig_pair(arg)
        if name == "sin":
            return s
        if name == "cos":
            return c
        if name == "tan":
            return s / c
        return c.inverse()
    if name == "exp":
        if not arg.is_poly:
            return rat_atom(_atom(EXP, arg, (EXP, arg.key)))
        out = ONE_RAT
        for m, coef in p_sorted(arg.num):
            if m == ():
                base = rat_const(coef)
                out = out * rat_atom(_atom(EXP, base, (EXP, base.key)))
                continue
            base = rat_poly({m: Fraction(1, coef.denominator)})
            atom = _atom(EXP, base, (EXP, base.key))
            out = out * (rat_atom(atom) ** coef.numerator)
        return out
    if name == "ln":
        cv = arg.constant_value()
        if cv is not None and cv <= 0:
            raise DomainError("logarithm of a non-positive number")
        if cv == 1:
            return ZERO
        return rat_atom(_atom(LN, arg, (LN, arg.key)))
    if name == "sqrt":
        return _canon_pow(arg, Fraction(1, 2))
    raise ValueError(f"unknown function {name!r}")


# ------------------------------------------------------ canonical -> expr


def _atom_expr(atom: Atom) -> N.Expr:
    if atom.kind == VAR:
        return N.Var(atom.data)
    if atom.kind == PARAM:
        return N.Param(atom.data)
    if atom.kind in _KIND_NAMES:
        return N.Func(_KIND_NAMES[atom.kind], to_expr(atom.data))
    arg, q = atom.data
    return N.Pow(to_expr(arg), Fraction(1, q))


def _mono_expr(m: Mono) -> N.Expr:
    parts = []
    for atom, e in m:
        base = _atom_expr(atom)
        parts.append(base if e == 1 else N.Pow(base, e))
    return N.product_of(parts)


def poly_expr(poly: Poly) -> N.Expr:
    terms = []
    for m, c in p_sorted(poly):
        if m == ():
            terms.append(N.Const(c))
        elif c == 1:
            terms.append(_mono_expr(m))
        elif c == -1:
            terms.append(N.Neg(_mono_expr(m)))
        else:
            terms.append(N.Mul(N.Const(c), _mono_expr(m)))
    if not terms:
        return N.ZERO
    out = terms[0]
    for t in terms[1:]:
        out = N.Add(out, t)
    return out


_expr_cache: "weakref.WeakKeyDictionary[Rat, N.Expr]" = weakref.WeakKeyDictionary()


def to_expr(r: Rat) -> N.Expr:
    """Expression tree for a canonical fraction (deterministic layout)."""
    hit = _expr_cache.get(r)
    if hit is not None:
        return hit
    top = poly_expr(r.num)
    if r.den:
        parts = []
        for f, e in r.den:
            fe = _atom_expr(f.atom) if f.atom is not None else poly_expr(f.poly)
            parts.append(fe if e == 1 else N.Pow(fe, e))
        out = N.Div(top, N.product_of(parts))
    else:
        out = top
    _expr_cache[r] = out
    _canon_cache.setdefault(out, r)
    return out


def simplify(expr: N.Expr) -> N.Expr:
    """Value-preserving normal form; idempotent."""
    return to_expr(canon(expr))


# ---------------------------------------------------------- numeric values


def atom_value(atom: Atom, x: Sequence[float], params: Mapping[str, float],
               memo: Dict[Atom, float]) -> float:
    hit = memo.get(atom)
    if hit is not None:
        return hit
    if atom.kind == VAR:
        v = float(x[atom.data - 1])
    elif atom.kind == PARAM:
        v = float(params[atom.data])
    elif atom.kind == SIN:
        v = math.sin(rat_value(atom.data, x, params, memo))
    elif atom.kind == COS:
        v = math.cos(rat_value(atom.data, x, params, memo))
    elif atom.kind == EXP:
        v = N.FUNC_IMPL["exp"](rat_value(atom.data, x, params, memo))
    elif atom.kind == LN:
        v = N.FUNC_IMPL["ln"](rat_value(atom.data, x, params, memo))
    else:
        arg, q = atom.data
        v = N._checked_pow(rat_value(arg, x, params, memo), Fraction(1, q))
    memo[atom] = v
    return v


def poly_terms(poly: Poly, x, params, memo) -> tuple[float, float]:
    """``(value, sum of absolute term values)`` of a polynomial."""
    total = 0.0
    scale = 0.0
    for m, c in poly.items():
        t = float(c)
        for atom, e in m:
            t *= atom_value(atom, x, params, memo) ** e
        total += t
        scale += abs(t)
    return total, scale


def rat_value(r: Rat, x, params, memo=None) -> float:
    memo = {} if memo is None else memo
    top, _ = poly_terms(r.num, x, params, memo)
    bottom = 1.0
    for f, e in r.den:
        bottom *= poly_terms(f.poly, x, params, memo)[0] ** e
    if bottom == 0.0:
        raise DomainError("division by zero")
    return top / bottom
