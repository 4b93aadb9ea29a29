"""Reading system descriptions from TOML files.

Layout::

    name = "iwp"
    n = 2
    m = 1
    vars = ["x1", "x2"]
    outputs = ["x1"]

    [params]            # numeric values used for rank tests and simulation
    md = 6.0

    [defs]              # optional: names replaced by expressions when parsing
    p1 = "-l2*m2/(l1*(m1 + m2))"

    [christoffel]       # either this table ...
    G.1.2.2 = "..."     # unspecified symbols are 0; G.i.k.j is filled in
    e = ["...", "..."]
    g.1 = ["...", "..."]

    [lagrangian]        # ... or this one
    M.1.1 = "..."
    V = "..."
    tau0 = ["0", "0"]
    tau.1 = ["1", "0"]

    [alternatives]      # optional named output sets
    combined = ["((md + J2)/J2)*x1 + x2"]

    [analysis]          # optional default analysis point
    x = [0.3, 0.0]
    v = [0.0, 0.0]

    [certify]           # optional certificate settings (amplitude, onset, horizon)
    [certify.combined]  # ... overridden per output set

    [expect.outputs]    # optional verdicts checked by the corpus command
    nu = [1]            # keys: nu, rho, solvable, linearizable

    [regimes.name]      # optional overrides merged into the document
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from ..expr import ZERO, Expr, ParseError, parse
from .lagrange import LagrangianSpec, from_lagrangian
from .system import MechanicalSystem, ValidationError


class SystemFileError(ValueError):
    """A system file could not be read; the message carries file and line."""


@dataclass
class SystemFile:
    path: str
    name: str
    system: MechanicalSystem
    lagrangian: LagrangianSpec | None = None
    alternatives: dict = field(default_factory=dict)
    point_x: list | None = None
    point_v: list | None = None
    regimes: list = field(default_factory=list)
    regime: str | None = None
    description: str = ""
    defs: dict = field(default_factory=dict)
    certify: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)

    def certify_options(self, key: str | None = None) -> dict:
        """Certificate settings for an output set: ``amplitude``, ``onset``, ``horizon``."""
        out = {k: float(v) for k, v in self.certify.items() if not isinstance(v, dict)}
        if key is not None and isinstance(self.certify.get(key), dict):
            out.update({k: float(v) for k, v in self.certify[key].items()})
        return out

    def parse(self, text: str) -> Expr:
        """Parse a user expression; identifiers must be variables, parameters or defs."""
        return parse(text, self.system.var_names, set(self.system.params), self.defs)

    def outputs(self, key: str | None) -> list[Expr]:
        """Output set by alternative name (``None`` for the default outputs)."""
        if key is None:
            return list(self.system.h)
        if key not in self.alternatives:
            raise KeyError(f"{self.name}: no output set named {key!r}")
        return list(self.alternatives[key])


def corpus_dir() -> Path:
    return Path(str(resources.files("miold") / "corpus"))


def corpus_names() -> list[str]:
    return sorted(p.stem for p in corpus_dir().glob("*.toml"))


def resolve_path(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    cand = corpus_dir() / (name_or_path if name_or_path.endswith(".toml") else name_or_path + ".toml")
    if cand.exists():
        return cand
    raise SystemFileError(f"{name_or_path}: no such file or bundled system")


def _merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _line_of(text: str, needle: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if needle and needle in line:
            return i
    return None


class _Ctx:
    def __init__(self, path: str, text: str, names, defs):
        self.path = path
        self.text = text
        self.names = names
        self.defs = defs

    def fail(self, message: str, needle: str = "") -> SystemFileError:
        line = _line_of(self.text, needle) if needle else None
        where = f"{self.path}:{line}" if line else self.path
        return SystemFileError(f"{where}: {message}")

    def expr(self, value, what: str) -> Expr:
        if isinstance(value, (int, float)):
            value = repr(value)
        if not isinstance(value, str):
            raise self.fail(f"{what}: expected an expression string, got {value!r}")
        try:
            return parse(value, self.names, None, self.defs)
        except ParseError as exc:
            raise self.fail(f"{what}: {exc}", value) from None

    def vector(self, values, n: int, what: str) -> list[Expr]:
        if not isinstance(values, list) or len(values) != n:
            raise self.fail(f"{what}: expected a list of {n} expressions", what.split(".")[-1])
        return [self.expr(v, f"{what}[{i + 1}]") for i, v in enumerate(values)]


def _index(key: str, n: int, ctx: _Ctx, what: str) -> int:
    try:
        i = int(key)
    except ValueError:
        raise ctx.fail(f"{what}: index {key!r} is not an integer") from None
    if not 1 <= i <= n:
        raise ctx.fail(f"{what}: index {i} out of range 1..{n}")
    return i - 1


def load_system(name_or_path: str, regime: str | None = None,
                params: Mapping[str, float] | None = None) -> SystemFile:
    """Read a system file (or a bundled corpus name) into a ``SystemFile``."""
    path = resolve_path(name_or_path)
    text = path.read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SystemFileError(f"{path}: {exc}") from None
    regimes = sorted(doc.get("regimes", {}))
    if regime is not None:
        if regime not in doc.get("regimes", {}):
            raise SystemFileError(f"{path}: no regime named {regime!r} (have {regimes})")
        doc = _merge(doc, doc["regimes"][regime])
    return _build(doc, str(path), text, regime, regimes, params)


def loads_system(text: str, source: str = "<string>") -> SystemFile:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SystemFileError(f"{source}: {exc}") from None
    return _build(doc, source, text, None, sorted(doc.get("regimes", {})), None)


def _build(doc: dict, path: str, text: str, regime, regimes, params_override) -> SystemFile:
    ctx = _Ctx(path, text, [], {})
    for key in ("n", "m", "vars", "outputs"):
        if key not in doc:
            raise ctx.fail(f"missing required key {key!r}")
    n, m = doc["n"], doc["m"]
    if not isinstance(n, int) or not isinstance(m, int) or n < 1 or m < 1:
        raise ctx.fail("n and m must be positive integers", "n =")
    names = doc["vars"]
    if not isinstance(names, list) or len(names) != n or len(set(names)) != n:
        raise ctx.fail(f"vars must list {n} distinct names", "vars")
    ctx.names = names
    params = {}
    for k, v in doc.get("params", {}).items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ctx.fail(f"parameter {k!r} must be numeric", k)
        params[k] = float(v)
    if params_override:
        params.update(params_override)
    defs: dict = {}
    for k, v in doc.get("defs", {}).items():
        defs[k] = ctx.expr(v, f"defs.{k}")
        ctx.defs = defs
    ctx.defs = defs

    outputs = ctx.vector(doc["outputs"], m, "outputs")
    name = doc.get("name", Path(path).stem)
    if regime:
        name = f"{name}[{regime}]"
    has_c, has_l = "christoffel" in doc, "lagrangian" in doc
    if has_c == has_l:
        raise ctx.fail("exactly one of [christoffel] or [lagrangian] is required")
    lag = None
    try:
        if has_c:
            system = _christoffel_system(doc, ctx, n, m, outputs, params, name)
        else:
            lag = _lagrangian_spec(doc["lagrangian"], ctx, n, m, params)
            system = from_lagrangian(lag, outputs, name)
    except ValidationError as exc:
        raise ctx.fail(str(exc)) from None

    alternatives = {}
    for k, v in doc.get("alternatives", {}).items():
        alternatives[k] = ctx.vector(v, m, f"alternatives.{k}")
    analysis = doc.get("analysis", {})
    px, pv = analysis.get("x"), analysis.get("v")
    for label, vec in (("x", px), ("v", pv)):
        if vec is not None and (not isinstance(vec, list) or len(vec) != n):
            raise ctx.fail(f"analysis.{label} must list {n} numbers", f"{label} =")
    return SystemFile(path, name, system, lag, alternatives,
                      [float(a) for a in px] if px else None,
                      [float(a) for a in pv] if pv else None,
                      regimes, regime, doc.get("description", ""), defs,
                      _certify_table(doc.get("certify", {}), ctx),
                      _expect_table(doc.get("expect", {}), ctx, m, alternatives))


_CERTIFY_KEYS = {"amplitude", "onset", "horizon"}


def _certify_table(table, ctx: _Ctx) -> dict:
    for key, value in table.items():
        entries = value.items() if isinstance(value, dict) else [(key, value)]
        for k, v in entries:
            if k not in _CERTIFY_KEYS:
                raise ctx.fail(f"certify: unknown setting {k!r}", k)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ctx.fail(f"certify: {k} must be numeric", k)
    return dict(table)


_EXPECT_KEYS = {"nu": list, "rho": list, "solvable": bool, "linearizable": bool}


def _expect_table(table, ctx: _Ctx, m: int, alternatives) -> dict:
    for key, entry in table.items():
        if key != "outputs" and key not in alternatives:
            raise ctx.fail(f"expect: unknown output set {key!r}", f"expect.{key}")
        for k, v in entry.items():
            if k not in _EXPECT_KEYS or not isinstance(v, _EXPECT_KEYS[k]):
                raise ctx.fail(f"expect.{key}: bad entry {k} = {v!r}", k)
            if k in ("nu", "rho") and len(v) != m:
                raise ctx.fail(f"expect.{key}.{k} needs {m} entries", k)
    return dict(table)


def _christoffel_system(doc, ctx: _Ctx, n, m, outputs, params, name) -> MechanicalSystem:
    table = doc["christoffel"]
    Gamma = [[[ZERO] * n for _ in range(n)] for _ in range(n)]
    given = set()
    for i_key, by_j in table.get("G", {}).items():
        i = _index(i_key, n, ctx, "G")
        for j_key, by_k in by_j.items():
            j = _index(j_key, n, ctx, f"G.{i_key}")
            for k_key, value in by_k.items():
                k = _index(k_key, n, ctx, f"G.{i_key}.{j_key}")
                Gamma[i][j][k] = ctx.expr(value, f"G.{i_key}.{j_key}.{k_key}")
                given.add((i, j, k))
    for i, j, k in list(given):
        if (i, k, j) not in given:
            Gamma[i][k][j] = Gamma[i][j][k]
    e_raw = table.get("e", doc.get("e"))
    if e_raw is None:
        raise ctx.fail("missing e vector")
    e = ctx.vector(e_raw, n, "e")
    g_raw = table.get("g", doc.get("g", {}))
    g = []
    for r in range(1, m + 1):
        if str(r) not in g_raw:
            raise ctx.fail(f"missing control field g.{r}")
        g.append(ctx.vector(g_raw[str(r)], n, f"g.{r}"))
    return MechanicalSystem(Gamma, e, g, outputs, ctx.names, params, name)


def _lagrangian_spec(table, ctx: _Ctx, n, m, params) -> LagrangianSpec:
    Mraw = table.get("M", {})
    M = [[None] * n for _ in range(n)]
    for i_key, row in Mraw.items():
        i = _index(i_key, n, ctx, "M")
        for j_key, value in row.items():
            j = _index(j_key, n, ctx, f"M.{i_key}")
            M[i][j] = ctx.expr(value, f"M.{i_key}.{j_key}")
    for i in range(n):
        for j in range(n):
            if M[i][j] is None:
                M[i][j] = M[j][i] if M[j][i] is not None else ZERO
    V = ctx.expr(table.get("V", "0"), "V")
    tau0 = ctx.vector(table["tau0"], n, "tau0") if "tau0" in table else [ZERO] * n
    tau_raw = table.get("tau", {})
    tau = []
    for r in range(1, m + 1):
        if str(r) not in tau_raw:
            raise ctx.fail(f"missing control force tau.{r}")
        tau.append(ctx.vector(tau_raw[str(r)], n, f"tau.{r}"))
    return LagrangianSpec(M, V, tau0, tau, tuple(ctx.names), params)


_POINT_RE = re.compile(r"^\s*([xv])\s*=\s*(.*)$")


def parse_point(text: str, n: int) -> tuple[list[float], list[float] | None]:
    """Parse ``"x=0.1,0.2;v=0,0"`` (v optional)."""
    x = v = None
    for part in filter(None, (p.strip() for p in text.split(";"))):
        mt = _POINT_RE.match(part)
        if not mt:
            raise ValueError(f"bad point component {part!r}; expected x=... or v=...")
        values = [float(s) for s in re.split(r"[,\s]+", mt.group(2).strip(" []")) if s]
        if len(values) != n:
            raise ValueError(f"{mt.group(1)} needs {n} values, got {len(values)}")
        if mt.group(1) == "x":
            x = values
        else:
            v = values
    if x is None:
        raise ValueError("point needs x=...")
    return x, v
