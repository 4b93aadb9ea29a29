"""Command-line entry point: ``miold analyze|synthesize|simulate|certify|corpus``.

Exit codes: 0 success, 1 condition violated, 2 input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .expr import DEFAULT_SEED, DomainError, ParseError, UndecidableError
from .geometry import (
    EvaluationError, Point, check_mf_linearizable, full_relative_degree, half_degree,
)
from .model.files import SystemFile, SystemFileError, corpus_names, load_system, parse_point
from .model.system import ValidationError
from .sim import (
    CROSS_TOL, DEFAULT_DT, DEFAULT_HORIZON, DEFAULT_ONSET, OWN_TOL, SimulationError,
    closed_loop_run, decoupling_certificate, integrate, parse_signal,
)
from .synthesis import SynthesisError, flatness_remark, synthesize

EXIT_OK, EXIT_VIOLATED, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    system: str | None = None
    regime: str | None = None
    output_set: str | None = None
    outputs: list | None = None
    candidates: list | None = None
    point: str | None = None
    seed: int = DEFAULT_SEED
    dt: float = DEFAULT_DT
    horizon: float | None = None
    amplitude: float | None = None
    onset: float | None = None
    cross_tol: float = CROSS_TOL
    own_tol: float = OWN_TOL
    inputs: list | None = None
    closed_loop: bool = False
    corrupt: bool = False
    json_path: str | None = None
    csv_path: str | None = None
    card_path: str | None = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------- shared plumbing

@dataclass
class Problem:
    file: SystemFile
    system: object
    point: Point
    key: str | None     # output-set name (None for the file's outputs)


def load_problem(cfg: RunConfig) -> Problem:
    if not cfg.system:
        raise InputError("--system is required")
    f = load_system(cfg.system, cfg.regime)
    S = f.system
    key = None
    if cfg.output_set:
        S = S.with_outputs(f.outputs(cfg.output_set))
        key = cfg.output_set
    if cfg.outputs:
        if len(cfg.outputs) != S.m:
            raise InputError(f"--outputs needs {S.m} expressions, got {len(cfg.outputs)}")
        S = S.with_outputs([f.parse(t) for t in cfg.outputs])
        key = "custom"
    if cfg.point:
        x, v = parse_point(cfg.point, S.n)
    elif f.point_x is not None:
        x, v = f.point_x, f.point_v
    else:
        raise InputError("no analysis point: pass --point or add [analysis] to the file")
    return Problem(f, S, Point.for_system(S, x, v), key)


def _write_json(path, data) -> None:
    if path == "-":
        json.dump(data, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


def _round(values) -> list[float]:
    return [round(float(a), 6) for a in values]


def _fmt(vec) -> str:
    return "(" + ", ".join("undefined" if a is None else str(a) for a in vec) + ")"


# ---------------------------------------------------------------- commands

def cmd_analyze(cfg: RunConfig, out) -> int:
    prob = load_problem(cfg)
    S, point = prob.system, prob.point
    rep = half_degree(S, point, cfg.seed)
    print(f"system {S.name}: n = {S.n}, m = {S.m}", file=out)
    print(f"point x = {list(point.x)}" + (f", v = {list(point.v)}" if point.v is not None else ""),
          file=out)
    print(rep.to_text(), file=out)
    data = {"system": S.name, "half_degree": rep.to_dict()}
    if point.v is not None:
        rd = full_relative_degree(S, point, cfg.seed)
        doubled = [2 * a if a is not None else None for a in rep.nu]
        same = rd.rho == doubled
        print(f"full relative degree rho = {_fmt(rd.rho)}; 2 nu = {_fmt(doubled)}"
              f" ({'equal' if same else 'differ'}); rank of its decoupling matrix = {rd.rank}",
              file=out)
        data["relative_degree"] = rd.to_dict()
        data["rho_equals_2nu"] = same
    if cfg.candidates:
        verdict = check_mf_linearizable(S, [prob.file.parse(t) for t in cfg.candidates],
                                        point, cfg.seed)
        print(f"candidates: {'MF-linearizing' if verdict.linearizable else 'not MF-linearizing'}"
              f" ({verdict.reason})", file=out)
        data["candidates"] = verdict.to_dict()
    if rep.solvable:
        print("verdict: MIOLD solvable at the point", file=out)
    else:
        why = [] if rep.mr1 else ["MR1 violated"]
        if not rep.mr2_holds:
            why.append("MR2 violated")
        print(f"verdict: not solvable ({', '.join(why)})", file=out)
    if cfg.json_path:
        _write_json(cfg.json_path, data)
    return EXIT_OK if rep.solvable else EXIT_VIOLATED


def _synth(cfg: RunConfig, prob: Problem):
    rep = half_degree(prob.system, prob.point, cfg.seed)
    return rep, synthesize(prob.system, rep, prob.point, seed=cfg.seed)


def cmd_synthesize(cfg: RunConfig, out) -> int:
    prob = load_problem(cfg)
    rep, (law, nf) = _synth(cfg, prob)
    d = law.to_dict()
    print(f"system {prob.system.name}: nu = {_fmt(law.nu)}, mu = {law.mu}", file=out)
    for i, p in enumerate(d["phi"]):
        print(f"  phi[{i + 1}] = {p}", file=out)
    print("feedback u = inverse(D) * (-C - A + ut) with", file=out)
    for l, a in enumerate(d["A"]):
        print(f"  A[{l + 1}] = {a}", file=out)
    for l, row in enumerate(d["D"]):
        for r, x in enumerate(row):
            print(f"  D[{l + 1}][{r + 1}] = {x}", file=out)
    for l, c in enumerate(d["C"]):
        print(f"  C[{l + 1}] = {c}", file=out)
    nfd = nf.to_dict()
    print(f"normal form: chains {nf.chain_lengths}, observable dimension {nf.observable_dim},"
          f" unobserved dimension {nf.unobserved_dim}; verified: {nf.holds}"
          f" ({'certified' if nf.certified else 'numerical'})", file=out)
    for k, v in nfd["unobserved_block"].items():
        print(f"  {k} = {v}", file=out)
    flat = flatness_remark(law)
    print(f"flatness: {flat['statement']}", file=out)
    card = law.controller_card()
    if cfg.card_path:
        Path(cfg.card_path).write_text(card)
    else:
        print(card, end="", file=out)
    if cfg.json_path:
        _write_json(cfg.json_path, {"system": prob.system.name, "half_degree": rep.to_dict(),
                                    "feedback": d, "normal_form": nfd, "flatness": flat})
    return EXIT_OK if nf.holds else EXIT_VIOLATED


def _signals(cfg: RunConfig, m: int):
    if not cfg.inputs:
        return None
    if len(cfg.inputs) != m:
        raise InputError(f"--input needs {m} signals, got {len(cfg.inputs)}")
    return [parse_signal(s) for s in cfg.inputs]


def cmd_simulate(cfg: RunConfig, out) -> int:
    prob = load_problem(cfg)
    S, point = prob.system, prob.point
    signals = _signals(cfg, S.m)
    horizon = DEFAULT_HORIZON if cfg.horizon is None else cfg.horizon
    t0 = time.perf_counter()
    if cfg.closed_loop:
        _rep, (law, _nf) = _synth(cfg, prob)
        traj, new = closed_loop_run(S, law, point.x, point.v, signals, horizon, cfg.dt)
    else:
        traj, new = integrate(S, point.x, point.v, signals, horizon, cfg.dt), None
    elapsed = time.perf_counter() - t0
    final = traj.states[-1]
    print(f"simulated {len(traj.times) - 1} steps of dt = {cfg.dt} in {elapsed:.2f} s", file=out)
    print(f"final x = {_round(final[:S.n])}, v = {_round(final[S.n:])}", file=out)
    print(f"final y = {_round(traj.outputs[-1])}", file=out)
    if cfg.csv_path:
        path = Path(cfg.csv_path)
        if path.suffix != ".csv":
            path.mkdir(parents=True, exist_ok=True)
            traj.to_csv(path / "trajectory.csv")
            if new is not None:
                new.to_csv(path / "trajectory_new.csv")
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            traj.to_csv(path)
    return EXIT_OK


def _certify_options(cfg: RunConfig, prob: Problem) -> dict:
    opts = prob.file.certify_options(prob.key)
    if cfg.amplitude is not None:
        opts["amplitude"] = cfg.amplitude
    if cfg.onset is not None:
        opts["onset"] = cfg.onset
    if cfg.horizon is not None:
        opts["horizon"] = cfg.horizon
    return opts


def run_certificate(cfg: RunConfig, prob: Problem, law):
    opts = _certify_options(cfg, prob)
    return decoupling_certificate(prob.system, law, prob.point.x, prob.point.v, dt=cfg.dt,
                                  cross_tol=cfg.cross_tol, own_tol=cfg.own_tol, **opts)


def cmd_certify(cfg: RunConfig, out) -> int:
    prob = load_problem(cfg)
    rep, (law, nf) = _synth(cfg, prob)
    if cfg.corrupt:
        law = law.corrupted()
    cert = run_certificate(cfg, prob, law)
    d = cert.to_dict()
    print(f"system {prob.system.name}: nu = {_fmt(law.nu)}"
          + (" (corrupted law: velocity terms dropped)" if cfg.corrupt else ""), file=out)
    for ch in d["channels"]:
        print(f"  channel {ch['channel']}: max cross deviation {ch['max_cross_deviation']:.3e}"
              f" (tol {cert.cross_tol:g}), own-channel deviation {ch['own_deviation']:.3e}"
              f" (tol {cert.own_tol:g}) -> {'pass' if ch['passed'] else 'FAIL'}", file=out)
    if cert.superposition is not None:
        print(f"  superposition deviation {cert.superposition:.3e}", file=out)
    print(f"certificate: {'PASS' if cert.passed else 'FAIL'}", file=out)
    if cfg.json_path:
        _write_json(cfg.json_path, d)
    if cfg.csv_path:
        cert.write_csv(cfg.csv_path)
    return EXIT_OK if cert.passed else EXIT_VIOLATED


@dataclass
class CorpusRow:
    system: str
    output_set: str
    nu: list
    rho: list | None
    solvable: bool
    linearizable: bool
    certificate: str
    seconds: float
    regressions: list

    def cells(self) -> list[str]:
        return [self.system, self.output_set, _fmt(self.nu),
                _fmt(self.rho) if self.rho is not None else "-",
                "yes" if self.solvable else "no", "yes" if self.linearizable else "no",
                self.certificate, f"{self.seconds:.2f}",
                "ok" if not self.regressions else "; ".join(self.regressions)]


CORPUS_HEADER = ["system", "outputs", "nu", "rho", "solvable", "full MF-lin", "certificate",
                 "seconds", "check"]


def corpus_rows(cfg: RunConfig, names=None, certify: bool = True):
    """One row per bundled system, regime and output set."""
    for name in names or corpus_names():
        base = load_system(name)
        for regime in base.regimes or [None]:
            f = load_system(name, regime) if regime else base
            for key in [None] + sorted(f.alternatives):
                yield corpus_row(cfg, f, key, certify)


def corpus_row(cfg: RunConfig, f: SystemFile, key: str | None, certify: bool = True) -> CorpusRow:
    t0 = time.perf_counter()
    S = f.system if key is None else f.system.with_outputs(f.outputs(key))
    point = Point.for_system(S, f.point_x, f.point_v)
    rep = half_degree(S, point, cfg.seed)
    rho = full_relative_degree(S, point, cfg.seed).rho if point.v is not None else None
    linearizable = rep.solvable and rep.mu == S.n
    cert = "-"
    regressions = []
    if rep.solvable and certify:
        try:
            law, nf = synthesize(S, rep, point, seed=cfg.seed)
            if not nf.holds:
                regressions.append("normal form check failed")
            prob = Problem(f, S, point, key)
            c = run_certificate(cfg, prob, law)
            cert = "pass" if c.passed else "FAIL"
        except (SynthesisError, SimulationError) as exc:
            cert = "abort"
            regressions.append(str(exc))
        if cert != "pass":
            regressions.append("certificate did not pass")
    expect = f.expect.get(key or "outputs", {})
    got = {"nu": rep.nu, "rho": rho, "solvable": rep.solvable, "linearizable": linearizable}
    for k, want in expect.items():
        if got[k] != want:
            regressions.append(f"{k} = {got[k]} (expected {want})")
    label = key or "outputs"
    return CorpusRow(f.name, label, rep.nu, rho, rep.solvable, linearizable, cert,
                     time.perf_counter() - t0, regressions)


def format_table(rows) -> str:
    cells = [CORPUS_HEADER] + [r.cells() for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(CORPUS_HEADER))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_corpus(cfg: RunConfig, out) -> int:
    names = [cfg.system] if cfg.system else None
    rows = []
    for row in corpus_rows(cfg, names, certify=not cfg.extra.get("no_certify", False)):
        rows.append(row)
        print(f"... {row.system} / {row.output_set}: {row.seconds:.2f} s", file=sys.stderr)
    print(format_table(rows), file=out)
    bad = [r for r in rows if r.regressions]
    print(f"{len(rows)} rows, {len(bad)} regressions", file=out)
    if cfg.json_path:
        _write_json(cfg.json_path, [dict(zip(CORPUS_HEADER, r.cells())) | {
            "nu": r.nu, "rho": r.rho, "regressions": r.regressions} for r in rows])
    return EXIT_OK if not bad else EXIT_VIOLATED


COMMANDS = {
    "analyze": cmd_analyze, "synthesize": cmd_synthesize, "simulate": cmd_simulate,
    "certify": cmd_certify, "corpus": cmd_corpus,
}


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miold",
        description="Input-output linearization and decoupling of mechanical control systems "
                    "by mechanical feedback.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, system_required=True):
        p.add_argument("--system", required=system_required,
                       help="system file, or the name of a bundled system")
        p.add_argument("--regime", help="named regime inside the system file")
        p.add_argument("--output-set", help="named alternative outputs from the system file")
        p.add_argument("--outputs", nargs="+", metavar="EXPR", help="override the outputs")
        p.add_argument("--point", help='analysis point, e.g. "x=0.1,0.2;v=0,0"')
        p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                       help="seed of the randomized zero tests")
        p.add_argument("--json", dest="json_path", metavar="PATH",
                       help="write a JSON report ('-' for stdout)")

    def timing(p):
        p.add_argument("--dt", type=float, default=DEFAULT_DT, help="RK4 step (s)")
        p.add_argument("--horizon", type=float, default=None, help="simulated time (s)")

    p = sub.add_parser("analyze", help="half-degree, decoupling matrix, MR1/MR2 verdicts")
    common(p)
    p.add_argument("--candidates", nargs="+", metavar="EXPR",
                   help="check whether these outputs fully linearize the system")

    p = sub.add_parser("synthesize", help="build the linearizing transformation and feedback")
    common(p)
    p.add_argument("--card", dest="card_path", metavar="PATH", help="write the controller card")

    p = sub.add_parser("simulate", help="open-loop (or --closed-loop) RK4 run")
    common(p)
    timing(p)
    p.add_argument("--input", dest="inputs", nargs="+", metavar="SIGNAL",
                   help="one per input: zero | step:A@t0 | sin:A@f | table:t=v,...")
    p.add_argument("--closed-loop", action="store_true",
                   help="apply the synthesized feedback; inputs drive the new inputs")
    p.add_argument("--csv", dest="csv_path", metavar="PATH", help="CSV file or directory")

    p = sub.add_parser("certify", help="numerical linearity and decoupling certificate")
    common(p)
    timing(p)
    p.add_argument("--amplitude", type=float, help="step amplitude (default from the file, else 1)")
    p.add_argument("--onset", type=float, help=f"step time (default {DEFAULT_ONSET} s)")
    p.add_argument("--cross-tol", type=float, default=CROSS_TOL)
    p.add_argument("--own-tol", type=float, default=OWN_TOL)
    p.add_argument("--corrupt", action="store_true",
                   help="drop the velocity-quadratic feedback terms (negative control)")
    p.add_argument("--csv", dest="csv_path", metavar="DIR", help="directory for trajectory CSVs")

    p = sub.add_parser("corpus", help="run analyze and certify over the bundled systems")
    p.add_argument("--system", help="restrict to one bundled system")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    timing(p)
    p.add_argument("--no-certify", action="store_true", help="skip the simulations")
    p.add_argument("--json", dest="json_path", metavar="PATH")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    values = vars(ns).copy()
    extra = {}
    if values.pop("no_certify", False):
        extra["no_certify"] = True
    known = set(RunConfig.__dataclass_fields__)
    cfg = RunConfig(**{k: v for k, v in values.items() if k in known})
    cfg.extra = extra
    return cfg


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    cfg = config_from_args(ns)
    try:
        return COMMANDS[cfg.command](cfg, out)
    except SynthesisError as exc:
        print(f"condition violated: {exc}", file=sys.stderr)
        return EXIT_VIOLATED
    except (SimulationError, EvaluationError, UndecidableError, DomainError,
            ArithmeticError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SystemFileError, ParseError, InputError, ValidationError, KeyError, ValueError,
            OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
