"""Fixed-step RK4 simulation of open- and closed-loop mechanical systems.

States are ``z = (x, v)`` as plain lists; the right-hand sides are compiled
from the symbolic data once per run.  Inputs are evaluated with one-sided
limits at step boundaries (right limit at the start of a step, left limit at
its end) so that a discontinuity placed on the grid is integrated exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import DomainError, Expr, Var, compile_exprs, simplify
from .model.lagrange import LagrangianSpec
from .model.system import MechanicalSystem, quadratic_form
from .synthesis import FeedbackLaw

DIVERGENCE_NORM = 1e9
SINGULAR_RATIO = 1e-6
CROSS_TOL = 1e-7
OWN_TOL = 1e-5
SUPERPOSITION_TOL = 1e-6
DEFAULT_DT = 1e-4
DEFAULT_HORIZON = 1.0
DEFAULT_ONSET = 0.1


# ---------------------------------------------------------------- signals

class Signal:
    """Scalar input signal; ``side`` is +1 / -1 for right / left limits."""

    def value(self, t: float, side: int = 0) -> float:
        raise NotImplementedError

    def __add__(self, other: "Signal") -> "Signal":
        return Sum((self, other))


@dataclass(frozen=True)
class Zero(Signal):
    def value(self, t, side=0):
        return 0.0


def _after(t: float, onset: float, side: int) -> bool:
    tol = 1e-12 * max(1.0, abs(onset))
    if side > 0:
        return t >= onset - tol
    if side < 0:
        return t > onset + tol
    return t >= onset


@dataclass(frozen=True)
class Step(Signal):
    amplitude: float = 1.0
    onset: float = 0.0

    def value(self, t, side=0):
        return self.amplitude if _after(t, self.onset, side) else 0.0


@dataclass(frozen=True)
class Sinusoid(Signal):
    amplitude: float = 1.0
    frequency: float = 1.0   # Hz
    phase: float = 0.0

    def value(self, t, side=0):
        return self.amplitude * math.sin(2.0 * math.pi * self.frequency * t + self.phase)


@dataclass(frozen=True)
class Table(Signal):
    """Piecewise constant: ``values[i]`` on ``[times[i], times[i+1])``, zero before ``times[0]``."""

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("table needs as many values as times")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("table times must increase")

    def value(self, t, side=0):
        out = 0.0
        for ti, vi in zip(self.times, self.values):
            if _after(t, ti, side):
                out = vi
            else:
                break
        return out


@dataclass(frozen=True)
class Sum(Signal):
    parts: tuple

    def value(self, t, side=0):
        return sum(p.value(t, side) for p in self.parts)


def parse_signal(text: str) -> Signal:
    """``zero``, ``step:A@t0``, ``sin:A@f`` or ``table:t0=v0,t1=v1,...``."""
    text = text.strip()
    kind, _, arg = text.partition(":")
    try:
        if kind == "zero":
            return Zero()
        if kind == "step":
            a, _, t0 = arg.partition("@")
            return Step(float(a or 1.0), float(t0 or 0.0))
        if kind == "sin":
            a, _, f = arg.partition("@")
            return Sinusoid(float(a or 1.0), float(f or 1.0))
        if kind == "table":
            pairs = [p.split("=") for p in arg.split(",") if p]
            return Table(tuple(float(t) for t, _ in pairs), tuple(float(v) for _, v in pairs))
    except ValueError as exc:
        raise ValueError(f"bad signal {text!r}: {exc}") from None
    raise ValueError(f"unknown signal kind {kind!r}; use zero, step:A@t0, sin:A@f, table:t=v,...")


def as_signals(u, m: int) -> list[Signal]:
    if u is None:
        return [Zero()] * m
    if isinstance(u, (Signal, str)):
        u = [u]
    u = [parse_signal(s) if isinstance(s, str) else s for s in u]
    if len(u) != m:
        raise ValueError(f"need {m} input signals, got {len(u)}")
    return u


# ---------------------------------------------------------------- trajectories

class SimulationError(RuntimeError):
    def __init__(self, message: str, time: float, trajectory: "Trajectory | None" = None):
        super().__init__(f"{message} at t = {time:.6g}")
        self.time = time
        self.trajectory = trajectory


class DivergenceError(SimulationError):
    pass


class SimulationDomainError(SimulationError):
    pass


class SingularLocusError(SimulationError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray       # rows (x, v)
    inputs: np.ndarray
    outputs: np.ndarray
    n: int
    m: int

    @property
    def x(self) -> np.ndarray:
        return self.states[:, :self.n]

    @property
    def v(self) -> np.ndarray:
        return self.states[:, self.n:]

    def header(self) -> list[str]:
        return (["t"] + [f"x{i}" for i in range(1, self.n + 1)]
                + [f"v{i}" for i in range(1, self.n + 1)]
                + [f"u{r}" for r in range(1, self.m + 1)]
                + [f"y{r}" for r in range(1, self.m + 1)])

    def rows(self):
        for k in range(len(self.times)):
            yield [self.times[k], *self.states[k], *self.inputs[k], *self.outputs[k]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([repr(float(a)) for a in row])


def _steps(horizon: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    return int(round(horizon / dt))


def _rk4(rhs, output, z0, n, m, horizon, dt, t0=0.0) -> Trajectory:
    """``rhs(t, z, side) -> (dz, u)``; ``output(z) -> y``."""
    steps = _steps(horizon, dt)
    dim = len(z0)
    times = np.empty(steps + 1)
    states = np.empty((steps + 1, dim))
    inputs = np.empty((steps + 1, m))
    outputs = np.empty((steps + 1, m))
    z = [float(a) for a in z0]
    half = 0.5 * dt
    sixth = dt / 6.0
    k = 0

    def partial():
        return Trajectory(times[:k], states[:k], inputs[:k], outputs[:k], n, m)

    t = t0
    try:
        for k in range(steps + 1):
            t = t0 + k * dt
            k1, u = rhs(t, z, 1)
            times[k] = t
            states[k] = z
            inputs[k] = u
            outputs[k] = output(z)
            if k == steps:
                break
            k2, _ = rhs(t + half, [a + half * b for a, b in zip(z, k1)], 0)
            k3, _ = rhs(t + half, [a + half * b for a, b in zip(z, k2)], 0)
            k4, _ = rhs(t + dt, [a + dt * b for a, b in zip(z, k3)], -1)
            z = [a + sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(z, k1, k2, k3, k4)]
            if not all(abs(a) <= DIVERGENCE_NORM for a in z):
                k += 1
                raise DivergenceError("state norm exceeded 1e9", t + dt, partial())
    except DomainError as exc:
        raise SimulationDomainError(f"evaluation domain error ({exc})", t, partial()) from None
    return Trajectory(times, states, inputs, outputs, n, m)


def _params(S: MechanicalSystem, params) -> dict:
    out = dict(S.params)
    if params:
        out.update(params)
    return out


def _dynamics_exprs(S: MechanicalSystem) -> list[Expr]:
    n = S.n
    v = [Var(n + i + 1) for i in range(n)]
    accel = [simplify(S.e[i] - quadratic_form(S.Gamma[i], v)) for i in range(n)]
    return accel + [x for col in S.g for x in col]


def integrate(S: MechanicalSystem, x0: Sequence[float], v0: Sequence[float] | None = None,
              u=None, horizon: float = DEFAULT_HORIZON, dt: float = DEFAULT_DT,
              params=None) -> Trajectory:
    """Open-loop RK4 run of ``S`` with input signals ``u`` (one per channel)."""
    n, m = S.n, S.m
    p = _params(S, params)
    signals = as_signals(u, m)
    f = compile_exprs(_dynamics_exprs(S), p, "open_loop")
    y = compile_exprs(list(S.h), p, "outputs")

    def rhs(t, z, side):
        vals = f(z)
        us = [s.value(t, side) for s in signals]
        acc = list(vals[:n])
        for r in range(m):
            ur = us[r]
            if ur:
                base = n + r * n
                for i in range(n):
                    acc[i] += vals[base + i] * ur
        return z[n:] + acc, us

    z0 = list(x0) + (list(v0) if v0 is not None else [0.0] * n)
    return _rk4(rhs, y, z0, n, m, horizon, dt)


def _singular_values(D, m: int) -> tuple[float, float, float]:
    """``(sigma_min, sigma_max, det)`` of the row-major ``m x m`` matrix ``D``."""
    if m == 1:
        a = abs(D[0])
        return a, a, D[0]
    if m == 2:
        a, b, c, d = D
        det = a * d - b * c
        fro = a * a + b * b + c * c + d * d
        smax = math.sqrt(0.5 * (fro + math.sqrt(max(fro * fro - 4.0 * det * det, 0.0))))
        return (abs(det) / smax if smax > 0 else 0.0), smax, det
    mat = np.array(D).reshape(m, m)
    sv = np.linalg.svd(mat, compute_uv=False)
    return float(sv[-1]), float(sv[0]), float(np.linalg.det(mat))


def _solver(m: int, reference: float, sign: float):
    """Solve ``D u = b``; ``None`` on the singular locus.

    The locus test is ``sigma_min < 1e-6 * max(sigma_max, reference)`` where
    ``reference`` is ``sigma_max`` at the initial state, so a uniformly
    shrinking ``D`` (always the case for a single input) is also caught.  A
    step can also jump across the locus without landing near it; ``det D``
    then has the opposite ``sign`` to the initial state.
    """
    def solve(D, b):
        smin, smax, det = _singular_values(D, m)
        if smin == 0.0 or smin < SINGULAR_RATIO * max(smax, reference) or det * sign < 0:
            return None
        if m == 1:
            return [b[0] / D[0]]
        if m == 2:
            a, bb, c, d = D
            return [(d * b[0] - bb * b[1]) / det, (a * b[1] - c * b[0]) / det]
        return list(np.linalg.solve(np.array(D).reshape(m, m), np.asarray(b)))
    return solve


def closed_loop_run(S: MechanicalSystem, law: FeedbackLaw, x0: Sequence[float],
                    v0: Sequence[float] | None = None, u_tilde=None,
                    horizon: float = DEFAULT_HORIZON, dt: float = DEFAULT_DT,
                    params=None) -> tuple[Trajectory, Trajectory]:
    """Run ``S`` under ``u = D^-1 (-C - A + u~)``.

    Returns the trajectory in the original coordinates (inputs are the
    physical ``u``) and its image under ``(phi, dphi)`` (inputs ``u~``,
    outputs the chain heads).
    """
    n, m = S.n, S.m
    p = _params(S, params)
    signals = as_signals(u_tilde, m)
    exprs = (list(law.A) + [d for row in law.Dmat for d in row] + law.C()
             + _dynamics_exprs(S))
    f = compile_exprs(exprs, p, "closed_loop")
    y = compile_exprs(list(S.h), p, "outputs")
    oD, oC, oF = m, m + m * m, 2 * m + m * m
    z0 = list(x0) + (list(v0) if v0 is not None else [0.0] * n)
    try:
        _, reference, det0 = _singular_values(f(z0)[oD:oC], m)
    except DomainError as exc:
        raise SimulationDomainError(f"evaluation domain error ({exc})", 0.0) from None
    solve = _solver(m, reference, math.copysign(1.0, det0))

    def rhs(t, z, side):
        vals = f(z)
        ut = [s.value(t, side) for s in signals]
        b = [ut[l] - vals[oC + l] - vals[l] for l in range(m)]
        us = solve(vals[oD:oC], b)
        if us is None:
            raise _Singular(t)
        acc = list(vals[oF:oF + n])
        for r in range(m):
            base = oF + n + r * n
            for i in range(n):
                acc[i] += vals[base + i] * us[r]
        return z[n:] + acc, us

    try:
        traj = _rk4(rhs, y, z0, n, m, horizon, dt)
    except _Singular as exc:
        raise SingularLocusError("hit singular locus of the decoupling matrix", exc.t) from None
    return traj, to_new_coordinates(law, traj, signals, p)


class _Singular(Exception):
    def __init__(self, t):
        self.t = t


def to_new_coordinates(law: FeedbackLaw, traj: Trajectory, signals, params) -> Trajectory:
    n, m = law.n, law.m
    f = compile_exprs(list(law.phi) + [d for row in law.Jphi for d in row], params, "frame")
    states = np.empty_like(traj.states)
    for k, z in enumerate(traj.states):
        vals = f(z[:n])
        states[k, :n] = vals[:n]
        J = np.asarray(vals[n:]).reshape(n, n)
        states[k, n:] = J @ z[n:]
    inputs = np.array([[s.value(t, 1) for s in signals] for t in traj.times]).reshape(-1, m)
    heads = [law.mu_offsets[l] for l in range(m)]
    outputs = states[:, heads]
    return Trajectory(traj.times.copy(), states, inputs, outputs, n, m)


# ---------------------------------------------------------------- analytic references

def chain_response(nu: int, y0: Sequence[float], times: np.ndarray,
                   step: Step | None = None) -> np.ndarray:
    """Output of ``y^(2 nu) = u`` from derivatives ``y0 = (y, y', ..., y^(2nu-1))`` at t=0."""
    t = np.asarray(times, dtype=float)
    out = np.zeros_like(t)
    for q, c in enumerate(y0):
        if c:
            out += c * t ** q / math.factorial(q)
    if step is not None and step.amplitude:
        s = np.clip(t - step.onset, 0.0, None)
        out += step.amplitude * s ** (2 * nu) / math.factorial(2 * nu)
    return out


def chain_initial_derivatives(law: FeedbackLaw, z_new: Sequence[float], l: int) -> list[float]:
    """``(y, y', ..., y^(2nu-1))`` of output ``l`` from a state in the new coordinates."""
    n = law.n
    out = []
    for i in law.chain_indices(l):
        out += [float(z_new[i]), float(z_new[n + i])]
    return out


# ---------------------------------------------------------------- certificates

@dataclass
class ChannelResult:
    channel: int
    cross: dict          # other output index -> max deviation
    own_deviation: float
    passed: bool

    def to_dict(self) -> dict:
        return {"channel": self.channel,
                "cross_deviation": {str(k): v for k, v in self.cross.items()},
                "max_cross_deviation": max(self.cross.values(), default=0.0),
                "own_deviation": self.own_deviation, "passed": self.passed}


@dataclass
class Certificate:
    system: str
    nu: list
    horizon: float
    dt: float
    onset: float
    amplitude: float
    channels: list = field(default_factory=list)
    superposition: float | None = None
    trajectories: dict = field(default_factory=dict)
    cross_tol: float = CROSS_TOL
    own_tol: float = OWN_TOL

    @property
    def passed(self) -> bool:
        ok = all(c.passed for c in self.channels)
        if self.superposition is not None:
            ok = ok and self.superposition < SUPERPOSITION_TOL
        return ok

    def to_dict(self) -> dict:
        return {
            "system": self.system, "nu": self.nu, "horizon": self.horizon, "dt": self.dt,
            "step_onset": self.onset, "step_amplitude": self.amplitude,
            "tolerances": {"cross": self.cross_tol, "own": self.own_tol,
                           "superposition": SUPERPOSITION_TOL},
            "channels": [c.to_dict() for c in self.channels],
            "superposition_deviation": self.superposition,
            "passed": self.passed,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, directory) -> list:
        from pathlib import Path
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        for label, traj in self.trajectories.items():
            path = d / f"{label}.csv"
            traj.to_csv(path)
            written.append(path)
        return written


def decoupling_certificate(S: MechanicalSystem, law: FeedbackLaw, x0: Sequence[float],
                           v0: Sequence[float] | None = None,
                           horizon: float = DEFAULT_HORIZON, dt: float = DEFAULT_DT,
                           amplitude: float = 1.0, onset: float = DEFAULT_ONSET,
                           superposition: bool | None = None, params=None,
                           cross_tol: float = CROSS_TOL, own_tol: float = OWN_TOL) -> Certificate:
    """Paired runs per channel (zero vs. step on that channel only).

    Other outputs must not move (cross deviation) and the driven output must
    follow the integrator chain exactly (own deviation, including the free
    response from the initial state).  ``superposition`` adds a linearity
    check; by default it runs when every coordinate belongs to a chain.
    """
    m = S.m
    cert = Certificate(S.name, list(law.nu), horizon, dt, onset, amplitude,
                       cross_tol=cross_tol, own_tol=own_tol)
    base, base_new = closed_loop_run(S, law, x0, v0, None, horizon, dt, params)
    cert.trajectories["baseline"] = base
    cert.trajectories["baseline_new"] = base_new
    step = Step(amplitude, onset)
    for j in range(m):
        signals = [Zero()] * m
        signals[j] = step
        run, run_new = closed_loop_run(S, law, x0, v0, signals, horizon, dt, params)
        cert.trajectories[f"step{j + 1}"] = run
        cert.trajectories[f"step{j + 1}_new"] = run_new
        cross = {}
        for i in range(m):
            if i != j:
                diff = run.outputs[:, i] - base.outputs[:, i]
                cross[i + 1] = float(np.max(np.abs(diff))) if len(diff) else 0.0
        y0 = chain_initial_derivatives(law, run_new.states[0], j) if len(run.times) else []
        ref = chain_response(law.nu[j], y0, run.times, step)
        own = float(np.max(np.abs(run.outputs[:, j] - ref))) if len(ref) else 0.0
        passed = all(c < cross_tol for c in cross.values()) and own < own_tol
        cert.channels.append(ChannelResult(j + 1, cross, own, passed))
    if superposition is None:
        superposition = law.mu == law.n
    if superposition:
        first = [Zero()] * m
        first[0] = step
        known = {"first": cert.trajectories["step1"].outputs if m else None,
                 "zero": base.outputs}
        cert.superposition = superposition_deviation(
            S, law, x0, v0, horizon, dt, first, [Sinusoid(0.5 * amplitude, 2.0)] * m,
            params, known)
    return cert


def superposition_deviation(S: MechanicalSystem, law: FeedbackLaw, x0, v0=None,
                            horizon: float = DEFAULT_HORIZON, dt: float = DEFAULT_DT,
                            first=None, second=None, params=None, known=None) -> float:
    """``max |y(u1+u2) - y(u1) - y(u2) + y(0)|`` over all outputs.

    ``known`` may carry already computed outputs under ``"first"`` / ``"zero"``.
    """
    m = S.m
    if first is None:
        first = [Step(1.0, DEFAULT_ONSET)] * m
    if second is None:
        second = [Sinusoid(0.5, 2.0)] * m
    known = known or {}
    both = [a + b for a, b in zip(first, second)]

    def outputs(label, u):
        if known.get(label) is not None:
            return known[label]
        return closed_loop_run(S, law, x0, v0, u, horizon, dt, params)[0].outputs

    ys = [outputs("both", both), outputs("first", first), outputs("second", second),
          outputs("zero", None)]
    if not len(ys[0]):
        return 0.0
    return float(np.max(np.abs(ys[0] - ys[1] - ys[2] + ys[3])))


def energy_drift(L: LagrangianSpec, traj: Trajectory, params=None) -> float:
    """Largest relative deviation of ``1/2 v^T M v + V`` from its initial value."""
    energies = [L.energy(z[:traj.n], z[traj.n:], params) for z in traj.states]
    e0 = energies[0]
    scale = max(abs(e0), 1e-12)
    return max(abs(e - e0) for e in energies) / scale


def observed_order(run, dt: float) -> float:
    """Empirical convergence order from final states at ``dt``, ``dt/2``, ``dt/4``.

    ``run(dt)`` must return a Trajectory over a fixed horizon.
    """
    finals = [run(dt / 2 ** k).states[-1] for k in range(3)]
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    if e2 == 0.0:
        return math.inf
    return math.log2(e1 / e2)
