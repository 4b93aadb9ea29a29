import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import corpus_case
from miold.expr import ZERO, parse
from miold.model import MechanicalSystem
from miold.sim import (
    DivergenceError, Sinusoid, SimulationDomainError, SingularLocusError, Step, Sum, Table, Zero,
    chain_response, closed_loop_run, decoupling_certificate, integrate, parse_signal,
    superposition_deviation,
)
from miold.synthesis import normal_form_system, synthesize


def one_dof(e, g="1"):
    x = ["x1"]
    return MechanicalSystem([[[ZERO]]], [parse(e, x)], [[parse(g, x)]], [parse("x1", x)])


# ---------------------------------------------------------------- open loop

def test_double_integrator_step():
    traj = integrate(one_dof("0"), [0.0], [0.0], Step(1.0, 0.0), 1.0, 1e-4)
    assert len(traj.times) == 10001 and traj.times[-1] == pytest.approx(1.0)
    assert abs(traj.x[-1, 0] - 0.5) < 1e-9 and abs(traj.v[-1, 0] - 1.0) < 1e-9
    assert traj.inputs[0, 0] == 1.0


def test_step_onset_inside_a_step_is_resolved():
    """Onset off the grid: RK4 sees the jump inside a step and stays within O(dt)."""
    traj = integrate(one_dof("0"), [0.0], [0.0], Step(1.0, 0.10005), 1.0, 1e-4)
    exact = 0.5 * (1.0 - 0.10005) ** 2
    assert abs(traj.x[-1, 0] - exact) < 1e-4


def test_pendulum_about_the_upright_grows_at_the_linearized_rate():
    """Small-angle open loop: x1 ~ x1(0) cosh(lambda t) with lambda = sqrt(m0/md)."""
    _, S, _ = corpus_case("iwp")
    lam = math.sqrt(S.params["m0"] / S.params["md"])
    x0 = 1e-6
    period = 2 * math.pi / lam
    traj = integrate(S, [x0, 0.0], [0.0, 0.0], None, period, 1e-3)
    rate = math.acosh(traj.x[-1, 0] / x0) / traj.times[-1]
    assert abs(rate - lam) / lam < 0.02


def test_wheel_pendulum_hanging_down_oscillates_at_the_linearized_frequency():
    """About x1 = pi the same data linearize to an oscillator of frequency sqrt(m0/md)."""
    _, S, _ = corpus_case("iwp")
    lam = math.sqrt(S.params["m0"] / S.params["md"])
    traj = integrate(S, [math.pi + 1e-4, 0.0], [0.0, 0.0], None, 2 * 2 * math.pi / lam, 1e-3)
    y = traj.x[:, 0] - math.pi
    crossings = [traj.times[k] for k in range(1, len(y)) if y[k - 1] > 0 >= y[k]]
    measured = crossings[1] - crossings[0]
    assert abs(measured - 2 * math.pi / lam) / (2 * math.pi / lam) < 0.02


def test_divergence_is_reported_with_partial_trajectory():
    with pytest.raises(DivergenceError) as info:
        integrate(one_dof("x1^2"), [1.0], [1.0], None, 5.0, 1e-3)
    err = info.value
    assert 0 < err.time < 5.0 and len(err.trajectory.times) > 0
    assert np.all(np.isfinite(err.trajectory.states))


def test_domain_error_is_reported():
    with pytest.raises(SimulationDomainError) as info:
        integrate(one_dof("ln(x1)"), [0.5], [-2.0], None, 1.0, 1e-3)
    assert 0.1 < info.value.time < 0.5


def test_zero_horizon_and_bad_step():
    traj = integrate(one_dof("0"), [0.3], [0.1], None, 0.0, 1e-3)
    assert traj.states.shape == (1, 2) and traj.x[0, 0] == 0.3
    with pytest.raises(ValueError):
        integrate(one_dof("0"), [0.0], None, None, 1.0, 0.0)
    with pytest.raises(ValueError):
        integrate(one_dof("0"), [0.0], None, None, -1.0, 1e-3)


def test_csv_layout(tmp_path):
    _, S, p = corpus_case("tora3")
    traj = integrate(S, p.x, p.v, "step:1@0.01", 0.05, 1e-2)
    path = tmp_path / "run.csv"
    traj.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x1", "x2", "x3", "v1", "v2", "v3", "u1", "y1"]
    assert len(rows) == 1 + 6
    assert [float(a) for a in rows[3]] == pytest.approx(list(traj.rows())[2])


# ---------------------------------------------------------------- signals

def test_signal_parsing_and_one_sided_limits():
    s = parse_signal("step:2@0.5")
    assert s == Step(2.0, 0.5)
    assert s.value(0.5, 1) == 2.0 and s.value(0.5, -1) == 0.0 and s.value(0.5) == 2.0
    assert parse_signal("zero").value(3.0) == 0.0
    sn = parse_signal("sin:1.5@2")
    assert sn.value(0.125) == pytest.approx(1.5)
    tb = parse_signal("table:0=1,1=-1,2=0.5")
    assert [tb.value(t) for t in (-0.1, 0.0, 0.99, 1.0, 5.0)] == [0.0, 1.0, 1.0, -1.0, 0.5]
    assert (Step(1.0, 0.0) + Sinusoid(1.0, 1.0)).value(0.25) == pytest.approx(2.0)
    assert isinstance(Zero() + Zero(), Sum)


@pytest.mark.parametrize("text", ["ramp:1", "step:a@0", "table:1=1,0=2", "sin:x"])
def test_bad_signals(text):
    with pytest.raises(ValueError):
        parse_signal(text)


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(-5, 5)), min_size=1, max_size=6,
                unique_by=lambda p: p[0]),
       st.floats(-1, 11))
def test_table_is_piecewise_constant(pairs, t):
    pairs = sorted(pairs)
    tb = Table(tuple(a for a, _ in pairs), tuple(b for _, b in pairs))
    expected = 0.0
    for a, b in pairs:
        if t >= a:
            expected = b
    assert tb.value(t) == expected


# ---------------------------------------------------------------- closed loop

def test_tora3_chain_fourth_difference():
    """Outside the onset the fourth difference of y matches u~ (stencil spacing 100 dt)."""
    f, S, p = corpus_case("tora3")
    law, _ = synthesize(S, None, p)
    dt = 1e-4
    amp, onset = 1.0, 0.1
    orig, _ = closed_loop_run(S, law, p.x, p.v, [Step(amp, onset)], 1.0, dt)
    y = orig.outputs[:, 0]
    H = 100
    h4 = (H * dt) ** 4
    worst = 0.0
    for k in range(2 * H, len(y) - 2 * H, 50):
        t = orig.times[k]
        if abs(t - onset) <= 2 * H * dt + dt:
            continue
        d4 = (y[k + 2 * H] - 4 * y[k + H] + 6 * y[k] - 4 * y[k - H] + y[k - 2 * H]) / h4
        worst = max(worst, abs(d4 - (amp if t > onset else 0.0)))
    assert worst < 1e-4


def test_configuration_outputs_follow_double_integrators():
    """nu = (1, 1): each output is y0 + y0' t + A (t - t0)^2 / 2 under a step on its channel."""
    f, S, p = corpus_case("double_pendulum_toras", "configurations")
    law, _ = synthesize(S, None, p)
    u = [Step(0.1, 0.1), Step(-0.2, 0.3)]
    orig, new = closed_loop_run(S, law, p.x, p.v, u, 1.0, 1e-4)
    for l in range(2):
        i = l + 1                        # outputs are x2 and x3
        ref = p.x[i] + p.v[i] * orig.times
        s = np.clip(orig.times - u[l].onset, 0, None)
        ref = ref + u[l].amplitude * s ** 2 / 2
        assert np.max(np.abs(orig.outputs[:, l] - ref)) < 1e-6
    assert np.allclose(new.inputs[:, 1], [u[1].value(t, 1) for t in new.times])


@pytest.mark.parametrize("case", [("iwp", "combined", None), ("tora3", None, None)])
def test_normal_form_integration_matches_transformed_trajectory(case):
    f, S, p = corpus_case(*case)
    law, _ = synthesize(S, None, p)
    u = [Sinusoid(0.05, 1.0)]
    _, new = closed_loop_run(S, law, p.x, p.v, u, 1.0, 1e-3)
    N = normal_form_system(law)
    z0 = new.states[0]
    direct = integrate(N, z0[:S.n], z0[S.n:], u, 1.0, 1e-3)
    assert np.max(np.abs(direct.states - new.states)) < 1e-6


def test_singular_locus_is_detected():
    f, S, p = corpus_case("iwp", "combined")
    law, _ = synthesize(S, None, p)
    with pytest.raises(SingularLocusError) as info:
        closed_loop_run(S, law, [1.4, 0.0], [1.0, 0.0], None, 1.0, 1e-4)
    assert 0.0 < info.value.time < 0.2


def test_chain_response_polynomial():
    t = np.linspace(0, 1, 5)
    out = chain_response(2, [1.0, 2.0, 0.0, 6.0], t, Step(24.0, 0.5))
    expected = 1 + 2 * t + t ** 3 + np.clip(t - 0.5, 0, None) ** 4
    assert np.allclose(out, expected, atol=1e-14)


# ---------------------------------------------------------------- certificates

def test_certificate_passes_and_serializes(tmp_path):
    f, S, p = corpus_case("iwp", "combined")
    law, _ = synthesize(S, None, p)
    cert = decoupling_certificate(S, law, p.x, p.v, horizon=0.5, dt=1e-3)
    assert cert.passed and cert.superposition is not None and cert.superposition < 1e-6
    cert.to_json(tmp_path / "c.json")
    data = json.loads((tmp_path / "c.json").read_text())
    assert data["passed"] and data["channels"][0]["own_deviation"] < 1e-5
    written = cert.write_csv(tmp_path / "runs")
    assert {w.name for w in written} == {"baseline.csv", "baseline_new.csv", "step1.csv",
                                         "step1_new.csv"}


def test_negative_control_fails_the_certificate():
    f, S, p = corpus_case("double_pendulum_base")
    law, _ = synthesize(S, None, p)
    bad = decoupling_certificate(S, law.corrupted(), p.x, p.v, horizon=1.0, dt=1e-3)
    assert not bad.passed
    assert max(max(c.cross.values()) for c in bad.channels) > 1e-4


def test_zero_horizon_certificate():
    f, S, p = corpus_case("tora3")
    law, _ = synthesize(S, None, p)
    cert = decoupling_certificate(S, law, p.x, p.v, horizon=0.0)
    assert cert.passed and cert.channels[0].own_deviation == 0.0


def test_superposition_fails_without_the_velocity_compensation():
    f, S, p = corpus_case("double_pendulum_base", "toras")
    law, _ = synthesize(S, None, p)
    opts = f.certify_options("toras")
    a = opts.get("amplitude", 1.0)
    first, second = [Step(a, 0.1), Zero()], [Sinusoid(0.5 * a, 2.0)] * 2
    good = superposition_deviation(S, law, p.x, p.v, 0.5, 1e-3, first, second)
    bad = superposition_deviation(S, law.corrupted(), p.x, p.v, 0.5, 1e-3, first, second)
    assert good < 1e-6 < bad
