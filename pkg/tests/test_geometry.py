import json
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import CORPUS_CASES, case_id, corpus_case
from helpers import directional_fd, random_function
from miold.expr import ZERO, Var, evaluate, parse
from miold.geometry import (
    Point, check_mf_linearizable, full_relative_degree, half_degree, lie_derivative, nabla_d,
)
from miold.model import MechanicalSystem, ValidationError


def flat_system(e, g, h, names=None):
    """Gamma = 0 system built from expression strings."""
    n = len(e)
    names = names or [f"x{i}" for i in range(1, n + 1)]
    p = lambda s: parse(s, names)
    Gamma = [[[ZERO] * n for _ in range(n)] for _ in range(n)]
    return MechanicalSystem(Gamma, [p(a) for a in e], [[p(a) for a in col] for col in g],
                            [p(a) for a in h], names)


@pytest.mark.parametrize("case", CORPUS_CASES, ids=case_id)
def test_corpus_verdicts(case):
    f, S, p = corpus_case(*case)
    key = case[1] or "outputs"
    expect = f.expect[key]
    rep = half_degree(S, p)
    assert rep.nu == expect["nu"]
    if "solvable" in expect:
        assert rep.solvable == expect["solvable"]
    if "rho" in expect:
        assert full_relative_degree(S, p).rho == expect["rho"]
    if "linearizable" in expect:
        assert check_mf_linearizable(S, S.h, p).linearizable == expect["linearizable"]
    json.dumps(rep.to_dict())


@given(st.integers(0, 10**6))
def test_lie_derivative_matches_directional_difference(seed):
    rng = random.Random(seed)
    n = 3
    h = random_function(rng, n) + random_function(rng, n) * random_function(rng, n)
    f = [random_function(rng, n) for _ in range(n)]
    x = [rng.uniform(-1, 1) for _ in range(n)]
    sym = evaluate(lie_derivative(f, h), x)
    assert abs(sym - directional_fd(h, f, x, {})) < 1e-7 * max(1.0, abs(sym))


def test_nabla_d_of_a_coordinate_is_minus_christoffel():
    _, S, _ = corpus_case("double_pendulum_base")
    for i in range(S.n):
        H = nabla_d(S, Var(i + 1))
        for j in range(S.n):
            for k in range(S.n):
                x = [0.2, -0.4, 0.7]
                assert evaluate(H[j][k], x, S.params) == pytest.approx(
                    -evaluate(S.Gamma[i][j][k], x, S.params), abs=1e-12)


def test_double_integrator():
    S = flat_system(["0"], [["1"]], ["x1"])
    rep = half_degree(S, [0.0])
    assert rep.nu == [1] and rep.mr1 and rep.mr2 == [] and rep.solvable and rep.mu == 1
    assert "MR2: vacuous" in rep.to_text()
    assert full_relative_degree(S, Point.for_system(S, [0.0], [0.0])).rho == [2]


def test_undefined_half_degree_is_reported():
    S = flat_system(["0", "0"], [["1", "0"]], ["x2"])
    rep = half_degree(S, [0.1, 0.2])
    assert rep.nu == [None] and not rep.defined and rep.mu is None
    assert not rep.mr1 and not rep.solvable
    assert "undefined" in rep.mr1_reason and "undefined" in rep.to_text()
    assert rep.to_dict()["nu"] == ["undefined"]


def test_rank_deficiency_at_the_point():
    S = flat_system(["0", "0"], [["x1", "0"]], ["x1"])
    rep = half_degree(S, [0.0, 0.3])
    assert rep.nu == [1] and rep.rank == 0 and not rep.mr1
    assert "rank deficient" in rep.mr1_reason
    assert half_degree(S, [0.5, 0.3]).mr1


def test_rank_variation_warning():
    S = flat_system(["0", "0"], [["1", "0"], ["0", "exp(-50*x1^2)"]], ["x1", "x2"])
    rep = half_degree(S, [0.0, 0.0])
    assert rep.mr1 and any("rank of D varies" in w for w in rep.warnings)
    assert not half_degree(S, [0.0, 0.0], generic_check=False).warnings


def test_relative_degree_needs_a_velocity():
    _, S, _ = corpus_case("iwp")
    with pytest.raises(ValidationError, match="velocity"):
        full_relative_degree(S, Point.for_system(S, [0.3, 0.0]))


def test_half_degree_needs_a_point():
    _, S, _ = corpus_case("iwp")
    with pytest.raises(ValidationError):
        half_degree(S, None)


def test_reshaped_output_violates_mr2_with_the_hessian_residual():
    _, S, p = corpus_case("iwp", "reshaped")
    rep = half_degree(S, p)
    assert rep.nu == [2] and rep.mr1 and not rep.mr2_holds
    c = (S.params["md"] + S.params["J2"]) / S.params["J2"]
    entry = rep.mr2[0]
    expected = {(1, 1): 2 * c * c, (1, 2): 2 * c, (2, 2): 2.0}
    got = {(j, k): evaluate(x, p.x, S.params) for j, k, x in entry.residuals}
    assert got == pytest.approx(expected)
    v = check_mf_linearizable(S, S.h, p)
    assert not v.linearizable and v.reason.startswith("MR2 violated")


def test_linearizability_needs_full_half_degree():
    _, S, p = corpus_case("tora3")
    v = check_mf_linearizable(S, S.h, p)
    assert not v.linearizable and "sum of half-degrees is 2" in v.reason
    _, Sf, _ = corpus_case("tora3", "flat")
    assert check_mf_linearizable(S, Sf.h, p).linearizable


def test_decoupling_matrix_scales_with_output_scaling():
    _, S, p = corpus_case("double_pendulum_toras")
    base = half_degree(S, p)
    scaled = S.with_outputs([3 * S.h[0], -2 * S.h[1]])
    rep = half_degree(scaled, p)
    assert rep.nu == base.nu
    assert np.allclose(rep.D_value, np.diag([3.0, -2.0]) @ base.D_value, rtol=1e-12)


def test_tora3_first_lie_derivative_carries_the_first_cart_mass():
    """L_e x1 by directional difference matches the spring law on cart 1 (mass m1, not m3)."""
    _, S, _ = corpus_case("tora3")
    params = dict(S.params, m1=1.3, m2=0.8, m3=2.2, k1=0.7, k2=1.9)
    x = [0.2, -0.3, 0.4]
    fd = directional_fd(Var(1), S.e, x, params)
    spring = params["k2"] * (x[1] - x[0])
    expected = (-params["k1"] * x[0] + spring) / params["m1"]
    assert fd == pytest.approx(expected, rel=1e-8)
    assert evaluate(lie_derivative(S.e, Var(1)), x, params) == pytest.approx(expected, rel=1e-12)
    misprint = (-params["k1"] * x[0]) / params["m1"] + spring / params["m3"]
    assert abs(fd - misprint) > 1e-2
