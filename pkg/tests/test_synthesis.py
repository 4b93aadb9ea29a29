import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SOLVABLE_CASES, case_id, corpus_case
from helpers import gradient_fd, hessian_fd
from miold.expr import ONE, PROVEN_ZERO, ZERO, Const, Var, evaluate, is_zero, parse
from miold.geometry import Point, half_degree
from miold.model import MechanicalSystem, MechanicalTransformation, apply_feedback, pushforward
from miold.synthesis import (
    SynthesisError, closed_loop_system, flatness_remark, normal_form_system, read_controller_card,
    synthesize,
)


def same(a, b, params=None):
    return is_zero(a - b, fixed_params=params).kind == PROVEN_ZERO


def chain_system(nu, n):
    """Integrator chains of lengths ``nu`` followed by free coordinates."""
    Gamma = [[[ZERO] * n for _ in range(n)] for _ in range(n)]
    e = [ZERO] * n
    g, h = [], []
    start = 0
    for l, length in enumerate(nu):
        for i in range(start, start + length - 1):
            e[i] = Var(i + 2)
        col = [ZERO] * n
        col[start + length - 1] = ONE
        g.append(col)
        h.append(Var(start + 1))
        start += length
    return MechanicalSystem(Gamma, e, g, h)


def control_values(law, x, v, ut):
    """u = v^T gamma v + alpha + beta u~, evaluated."""
    p = law.system.params
    u = []
    for r in range(law.m):
        G = np.array([[evaluate(c, x, p) for c in row] for row in law.gamma[r]])
        u.append(v @ G @ v + evaluate(law.alpha[r], x, p)
                 + sum(evaluate(law.beta[r][s], x, p) * ut[s] for s in range(law.m)))
    return u


def accel(S, x, v, u):
    p = S.params
    out = np.zeros(S.n)
    for i in range(S.n):
        G = np.array([[evaluate(c, x, p) for c in row] for row in S.Gamma[i]])
        out[i] = -v @ G @ v + evaluate(S.e[i], x, p)
        out[i] += sum(evaluate(S.g[r][i], x, p) * u[r] for r in range(S.m))
    return out


# ---------------------------------------------------------------- bundled systems

def test_iwp_combined_output_feedback():
    _, S, p = corpus_case("iwp", "combined")
    law, nf = synthesize(S, None, p)
    names = S.var_names
    par = S.params
    assert law.nu == [2] and law.completion == [] and nf.holds and nf.certified
    assert same(law.phi[1], parse("(m0/J2)*sin(x1)", names), par)
    assert same(law.A[0], parse("(m0^2/(2*md*J2))*sin(2*x1)", names), par)
    assert same(law.Dmat[0][0], parse("-(m0/(md*J2))*cos(x1)", names), par)
    full = list(names) + ["v1", "v2"]
    assert same(law.C()[0], parse("-(m0/J2)*sin(x1)*v1^2", full), par)


def test_tora3_completion_is_the_free_angle():
    _, S, p = corpus_case("tora3")
    law, nf = synthesize(S, None, p)
    assert law.nu == [2] and law.completion == [Var(3)]
    assert nf.chain_lengths == [4] and nf.observable_dim == 4 and nf.unobserved_dim == 2
    assert nf.holds and "e~^3" in nf.residual


@pytest.mark.parametrize("case", SOLVABLE_CASES, ids=case_id)
def test_outputs_follow_the_new_input(case):
    """d^2/dt^2 of every chain entry, by finite differences, is the next entry or u~."""
    _, S, p = corpus_case(*case)
    law, _ = synthesize(S, None, p)
    rng = random.Random(3)
    x = np.array(p.x) + [rng.uniform(-0.05, 0.05) for _ in range(S.n)]
    v = np.array([rng.uniform(-0.5, 0.5) for _ in range(S.n)])
    ut = [rng.uniform(-1, 1) for _ in range(S.m)]
    a = accel(S, x, v, control_values(law, x, v, ut))
    for l in range(S.m):
        idx = list(law.chain_indices(l))
        for pos, i in enumerate(idx):
            phi = law.phi[i]
            second = v @ hessian_fd(phi, x, S.params) @ v + gradient_fd(phi, x, S.params) @ a
            target = ut[l] if i == idx[-1] else evaluate(law.phi[i + 1], x, S.params)
            assert abs(second - target) < 1e-5 * max(1.0, abs(target)), (case, l, pos)


def test_already_normal_form_gives_the_identity():
    S = chain_system([2, 1], 4)
    law, nf = synthesize(S, None, [0.1, 0.2, 0.3, 0.4])
    assert law.phi[:3] == [Var(1), Var(2), Var(3)] and law.completion == [Var(4)]
    assert all(a is ZERO for a in law.alpha)
    assert all(x is ZERO for mat in law.gamma for row in mat for x in row)
    assert [[evaluate(b, [0] * 4) for b in row] for row in law.beta] == [[1, 0], [0, 1]]
    assert nf.holds and nf.certified


def _disguised(seed):
    """A chain system hidden by constant gamma, beta, any alpha and a linear change of x."""
    rng = random.Random(seed)
    n, m = 3, 2
    N = chain_system([2, 1], n)
    frac = lambda: Const(Fraction(rng.randint(-4, 4), rng.randint(1, 3)))
    gamma = []
    for _ in range(m):
        mat = [[ZERO] * n for _ in range(n)]
        for a in range(n):
            for b in range(a, n):
                mat[a][b] = mat[b][a] = frac()
        gamma.append(mat)
    # polynomial alpha: trig of dense linear combinations expands into large sums
    alpha = [frac() + frac() * Var(rng.randint(1, n)) * Var(rng.randint(1, n)) for _ in range(m)]
    while True:
        beta = [[frac() for _ in range(m)] for _ in range(m)]
        B = np.array([[float(b.value) for b in row] for row in beta])
        if abs(np.linalg.det(B)) > 0.2:
            break
    while True:
        P = [[frac() for _ in range(n)] for _ in range(n)]
        if abs(np.linalg.det(np.array([[float(c.value) for c in r] for r in P]))) > 0.2:
            break
    phi = [sum((P[a][b] * Var(b + 1) for b in range(n)), ZERO) for a in range(n)]
    S = pushforward(apply_feedback(N, MechanicalTransformation(None, gamma, alpha, beta)), phi)
    return S


@settings(max_examples=15)
@given(st.integers(0, 10**6))
def test_disguised_chains_are_recovered(seed):
    S = _disguised(seed)
    x = [0.2, -0.1, 0.3]
    rep = half_degree(S, x)
    assert rep.nu == [2, 1] and rep.solvable and rep.certified
    law, nf = synthesize(S, rep, x)
    assert law.completion == [] and nf.holds and nf.certified


def test_disguised_system_has_constant_christoffels():
    S = _disguised(1)
    for plane in S.Gamma:
        for row in plane:
            for c in row:
                assert evaluate(c, [0.1, 0.2, 0.3]) == pytest.approx(evaluate(c, [1.0, -2.0, 0.5]))


# ---------------------------------------------------------------- failures

def test_mr2_violation():
    _, S, p = corpus_case("iwp", "reshaped")
    with pytest.raises(SynthesisError, match="MR2 violated"):
        synthesize(S, None, p)


def test_undefined_half_degree_is_an_mr1_violation():
    S = chain_system([1], 2).with_outputs([Var(2)])
    with pytest.raises(SynthesisError, match="MR1 violated"):
        synthesize(S, None, [0.0, 0.0])


def test_singular_jacobian_at_the_point():
    _, S, p = corpus_case("iwp", "combined")
    rep = half_degree(S, p)
    with pytest.raises(SynthesisError, match="Jacobian of phi is singular"):
        synthesize(S, rep, Point.for_system(S, [math.pi / 2, 0.0]))


def test_bad_completions():
    _, S, p = corpus_case("tora3")
    with pytest.raises(SynthesisError, match="needs 1 functions"):
        synthesize(S, None, p, completion=[Var(2), Var(3)])
    with pytest.raises(SynthesisError, match="Jacobian"):
        synthesize(S, None, p, completion=[Var(1)])
    law, nf = synthesize(S, None, p, completion=[Var(3) + Var(1)])
    assert nf.holds


# ---------------------------------------------------------------- products

@pytest.mark.parametrize("case", [("iwp", "combined", None), ("double_pendulum_toras", None, None)],
                         ids=case_id)
def test_controller_card_round_trip(case):
    _, S, p = corpus_case(*case)
    law, _ = synthesize(S, None, p)
    card = read_controller_card(law.controller_card())
    assert card["params"] == S.params
    rng = random.Random(0)
    z = list(p.x) + [rng.uniform(-1, 1) for _ in range(S.n)]
    ev = lambda e: evaluate(e, z, S.params)
    for l in range(S.m):
        assert ev(card[f"A[{l + 1}]"]) == pytest.approx(ev(law.A[l]), rel=1e-12)
        assert ev(card[f"C[{l + 1}]"]) == pytest.approx(ev(law.C()[l]), rel=1e-12, abs=1e-14)
        for r in range(S.m):
            assert ev(card[f"D[{l + 1}][{r + 1}]"]) == pytest.approx(ev(law.Dmat[l][r]), rel=1e-12)
    for i in range(S.n):
        assert ev(card[f"phi[{i + 1}]"]) == pytest.approx(ev(law.phi[i]), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("case,weight", [
    (("iwp", "combined", None), 5), (("tora3", "flat", None), 7),
    (("double_pendulum_toras", None, None), 8), (("tora3", None, None), None),
], ids=lambda c: case_id(c) if isinstance(c, tuple) else str(c))
def test_flatness_remark(case, weight):
    _, S, p = corpus_case(*case)
    law, _ = synthesize(S, None, p)
    remark = flatness_remark(law)
    if weight is None:
        assert not remark["applicable"] and remark["statement"].startswith("not applicable")
    else:
        assert remark["applicable"] and remark["differential_weight"] == weight


def test_normal_form_system_for_full_linearization():
    _, S, p = corpus_case("iwp", "combined")
    law, _ = synthesize(S, None, p)
    N = normal_form_system(law)
    assert N.structurally_equal(chain_system([2], 2))


def test_normal_form_system_with_unobserved_block():
    _, S, p = corpus_case("tora3")
    law, _ = synthesize(S, None, p)
    closed = closed_loop_system(S, law)
    assert closed.has_inverse()
    N = normal_form_system(law)
    assert N.e[0] is Var(2) and N.e[1] is ZERO
    assert N.g[0][1] is ONE and N.g[0][0] is ZERO
    assert all(c is ZERO for i in (0, 1) for row in N.Gamma[i] for c in row)
