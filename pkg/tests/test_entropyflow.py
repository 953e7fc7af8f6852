import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmgeo.core import FinitePmmSpace, exp_tilt, random_euclidean_space
from mmgeo.entropyflow import (
    FlowTrace,
    GraphDirichlet,
    I_K,
    apriori_check,
    contraction_check,
    ede_residual,
    entropy,
    entropy_decomposition,
    fisher,
    jko_flow,
    jko_step,
    recovery_sequence,
    slope_sup,
)
from mmgeo.lab import circle_cross_distance, circle_positions, dirac_start, gen_circle, two_atom_start
from mmgeo.transport import optimal_coupling, w2

import oracles

seeds = st.integers(0, 2**31 - 1)


def two_point(d=1.0, masses=(0.5, 0.5)):
    return FinitePmmSpace([[0.0, d], [d, 0.0]], masses, 0)


# graph


def test_graph_rejects_bad_input():
    with pytest.raises(ValueError):
        GraphDirichlet([1.0, 1.0], [0], [0], [1.0])
    with pytest.raises(ValueError):
        GraphDirichlet([1.0, 1.0], [0], [1], [-1.0])
    with pytest.raises(ValueError):
        GraphDirichlet([1.0, 0.0], [0], [1], [1.0])


def test_graph_warns_when_disconnected():
    with pytest.warns(RuntimeWarning, match="components"):
        GraphDirichlet([1.0, 1.0, 1.0], [0], [1], [1.0])


def test_graph_from_matrix_is_symmetric():
    W = np.array([[0, 2, 0], [2, 0, 1], [0, 1, 0]], float)
    g = GraphDirichlet.from_weight_matrix([1, 1, 1], W)
    np.testing.assert_array_equal(g.weight_matrix().toarray(), W)
    assert g.energy([0, 1, 3]) == pytest.approx(0.5 * (2 * 1 + 1 * 4))


def test_eps_graph_recovers_dirichlet_integral_on_line():
    # linear f on a fine uniform grid: E(f) -> 1/2 |f'|^2 times total mass
    x = np.linspace(0, 1, 201)
    s = FinitePmmSpace(np.abs(x[:, None] - x[None, :]), np.full(201, 1 / 201), 0)
    g = GraphDirichlet.eps_graph(s, 2.5 / 200)
    assert g.energy(3 * x) == pytest.approx(0.5 * 9, rel=0.05)


# entropy


def test_entropy_examples():
    m = np.array([0.2, 0.3, 0.5])
    assert entropy(m, m) == 0.0
    M = 4.0
    assert entropy(np.full(5, 0.2), np.full(5, M / 5)) == pytest.approx(-math.log(M), abs=1e-14)
    assert entropy([0.5, 0.5], [1.0, 0.0]) == math.inf
    assert entropy([1.0, 0.0], [1.0, 0.0]) == 0.0


@given(seeds, st.floats(0.0, 5.0))
def test_entropy_decomposition_identity(seed, C):
    rng = np.random.default_rng(seed)
    s = random_euclidean_space(int(rng.integers(1, 10)), rng, scale=2.0)
    mu = rng.dirichlet(np.ones(s.n))
    _, _, res = entropy_decomposition(mu, s, C)
    assert res <= 1e-10


def test_entropy_decomposition_dirac_at_base():
    rng = np.random.default_rng(1)
    s = random_euclidean_space(6, rng)
    mu = dirac_start(6, s.base)
    lhs, rhs, res = entropy_decomposition(mu, s, 2.0)
    assert lhs == pytest.approx(-math.log(s.mass[s.base]), abs=1e-14)
    z, tilted = exp_tilt(s, 2.0)
    assert rhs == pytest.approx(-math.log(tilted.mass[s.base]) - math.log(z), abs=1e-12)
    assert res <= 1e-12


def test_entropy_decomposition_zero_constant():
    s = two_point(masses=(0.25, 0.75))
    lhs, rhs, res = entropy_decomposition([0.5, 0.5], s, 0.0)
    assert res == 0.0 or res <= 1e-16


@given(seeds, st.floats(0.0, 1.0))
def test_entropy_convex_along_mixtures(seed, alpha):
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.1, 2, size=6)
    mu, nu = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    mix = (1 - alpha) * mu + alpha * nu
    assert entropy(mix, m) <= (1 - alpha) * entropy(mu, m) + alpha * entropy(nu, m) + 1e-12


def test_entropy_joint_lower_semicontinuity():
    rng = np.random.default_rng(2)
    m = rng.uniform(0.1, 2, size=6)
    mu = rng.dirichlet(np.ones(6))
    mu[0] = 0.0
    mu /= mu.sum()
    nu = rng.dirichlet(np.ones(6))
    vals = [entropy((1 - 1 / k) * mu + nu / k, m * (1 + 1 / k)) for k in (10, 100, 10_000, 1_000_000)]
    assert vals[-1] >= entropy(mu, m) - 1e-5
    assert abs(vals[-1] - entropy(mu, m)) < abs(vals[0] - entropy(mu, m))


# Fisher information and slope


def test_fisher_examples():
    g = GraphDirichlet([1.0, 1.0], [0], [1], [1.0])
    assert fisher([4.0, 0.0], g) == pytest.approx(16.0)
    assert fisher([0.5, 0.5], g) == 0.0


@given(seeds)
def test_fisher_zero_iff_constant_per_component(seed):
    rng = np.random.default_rng(seed)
    m = rng.integers(1, 8, size=6) / 4.0  # small dyadic values keep rho = mu / m exact
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = GraphDirichlet(m, [0, 1, 3, 4], [1, 2, 4, 5], rng.uniform(0.1, 1, size=4))
    rho = np.r_[np.full(3, rng.integers(1, 16) / 16), np.full(3, rng.integers(1, 16) / 16)]
    assert fisher(rho * m, g) == 0.0
    rho2 = rho.copy()
    rho2[int(rng.integers(6))] *= 1.5
    assert fisher(rho2 * m, g) > 0


def test_fisher_refinement_consistency():
    vals = []
    for n in (32, 64, 128):
        s, g = gen_circle(n)
        x = circle_positions(n)
        rho = 1 + 0.5 * np.cos(2 * np.pi * x)
        vals.append(fisher(rho * s.mass / np.sum(rho * s.mass), g))
    assert abs(vals[2] - vals[1]) <= 0.05 * vals[2]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])


def test_slope_examples():
    s = two_point(masses=(0.3, 0.7))
    minimizer = s.mass / s.total_mass
    assert slope_sup(minimizer, s, 0.0, [[1, 0], [0, 1], [0.5, 0.5]]) == 0.0
    mu, nu = np.array([0.9, 0.1]), np.array([0.5, 0.5])
    # moving 0.4 across unit distance: W2 = sqrt(0.4)
    quotient = (entropy(mu, s) - entropy(nu, s)) / math.sqrt(0.4) + 0.5 * 2.0 * math.sqrt(0.4)
    assert slope_sup(mu, s, 2.0, [nu]) == pytest.approx(max(quotient, 0.0), rel=1e-12)


@given(seeds)
def test_slope_monotone_in_candidates(seed):
    rng = np.random.default_rng(seed)
    s = random_euclidean_space(5, rng)
    mu = rng.dirichlet(np.ones(5))
    cands = [rng.dirichlet(np.ones(5)) for _ in range(6)]
    assert slope_sup(mu, s, 0.0, cands[:3]) <= slope_sup(mu, s, 0.0, cands)


# minimizing movement


def test_jko_step_minimizer_is_stationary():
    s, _ = gen_circle(12)
    u = s.mass / s.total_mass
    out, rep = jko_step(u, 1e-2, s, return_report=True)
    np.testing.assert_array_equal(out, u)
    assert rep.w2 == 0.0 and rep.gap <= 1e-8


def test_jko_step_small_tau_moves_less():
    s, _ = gen_circle(16)
    mu = two_atom_start(16)
    moves = [w2(s, jko_step(mu, tau, s), mu) for tau in (1e-1, 1e-2, 1e-3)]
    assert moves[0] >= moves[1] >= moves[2]
    assert moves[2] < moves[0]


@pytest.mark.parametrize("p,masses,d,tau", [(0.9, (0.5, 0.5), 1.0, 0.5), (0.95, (0.3, 0.7), 2.0, 3.0), (0.6, (0.5, 0.5), 1.0, 0.1), (0.01, (0.8, 0.2), 0.5, 1.0)])
def test_jko_step_two_points_matches_golden_section(p, masses, d, tau):
    s = two_point(d, masses)
    q = oracles.two_point_jko(p, masses, d, tau)
    out = jko_step([p, 1 - p], tau, s)
    assert out[0] == pytest.approx(q, abs=1e-6)


def test_jko_flow_constant_at_minimizer():
    s, g = gen_circle(12)
    u = s.mass / s.total_mass
    tr = jko_flow(u, 0.01, 0.05, s, g)
    assert np.all(tr.states == u)
    assert np.all(tr.entropies == tr.entropies[0])
    assert ede_residual(tr).max_residual == 0.0


def test_jko_flow_rejects_incommensurate_horizon():
    s, g = gen_circle(8)
    with pytest.raises(ValueError):
        jko_flow(dirac_start(8, 0), 0.03, 0.1, s, g)


def test_flow_trace_invariants():
    s, g = gen_circle(16)
    tr = jko_flow(two_atom_start(16), 0.01, 0.05, s, g)
    assert np.all(np.diff(tr.times) > 0)
    assert np.all(np.abs(tr.states.sum(1) - 1) <= 1e-9)
    recomputed = [w2(s, a, b) for a, b in zip(tr.states[:-1], tr.states[1:])]
    np.testing.assert_allclose(tr.step_w2, recomputed, atol=1e-10, rtol=0)
    assert np.all(np.diff(tr.entropies) <= 1e-12)
    rows = tr.rows()
    assert len(rows) == tr.times.size and math.isnan(rows[-1][2])
    with pytest.raises(ValueError):
        FlowTrace.build(s, [0.0, 0.0], tr.states[:2])


def test_long_run_stops_at_first_order_stationarity():
    # moving eps mass from i to j costs eps d_ij^2 / (2 tau) and gains eps (log rho_i - log rho_j),
    # so the scheme halts once no pair has a log-density gap above d_ij^2 / (2 tau)
    tau = 1e-2
    s, g = gen_circle(32)
    tr = jko_flow(dirac_start(32, 0), tau, 0.5, s, g)
    rho = tr.states[-1] / s.mass
    logr = np.log(rho)
    gap = logr[:, None] - logr[None, :] - s.dist**2 / (2 * tau)
    assert gap.max() <= 1e-6
    assert tr.entropies[-1] > -math.log(s.total_mass) + 1e-3


@pytest.mark.xfail(strict=True, reason="the finite-space scheme freezes at a non-uniform state (see the stationarity test)")
def test_long_run_reaches_uniform():
    s, g = gen_circle(32)
    tr = jko_flow(dirac_start(32, 0), 1e-2, 1.0, s, g)
    assert tr.entropies[-1] <= -math.log(s.total_mass) + 1e-8
    strict = np.diff(tr.entropies) < 0
    assert np.all(strict | (tr.entropies[1:] <= -math.log(s.total_mass) + 1e-8))


@pytest.mark.xfail(strict=True, reason="terminal states do not converge as tau shrinks at fixed resolution; the scheme freezes earlier")
def test_terminal_state_first_order_in_tau():
    s, g = gen_circle(32)
    mu0 = two_atom_start(32)
    ends = {tau: jko_flow(mu0, tau, 0.1, s, g).states[-1] for tau in (0.02, 0.01, 0.005)}
    d1 = w2(s, ends[0.02], ends[0.01])
    d2 = w2(s, ends[0.01], ends[0.005])
    C = d1 / 0.01
    assert d2 <= C * 0.005


def test_ede_residual_scaling_band():
    s, g = gen_circle(32)
    mu0 = two_atom_start(32)
    res = [ede_residual(jko_flow(mu0, tau, 0.1, s, g)).max_residual for tau in (0.02, 0.01)]
    assert 1.2 <= res[0] / res[1] <= 4.0


def test_ede_needs_graph():
    s, _ = gen_circle(8)
    tr = jko_flow(dirac_start(8, 0), 0.05, 0.1, s)
    with pytest.raises(ValueError):
        ede_residual(tr)


# contraction and a priori estimates


def test_contraction_examples():
    s, g = gen_circle(12)
    tr = jko_flow(two_atom_start(12), 0.01, 0.05, s, g)
    rep = contraction_check(tr, tr)
    assert rep.max_violation == 0.0 and rep.gaps[0] == 0.0
    other = jko_flow(dirac_start(12, 0), 0.01, 0.05, s, g)
    assert contraction_check(tr, other).gaps[0] == 0.0
    short = jko_flow(dirac_start(12, 0), 0.01, 0.03, s, g)
    with pytest.raises(ValueError):
        contraction_check(tr, short)


def test_I_K_branches():
    assert I_K(0.0, 0.0) == 0.0 and I_K(0.0, 2.0) == 0.0
    assert I_K(0.7, 0.0) == 0.7
    assert I_K(0.7, 2.0) == pytest.approx((math.exp(1.4) - 1) / 2, rel=1e-14)


def test_apriori_constant_trace():
    s, g = gen_circle(12)
    u = s.mass / s.total_mass
    tr = FlowTrace.build(s, np.linspace(0, 0.125, 6), np.tile(u, (6, 1)), g)
    rep = apriori_check(tr, C=1.0)
    assert rep.speed_lhs == 0.0 and rep.speed_rhs >= 0.0
    assert rep.passed


def test_apriori_horizon_too_short():
    s, g = gen_circle(8)
    tr = jko_flow(dirac_start(8, 0), 0.01, 0.05, s, g)
    with pytest.raises(ValueError, match="horizon"):
        apriori_check(tr, C=1.0)


# recovery sequences


def test_recovery_same_points():
    rng = np.random.default_rng(3)
    s = random_euclidean_space(10, rng)
    s = s.with_mass(s.mass / s.total_mass)
    mu = rng.dirichlet(np.ones(10))
    r = recovery_sequence(mu, s, s)
    np.testing.assert_allclose(r.mu_n, mu, atol=1e-12)


def test_recovery_on_refined_circles():
    fine = 64
    xf = circle_positions(fine)
    s_inf, _ = gen_circle(fine)
    mu = (1 + 0.8 * np.cos(2 * np.pi * xf)) / fine
    gaps, ents = [], []
    for n in (8, 16, 32):
        s_n, _ = gen_circle(n)
        cross = circle_cross_distance(xf, circle_positions(n))
        r = recovery_sequence(mu, s_inf, s_n, cross=cross)
        _, cost = optimal_coupling(r.mu_n, mu, cross.T**2)
        gaps.append(math.sqrt(cost))
        ents.append(entropy(r.mu_n, s_n))
    assert gaps[0] > gaps[1] > gaps[2]
    e_inf = entropy(mu, s_inf)
    assert all(e <= e_inf + 1e-12 for e in ents)


def test_recovery_needs_cross_for_different_points():
    a, _ = gen_circle(8)
    b, _ = gen_circle(16)
    with pytest.raises(ValueError):
        recovery_sequence(np.full(8, 1 / 8), a, b)
