import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdsgd import analysis, data, objectives, topology
from cdsgd.errors import EstimationError
from cdsgd.optimizers import max_stable_step_size

from conftest import central_diff, quadratic_swarm


def _admissible_alpha(spec, shards, pi):
    return max_stable_step_size(1.0, 1.0, objectives.swarm_constants(spec, shards).gamma_m, pi.eigenvalues[-1])[0]


# -- Lyapunov value and gradient ----------------------------------------------

def test_consensus_has_zero_seminorm(quad_swarm):
    _, _, pi = quad_swarm
    x = np.tile(np.linspace(-3, 3, 10), (5, 1))
    assert analysis.seminorm_sq(x, pi) == pytest.approx(0.0, abs=1e-12)


def test_two_agent_seminorm_by_hand():
    pi = topology.build_fully_connected(2, 0.5)
    x = np.array([[1.0], [-1.0]])
    # (I - Pi) = 0.25 [[1, -1], [-1, 1]]; x^T (I - Pi) x = 0.25 * 4
    assert analysis.seminorm_sq(x, pi) == pytest.approx(1.0, abs=1e-15)
    spec = objectives.QuadraticObjective(np.eye(1), np.zeros(1))
    shards = data.partition(data.Dataset(np.zeros((4, 1)), np.zeros(4, dtype=np.int64), 1), 2)
    alpha = 0.2
    obj = sum(objectives.loss(spec, x[j], shards[j]) for j in range(2))
    assert analysis.lyapunov_value(x, pi, alpha, spec, shards) - obj == pytest.approx(1.0 / (2 * alpha))


def test_v_nonincreasing_in_alpha(quad_swarm):
    spec, shards, pi = quad_swarm
    x = np.random.default_rng(0).normal(size=(5, 10))
    vals = [analysis.lyapunov_value(x, pi, a, spec, shards) for a in (0.001, 0.01, 0.1, 1.0)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


@pytest.mark.invariant
def test_v_dominates_objective_part(quad_swarm):
    spec, shards, pi = quad_swarm
    x = np.random.default_rng(1).normal(size=(5, 10))
    w = analysis.agent_weights(shards)
    obj = sum(w[j] * objectives.loss(spec, x[j], shards[j]) for j in range(5))
    assert analysis.lyapunov_value(x, pi, 0.01, spec, shards) >= obj


def test_lyapunov_value_input_errors(quad_swarm):
    spec, shards, pi = quad_swarm
    with pytest.raises(ValueError):
        analysis.lyapunov_value(np.full((5, 10), np.nan), pi, 0.1, spec, shards)
    with pytest.raises(ValueError):
        analysis.lyapunov_value(np.zeros((5, 10)), pi, 0.0, spec, shards)


def test_agent_weights_unequal_shards():
    ds = data.generate_noise(11, 2, 1.0, 0)
    w = analysis.agent_weights(data.partition(ds, 5))
    assert w == pytest.approx(5 * np.array([3, 2, 2, 2, 2]) / 11)


def test_stochastic_lyapunov_gradient_examples(quad_swarm):
    _, _, pi = quad_swarm
    x = np.tile(np.arange(3.0), (5, 1))
    assert np.allclose(analysis.stochastic_lyapunov_gradient(x, pi, 0.1, np.zeros((5, 3))), 0, atol=1e-14)
    rng = np.random.default_rng(3)
    G, x = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    assert np.array_equal(analysis.stochastic_lyapunov_gradient(x, topology.InteractionMatrix(np.eye(4)), 0.3, G), G)
    with pytest.raises(ValueError):
        analysis.stochastic_lyapunov_gradient(x, pi, 0.0, G)


@pytest.mark.invariant
@pytest.mark.parametrize("kind", ["quadratic", "logistic"])
def test_grad_v_matches_finite_differences(kind):
    if kind == "quadratic":
        spec, shards, pi = quadratic_swarm(d=4, cond=10, n=103)
    else:
        ds = data.generate_blobs(103, 3, 2, 3.0, seed=0)
        shards = data.partition(ds, 4, "iid", 0)
        spec, pi = objectives.LogisticObjective(3, 0.05), topology.build_ring(4)
    x = np.random.default_rng(0).normal(size=(len(shards), spec.dimension))
    g = analysis.lyapunov_gradient(x, pi, 0.05, spec, shards)
    fd = central_diff(lambda v: analysis.lyapunov_value(v, pi, 0.05, spec, shards), x)
    assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_consensus_residual_examples():
    s, r = analysis.consensus_residuals(np.array([[1.0], [3.0]]))
    assert s.tolist() == [2.0] and r.tolist() == [1.0, 1.0]
    s, r = analysis.consensus_residuals(np.ones((3, 4)))
    assert np.all(r == 0)
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.allclose(analysis.consensus_residuals(x + 7.5)[1], analysis.consensus_residuals(x)[1], atol=1e-12)


def test_lyapunov_report(quad_swarm):
    spec, shards, pi = quad_swarm
    x = np.random.default_rng(0).normal(size=(5, 10))
    rep = analysis.lyapunov_report(x, pi, 0.01, spec, shards, h_m=1.0, gamma_m=100.0)
    assert rep.H_hat <= rep.gamma_hat
    assert rep.max_residual == pytest.approx(analysis.consensus_residuals(x)[1].max())


# -- effective constants ------------------------------------------------------

def test_effective_constants_examples():
    assert analysis.effective_constants(1.0, 2.0, 0.6, 0.2, 0.1) == pytest.approx((3.0, 10.0))
    assert analysis.effective_constants(1.0, 2.0, 1.0, 1.0, 0.1) == (1.0, 2.0)
    with pytest.raises(ValueError):
        analysis.effective_constants(1.0, 2.0, 0.2, 0.6, 0.1)
    with pytest.raises(ValueError):
        analysis.effective_constants(1.0, 2.0, 0.6, 0.0, 0.1)


@pytest.mark.invariant
@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(1e-3, 1), st.floats(1e-3, 1), st.floats(1e-4, 10))
def test_h_hat_below_gamma_hat(h, extra, l2, ln, alpha):
    l2, ln = max(l2, ln), min(l2, ln)
    h_hat, g_hat = analysis.effective_constants(h, h + extra + 1e-9, l2, ln, alpha)
    assert h_hat <= g_hat


# -- minimisers ---------------------------------------------------------------

def test_quadratic_optimum_is_stationary(quad_swarm):
    spec, shards, pi = quad_swarm
    x, v = analysis.quadratic_optimum(spec, shards, pi, 0.002)
    assert np.linalg.norm(analysis.lyapunov_gradient(x, pi, 0.002, spec, shards)) <= 1e-9
    rng = np.random.default_rng(0)
    assert all(analysis.lyapunov_value(x + 1e-3 * rng.normal(size=x.shape), pi, 0.002, spec, shards) > v
               for _ in range(10))


def test_logistic_minimum_reaches_tolerance():
    ds = data.generate_blobs(200, 4, 2, 3.0, seed=0)
    shards = data.partition(ds, 5, "iid", 0)
    spec, pi = objectives.LogisticObjective(4, 0.01), topology.build_ring(5)
    x, v = analysis.lyapunov_minimum(spec, shards, pi, 0.05)
    assert np.linalg.norm(analysis.lyapunov_gradient(x, pi, 0.05, spec, shards)) <= 1e-10
    assert v == pytest.approx(analysis.lyapunov_value(x, pi, 0.05, spec, shards))
    with pytest.raises(ValueError):
        analysis.lyapunov_minimum(objectives.MLPObjective([4, 3, 2]), shards, pi, 0.05)


@pytest.mark.invariant
def test_strong_convexity_inequality_random_points():
    spec, shards, pi = quadratic_swarm()
    alpha = _admissible_alpha(spec, shards, pi)
    c = objectives.swarm_constants(spec, shards)
    h_hat, _ = analysis.effective_constants(c.h_m, c.gamma_m, pi.eigenvalues[1], pi.eigenvalues[-1], alpha)
    x_star, v_star = analysis.quadratic_optimum(spec, shards, pi, alpha)
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = x_star + rng.normal(size=x_star.shape) * rng.uniform(0.01, 10)
        gap = analysis.lyapunov_value(x, pi, alpha, spec, shards) - v_star
        g2 = np.sum(analysis.lyapunov_gradient(x, pi, alpha, spec, shards) ** 2)
        assert 2 * h_hat * gap <= g2 * (1 + 1e-9)


def test_h_hat_exceeds_true_modulus_on_consensus_directions():
    # I - Pi vanishes on consensus vectors, so V curves there only through the
    # objective: the smallest Hessian eigenvalue is H_m, below H_hat
    spec, shards, pi = quadratic_swarm()
    alpha = _admissible_alpha(spec, shards, pi)
    c = objectives.swarm_constants(spec, shards)
    h_hat, _ = analysis.effective_constants(c.h_m, c.gamma_m, pi.eigenvalues[1], pi.eigenvalues[-1], alpha)
    hess = analysis.quadratic_hessian(spec, shards, pi, alpha)
    assert np.linalg.eigvalsh(hess)[0] == pytest.approx(c.h_m, rel=1e-8)
    assert c.h_m < h_hat
    x_star, v_star = analysis.quadratic_optimum(spec, shards, pi, alpha)
    u = np.linalg.eigh(spec.A)[1][:, 0]
    x = x_star + np.tile(u, (5, 1))
    gap = analysis.lyapunov_value(x, pi, alpha, spec, shards) - v_star
    g2 = np.sum(analysis.lyapunov_gradient(x, pi, alpha, spec, shards) ** 2)
    assert 2 * h_hat * gap > g2


@pytest.mark.invariant
def test_smoothness_of_v():
    spec, shards, pi = quadratic_swarm()
    alpha = _admissible_alpha(spec, shards, pi)
    c = objectives.swarm_constants(spec, shards)
    _, g_hat = analysis.effective_constants(c.h_m, c.gamma_m, pi.eigenvalues[1], pi.eigenvalues[-1], alpha)
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, y = rng.normal(size=(5, 10)) * 3, rng.normal(size=(5, 10)) * 3
        d = analysis.lyapunov_gradient(y, pi, alpha, spec, shards) - analysis.lyapunov_gradient(x, pi, alpha, spec, shards)
        assert np.linalg.norm(d) <= g_hat * np.linalg.norm(y - x) * (1 + 1e-12)


# -- noise constants ----------------------------------------------------------

def test_noise_constants_full_batch_exact(quad_swarm):
    spec, shards, pi = quad_swarm
    rng = np.random.default_rng(0)
    probes = [rng.normal(size=(5, 10)) for _ in range(5)]
    nc = analysis.estimate_noise_constants(spec, shards, pi, 0.01, probes, 3, rng, batch_size=200)
    assert (nc.zeta1, nc.zeta2, nc.Q, nc.Q_V) == pytest.approx((1.0, 1.0, 0.0, 0.0), abs=1e-12)
    assert nc.Qm == pytest.approx(1.0)
    assert nc.label == "empirical (probe-limited)"


def test_noise_constants_recover_injected_variance():
    # batch-1 draws of z_i, each coordinate of variance sigma^2 / d, give a
    # stack variance of sigma^2 N
    n_agents, d, sigma = 4, 5, 0.8
    ds = data.generate_noise(4000, d, sigma / math.sqrt(d), seed=2)
    shards = data.partition(ds, n_agents, "iid", 0)
    spec = objectives.QuadraticObjective.random(d, 5.0, seed=2)
    pi = topology.build_ring(n_agents)
    rng = np.random.default_rng(5)
    probes = [rng.normal(size=(n_agents, d)) * 2 for _ in range(6)]
    nc = analysis.estimate_noise_constants(spec, shards, pi, 0.05, probes, 400, rng, batch_size=1)
    assert abs(nc.Q - sigma ** 2 * n_agents) <= 0.2 * sigma ** 2 * n_agents
    assert nc.Q_V <= 1e-2


@pytest.mark.invariant
@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 4, 32]))
def test_noise_constants_ordering(seed, batch):
    spec, shards, pi = quadratic_swarm(d=3, cond=5, n=200, seed=seed % 7)
    rng = np.random.default_rng(seed)
    probes = [rng.normal(size=(5, 3)) for _ in range(4)]
    nc = analysis.estimate_noise_constants(spec, shards, pi, 0.05, probes, 5, rng, batch_size=batch)
    assert nc.zeta2 >= nc.zeta1 > 0
    assert nc.Q >= 0 and nc.Q_V >= 0
    assert nc.Qm >= nc.zeta1 ** 2


def test_noise_constants_errors(quad_swarm):
    spec, shards, pi = quad_swarm
    x_star, _ = analysis.quadratic_optimum(spec, shards, pi, 0.01)
    with pytest.raises(EstimationError):
        analysis.estimate_noise_constants(spec, shards, pi, 0.01, [x_star], 3, np.random.default_rng(0), 200)
    with pytest.raises(ValueError):
        analysis.estimate_noise_constants(spec, shards, pi, 0.01, [x_star], 1, np.random.default_rng(0), 200)


# -- bounds -------------------------------------------------------------------

def test_prop1_examples():
    assert analysis.bound_prop1_consensus(0.01, 5.0, 0.6) == pytest.approx(0.125)
    assert analysis.bound_prop1_consensus(0.0, 5.0, 0.6) == 0.0
    with pytest.raises(ValueError):
        analysis.bound_prop1_consensus(0.01, 5.0, 1.0)


def test_thm1_examples():
    assert analysis.bound_thm1(1.0, 0.1, 3.0, 10.0, 1.0, 0.0, 11) == pytest.approx(0.7 ** 10, rel=1e-12)
    assert analysis.bound_thm1(1.0, 0.1, 3.0, 10.0, 1.0, 0.0, 11) == pytest.approx(0.028247, abs=1e-6)
    asym = 0.1 * 10.0 * 2.0 / (2 * 3.0 * 1.0)
    assert analysis.thm1_asymptote(0.1, 3.0, 10.0, 1.0, 2.0) == pytest.approx(asym)
    assert abs(analysis.bound_thm1(5.0, 0.1, 3.0, 10.0, 1.0, 2.0, 10_000) - asym) <= 1e-9
    assert analysis.bound_thm1(5.0, 0.1, 3.0, 10.0, 1.0, 2.0, math.inf) == pytest.approx(asym)
    with pytest.raises(ValueError):
        analysis.bound_thm1(1.0, 1.0, 3.0, 10.0, 1.0, 0.0, 5)
    with pytest.raises(ValueError):
        analysis.bound_thm1(1.0, 0.1, 3.0, 10.0, 1.0, 0.0, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0, 10), st.floats(0, 5), st.integers(1, 500))
def test_thm1_matches_explicit_series(rate, gap, q, k):
    alpha, h_hat, g_hat = 0.1, rate / 0.1, 7.0
    r = 1 - rate
    series = r ** (k - 1) * gap + alpha ** 2 * g_hat * q / 2 * sum(r ** l for l in range(k))
    assert analysis.bound_thm1(gap, alpha, h_hat, g_hat, 1.0, q, k) == pytest.approx(series, rel=1e-9, abs=1e-12)


def test_thm2_examples():
    assert analysis.bound_thm2_avg_grad(2.0, 0.1, 0.2, 4.0, 1.0, math.inf, 1.0, 0.0) == pytest.approx(4.0)
    assert analysis.bound_thm2_avg_grad(2.0, 0.1, 0.2, 0.0, 1.0, 1e12, 1.0, 0.0) < 1e-9
    a = analysis.bound_thm2_avg_grad(2.0, 0.1, 0.2, 4.0, 1.0, 100, 3.0, 0.0)
    b = analysis.bound_thm2_avg_grad(2.0, 0.1, 0.2, 4.0, 1.0, 200, 3.0, 0.0)
    assert 4.0 < b < a
    with pytest.raises(ValueError):
        analysis.bound_thm2_avg_grad(2.0, 0.1, 0.2, 4.0, 1.0, 10, 0.0, 1.0)


def test_gradient_norm_bound():
    assert analysis.gradient_norm_bound([1.0, 3.0, 2.0]) == pytest.approx(3.3)
    with pytest.raises(ValueError):
        analysis.gradient_norm_bound([])
