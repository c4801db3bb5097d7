import numpy as np
import pytest

from surplusopt.analysis import (MetricsRecord, baseline_fixed_point, compute_metrics,
                                 convergence_report, estimate_decay, limit_matrix,
                                 second_eigenvalue_modulus, stationary_distribution)
from surplusopt.exceptions import ConfigurationError
from surplusopt.graph import max_epsilon, ring
from surplusopt.objective import ObjectiveFamily, centralized_optimum
from surplusopt.protocol import (ProtocolParams, SwarmState, SystemMatrix, build_system_matrix,
                                 simulate)

from _configs import random_instance, ring_quadratics, unbalanced_ring


def two_agent_quadratics():
    return ObjectiveFamily.quadratic([[[1.0]], [[1.0]]], [[0.0], [2.0]])


def record(consensus, surplus=0.0, velocity=0.0, k=0):
    return MetricsRecord(k, consensus, surplus, velocity, np.zeros(1), None, None)


# metrics

def test_metrics_at_optimum_are_zero():
    fam = two_agent_quadratics()
    orc = centralized_optimum(fam)
    m = compute_metrics(SwarmState.initial([1.0, 1.0]), fam, orc)
    assert (m.consensus_error, m.surplus_norm, m.velocity_norm) == (0.0, 0.0, 0.0)
    assert m.optimality_gap == pytest.approx(0.0, abs=1e-15)
    assert m.dist_sq_opt == pytest.approx(0.0, abs=1e-30)


def test_metrics_two_agents_by_hand():
    m = compute_metrics(SwarmState.initial([0.0, 2.0]), two_agent_quadratics())
    assert m.consensus_error == 2.0
    np.testing.assert_array_equal(m.zbar, [1.0])
    assert m.optimality_gap is None and m.dist_sq_opt is None


def test_zbar_includes_surplus_mass():
    r = np.array([[0.0], [1.0]])
    q = np.array([[0.5], [0.5]])
    y = np.array([[1.0], [-3.0]])
    fam = two_agent_quadratics()
    np.testing.assert_allclose(compute_metrics(SwarmState(r, q, y, 3), fam).zbar, [0.0])
    np.testing.assert_allclose(compute_metrics(SwarmState(r, q, 0 * y, 3), fam).zbar, [1.0])


def test_metrics_vector_norms():
    r = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
    q = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    y = np.array([[1.0, 0.0], [0.0, 0.0], [-6.0, 8.0]])
    m = compute_metrics(SwarmState(r, q, y, 0), ObjectiveFamily.quartic([[0.0, 0.0]] * 3))
    assert m.consensus_error == pytest.approx(5.0)
    assert m.surplus_norm == pytest.approx(10.0)
    assert m.velocity_norm == pytest.approx(2.0)


# limit matrix and decay

@pytest.mark.parametrize("seed", range(20))
def test_limit_matrix_invariance(seed):
    g, B, _, params, _ = random_instance(seed)
    M = build_system_matrix(g, B, params).matrix
    Minf = limit_matrix(g.n)
    np.testing.assert_allclose(M @ Minf, Minf, atol=1e-10)
    np.testing.assert_allclose(Minf @ M, Minf, atol=1e-10)
    np.testing.assert_allclose(Minf @ Minf, Minf, atol=1e-10)


def test_decay_two_cycle(two_cycle, two_cycle_B, two_cycle_params):
    M = build_system_matrix(two_cycle, two_cycle_B, two_cycle_params)
    est = estimate_decay(M, 200)
    assert 0 < est.gamma_hat < 1
    assert est.norm == "spectral"
    direct = np.linalg.norm(np.linalg.matrix_power(M.matrix, 200) - M.limit, 2)
    assert est.errors[-1] == pytest.approx(direct, rel=1e-6)
    # eps = 0.1 leaves the eigenvalue 1 - eps T = 0.95, so e_k cannot fall faster than 0.95**k
    assert est.gamma_hat == pytest.approx(0.95, rel=1e-3)
    assert est.errors[-1] >= 0.95 ** 200


def test_decay_two_cycle_default_gain(two_cycle, two_cycle_B):
    M = build_system_matrix(two_cycle, two_cycle_B, ProtocolParams(0.5, 0.8))
    est = estimate_decay(M, 200)
    assert est.gamma_hat < 1
    assert est.errors[-1] <= 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_decay_envelope_covers_samples(seed):
    g, B, _, params, _ = random_instance(seed)
    est = estimate_decay(build_system_matrix(g, B, params), 200)
    assert np.all(est.errors <= est.bounds * 1.1)
    assert est.gamma_hat == pytest.approx(second_eigenvalue_modulus(
        build_system_matrix(g, B, params).matrix), rel=0.05)


def test_decay_of_limit_itself_is_exact():
    n = 3
    est = estimate_decay(SystemMatrix(limit_matrix(n), 0.5, 0.1), 50)
    assert est.exact
    assert not est.errors.any()
    assert est.gamma_hat == 0.0


def test_decay_rejects_non_contracting_matrix():
    with pytest.raises(ConfigurationError, match="spectral guard"):
        estimate_decay(SystemMatrix(np.eye(4), 0.5, 0.1), 50)


def test_decay_needs_enough_samples(two_cycle, two_cycle_B, two_cycle_params):
    with pytest.raises(ValueError):
        estimate_decay(build_system_matrix(two_cycle, two_cycle_B, two_cycle_params), 10)


def test_decay_rows_and_frobenius(two_cycle, two_cycle_B, two_cycle_params):
    est = estimate_decay(build_system_matrix(two_cycle, two_cycle_B, two_cycle_params), 30)
    rows = est.rows()
    assert [r[0] for r in rows] == list(range(1, 31))
    assert np.all(est.errors <= est.errors_frobenius + 1e-15)


def test_second_eigenvalue_modulus_diagonal():
    assert second_eigenvalue_modulus(np.diag([1.0, -0.5, 0.25])) == 0.5


# convergence report

def test_report_fixed_point_trajectory():
    traj = simulate(ring(2, 0.4), ObjectiveFamily.quadratic([[[1.0]]] * 2, [[1.0]] * 2),
                    ProtocolParams(0.5, 0.1), SwarmState.initial([1.0, 1.0]), 100, record_stride=10,
                    oracle=centralized_optimum(ObjectiveFamily.quadratic([[[1.0]]] * 2, [[1.0]] * 2)))
    rep = convergence_report(traj)
    assert rep.converged
    assert (rep.k_consensus, rep.k_surplus, rep.k_velocity) == (0, 0, 0)
    assert rep.final_gap == pytest.approx(0.0, abs=1e-15)


def test_report_unconverged_tail():
    recs = [record(1.0, k=k) for k in range(10)]
    rep = convergence_report(recs, 1e-3)
    assert not rep.converged
    assert rep.k_consensus is None


def test_report_uses_sustained_crossing():
    values = [5.0, 1e-4, 2.0, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4]
    rep = convergence_report([record(v, k=10 * i) for i, v in enumerate(values)])
    assert rep.converged
    assert rep.k_consensus == 30


def test_report_late_crossing_is_not_converged():
    values = [1.0] * 19 + [1e-5]
    rep = convergence_report([record(v, k=i) for i, v in enumerate(values)])
    assert not rep.converged
    assert rep.k_consensus == 19


def test_report_rejects_empty():
    with pytest.raises(ValueError):
        convergence_report([])


def test_report_serializes():
    d = convergence_report([record(0.0)]).to_dict()
    assert set(d) == {"converged", "k_consensus", "k_surplus", "k_velocity", "final_gap",
                      "x_star_hat", "tolerances"}


def test_two_agent_run_converges_with_small_gap(two_cycle, two_cycle_params):
    fam = two_agent_quadratics()
    traj = simulate(two_cycle, fam, two_cycle_params, SwarmState.initial([0.0, 2.0]), 200_000,
                    record_stride=2000, oracle=centralized_optimum(fam))
    rep = convergence_report(traj)
    assert rep.converged
    assert rep.final_gap <= 1e-3


def test_distance_to_optimum_trend():
    # positive increments of V(k) over the second half stay within the step-size slack
    g, fam = unbalanced_ring(), ring_quadratics()
    params = ProtocolParams(0.5, 0.5 * max_epsilon(g, 0.5))
    r0 = np.random.default_rng(2).uniform(-5, 5, (4, 1))
    K = 40_000
    traj = simulate(g, fam, params, SwarmState.initial(r0), K, record_stride=1,
                    oracle=centralized_optimum(fam))
    V = np.array([rec.dist_sq_opt for rec in traj.records])
    ks = np.array(traj.ks)
    half = ks >= K // 2
    inc = np.diff(V[half])
    alphas = 1.0 / (ks[half][:-1] + 1.0)
    D = max(float(np.max(np.abs(fam.grad_all(np.array(s[0]) + np.array(s[1]))))) for s in traj.states[K // 2:])
    slack = 2 * D ** 2 * params.T ** 2 * alphas ** 2
    positive = inc > 0
    excess = (inc - slack)[positive]
    assert excess.size == 0 or np.percentile(excess, 90) <= 0


# baseline fixed point

def test_stationary_distribution_of_balanced_ring_is_uniform():
    np.testing.assert_allclose(stationary_distribution(ring(4, 0.3), 0.5), 0.25, atol=1e-12)


def test_stationary_distribution_is_left_fixed():
    g = unbalanced_ring()
    pi = stationary_distribution(g, 0.5)
    W = np.eye(4) - 0.5 * (np.diag(g.in_degree) - g.weights)
    np.testing.assert_allclose(pi @ W, pi, atol=1e-12)
    assert np.all(pi > 0)


def test_baseline_fixed_point_quadratic_is_weighted_mean():
    g = unbalanced_ring()
    pi = stationary_distribution(g, 0.5)
    fam = ring_quadratics()
    centers = np.array([m.c[0] for m in fam.members])
    np.testing.assert_allclose(baseline_fixed_point(g, 0.5, fam), [pi @ centers], atol=1e-12)


def test_baseline_fixed_point_quartic_is_stationary():
    g = unbalanced_ring()
    fam = ObjectiveFamily.quartic([[-1.0], [-0.5], [0.5], [1.0]])
    pi = stationary_distribution(g, 0.5)
    x = baseline_fixed_point(g, 0.5, fam)
    assert abs(sum(p * fam.grad(i, x)[0] for i, p in enumerate(pi))) <= 1e-10
