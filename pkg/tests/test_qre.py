import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blind_igt.games import generate_markov_game, generate_matrix_game
from blind_igt.qre import (JointPolicy, QRESolverError, SolverConfig, entropy,
                           fixed_point_residual, forward_solve_markov, logit_response,
                           policies_from_q_tables, regularized_value, solve_matrix_qre,
                           state_values)

PENNIES = np.array([[1.0, -1.0], [-1.0, 1.0]])


def test_entropy_values():
    assert entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-15)
    assert entropy([0.0, 1.0, 0.0]) == 0.0
    assert entropy([0.3, 0.7]) == pytest.approx(-(0.3 * math.log(0.3) + 0.7 * math.log(0.7)), rel=1e-15)
    with pytest.raises(ValueError):
        entropy([-0.1, 1.1])


def test_regularized_value():
    u = JointPolicy.uniform(3, 3)
    assert regularized_value(np.zeros((3, 3)), u, 1.7) == pytest.approx(0.0, abs=1e-15)
    rs = np.random.default_rng(0)
    Q = rs.normal(size=(3, 3))
    pol = JointPolicy(rs.dirichlet(np.ones(3)), rs.dirichlet(np.ones(3)))
    assert regularized_value(Q, pol, 0.0) == pytest.approx(pol.mu @ Q @ pol.nu, rel=1e-14)
    tau = 0.9
    trip = sum(pol.mu[a] * Q[a, b] * pol.nu[b] for a in range(3) for b in range(3))
    h = lambda p: -sum(x * math.log(x) for x in p)
    assert regularized_value(Q, pol, tau) == pytest.approx(trip + tau * h(pol.mu) - tau * h(pol.nu), rel=1e-13)
    with pytest.raises(ValueError):
        regularized_value(np.zeros((2, 3)), u, 1.0)


def test_logit_response_cases():
    pol = JointPolicy([0.7, 0.2, 0.1], [0.5, 0.5])
    br = logit_response(np.zeros((3, 2)), pol, 0.1)
    np.testing.assert_allclose(br.mu, 1 / 3)
    np.testing.assert_allclose(br.nu, 1 / 2)
    Q = np.random.default_rng(1).normal(size=(3, 2))
    br = logit_response(Q, pol, 1e9)
    assert np.max(np.abs(br.mu - 1 / 3)) < 1e-6 and np.max(np.abs(br.nu - 0.5)) < 1e-6
    br = logit_response(PENNIES, JointPolicy.uniform(2, 2), 1.0)
    np.testing.assert_allclose(br.mu, [0.5, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(br.nu, [0.5, 0.5], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        logit_response(PENNIES, JointPolicy.uniform(2, 2), 0.0)


def test_logit_response_overflow_safe():
    Q = np.array([[1e3, 0.0], [0.0, -1e3]])
    br = logit_response(Q, JointPolicy([0.5, 0.5], [1.0, 0.0]), 1e-3)
    assert np.all(np.isfinite(br.mu)) and br.mu[0] == pytest.approx(1.0)


def test_solve_zero_payoff():
    sol = solve_matrix_qre(np.zeros((4, 3)), 1.0)
    assert sol.converged and sol.residual == 0.0 and sol.iterations == 1
    np.testing.assert_array_equal(sol.policy.mu, np.full(4, 0.25))


def test_matching_pennies():
    sol = solve_matrix_qre(PENNIES, 1.0)
    assert sol.converged and sol.residual < 1e-9
    np.testing.assert_allclose(sol.policy.mu, 0.5, atol=1e-12)
    np.testing.assert_allclose(sol.policy.nu, 0.5, atol=1e-12)


@pytest.mark.parametrize("tau", [0.05, 0.2, 0.5, 2.0, 5.0])
@pytest.mark.parametrize("seed", range(4))
def test_certificate_by_substitution(tau, seed):
    g = generate_matrix_game(seed=seed)
    sol = solve_matrix_qre(g.Q_star, tau)
    assert sol.converged
    mu_br = np.exp(g.Q_star @ sol.policy.nu / tau)
    mu_br /= mu_br.sum()
    nu_br = np.exp(-g.Q_star.T @ sol.policy.mu / tau)
    nu_br /= nu_br.sum()
    assert np.max(np.abs(sol.policy.mu - mu_br)) < 1e-9
    assert np.max(np.abs(sol.policy.nu - nu_br)) < 1e-9


def test_newton_fallback_engages_and_failures_are_flagged():
    g = generate_matrix_game(seed=2)
    sol = solve_matrix_qre(g.Q_star, 0.05, SolverConfig(max_iter=5))
    assert sol.method == "newton" and sol.converged
    bad = solve_matrix_qre(g.Q_star, 0.05, SolverConfig(max_iter=5, fallback=False))
    assert not bad.converged and bad.residual > 1e-9


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0)
    with pytest.raises(ValueError):
        SolverConfig(damping=0)
    with pytest.raises(ValueError):
        SolverConfig(damping=1.5)


@settings(max_examples=25, deadline=None)
@given(k=st.floats(0.1, 10.0), seed=st.integers(0, 500))
def test_scale_covariance(k, seed):
    g = generate_matrix_game(5, 4, 3, seed=seed)
    a = solve_matrix_qre(g.Q_star, 1.5)
    b = solve_matrix_qre(k * g.Q_star, 1.5 * k)
    assert np.max(np.abs(a.policy.mu - b.policy.mu)) < 1e-8
    assert np.max(np.abs(a.policy.nu - b.policy.nu)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-5, 5), seed=st.integers(0, 500))
def test_translation_invariance(c, seed):
    g = generate_matrix_game(5, 4, 3, seed=seed)
    a = solve_matrix_qre(g.Q_star, 1.0)
    b = solve_matrix_qre(g.Q_star + c, 1.0)
    assert np.max(np.abs(a.policy.mu - b.policy.mu)) < 1e-8
    assert np.max(np.abs(a.policy.nu - b.policy.nu)) < 1e-8


def test_column_shift_moves_column_logits():
    g = generate_matrix_game(4, 3, 2, seed=3)
    pol = solve_matrix_qre(g.Q_star, 1.0).policy
    Q2 = g.Q_star.copy()
    Q2[:, 1] += 0.7
    br = logit_response(Q2, pol, 1.0)
    # column 1 loses 0.7 / tau in logit relative to the others
    base = logit_response(g.Q_star, pol, 1.0).nu
    ratio = (br.nu[1] / br.nu[0]) / (base[1] / base[0])
    assert ratio == pytest.approx(math.exp(-0.7), rel=1e-12)
    np.testing.assert_allclose(br.mu, logit_response(g.Q_star, pol, 1.0).mu, atol=1e-15)


def test_policies_from_q_tables():
    sol = policies_from_q_tables(np.zeros((3, 2, 4)), 1.0)
    np.testing.assert_allclose(sol.policy.mu, 0.5)
    np.testing.assert_allclose(sol.policy.nu, 0.25)
    Q = generate_matrix_game(seed=1).Q_star
    single = solve_matrix_qre(Q, 2.0)
    stacked = policies_from_q_tables(Q[None], 2.0)
    np.testing.assert_array_equal(stacked.policy.mu[0], single.policy.mu)


def test_policies_from_q_tables_generated_game():
    g = generate_markov_game(seed=4)
    for s in range(g.S):
        assert fixed_point_residual(g.Q_star[s], g.policy.state(s), g.tau_star) < 1e-9


def test_policies_from_q_tables_reports_state():
    Q = np.stack([np.zeros((3, 3)), generate_matrix_game(3, 3, 2, seed=1).Q_star * 50])
    with pytest.raises(QRESolverError) as info:
        policies_from_q_tables(Q, 0.01, SolverConfig(max_iter=2, fallback=False))
    assert info.value.state == 1


def test_forward_markov_trivial_cases():
    rs = np.random.default_rng(0)
    P = rs.dirichlet(np.ones(3), size=(3, 2, 2))
    r = rs.normal(size=(3, 2, 2))
    sol = forward_solve_markov(r, P, 0.0, 1.0)
    assert sol.iterations == 1
    np.testing.assert_array_equal(sol.Q, r)
    sol = forward_solve_markov(np.zeros((3, 2, 2)), P, 0.9, 1.0)
    np.testing.assert_allclose(sol.V, 0.0, atol=1e-15)
    np.testing.assert_allclose(sol.policy.mu, 0.5)


@pytest.mark.parametrize("seed", [0, 1])
def test_forward_markov_round_trip(seed):
    g = generate_markov_game(seed=seed)
    sol = forward_solve_markov(g.r_star, g.P, g.gamma, g.tau_star)
    assert sol.converged
    assert np.max(np.abs(sol.Q - g.Q_star)) < 1e-6
    assert np.max(np.abs(sol.V - g.V_star)) < 1e-6
    assert np.max(np.abs(sol.policy.mu - g.policy.mu)) < 1e-6
    assert np.max(np.abs(sol.policy.nu - g.policy.nu)) < 1e-6
    # returned V is exactly the regularized value of the returned Q and policies
    for s in range(g.S):
        assert sol.V[s] == pytest.approx(regularized_value(sol.Q[s], sol.policy.state(s), g.tau_star),
                                         abs=1e-12)


def test_value_iteration_contracts_at_discount_rate():
    g = generate_markov_game(seed=3)
    sol = forward_solve_markov(g.r_star, g.P, g.gamma, g.tau_star)
    h = np.array(sol.history)
    ratios = h[10:-5][1:] / h[10:-5][:-1]
    assert np.all(ratios <= g.gamma + 0.02)


def test_state_values_match_scalar():
    g = generate_markov_game(S=3, m=3, n=2, d=2, seed=8)
    v = state_values(g.Q_star, g.policy, g.tau_star)
    for s in range(3):
        assert v[s] == pytest.approx(regularized_value(g.Q_star[s], g.policy.state(s), g.tau_star), abs=1e-13)


def test_joint_policy_validation():
    with pytest.raises(ValueError):
        JointPolicy([0.5, 0.6], [1.0])
    with pytest.raises(ValueError):
        JointPolicy([1.5, -0.5], [1.0])
