"""Quick oracle checks run by ``blind-igt verify``.

Each check compares a library routine against an independent computation
(loops, closed forms, substitution) on a small seeded instance.
"""

from __future__ import annotations

import math

import numpy as np

from .estimators import (ConfidenceConfig, NonUniformityError, confidence_contains,
                         confidence_threshold, nls_estimate, recover_markov_rewards,
                         standard_igt_estimate)
from .experiments import fit_loglog_slope
from .games import build_payoff_matrix, generate_markov_game, generate_matrix_game
from .qre import (EXACT, JointPolicy, entropy, fixed_point_residual, forward_solve_markov,
                  logit_response, regularized_value, solve_matrix_qre)
from .sampling import (MatrixSample, empirical_policies, estimate_transitions,
                       sample_markov_dataset, sample_matrix_play)
from .system import build_markov_system, build_system, check_identifiability

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


@check
def payoff_matches_loops():
    g = generate_matrix_game(3, 3, 2, 1.0, 1.0, seed=11)
    Q = build_payoff_matrix(g.features, g.theta_star)
    phi = g.features.values
    ref = [[sum(phi[a, b, k] * g.theta_star[k] for k in range(2)) for b in range(3)] for a in range(3)]
    return np.allclose(Q, ref, rtol=0, atol=1e-14)


@check
def entropy_two_point():
    return math.isclose(entropy([0.3, 0.7]), -(0.3 * math.log(0.3) + 0.7 * math.log(0.7)),
                        rel_tol=1e-15)


@check
def regularized_value_loops():
    rs = np.random.default_rng(3)
    Q = rs.normal(size=(3, 3))
    mu, nu = rs.dirichlet(np.ones(3)), rs.dirichlet(np.ones(3))
    tau = 0.7
    bil = sum(mu[a] * Q[a, b] * nu[b] for a in range(3) for b in range(3))
    h = lambda p: -sum(x * math.log(x) for x in p)
    return math.isclose(regularized_value(Q, JointPolicy(mu, nu), tau),
                        bil + tau * h(mu) - tau * h(nu), rel_tol=1e-12)


@check
def matching_pennies_uniform():
    sol = solve_matrix_qre(np.array([[1.0, -1.0], [-1.0, 1.0]]), 1.0)
    return sol.converged and np.allclose(sol.policy.mu, 0.5) and np.allclose(sol.policy.nu, 0.5)


@check
def qre_certificate():
    g = generate_matrix_game(seed=5)
    ok = True
    for tau in (0.5, 2.0, 5.0):
        sol = solve_matrix_qre(g.Q_star, tau)
        ok &= sol.converged and fixed_point_residual(g.Q_star, sol.policy, tau) < 1e-9
    return ok


@check
def markov_round_trip():
    g = generate_markov_game(S=3, m=3, n=3, d=4, seed=2)
    fs = forward_solve_markov(g.r_star, g.P, g.gamma, g.tau_star)
    return (np.max(np.abs(fs.Q - g.Q_star)) < 1e-6 and np.max(np.abs(fs.V - g.V_star)) < 1e-6
            and np.max(np.abs(fs.policy.mu - g.policy.mu)) < 1e-6)


@check
def bellman_inversion_loop():
    g = generate_markov_game(S=3, m=3, n=3, d=4, seed=4)
    S, m, n = 3, 3, 3
    worst = 0.0
    for s in range(S):
        for a in range(m):
            for b in range(n):
                ev = sum(g.P[s, a, b, t] * g.V_star[t] for t in range(S))
                worst = max(worst, abs(g.Q_star[s, a, b] - g.gamma * ev - g.r_star[s, a, b]))
    return worst < 1e-9


@check
def system_rows_match_loops():
    g = generate_matrix_game(4, 3, 2, 1.0, 1.0, seed=8)
    sol = solve_matrix_qre(g.Q_star, 1.0)
    sy = build_system(g.features, sol.policy)
    phi, nu = g.features.values, sol.policy.nu
    A1 = sum(nu[b] * (phi[1, b] - phi[0, b]) for b in range(3))
    return np.allclose(sy.X[0], A1, atol=1e-14)


@check
def exact_recovery():
    g = generate_matrix_game(seed=21)
    sol = solve_matrix_qre(g.Q_star, g.tau_star, EXACT)
    est = nls_estimate(build_system(g.features, sol.policy), g.C)
    return np.linalg.norm(est.theta_hat - g.theta_star) < 1e-8 and abs(est.tau_hat - g.tau_star) < 1e-8


@check
def standard_igt_scale_bias():
    g = generate_matrix_game(seed=22)
    sy = build_system(g.features, solve_matrix_qre(g.Q_star, g.tau_star).policy)
    return np.allclose(standard_igt_estimate(sy, 2 * g.tau_star), 2 * g.theta_star, atol=1e-8)


@check
def uniform_play_rejected():
    g = generate_matrix_game(seed=23)
    sy = build_system(g.features, JointPolicy.uniform(10, 10))
    if np.any(sy.y != 0) or check_identifiability(sy).identifiable:
        return False
    try:
        nls_estimate(sy, 1.0)
    except NonUniformityError:
        return True
    return False


@check
def markov_exact_rewards():
    g = generate_markov_game(S=4, m=3, n=3, d=4, seed=6)
    sy = build_markov_system(g.features, g.policy)
    rec = recover_markov_rewards(sy, g.R, g.features, g.policy, g.P, g.gamma)
    return np.max(np.abs(rec.r_hat - g.r_star)) < 1e-7


@check
def floor_arithmetic():
    p = empirical_policies(MatrixSample([10, 0], [5, 5]), floor=1 / 20).mu
    return np.allclose(p, [1 / 1.05, 0.05 / 1.05], rtol=1e-15)


@check
def sampling_deterministic():
    pol = JointPolicy.uniform(4, 4)
    a, b = sample_matrix_play(pol, 500, seed=1), sample_matrix_play(pol, 500, seed=1)
    return np.array_equal(a.counts_a, b.counts_a) and np.array_equal(a.counts_b, b.counts_b)


@check
def transitions_normalized():
    g = generate_markov_game(S=3, m=2, n=2, d=2, seed=1)
    data = sample_markov_dataset(g, g.policy, 50, seed=3)
    P_hat = estimate_transitions(data, 1.0)
    return np.allclose(P_hat.sum(-1), 1.0) and np.all(P_hat > 0)


@check
def kappa_closed_form():
    cfg = ConfidenceConfig(delta=0.05, xi=0.01, L=1.0, C=1.0, tau_max=5.0, m=10, n=10, N=10**4)
    eps = 2 * math.sqrt(2 * math.log(2 * 2**10 / 0.05) / 10**4)
    ref = (2 * math.sqrt(20) + math.sqrt(160) / 0.01 * 5.0) ** 2 * eps**2
    return math.isclose(confidence_threshold(cfg), ref, rel_tol=1e-12)


@check
def confidence_truth_inside():
    g = generate_matrix_game(seed=30)
    sy = build_system(g.features, solve_matrix_qre(g.Q_star, g.tau_star).policy)
    return (confidence_contains(sy, g.theta_star, g.tau_star, 1e-12, g.C)
            and not confidence_contains(sy, 2 * g.theta_star, g.tau_star, 1e9, g.C))


@check
def slope_exact_power_law():
    N = np.array([10, 100, 1000, 10000])
    return abs(fit_loglog_slope(N, 3 / np.sqrt(N)) + 0.5) < 1e-12


@check
def logit_zero_payoff_uniform():
    br = logit_response(np.zeros((3, 4)), JointPolicy([1, 0, 0], [0, 0, 0, 1]), 0.3)
    return np.allclose(br.mu, 1 / 3) and np.allclose(br.nu, 1 / 4)


def run_all() -> list[tuple[str, bool, str]]:
    out = []
    for fn in CHECKS:
        try:
            ok, detail = bool(fn()), ""
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((fn.__name__, ok, detail))
    return out
