import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blind_igt.games import FeatureMap, generate_markov_game, generate_matrix_game
from blind_igt.qre import EXACT, JointPolicy, solve_matrix_qre
from blind_igt.rng import Stream
from blind_igt.sampling import empirical_policies, sample_matrix_play
from blind_igt.system import (ZeroProbabilityError, build_markov_system, build_system,
                              check_identifiability)


def exact(g):
    return solve_matrix_qre(g.Q_star, g.tau_star, EXACT).policy


def loop_system(phi, mu, nu):
    m, n, d = phi.shape
    rows, y = [], []
    for a in range(1, m):
        row = np.zeros(d)
        for b in range(n):
            row += nu[b] * (phi[a, b] - phi[0, b])
        rows.append(row)
        y.append(np.log(mu[a] / mu[0]))
    for b in range(1, n):
        row = np.zeros(d)
        for a in range(m):
            row += mu[a] * (phi[a, 0] - phi[a, b])
        rows.append(row)
        y.append(np.log(nu[b] / nu[0]))
    return np.array(rows), np.array(y)


def test_rows_match_loop_oracle():
    g = generate_matrix_game(5, 4, 3, seed=2)
    pol = exact(g)
    sy = build_system(g.features, pol)
    X, y = loop_system(g.features.values, pol.mu, pol.nu)
    np.testing.assert_allclose(sy.X, X, rtol=0, atol=1e-14)
    np.testing.assert_allclose(sy.y, y, rtol=0, atol=1e-14)
    assert sy.X.shape == (5 + 4 - 2, 3)
    assert sy.rows_mu == ((0, 4),) and sy.rows_nu == ((4, 7),)


def test_uniform_policies_give_zero_y():
    g = generate_matrix_game(seed=1)
    sy = build_system(g.features, JointPolicy.uniform(10, 10))
    assert np.array_equal(sy.y, np.zeros(18))


@pytest.mark.parametrize("tau", [0.5, 2.0, 5.0])
def test_exact_qre_consistency(tau):
    g = generate_matrix_game(10, 10, 5, tau, 1.0, seed=4)
    sy = build_system(g.features, exact(g))
    assert sy.residual(g.theta_star, g.tau_star) < 1e-8


def test_zero_probability_rejected():
    g = generate_matrix_game(3, 3, 2, seed=1)
    with pytest.raises(ZeroProbabilityError, match="floor"):
        build_system(g.features, JointPolicy([1.0, 0.0, 0.0], [1 / 3] * 3))


def test_markov_stacking():
    g = generate_markov_game(seed=5)
    sy = build_markov_system(g.features, g.policy)
    assert sy.X.shape == (8 * (5 + 5 - 2), 6)
    assert sy.residual(g.theta_star, g.tau_star) < 1e-7
    s3 = build_system(g.features.state(3), g.policy.state(3))
    lo, hi = sy.rows_mu[3][0], sy.rows_nu[3][1]
    np.testing.assert_array_equal(sy.X[lo:hi], s3.X)


def test_markov_single_state_equals_matrix_build():
    g = generate_markov_game(S=1, m=4, n=3, d=2, seed=1)
    a = build_markov_system(g.features, g.policy)
    b = build_system(g.features.state(0), g.policy.state(0))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)


def test_markov_zero_probability_names_state():
    g = generate_markov_game(S=2, m=2, n=2, d=2, seed=1)
    mu = g.policy.mu.copy()
    mu[1] = [1.0, 0.0]
    with pytest.raises(ZeroProbabilityError, match="state 1"):
        build_markov_system(g.features, JointPolicy(mu, g.policy.nu))


def test_identifiability_reports():
    g = generate_matrix_game(seed=6)
    rep = check_identifiability(build_system(g.features, JointPolicy.uniform(10, 10)))
    assert not rep.identifiable and not rep.non_uniform
    # duplicated feature column -> rank deficiency
    v = g.features.values
    dup = FeatureMap(np.concatenate([v, v[..., :1]], axis=-1))
    rep = check_identifiability(build_system(dup, exact(g)))
    assert rep.rank == 5 and rep.d == 6 and not rep.identifiable


def test_generic_games_identifiable():
    ok = 0
    for seed in range(50):
        g = generate_matrix_game(seed=seed)
        rep = check_identifiability(build_system(g.features, exact(g)))
        ok += rep.identifiable
        assert rep.sigma_min > 0
    assert ok == 50


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), shift=st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_common_shift_cancels_in_player_one_rows(seed, shift):
    g = generate_matrix_game(4, 4, 3, seed=seed)
    pol = exact(g)
    a = build_system(g.features, pol)
    b = build_system(FeatureMap(g.features.values + np.array(shift)), pol)
    np.testing.assert_allclose(a.X, b.X, atol=1e-12)


@pytest.mark.parametrize("k", [0.1, 10.0])
def test_bilinear_homogeneity(k):
    g = generate_matrix_game(seed=8)
    sy = build_system(g.features, exact(g))
    r1 = sy.residual(g.theta_star, g.tau_star)
    rk = sy.residual(k * g.theta_star, k * g.tau_star)
    assert abs(rk - k * r1) < 1e-14 and rk < 1e-8


def test_perturbation_bounds_hold():
    g = generate_matrix_game(seed=9)
    pol = exact(g)
    xi = min(pol.mu.min(), pol.nu.min())
    L = g.features.L
    star = build_system(g.features, pol)
    mn = 20
    for t in range(40):
        smp = sample_matrix_play(pol, 20000, Stream(1, t, 1))
        hat_pol = empirical_policies(smp)
        eps = np.abs(hat_pol.mu - pol.mu).sum() + np.abs(hat_pol.nu - pol.nu).sum()
        if eps >= xi / 2:
            continue
        hat = build_system(g.features, hat_pol)
        assert np.linalg.norm(hat.X - star.X) <= 2 * L * np.sqrt(mn) * eps
        assert np.linalg.norm(hat.y - star.y) <= np.sqrt(8 * mn) / xi * eps


def test_system_csv(tmp_path):
    g = generate_matrix_game(3, 3, 2, seed=1)
    sy = build_system(g.features, exact(g))
    sy.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "x0,x1,y,player" and len(lines) == 5
    assert float(lines[1].split(",")[0]) == sy.X[0, 0]
