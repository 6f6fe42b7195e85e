import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blind_igt.games import (FeatureMap, MarkovGameSpec, MatrixGameSpec, bellman_inversion,
                             build_payoff_matrix, game_from_dict, generate_markov_game,
                             generate_matrix_game, load_game, save_game)
from blind_igt.qre import forward_solve_markov
from blind_igt.rng import Purpose, Stream, stream


def test_payoff_zero_theta():
    g = generate_matrix_game(4, 3, 2, seed=1)
    assert np.array_equal(build_payoff_matrix(g.features, np.zeros(2)), np.zeros((4, 3)))


def test_payoff_constant_feature():
    f = FeatureMap(np.ones((3, 4, 1)))
    assert np.array_equal(build_payoff_matrix(f, [3.0]), np.full((3, 4), 3.0))


def test_payoff_matches_loop_oracle():
    g = generate_matrix_game(3, 3, 2, seed=5)
    phi, th = g.features.values, g.theta_star
    ref = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            ref[a, b] = sum(phi[a, b, k] * th[k] for k in range(2))
    np.testing.assert_allclose(build_payoff_matrix(g.features, th), ref, rtol=0, atol=1e-15)


def test_payoff_dimension_mismatch():
    g = generate_matrix_game(3, 3, 2, seed=5)
    with pytest.raises(ValueError):
        build_payoff_matrix(g.features, np.ones(3))


@settings(max_examples=30, deadline=None)
@given(k=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_payoff_linearity(k, seed):
    g = generate_matrix_game(4, 5, 3, seed=seed)
    np.testing.assert_allclose(build_payoff_matrix(g.features, k * g.theta_star),
                               k * build_payoff_matrix(g.features, g.theta_star), rtol=1e-12, atol=1e-12)


def test_feature_bound_is_max_norm():
    g = generate_matrix_game(seed=3)
    v = g.features.values
    L = max(np.linalg.norm(v[a, b]) for a in range(10) for b in range(10))
    assert g.features.L == pytest.approx(L, rel=1e-15)
    assert g.features.d == 5 and g.features.kind == "matrix"


def test_matrix_generator_deterministic_and_normalized():
    a = generate_matrix_game(10, 10, 5, 2.0, 1.0, seed=42)
    b = generate_matrix_game(10, 10, 5, 2.0, 1.0, seed=42)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert abs(np.linalg.norm(a.theta_star) - 1.0) < 1e-12
    c = generate_matrix_game(10, 10, 5, 2.0, 3.5, seed=43)
    assert abs(np.linalg.norm(c.theta_star) - 3.5) <= 1e-12 * 3.5


def test_default_setups():
    g = generate_matrix_game()
    assert (g.features.m, g.features.n, g.features.d, g.tau_star, g.C) == (10, 10, 5, 2.0, 1.0)
    mg = generate_markov_game()
    assert (mg.S, mg.features.m, mg.features.n, mg.features.d) == (8, 5, 5, 6)
    assert (mg.tau_star, mg.R, mg.gamma) == (1.5, 1.0, 0.9)


@pytest.mark.parametrize("args", [(1, 3, 2), (3, 1, 2), (3, 3, 0)])
def test_degenerate_dimensions(args):
    with pytest.raises(ValueError):
        generate_matrix_game(*args)


def test_invalid_gamma():
    with pytest.raises(ValueError):
        generate_markov_game(S=2, m=2, n=2, d=2, gamma=1.0)


@pytest.fixture(scope="module")
def markov_game():
    return generate_markov_game(seed=9)


def test_markov_transitions_are_stochastic(markov_game):
    P = markov_game.P
    assert P.shape == (8, 5, 5, 8)
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(-1), 1.0, rtol=0, atol=1e-12)
    assert abs(np.linalg.norm(markov_game.theta_star) - 1.0) < 1e-12


def test_markov_reward_by_independent_bellman_loop(markov_game):
    g = markov_game
    S, m, n = g.S, g.features.m, g.features.n
    for s in range(S):
        for a in range(m):
            for b in range(n):
                ev = sum(g.P[s, a, b, t] * g.V_star[t] for t in range(S))
                assert abs(g.Q_star[s, a, b] - g.gamma * ev - g.r_star[s, a, b]) < 1e-9


def test_markov_feature_bound_dominates(markov_game):
    norms = np.linalg.norm(markov_game.features.values, axis=-1)
    assert np.all(norms <= markov_game.features.L)


def test_markov_q_is_linear_in_features(markov_game):
    np.testing.assert_allclose(markov_game.Q_star,
                               build_payoff_matrix(markov_game.features, markov_game.theta_star))


def test_markov_r_star_satisfies_forward_bellman(markov_game):
    g = markov_game
    fs = forward_solve_markov(g.r_star, g.P, g.gamma, g.tau_star)
    np.testing.assert_allclose(g.r_star, bellman_inversion(fs.Q, fs.V, g.P, g.gamma), atol=1e-8)


def test_generators_reproducible_across_runs():
    a = generate_markov_game(S=3, m=2, n=3, d=2, seed=stream(5, 3, Purpose.GAME))
    b = generate_markov_game(S=3, m=2, n=3, d=2, seed=stream(5, 3, Purpose.GAME))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    c = generate_markov_game(S=3, m=2, n=3, d=2, seed=stream(5, 4, Purpose.GAME))
    assert not np.array_equal(a.theta_star, c.theta_star)


def test_json_round_trip(tmp_path):
    g = generate_matrix_game(3, 4, 2, seed=1)
    save_game(g, tmp_path / "g.json", meta={"seed": 1})
    back = load_game(tmp_path / "g.json")
    assert isinstance(back, MatrixGameSpec)
    assert np.array_equal(back.features.values, g.features.values)
    assert np.array_equal(back.theta_star, g.theta_star)
    doc = json.loads((tmp_path / "g.json").read_text())
    # row-major layout: features[a][b] is the feature vector of (a, b)
    assert doc["features"][2][1] == g.features.values[2, 1].tolist()

    mg = generate_markov_game(S=2, m=2, n=2, d=3, seed=2)
    back = game_from_dict(json.loads(json.dumps(mg.to_dict())))
    assert isinstance(back, MarkovGameSpec)
    assert np.array_equal(back.P, mg.P) and np.array_equal(back.r_star, mg.r_star)
    assert np.array_equal(back.policy.mu, mg.policy.mu)


def test_stream_transforms():
    s = Stream(0, 1, 2)
    u = s.uniform(10000)
    assert u.min() > 0 and u.max() < 1
    z = Stream(0, 1, 3).normal(200000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    dr = Stream(0, 1, 4).dirichlet_ones(5, size=(1000,))
    np.testing.assert_allclose(dr.sum(-1), 1.0)
    # Dirichlet(1) marginals are Beta(1, k-1): mean 1/k
    assert abs(dr[:, 0].mean() - 0.2) < 0.02
