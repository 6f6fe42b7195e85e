"""Game instances, linear feature maps and the random generators used in experiments."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .qre import EXACT, JointPolicy, QRESolution, SolverConfig, policies_from_q_tables, state_values
from .rng import Purpose, Stream


@dataclass(frozen=True)
class FeatureMap:
    """Feature vectors phi(a, b) (shape (m, n, d)) or phi(s, a, b) (shape (S, m, n, d))."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim not in (3, 4):
            raise ValueError("feature tensor must have shape (m, n, d) or (S, m, n, d)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def kind(self) -> str:
        return "matrix" if self.values.ndim == 3 else "markov"

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def m(self) -> int:
        return self.values.shape[-3]

    @property
    def n(self) -> int:
        return self.values.shape[-2]

    @property
    def S(self) -> int | None:
        return self.values.shape[0] if self.kind == "markov" else None

    @property
    def L(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=-1)))

    def state(self, s: int) -> "FeatureMap":
        if self.kind != "markov":
            raise ValueError("not a Markov feature map")
        return FeatureMap(self.values[s])

    def select(self, columns) -> "FeatureMap":
        """Feature map restricted to a subset of feature dimensions."""
        return FeatureMap(self.values[..., list(columns)])


def build_payoff_matrix(features: FeatureMap, theta) -> np.ndarray:
    """Payoffs ``<phi(.), theta>`` over all index tuples of the feature map."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (features.d,):
        raise ValueError(f"theta has shape {theta.shape}, features have d={features.d}")
    return features.values @ theta


@dataclass(frozen=True)
class MatrixGameSpec:
    features: FeatureMap
    theta_star: np.ndarray
    tau_star: float
    C: float

    def __post_init__(self):
        if not self.tau_star > 0:
            raise ValueError("tau_star must be positive")
        if self.features.kind != "matrix":
            raise ValueError("MatrixGameSpec needs a matrix feature map")
        object.__setattr__(self, "theta_star", np.asarray(self.theta_star, dtype=float))

    @property
    def Q_star(self) -> np.ndarray:
        return build_payoff_matrix(self.features, self.theta_star)

    def to_dict(self) -> dict:
        f = self.features
        return {
            "kind": "matrix", "m": f.m, "n": f.n, "d": f.d, "L": f.L,
            "features": f.values.tolist(),
            "theta_star": self.theta_star.tolist(),
            "tau_star": float(self.tau_star), "C": float(self.C),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatrixGameSpec":
        return cls(FeatureMap(np.array(d["features"], dtype=float)),
                   np.array(d["theta_star"], dtype=float), float(d["tau_star"]), float(d["C"]))


@dataclass(frozen=True)
class MarkovGameSpec:
    """Markov game whose QRE Q-function is linear in the features.

    ``P`` has shape (S, m, n, S); ``r_star`` is obtained by inverting the
    Bellman equation at the equilibrium ``qre``.
    """

    features: FeatureMap
    theta_star: np.ndarray
    tau_star: float
    R: float
    gamma: float
    P: np.ndarray
    r_star: np.ndarray
    qre: QRESolution

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.tau_star > 0:
            raise ValueError("tau_star must be positive")
        P = np.asarray(self.P, dtype=float)
        if np.any(P < 0) or not np.allclose(P.sum(-1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("P is not a stochastic tensor")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "theta_star", np.asarray(self.theta_star, dtype=float))
        object.__setattr__(self, "r_star", np.asarray(self.r_star, dtype=float))

    @property
    def S(self) -> int:
        return self.features.S

    @property
    def Q_star(self) -> np.ndarray:
        return self.qre.Q

    @property
    def V_star(self) -> np.ndarray:
        return self.qre.V

    @property
    def policy(self) -> JointPolicy:
        return self.qre.policy

    def to_dict(self) -> dict:
        f = self.features
        return {
            "kind": "markov", "S": f.S, "m": f.m, "n": f.n, "d": f.d, "L": f.L,
            "features": f.values.tolist(),
            "theta_star": self.theta_star.tolist(),
            "tau_star": float(self.tau_star), "R": float(self.R), "gamma": float(self.gamma),
            "P": self.P.tolist(), "r_star": self.r_star.tolist(),
            "qre": self.qre.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovGameSpec":
        return cls(
            FeatureMap(np.array(d["features"], dtype=float)),
            np.array(d["theta_star"], dtype=float), float(d["tau_star"]), float(d["R"]),
            float(d["gamma"]), np.array(d["P"], dtype=float), np.array(d["r_star"], dtype=float),
            QRESolution.from_dict(d["qre"]),
        )


def _as_stream(seed) -> Stream:
    return seed if isinstance(seed, Stream) else Stream(seed, 0, Purpose.GAME)


def generate_matrix_game(m: int = 10, n: int = 10, d: int = 5, tau_star: float = 2.0,
                         C: float = 1.0, seed=0) -> MatrixGameSpec:
    """Random matrix game: N(0,1) features and parameters, ``||theta*|| = C``."""
    if m < 2 or n < 2 or d < 1:
        raise ValueError(f"degenerate dimensions m={m}, n={n}, d={d}")
    if not (tau_star > 0 and C > 0):
        raise ValueError("tau_star and C must be positive")
    rs = _as_stream(seed)
    phi = rs.normal((m, n, d))
    theta = rs.normal(d)
    theta = C * theta / np.linalg.norm(theta)
    return MatrixGameSpec(FeatureMap(phi), theta, float(tau_star), float(C))


def bellman_inversion(Q, V, P, gamma: float) -> np.ndarray:
    """``r(s,a,b) = Q(s,a,b) - gamma * sum_s' P(s'|s,a,b) V(s')``."""
    return np.asarray(Q) - gamma * np.asarray(P) @ np.asarray(V)


def generate_markov_game(S: int = 8, m: int = 5, n: int = 5, d: int = 6, tau_star: float = 1.5,
                         R: float = 1.0, gamma: float = 0.9, seed=0,
                         solver: SolverConfig | None = None) -> MarkovGameSpec:
    """Random Markov game with linear QRE Q-function and Dirichlet(1) transitions.

    The equilibrium policies and values come straight from ``Q* = phi theta*``;
    the reward is then backed out of the Bellman equation.
    """
    if S < 1 or m < 2 or n < 2 or d < 1:
        raise ValueError(f"degenerate dimensions S={S}, m={m}, n={n}, d={d}")
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if not (tau_star > 0 and R > 0):
        raise ValueError("tau_star and R must be positive")
    rs = _as_stream(seed)
    phi = rs.normal((S, m, n, d))
    theta = rs.normal(d)
    theta = R * theta / np.linalg.norm(theta)
    P = rs.dirichlet_ones(S, size=(S, m, n))
    features = FeatureMap(phi)
    Q = build_payoff_matrix(features, theta)
    sol = policies_from_q_tables(Q, tau_star, solver or EXACT)
    V = state_values(Q, sol.policy, tau_star)
    qre = QRESolution(policy=sol.policy, Q=Q, V=V, residual=sol.residual,
                      iterations=sol.iterations, converged=sol.converged, method="per-state")
    r = bellman_inversion(Q, V, P, gamma)
    return MarkovGameSpec(features, theta, float(tau_star), float(R), float(gamma), P, r, qre)


def game_from_dict(d: dict):
    if d.get("kind") == "matrix":
        return MatrixGameSpec.from_dict(d)
    if d.get("kind") == "markov":
        return MarkovGameSpec.from_dict(d)
    raise ValueError(f"unknown game kind {d.get('kind')!r}")


def save_game(spec, path, meta: dict | None = None) -> None:
    doc = spec.to_dict()
    if meta is not None:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc))


def load_game(path):
    return game_from_dict(json.loads(Path(path).read_text()))
