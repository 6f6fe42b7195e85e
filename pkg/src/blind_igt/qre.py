"""Quantal response equilibria of entropy-regularized zero-sum games.

Player 1 (row, ``mu``) maximizes and player 2 (column, ``nu``) minimizes

    mu' Q nu + tau * H(mu) - tau * H(nu)

whose unique saddle point is the logit (softmax) fixed point

    mu = softmax(Q nu / tau),    nu = softmax(-Q' mu / tau).

Markov games are solved by value iteration with a matrix QRE at every state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-300


class QRESolverError(RuntimeError):
    """A QRE solve failed; ``state`` is set for per-state failures."""

    def __init__(self, msg, state=None, residual=None):
        super().__init__(msg if state is None else f"state {state}: {msg}")
        self.state = state
        self.residual = residual


@dataclass(frozen=True)
class JointPolicy:
    """Mixed strategies of both players.

    The last axis indexes actions.  A leading axis, when present, indexes
    states (one matrix-game policy per state).
    """

    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))
        for name, p in (("mu", self.mu), ("nu", self.nu)):
            if np.any(p < 0):
                raise ValueError(f"{name} has negative entries")
            if not np.allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-12):
                raise ValueError(f"{name} does not sum to 1")
        if self.mu.ndim != self.nu.ndim:
            raise ValueError("mu and nu must both be per-state or both single")

    @property
    def per_state(self) -> bool:
        return self.mu.ndim == 2

    @property
    def n_states(self) -> int:
        return self.mu.shape[0] if self.per_state else 1

    def state(self, s: int) -> "JointPolicy":
        if not self.per_state:
            raise ValueError("policy is not per-state")
        return JointPolicy(self.mu[s], self.nu[s])

    @classmethod
    def stack(cls, policies) -> "JointPolicy":
        policies = list(policies)
        return cls(np.stack([p.mu for p in policies]), np.stack([p.nu for p in policies]))

    @classmethod
    def uniform(cls, m: int, n: int) -> "JointPolicy":
        return cls(np.full(m, 1.0 / m), np.full(n, 1.0 / n))

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "nu": self.nu.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "JointPolicy":
        return cls(np.array(d["mu"], dtype=float), np.array(d["nu"], dtype=float))


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-9
    max_iter: int = 2000
    damping: float = 0.5
    fallback: bool = True
    newton_max_iter: int = 100

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


#: Tight settings for "exact" equilibria feeding noiseless recovery checks.
EXACT = SolverConfig(tol=1e-13, max_iter=500)


@dataclass(frozen=True)
class QRESolution:
    """Equilibrium of a matrix game or of a Markov game.

    For Markov games ``Q`` has shape (S, m, n), ``V`` shape (S,) and the
    policy is per-state; for matrix games ``V`` is None.
    """

    policy: JointPolicy
    Q: np.ndarray
    residual: float
    iterations: int
    converged: bool
    V: np.ndarray | None = None
    method: str = "fixed-point"
    history: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        out = {
            "policy": self.policy.to_dict(),
            "Q": np.asarray(self.Q).tolist(),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "method": self.method,
        }
        if self.V is not None:
            out["V"] = np.asarray(self.V).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "QRESolution":
        return cls(
            policy=JointPolicy.from_dict(d["policy"]),
            Q=np.array(d["Q"], dtype=float),
            residual=float(d["residual"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            V=None if d.get("V") is None else np.array(d["V"], dtype=float),
            method=d.get("method", "fixed-point"),
        )


def entropy(pi) -> float:
    """Shannon entropy in nats; zero entries contribute nothing."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0):
        raise ValueError("probabilities must be nonnegative")
    nz = pi[pi > 0]
    return float(-np.sum(nz * np.log(nz)))


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    return -np.sum(np.where(p > 0, p * np.log(np.maximum(p, PROB_FLOOR)), 0.0), axis=-1)


def regularized_value(Q, policy: JointPolicy, tau: float) -> float:
    """``mu' Q nu + tau H(mu) - tau H(nu)``."""
    Q = np.asarray(Q, dtype=float)
    mu, nu = policy.mu, policy.nu
    if Q.shape != (mu.shape[-1], nu.shape[-1]) or mu.ndim != 1:
        raise ValueError(f"Q has shape {Q.shape}, policy is {mu.shape} x {nu.shape}")
    return float(mu @ Q @ nu + tau * entropy(mu) - tau * entropy(nu))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logit_response(Q, policy: JointPolicy, tau: float) -> JointPolicy:
    """Simultaneous logit responses (``softmax(Q nu/tau)``, ``softmax(-Q' mu/tau)``)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (policy.mu.shape[-1], policy.nu.shape[-1]):
        raise ValueError(f"Q has shape {Q.shape}, policy is {policy.mu.shape} x {policy.nu.shape}")
    return JointPolicy(_softmax(Q @ policy.nu / tau), _softmax(-(Q.T @ policy.mu) / tau))


def fixed_point_residual(Q, policy: JointPolicy, tau: float) -> float:
    """Sup-norm distance between a policy and its logit response."""
    br = logit_response(Q, policy, tau)
    return float(max(np.max(np.abs(policy.mu - br.mu)), np.max(np.abs(policy.nu - br.nu))))


def _residual(Q, mu, nu, tau):
    bmu = _softmax(Q @ nu / tau)
    bnu = _softmax(-(Q.T @ mu) / tau)
    r = max(np.max(np.abs(mu - bmu)), np.max(np.abs(nu - bnu)))
    return r, bmu, bnu


def _newton(Q, tau, mu0, nu0, tol, max_iter):
    """Damped Newton on the logit-coordinate fixed-point residual.

    Coordinates are log-odds against action 0 for each player, so iterates
    stay on the simplex.  ``F(x, z) = (x - D_m Q nu / tau, z + D_n Q' mu / tau)``
    where ``D`` takes differences against the reference action.
    """
    m, n = Q.shape
    x = np.log(np.maximum(mu0, PROB_FLOOR))
    z = np.log(np.maximum(nu0, PROB_FLOOR))
    x = x[1:] - x[0]
    z = z[1:] - z[0]

    def unpack(x, z):
        return _softmax(np.concatenate(([0.0], x))), _softmax(np.concatenate(([0.0], z)))

    def F(x, z):
        mu, nu = unpack(x, z)
        u = Q @ nu / tau
        w = -(Q.T @ mu) / tau
        return np.concatenate((x - (u[1:] - u[0]), z - (w[1:] - w[0]))), mu, nu

    Fv, mu, nu = F(x, z)
    it = 0
    for it in range(1, max_iter + 1):
        if _residual(Q, mu, nu, tau)[0] <= tol:
            break
        Jmu = (np.diag(mu) - np.outer(mu, mu))[:, 1:]
        Jnu = (np.diag(nu) - np.outer(nu, nu))[:, 1:]
        Qd_rows = (Q[1:] - Q[0]) / tau          # D_m Q
        Qd_cols = (Q[:, 1:] - Q[:, [0]]).T / tau  # D_n Q'
        J = np.block([
            [np.eye(m - 1), -Qd_rows @ Jnu],
            [Qd_cols @ Jmu, np.eye(n - 1)],
        ])
        try:
            step = np.linalg.solve(J, -Fv)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(J, Fv, rcond=None)[0]
        norm0 = np.linalg.norm(Fv)
        t = 1.0
        while True:
            xn, zn = x + t * step[: m - 1], z + t * step[m - 1:]
            Fn, mun, nun = F(xn, zn)
            if np.linalg.norm(Fn) <= (1 - 1e-4 * t) * norm0 or t < 1e-10:
                break
            t *= 0.5
        x, z, Fv, mu, nu = xn, zn, Fn, mun, nun
    return mu, nu, it


def solve_matrix_qre(Q, tau: float, config: SolverConfig | None = None,
                     init: JointPolicy | None = None) -> QRESolution:
    """QRE of the regularized matrix game with payoff ``Q`` at temperature ``tau``.

    Damped logit iteration; if it has not reached ``config.tol`` after
    ``config.max_iter`` steps and ``config.fallback`` is set, a damped Newton
    solve on the same residual takes over.  The result is flagged converged
    only when the sup-norm fixed-point residual is at most ``tol``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    config = config or SolverConfig()
    Q = np.asarray(Q, dtype=float)
    m, n = Q.shape
    if init is None:
        mu, nu = np.full(m, 1.0 / m), np.full(n, 1.0 / n)
    else:
        mu, nu = init.mu.copy(), init.nu.copy()
    alpha = config.damping
    res = np.inf
    it = 0
    for it in range(1, config.max_iter + 1):
        res, bmu, bnu = _residual(Q, mu, nu, tau)
        if res <= config.tol:
            break
        mu = (1 - alpha) * mu + alpha * bmu
        nu = (1 - alpha) * nu + alpha * bnu
    else:
        res = _residual(Q, mu, nu, tau)[0]
    method = "fixed-point"
    if res > config.tol and config.fallback:
        logger.debug("logit iteration stalled at residual %.3g; switching to Newton", res)
        mu_n, nu_n, nit = _newton(Q, tau, mu, nu, config.tol, config.newton_max_iter)
        res_n = _residual(Q, mu_n, nu_n, tau)[0]
        if res_n < res:
            mu, nu, res = mu_n, nu_n, res_n
        it += nit
        method = "newton"
    mu = mu / mu.sum()
    nu = nu / nu.sum()
    return QRESolution(
        policy=JointPolicy(mu, nu), Q=Q, residual=float(res), iterations=it,
        converged=bool(res <= config.tol), method=method,
    )


def policies_from_q_tables(Q_tables, tau: float, config: SolverConfig | None = None,
                           init: JointPolicy | None = None) -> QRESolution:
    """Per-state matrix QREs of ``Q_tables`` with shape (S, m, n)."""
    Q_tables = np.asarray(Q_tables, dtype=float)
    if Q_tables.ndim != 3:
        raise ValueError("Q_tables must have shape (S, m, n)")
    sols = []
    for s, Qs in enumerate(Q_tables):
        sol = solve_matrix_qre(Qs, tau, config, init=None if init is None else init.state(s))
        if not sol.converged:
            raise QRESolverError(f"no convergence (residual {sol.residual:.3g})", state=s,
                                 residual=sol.residual)
        sols.append(sol)
    return QRESolution(
        policy=JointPolicy.stack(s.policy for s in sols), Q=Q_tables,
        residual=max(s.residual for s in sols), iterations=max(s.iterations for s in sols),
        converged=True, method="per-state",
    )


def state_values(Q_tables, policy: JointPolicy, tau: float) -> np.ndarray:
    """Regularized value of every state under a per-state policy."""
    Q_tables = np.asarray(Q_tables, dtype=float)
    mu, nu = policy.mu, policy.nu
    bil = np.einsum("sa,sab,sb->s", mu, Q_tables, nu)
    return bil + tau * _entropy_rows(mu) - tau * _entropy_rows(nu)


def forward_solve_markov(r, P, gamma: float, tau: float,
                         config: SolverConfig | None = None,
                         max_outer: int = 10000) -> QRESolution:
    """Regularized Markov-game QRE by value iteration.

    ``r`` has shape (S, m, n) and ``P`` shape (S, m, n, S).  Iterates
    ``Q = r + gamma * P V``, per-state QRE, ``V = value(Q, policy)`` until
    ``max|V_new - V| <= tol * (1 - gamma)``.  The returned (Q, V, policy)
    are mutually consistent: Q is built from the final V, and V is the
    value of Q under the returned policy.
    """
    config = config or SolverConfig()
    r = np.asarray(r, dtype=float)
    P = np.asarray(P, dtype=float)
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if not tau > 0:
        raise ValueError("tau must be positive")
    S = r.shape[0]
    if P.shape != r.shape + (S,):
        raise ValueError(f"P has shape {P.shape}, expected {r.shape + (S,)}")
    if np.any(P < 0) or not np.allclose(P.sum(-1), 1.0, atol=1e-10):
        raise ValueError("P is not a stochastic tensor")
    stop = config.tol * (1 - gamma)
    V = np.zeros(S)
    policy = None
    diffs = []
    converged = False
    t = 0
    for t in range(1, max_outer + 1):
        Q = r + gamma * P @ V
        sol = policies_from_q_tables(Q, tau, config, init=policy)
        policy = sol.policy
        V_new = state_values(Q, policy, tau)
        diff = float(np.max(np.abs(V_new - V)))
        diffs.append(diff)
        V = V_new
        if diff <= stop or gamma == 0:
            converged = True
            break
    Q = r + gamma * P @ V
    sol = policies_from_q_tables(Q, tau, config, init=policy)
    V = state_values(Q, sol.policy, tau)
    return QRESolution(
        policy=sol.policy, Q=Q, V=V, residual=sol.residual, iterations=t,
        converged=converged and sol.converged, method="value-iteration",
        history=tuple(diffs),
    )
