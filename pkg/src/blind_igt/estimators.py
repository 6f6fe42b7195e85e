"""Joint recovery of payoff parameters and temperature from a linearized QRE system.

The system ``X theta = tau y`` only pins down ``theta / tau``.  Normalized
least squares solves for that ratio and uses the known norm ``C`` of theta to
split it into a scale (the temperature) and the parameters.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .games import FeatureMap, bellman_inversion, build_payoff_matrix
from .qre import JointPolicy, state_values
from .rng import Purpose, Stream
from .system import Y_ZERO_TOL, IdentifiabilityReport, LinearSystem, check_identifiability


class NonUniformityError(ValueError):
    """The least-squares ratio vanished: play is (numerically) uniform, so no
    temperature can be separated from the payoffs."""


@dataclass(frozen=True)
class EstimationResult:
    theta_hat: np.ndarray
    tau_hat: float
    theta_ls: np.ndarray
    residual: float
    identifiability: IdentifiabilityReport
    C: float
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(), "tau_hat": self.tau_hat,
            "theta_ls": self.theta_ls.tolist(), "residual": self.residual, "C": self.C,
            "identifiability": self.identifiability.to_dict(), "notes": list(self.notes),
        }


def least_squares(system: LinearSystem) -> np.ndarray:
    """Minimum-norm solution of ``min ||X t - y||`` via the SVD."""
    U, s, Vt = np.linalg.svd(system.X, full_matrices=False)
    keep = s > s[0] * 1e-10 if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    coef = (U.T @ system.y)[keep] / s[keep]
    return Vt[keep].T @ coef


def nls_estimate(system: LinearSystem, C: float) -> EstimationResult:
    """Normalized least squares: ``t = X^+ y``, ``tau = C / ||t||``, ``theta = tau t``."""
    if not C > 0:
        raise ValueError("C must be positive")
    report = check_identifiability(system)
    theta_ls = least_squares(system)
    norm = float(np.linalg.norm(theta_ls))
    if norm <= Y_ZERO_TOL:
        raise NonUniformityError(
            "non-uniformity condition violated: least-squares solution is zero")
    tau_hat = C / norm
    theta_hat = tau_hat * theta_ls
    notes = () if report.full_rank else ("rank-deficient X: minimum-norm solution, not identified",)
    return EstimationResult(theta_hat, tau_hat, theta_ls, system.residual(theta_hat, tau_hat),
                            report, float(C), notes)


def standard_igt_estimate(system: LinearSystem, tau_assumed: float) -> np.ndarray:
    """Known-temperature baseline: ``theta = tau_assumed * X^+ y`` with no normalization."""
    if not tau_assumed > 0:
        raise ValueError("tau_assumed must be positive")
    theta_ls = least_squares(system)
    if np.linalg.norm(theta_ls) <= Y_ZERO_TOL:
        raise NonUniformityError(
            "non-uniformity condition violated: least-squares solution is zero")
    return tau_assumed * theta_ls


@dataclass(frozen=True)
class MarkovRecovery:
    theta_hat: np.ndarray
    tau_hat: float
    Q_hat: np.ndarray
    V_hat: np.ndarray
    r_hat: np.ndarray
    dynamics_mode: str
    estimate: EstimationResult = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(), "tau_hat": self.tau_hat,
            "Q_hat": self.Q_hat.tolist(), "V_hat": self.V_hat.tolist(),
            "r_hat": self.r_hat.tolist(), "dynamics_mode": self.dynamics_mode,
            "estimate": self.estimate.to_dict(),
        }


def recover_markov_rewards(system: LinearSystem, R: float, features: FeatureMap,
                           policies: JointPolicy, P_used, gamma: float,
                           dynamics_mode: str = "known_P") -> MarkovRecovery:
    """NLS on the stacked system, then rewards by Bellman inversion.

    ``V_hat`` is the regularized value of ``Q_hat`` under the estimated
    policies at ``tau_hat``; ``r_hat = Q_hat - gamma * P_used V_hat``.
    """
    P_used = np.asarray(P_used, dtype=float)
    if np.any(P_used < 0) or not np.allclose(P_used.sum(-1), 1.0, atol=1e-10):
        raise ValueError("P_used is not a stochastic tensor")
    est = nls_estimate(system, R)
    Q_hat = build_payoff_matrix(features, est.theta_hat)
    V_hat = state_values(Q_hat, policies, est.tau_hat)
    r_hat = bellman_inversion(Q_hat, V_hat, P_used, gamma)
    return MarkovRecovery(est.theta_hat, est.tau_hat, Q_hat, V_hat, r_hat, dynamics_mode, est)


# -- confidence sets ----------------------------------------------------------

@dataclass(frozen=True)
class ConfidenceConfig:
    delta: float
    xi: float
    L: float
    C: float
    tau_max: float
    m: int
    n: int
    N: int
    xi_plugin: bool = False

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        for name in ("xi", "L", "C", "tau_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if min(self.m, self.n, self.N) < 1:
            raise ValueError("m, n, N must be positive")


def policy_error_radius(k: int, N: int, delta: float) -> float:
    """L1 radius ``sqrt(2 log(2 * 2^k / delta) / N)`` for one player's frequencies."""
    return math.sqrt(2.0 * (math.log(2.0 / delta) + k * math.log(2.0)) / N)


def confidence_threshold(config: ConfidenceConfig) -> float:
    """Residual threshold ``kappa = (C_X C + C_Y tau_max)^2 eps^2``.

    ``eps`` is the summed L1 radius of both players' frequency estimates,
    ``C_X = 2 L sqrt(m+n)`` and ``C_Y = sqrt(8 (m+n)) / xi``.
    """
    c = config
    eps = policy_error_radius(c.m, c.N, c.delta) + policy_error_radius(c.n, c.N, c.delta)
    cx = 2.0 * c.L * math.sqrt(c.m + c.n)
    cy = math.sqrt(8.0 * (c.m + c.n)) / c.xi
    return (cx * c.C + cy * c.tau_max) ** 2 * eps**2


def plugin_xi(policy: JointPolicy) -> float:
    """Smallest estimated probability, a plug-in for the soft-min gap.

    It tends to overstate the true gap, which shrinks the threshold and so
    weakens coverage; callers should mark configs built from it.
    """
    return float(min(policy.mu.min(), policy.nu.min()))


def confidence_contains(system: LinearSystem, theta, tau: float, kappa: float, C: float) -> bool:
    if not tau > 0:
        raise ValueError("tau must be positive")
    theta = np.asarray(theta, dtype=float)
    if abs(np.linalg.norm(theta) - C) > 1e-9 * C:
        return False
    return system.residual(theta, tau) ** 2 <= kappa


def scan_confidence_set(system: LinearSystem, kappa: float, C: float, taus,
                        n_directions: int = 200, seed: int = 0,
                        extra_directions=()) -> list[dict]:
    """Membership of (direction on the C-sphere) x (temperature grid) points.

    Directions are uniform on the sphere plus any ``extra_directions``
    (rescaled to norm C), e.g. the point estimate.
    """
    d = system.d
    rs = Stream(seed, 0, Purpose.SCAN)
    dirs = rs.normal((n_directions, d))
    if len(extra_directions):
        dirs = np.vstack([np.atleast_2d(extra_directions), dirs])
    dirs = C * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    rows = []
    for theta in dirs:
        for tau in taus:
            res = system.residual(theta, tau)
            rows.append({**{f"theta{k}": float(theta[k]) for k in range(d)}, "tau": float(tau),
                         "residual": res, "inside": int(res**2 <= kappa)})
    return rows


def write_scan_csv(rows: list[dict], path, meta: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if meta is not None:
            fh.write("# meta " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def save_result(result, path, meta: dict | None = None) -> None:
    doc = result.to_dict()
    if meta is not None:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc, indent=1))
