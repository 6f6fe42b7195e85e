"""Linearized QRE constraints ``X theta = tau * y``.

Taking log-odds of the logit responses against reference action 0 gives,
for ``a = 1..m-1`` and ``b = 1..n-1``,

    sum_b' nu(b') (phi(a,b') - phi(0,b')) . theta = tau * log(mu(a) / mu(0))
    sum_a' mu(a') (phi(a',0) - phi(a',b)) . theta = tau * log(nu(b) / nu(0))

The first block of rows (player 1) is ``A(nu)``/``c(mu)``, the second
(player 2) is ``B(mu)``/``d(nu)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .games import FeatureMap
from .qre import JointPolicy

RANK_TOL = 1e-10
Y_ZERO_TOL = 1e-10


class ZeroProbabilityError(ValueError):
    pass


@dataclass(frozen=True)
class LinearSystem:
    X: np.ndarray
    y: np.ndarray
    rows_mu: tuple      # row indices of player-1 constraints, per state
    rows_nu: tuple

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def residual(self, theta, tau) -> float:
        """``||X theta - tau y||_2``."""
        return float(np.linalg.norm(self.X @ np.asarray(theta, dtype=float) - tau * self.y))

    def to_csv(self, path) -> None:
        """Rows of ``X`` followed by the matching ``y`` entry."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(self.d)] + ["y", "player"])
            mu_rows = set()
            for r in self.rows_mu:
                mu_rows.update(range(*r))
            for i, (row, yi) in enumerate(zip(self.X, self.y)):
                w.writerow([repr(float(v)) for v in row] + [repr(float(yi)), 1 if i in mu_rows else 2])


@dataclass(frozen=True)
class IdentifiabilityReport:
    rank: int
    sigma_min: float
    sigma_max: float
    y_norm: float
    d: int

    @property
    def full_rank(self) -> bool:
        return self.rank == self.d

    @property
    def non_uniform(self) -> bool:
        return self.y_norm > Y_ZERO_TOL

    @property
    def identifiable(self) -> bool:
        return self.full_rank and self.non_uniform

    def to_dict(self) -> dict:
        return {"rank": self.rank, "d": self.d, "sigma_min": self.sigma_min,
                "sigma_max": self.sigma_max, "y_norm": self.y_norm,
                "identifiable": self.identifiable}


def _blocks(phi: np.ndarray, mu: np.ndarray, nu: np.ndarray):
    if np.any(mu <= 0) or np.any(nu <= 0):
        raise ZeroProbabilityError(
            "policy has zero probabilities; log-ratios are undefined "
            "(floor the empirical frequencies first)")
    # A[a-1] = sum_b' nu(b') (phi(a,b') - phi(0,b'))
    A = np.einsum("b,abk->ak", nu, phi[1:] - phi[:1])
    # B[b-1] = sum_a' mu(a') (phi(a',0) - phi(a',b))
    B = np.einsum("a,abk->bk", mu, phi[:, :1] - phi[:, 1:])
    c = np.log(mu[1:]) - np.log(mu[0])
    dv = np.log(nu[1:]) - np.log(nu[0])
    return np.vstack([A, B]), np.concatenate([c, dv])


def build_system(features: FeatureMap, policy: JointPolicy) -> LinearSystem:
    """Linearized constraints of a matrix game at the given policies."""
    if features.kind != "matrix":
        raise ValueError("build_system needs a matrix feature map")
    m, n = features.m, features.n
    if policy.mu.shape != (m,) or policy.nu.shape != (n,):
        raise ValueError("policy dimensions do not match the features")
    X, y = _blocks(features.values, policy.mu, policy.nu)
    return LinearSystem(X, y, ((0, m - 1),), ((m - 1, m + n - 2),))


def build_markov_system(features: FeatureMap, policies: JointPolicy) -> LinearSystem:
    """Per-state constraints stacked vertically in state order."""
    if features.kind != "markov":
        raise ValueError("build_markov_system needs a Markov feature map")
    S, m, n = features.S, features.m, features.n
    if policies.mu.shape != (S, m) or policies.nu.shape != (S, n):
        raise ValueError("policy dimensions do not match the features")
    Xs, ys, rmu, rnu = [], [], [], []
    k = m + n - 2
    for s in range(S):
        try:
            X, y = _blocks(features.values[s], policies.mu[s], policies.nu[s])
        except ZeroProbabilityError as exc:
            raise ZeroProbabilityError(f"state {s}: {exc}") from None
        Xs.append(X)
        ys.append(y)
        rmu.append((s * k, s * k + m - 1))
        rnu.append((s * k + m - 1, (s + 1) * k))
    return LinearSystem(np.vstack(Xs), np.concatenate(ys), tuple(rmu), tuple(rnu))


def check_identifiability(system: LinearSystem, d: int | None = None,
                          rank_tol: float = RANK_TOL) -> IdentifiabilityReport:
    """Numerical rank (singular values above ``rank_tol * sigma_max``) and ``||y||``."""
    d = system.d if d is None else d
    sv = np.linalg.svd(system.X, compute_uv=False)
    smax = float(sv[0]) if sv.size else 0.0
    rank = int(np.sum(sv > rank_tol * smax)) if smax > 0 else 0
    smin = float(sv[-1]) if sv.size >= d else 0.0
    return IdentifiabilityReport(rank, smin, smax, float(np.linalg.norm(system.y)), d)
