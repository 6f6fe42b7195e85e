"""Observational data drawn from equilibrium play, and the frequency estimators built from it."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .qre import JointPolicy
from .rng import Purpose, Stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatrixSample:
    counts_a: np.ndarray
    counts_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.counts_a, dtype=np.int64)
        b = np.asarray(self.counts_b, dtype=np.int64)
        if np.any(a < 0) or np.any(b < 0):
            raise ValueError("counts must be nonnegative")
        if a.sum() != b.sum():
            raise ValueError("both players must have the same number of samples")
        object.__setattr__(self, "counts_a", a)
        object.__setattr__(self, "counts_b", b)

    @property
    def N(self) -> int:
        return int(self.counts_a.sum())


@dataclass(frozen=True)
class MarkovDataset:
    """Per-state generative samples.

    ``pair_counts[s, a, b]`` counts draws of the action pair at state ``s``;
    ``transition_counts[s, a, b, s']`` counts the observed next states.
    """

    pair_counts: np.ndarray
    transition_counts: np.ndarray

    def __post_init__(self):
        pc = np.asarray(self.pair_counts, dtype=np.int64)
        tc = np.asarray(self.transition_counts, dtype=np.int64)
        if tc.shape != pc.shape + (pc.shape[0],):
            raise ValueError("transition counts do not match pair counts shape")
        if not np.array_equal(tc.sum(-1), pc):
            raise ValueError("transition counts inconsistent with pair counts")
        per_state = pc.sum(axis=(1, 2))
        if np.any(per_state != per_state[0]):
            raise ValueError("every state must have the same number of samples")
        object.__setattr__(self, "pair_counts", pc)
        object.__setattr__(self, "transition_counts", tc)

    @property
    def S(self) -> int:
        return self.pair_counts.shape[0]

    @property
    def N_per_state(self) -> int:
        return int(self.pair_counts[0].sum())

    @property
    def K(self) -> int:
        return self.S * self.N_per_state

    def state_sample(self, s: int) -> MatrixSample:
        return MatrixSample(self.pair_counts[s].sum(1), self.pair_counts[s].sum(0))


def _as_stream(seed, purpose=Purpose.SAMPLE) -> Stream:
    return seed if isinstance(seed, Stream) else Stream(seed, 0, purpose)


def sample_matrix_play(policy: JointPolicy, N: int, seed=0) -> MatrixSample:
    """``N`` rounds of independent play ``a ~ mu``, ``b ~ nu``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    rs = _as_stream(seed)
    a = rs.categorical(policy.mu, N)
    b = rs.categorical(policy.nu, N)
    m, n = len(policy.mu), len(policy.nu)
    return MatrixSample(np.bincount(a, minlength=m), np.bincount(b, minlength=n))


def _floored(counts: np.ndarray, floor: float | None) -> tuple[np.ndarray, bool]:
    N = counts.sum()
    p = counts / N
    if floor is None:
        floor = 1.0 / (2 * N)
    zero = p == 0
    if not zero.any():
        return p, False
    p = np.where(zero, floor, p)
    return p / p.sum(), True


def empirical_policies(sample: MatrixSample, floor: float | None = None) -> JointPolicy:
    """Frequency estimates; zero frequencies are set to ``floor`` (default ``1/(2N)``)
    before renormalizing.

    The returned policy carries no flag; use :func:`floor_applied` to check
    whether any entry was floored.
    """
    if sample.N < 1:
        raise ValueError("empty sample")
    if floor is not None and floor < 0:
        raise ValueError("floor must be nonnegative")
    mu, fa = _floored(sample.counts_a, floor)
    nu, fb = _floored(sample.counts_b, floor)
    if fa or fb:
        logger.info("zero empirical frequencies floored (N=%d)", sample.N)
    return JointPolicy(mu, nu)


def floor_applied(sample: MatrixSample) -> bool:
    return bool((sample.counts_a == 0).any() or (sample.counts_b == 0).any())


def markov_empirical_policies(data: MarkovDataset, floor: float | None = None) -> JointPolicy:
    return JointPolicy.stack(empirical_policies(data.state_sample(s), floor) for s in range(data.S))


def sample_markov_dataset(game, policy: JointPolicy, N_per_state: int,
                          seed=0) -> MarkovDataset:
    """Generative-model sampling: ``N_per_state`` action pairs at every state, each
    followed by one next-state draw from ``P(.|s, a, b)``.

    ``game`` is a :class:`~blind_igt.games.MarkovGameSpec` or a bare transition
    tensor of shape (S, m, n, S).
    """
    if N_per_state < 1:
        raise ValueError("N_per_state must be at least 1")
    P = np.asarray(getattr(game, "P", game), dtype=float)
    S, m, n = P.shape[:3]
    rs = _as_stream(seed)
    pair_counts = np.zeros((S, m, n), dtype=np.int64)
    trans = np.zeros((S, m, n, S), dtype=np.int64)
    cdf = np.cumsum(P, axis=-1)
    cdf[..., -1] = 1.0
    for s in range(S):
        a = rs.categorical(policy.mu[s], N_per_state)
        b = rs.categorical(policy.nu[s], N_per_state)
        u = rs.uniform(N_per_state)
        nxt = np.minimum((u[:, None] >= cdf[s, a, b]).sum(axis=1), S - 1)
        np.add.at(pair_counts[s], (a, b), 1)
        np.add.at(trans[s], (a, b, nxt), 1)
    return MarkovDataset(pair_counts, trans)


def estimate_transitions(data: MarkovDataset, alpha: float = 1.0) -> np.ndarray:
    """Smoothed maximum-likelihood transitions ``(count + alpha) / (total + alpha * S)``."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    tc = data.transition_counts.astype(float)
    tot = tc.sum(-1, keepdims=True)
    if alpha == 0 and np.any(tot == 0):
        raise ValueError("unvisited (s, a, b) with alpha=0: transition distribution undefined")
    return (tc + alpha) / (tot + alpha * data.S)


# -- file formats -----------------------------------------------------------

def save_matrix_sample(sample: MatrixSample, directory, meta: dict | None = None) -> None:
    """``counts.csv`` (player, action, count) plus a ``dataset.json`` sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "counts.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["player", "action", "count"])
        for player, counts in ((1, sample.counts_a), (2, sample.counts_b)):
            for i, c in enumerate(counts):
                w.writerow([player, i, int(c)])
    side = {"kind": "matrix", "m": len(sample.counts_a), "n": len(sample.counts_b),
            "N": sample.N, "counts": "counts.csv", "meta": meta or {}}
    (d / "dataset.json").write_text(json.dumps(side, indent=2))


def save_markov_dataset(data: MarkovDataset, directory, meta: dict | None = None) -> None:
    """``transitions.csv`` (state, a, b, next_state, count) plus ``dataset.json``.

    Pair counts are implied by summing over next states.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    S, m, n, _ = data.transition_counts.shape
    with open(d / "transitions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "a", "b", "next_state", "count"])
        for idx in zip(*np.nonzero(data.transition_counts)):
            w.writerow([*map(int, idx), int(data.transition_counts[idx])])
    side = {"kind": "markov", "S": S, "m": m, "n": n, "N_per_state": data.N_per_state,
            "K": data.K, "transitions": "transitions.csv", "meta": meta or {}}
    (d / "dataset.json").write_text(json.dumps(side, indent=2))


def load_dataset(directory):
    """Read a dataset written by :func:`save_matrix_sample` or :func:`save_markov_dataset`."""
    d = Path(directory)
    side = json.loads((d / "dataset.json").read_text())
    if side["kind"] == "matrix":
        a = np.zeros(side["m"], dtype=np.int64)
        b = np.zeros(side["n"], dtype=np.int64)
        with open(d / side["counts"]) as fh:
            for row in csv.DictReader(fh):
                (a if row["player"] == "1" else b)[int(row["action"])] = int(row["count"])
        return MatrixSample(a, b)
    if side["kind"] == "markov":
        S, m, n = side["S"], side["m"], side["n"]
        tc = np.zeros((S, m, n, S), dtype=np.int64)
        with open(d / side["transitions"]) as fh:
            for row in csv.DictReader(fh):
                tc[int(row["state"]), int(row["a"]), int(row["b"]), int(row["next_state"])] = int(row["count"])
        return MarkovDataset(tc.sum(-1), tc)
    raise ValueError(f"unknown dataset kind {side['kind']!r}")
