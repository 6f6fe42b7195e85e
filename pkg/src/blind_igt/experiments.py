"""Monte Carlo experiment harness.

Each experiment is a per-trial function returning one record per grid point.
Trials are pure functions of ``(config, trial index)``: every random draw
comes from a stream keyed by the master seed, the trial index and a purpose
tag, so results do not depend on worker count or scheduling.  Records are
folded in trial order into summaries.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import (ConfidenceConfig, confidence_contains, confidence_threshold,
                         nls_estimate, recover_markov_rewards, standard_igt_estimate)
from .games import build_payoff_matrix, generate_markov_game, generate_matrix_game
from .qre import forward_solve_markov, solve_matrix_qre
from .rng import Purpose, stream
from .sampling import (empirical_policies, estimate_transitions, markov_empirical_policies,
                       sample_markov_dataset, sample_matrix_play)
from .system import build_markov_system, build_system

logger = logging.getLogger(__name__)

MATRIX_GRID = [1000, 2512, 6310, 15849, 39811, 100000]
MARKOV_GRID = [250, 628, 1577, 3962, 9953, 25000]   # samples per state; K = S * value


@dataclass
class ExperimentConfig:
    name: str
    m: int = 10
    n: int = 10
    d: int = 5
    S: int = 8
    tau_star: float = 2.0
    C: float = 1.0
    gamma: float = 0.9
    grid: list = field(default_factory=lambda: list(MATRIX_GRID))
    trials: int = 50
    seed: int = 0
    output_dir: str = "results"
    floor: float | None = None
    alpha: float = 1.0
    tau_assumed: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    c_ratios: list = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0, 10.0])
    d_est: int | None = None
    delta: float = 0.05
    fixed_game: bool = False
    mode: str = "known-p"

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {sorted(EXPERIMENTS)}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        g = list(self.grid)
        if not g or any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("grid must be non-empty and strictly increasing")
        if self.mode not in ("known-p", "estimated-p"):
            raise ValueError("mode must be known-p or estimated-p")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def default_config(name: str, **overrides) -> ExperimentConfig:
    """Default settings for each named experiment."""
    base: dict = {"name": name}
    if name in ("convergence-markov", "unknown-dynamics"):
        base.update(S=8, m=5, n=5, d=6, tau_star=1.5, C=1.0, gamma=0.9, grid=list(MARKOV_GRID))
    elif name == "misspecified-c":
        base.update(m=20, n=20, d=8, tau_star=2.0, C=5.0, grid=[100000])
    elif name == "comparison-table":
        base.update(grid=[10000])
    elif name == "coverage":
        base.update(grid=[10000], trials=200)
    elif name == "feature-misspecification":
        base.update(d_est=4)
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**base)


# -- trials ---------------------------------------------------------------

def _game_trial(cfg: ExperimentConfig, trial: int) -> int:
    return 0 if cfg.fixed_game else trial


def _matrix_game(cfg, trial):
    g = generate_matrix_game(cfg.m, cfg.n, cfg.d, cfg.tau_star, cfg.C,
                             seed=stream(cfg.seed, _game_trial(cfg, trial), Purpose.GAME))
    sol = solve_matrix_qre(g.Q_star, g.tau_star)
    if not sol.converged:
        raise RuntimeError(f"QRE solve did not converge (residual {sol.residual:.3g})")
    return g, sol


def _matrix_sample(cfg, trial, i, policy, N):
    return sample_matrix_play(policy, int(N), stream(cfg.seed, trial, Purpose.SAMPLE, i))


def _trial_convergence_matrix(cfg, trial):
    g, sol = _matrix_game(cfg, trial)
    rows = []
    for i, N in enumerate(cfg.grid):
        smp = _matrix_sample(cfg, trial, i, sol.policy, N)
        est = nls_estimate(build_system(g.features, empirical_policies(smp, cfg.floor)), cfg.C)
        rows.append({"N": int(N),
                     "theta_error": float(np.linalg.norm(est.theta_hat - g.theta_star)),
                     "tau_error": abs(est.tau_hat - g.tau_star)})
    return rows


def _trial_comparison_table(cfg, trial):
    g, sol = _matrix_game(cfg, trial)
    rows = []
    for i, N in enumerate(cfg.grid):
        smp = _matrix_sample(cfg, trial, i, sol.policy, N)
        sy = build_system(g.features, empirical_policies(smp, cfg.floor))
        est = nls_estimate(sy, cfg.C)
        row = {"N": int(N), "blind": float(np.linalg.norm(est.theta_hat - g.theta_star)),
               "tau_hat": est.tau_hat}
        for t in cfg.tau_assumed:
            th = standard_igt_estimate(sy, t)
            row[f"standard_tau{t:g}"] = float(np.linalg.norm(th - g.theta_star))
        rows.append(row)
    return rows


def _trial_misspecified_c(cfg, trial):
    g, sol = _matrix_game(cfg, trial)
    rows = []
    unit = g.theta_star / np.linalg.norm(g.theta_star)
    for i, N in enumerate(cfg.grid):
        smp = _matrix_sample(cfg, trial, i, sol.policy, N)
        sy = build_system(g.features, empirical_policies(smp, cfg.floor))
        for ratio in cfg.c_ratios:
            est = nls_estimate(sy, ratio * cfg.C)
            cos = float(est.theta_hat @ unit / np.linalg.norm(est.theta_hat))
            rows.append({"N": int(N), "ratio": float(ratio), "directional_error": 1.0 - cos,
                         "tau_ratio": est.tau_hat / g.tau_star,
                         "tau_ratio_over_expected": est.tau_hat / (g.tau_star * ratio)})
    return rows


def _tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def projection_target(features, Q) -> np.ndarray:
    """Best linear fit of the vectorized payoffs on the given features (least squares)."""
    Phi = features.values.reshape(-1, features.d)
    return np.linalg.lstsq(Phi, np.asarray(Q).reshape(-1), rcond=None)[0]


def _trial_feature_misspecification(cfg, trial):
    g, sol = _matrix_game(cfg, trial)
    d_est = cfg.d_est or cfg.d
    feats = g.features.select(range(d_est))
    target = projection_target(feats, g.Q_star)
    rows = []
    for i, N in enumerate(cfg.grid):
        smp = _matrix_sample(cfg, trial, i, sol.policy, N)
        est = nls_estimate(build_system(feats, empirical_policies(smp, cfg.floor)), cfg.C)
        cos = float(est.theta_hat @ target / (np.linalg.norm(est.theta_hat) * np.linalg.norm(target)))
        induced = solve_matrix_qre(build_payoff_matrix(feats, est.theta_hat), est.tau_hat)
        behav = max(_tv(induced.policy.mu, sol.policy.mu), _tv(induced.policy.nu, sol.policy.nu))
        rows.append({"N": int(N), "directional_error": 1.0 - cos, "behavioral_error": behav,
                     "induced_converged": int(induced.converged)})
    return rows


def _trial_coverage(cfg, trial):
    g, sol = _matrix_game(cfg, trial)
    xi = float(min(sol.policy.mu.min(), sol.policy.nu.min()))
    rows = []
    for i, N in enumerate(cfg.grid):
        smp = _matrix_sample(cfg, trial, i, sol.policy, N)
        sy = build_system(g.features, empirical_policies(smp, cfg.floor))
        kappa = confidence_threshold(ConfidenceConfig(
            delta=cfg.delta, xi=xi, L=g.features.L, C=cfg.C, tau_max=g.tau_star,
            m=cfg.m, n=cfg.n, N=int(N)))
        res2 = sy.residual(g.theta_star, g.tau_star) ** 2
        rows.append({"N": int(N), "kappa": kappa, "residual_sq": res2,
                     "contained": int(confidence_contains(sy, g.theta_star, g.tau_star, kappa, cfg.C))})
    return rows


def _markov_game(cfg, trial):
    return generate_markov_game(cfg.S, cfg.m, cfg.n, cfg.d, cfg.tau_star, cfg.C, cfg.gamma,
                                seed=stream(cfg.seed, _game_trial(cfg, trial), Purpose.GAME))


def _trial_markov(cfg, trial, both_modes: bool):
    g = _markov_game(cfg, trial)
    rows = []
    last = len(cfg.grid) - 1
    for i, n_per in enumerate(cfg.grid):
        data = sample_markov_dataset(g, g.policy, int(n_per),
                                     stream(cfg.seed, trial, Purpose.SAMPLE, i))
        pol = markov_empirical_policies(data, cfg.floor)
        sy = build_markov_system(g.features, pol)
        P_hat = estimate_transitions(data, cfg.alpha)
        row = {"N_per_state": int(n_per), "K": data.K}
        modes = ("known-p", "estimated-p") if both_modes else (cfg.mode,)
        for mode in modes:
            P_used = g.P if mode == "known-p" else P_hat
            rec = recover_markov_rewards(sy, cfg.C, g.features, pol, P_used, cfg.gamma,
                                         dynamics_mode=mode.replace("-p", "_P"))
            key = "known" if mode == "known-p" else "estimated"
            row[f"r_error_{key}"] = float(np.max(np.abs(rec.r_hat - g.r_star)))
            if mode == modes[0]:
                row["theta_error"] = float(np.linalg.norm(rec.theta_hat - g.theta_star))
                row["tau_error"] = abs(rec.tau_hat - g.tau_star)
                if not both_modes and i == last:
                    fwd = forward_solve_markov(rec.r_hat, g.P, cfg.gamma, rec.tau_hat)
                    row["roundtrip_tv"] = max(
                        max(_tv(fwd.policy.mu[s], g.policy.mu[s]),
                            _tv(fwd.policy.nu[s], g.policy.nu[s])) for s in range(g.S))
        rows.append(row)
    return rows


def _trial_convergence_markov(cfg, trial):
    return _trial_markov(cfg, trial, both_modes=False)


def _trial_unknown_dynamics(cfg, trial):
    return _trial_markov(cfg, trial, both_modes=True)


EXPERIMENTS = {
    "convergence-matrix": (_trial_convergence_matrix, "N", ["theta_error", "tau_error"]),
    "comparison-table": (_trial_comparison_table, "N", None),
    "misspecified-c": (_trial_misspecified_c, "ratio",
                       ["directional_error", "tau_ratio", "tau_ratio_over_expected"]),
    "convergence-markov": (_trial_convergence_markov, "K",
                           ["theta_error", "tau_error", "r_error_known"]),
    "unknown-dynamics": (_trial_unknown_dynamics, "K",
                         ["r_error_known", "r_error_estimated", "theta_error", "tau_error"]),
    "feature-misspecification": (_trial_feature_misspecification, "N",
                                 ["directional_error", "behavioral_error"]),
    "coverage": (_trial_coverage, "N", ["contained", "residual_sq", "kappa"]),
}


def _safe_trial(args):
    cfg, trial = args
    fn = EXPERIMENTS[cfg.name][0]
    try:
        rows = fn(cfg, trial)
        return [{"trial": trial, "status": "ok", **r} for r in rows]
    except Exception as exc:  # recorded, sweep continues
        logger.warning("trial %d failed: %s", trial, exc)
        return [{"trial": trial, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}]


def run_trials(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """Per-trial records in trial order."""
    tasks = [(cfg, t) for t in range(cfg.trials)]
    if jobs <= 1:
        chunks = map(_safe_trial, tasks)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_safe_trial, tasks))
    return [row for chunk in chunks for row in chunk]


# -- aggregation --------------------------------------------------------------

def fit_loglog_slope(sizes, errors) -> float:
    """OLS slope of ``log(error)`` on ``log(size)``."""
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise ValueError("need at least two (size, error) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("sizes and errors must be positive")
    lx, ly = np.log(x), np.log(y)
    lx = lx - lx.mean()
    return float(lx @ (ly - ly.mean()) / (lx @ lx))


@dataclass
class ConvergenceReport:
    x_name: str
    x: list
    metrics: dict          # metric -> {"mean": [...], "std": [...], "stderr": [...], "count": [...]}
    slopes: dict
    trials: int
    failures: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(rows: list[dict], x_name: str, metric_names, trials: int) -> ConvergenceReport:
    ok = [r for r in rows if r["status"] == "ok"]
    failures = len({r["trial"] for r in rows if r["status"] != "ok"})
    xs = sorted({r[x_name] for r in ok})
    metrics = {}
    for name in metric_names:
        stats = {"mean": [], "std": [], "stderr": [], "count": []}
        for x in xs:
            v = np.array([r[name] for r in ok if r[x_name] == x and r.get(name) is not None
                          and not (isinstance(r[name], float) and math.isnan(r[name]))], dtype=float)
            k = len(v)
            stats["mean"].append(float(v.mean()) if k else float("nan"))
            sd = float(v.std(ddof=1)) if k > 1 else 0.0
            stats["std"].append(sd)
            stats["stderr"].append(sd / math.sqrt(k) if k else float("nan"))
            stats["count"].append(k)
        metrics[name] = stats
    slopes = {}
    if x_name in ("N", "K") and len(xs) >= 2:
        for name, st in metrics.items():
            try:
                slopes[name] = fit_loglog_slope(xs, st["mean"])
            except ValueError:
                pass
    return ConvergenceReport(x_name, xs, metrics, slopes, trials, failures)


def comparison_rows(rows: list[dict], tau_assumed) -> list[dict]:
    """Table rows (method, tau, mean error, std, stderr) from comparison-table records."""
    ok = [r for r in rows if r["status"] == "ok"]
    out = []
    cols = [("Blind-IGT", "estimated", "blind")] + [
        ("Standard IGT", f"{t:g}", f"standard_tau{t:g}") for t in tau_assumed]
    for method, tau, key in cols:
        v = np.array([r[key] for r in ok], dtype=float)
        sd = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        out.append({"method": method, "tau_assumed": tau, "mean_error": float(v.mean()),
                    "std": sd, "stderr": sd / math.sqrt(len(v)), "trials": len(v)})
    return out


# -- running and writing ----------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def _csv_text(rows: list[dict], meta: dict | None) -> str:
    cols: list = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    if meta is not None:
        buf.write("# meta " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in cols})
    return buf.getvalue()


def metadata(cfg: ExperimentConfig) -> dict:
    return {"tool": "blind-igt", "version": __version__, "seed": cfg.seed, "config": cfg.to_dict()}


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, write: bool = True) -> dict:
    """Run an experiment; returns the summary document (and writes files if asked).

    Files go to ``<output_dir>/<name>/``: ``raw.csv`` (one row per trial and
    grid point), ``summary.json`` and ``plotdata.csv``.
    """
    _, x_name, metric_names = EXPERIMENTS[cfg.name]
    rows = run_trials(cfg, jobs)
    if cfg.name == "comparison-table":
        metric_names = ["blind"] + [f"standard_tau{t:g}" for t in cfg.tau_assumed]
    report = summarize(rows, x_name, metric_names, cfg.trials)
    summary = {"meta": metadata(cfg), "experiment": cfg.name, "report": report.to_dict()}
    if cfg.name == "comparison-table":
        summary["table"] = comparison_rows(rows, cfg.tau_assumed)
    elif cfg.name == "misspecified-c":
        de = report.metrics["directional_error"]["mean"]
        summary["directional_error_max_over_min"] = max(de) / min(de) if min(de) > 0 else float("inf")
    elif cfg.name == "coverage":
        summary["coverage"] = report.metrics["contained"]["mean"]
    elif cfg.name == "convergence-markov":
        tv = [r["roundtrip_tv"] for r in rows if r.get("roundtrip_tv") is not None]
        summary["roundtrip_tv_mean"] = float(np.mean(tv)) if tv else None
        summary["roundtrip_tv_max"] = float(np.max(tv)) if tv else None
    if write:
        out = Path(cfg.output_dir) / cfg.name
        out.mkdir(parents=True, exist_ok=True)
        meta = metadata(cfg)
        (out / "raw.csv").write_text(_csv_text(rows, meta))
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
        plot = []
        for j, x in enumerate(report.x):
            p = {x_name: x}
            for name, st in report.metrics.items():
                p[f"{name}_mean"] = st["mean"][j]
                p[f"{name}_std"] = st["std"][j]
            plot.append(p)
        (out / "plotdata.csv").write_text(_csv_text(plot, meta))
    summary["_rows"] = rows
    return summary


def _read_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def verify_outputs(directory) -> list[str]:
    """Recompute the aggregates in ``summary.json`` from ``raw.csv``; returns mismatches."""
    d = Path(directory)
    summary = json.loads((d / "summary.json").read_text())
    rep = summary["report"]
    raw = _read_csv(d / "raw.csv")
    problems = []
    x_name = rep["x_name"]
    for name, st in rep["metrics"].items():
        for j, x in enumerate(rep["x"]):
            vals = [float(r[name]) for r in raw if r["status"] == "ok" and r.get(name)
                    and float(r[x_name]) == float(x)]
            if not vals:
                continue
            mean = float(np.mean(vals))
            if not math.isclose(mean, st["mean"][j], rel_tol=1e-12, abs_tol=1e-15):
                problems.append(f"{name} at {x_name}={x}: raw mean {mean} != summary {st['mean'][j]}")
    return problems


def available_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# Thin wrappers named after the individual experiments.

def run_convergence_matrix(cfg: ExperimentConfig, jobs: int = 1) -> ConvergenceReport:
    return ConvergenceReport(**run_experiment(cfg, jobs, write=False)["report"])


def run_comparison_table(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    return run_experiment(cfg, jobs, write=False)["table"]


def run_misspecified_c(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    return run_experiment(cfg, jobs, write=False)["_rows"]


def run_convergence_markov(cfg: ExperimentConfig, jobs: int = 1) -> ConvergenceReport:
    return ConvergenceReport(**run_experiment(cfg, jobs, write=False)["report"])


def run_unknown_dynamics(cfg: ExperimentConfig, jobs: int = 1) -> ConvergenceReport:
    return ConvergenceReport(**run_experiment(cfg, jobs, write=False)["report"])


def run_feature_misspecification(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    return run_experiment(cfg, jobs, write=False)["_rows"]
