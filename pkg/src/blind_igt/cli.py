"""Command-line entry point: ``blind-igt <subcommand> [flags]``.

Exit codes: 0 success, 2 usage or malformed config, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import (ConfidenceConfig, NonUniformityError, confidence_threshold,
                         nls_estimate, plugin_xi, recover_markov_rewards,
                         scan_confidence_set, write_scan_csv)
from .experiments import EXPERIMENTS, available_jobs, default_config, run_experiment, verify_outputs
from .games import MatrixGameSpec, generate_markov_game, generate_matrix_game, load_game
from .qre import EXACT, QRESolverError, SolverConfig, forward_solve_markov, solve_matrix_qre
from .rng import Purpose, stream
from .sampling import (MarkovDataset, MatrixSample, empirical_policies, estimate_transitions,
                       floor_applied, load_dataset, markov_empirical_policies,
                       sample_markov_dataset, sample_matrix_play, save_markov_dataset,
                       save_matrix_sample)
from .system import ZeroProbabilityError, build_markov_system, build_system

EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4
BUNDLED = "bundled"

log = logging.getLogger("blind_igt")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, msg, diagnostic=None):
        super().__init__(msg)
        self.diagnostic = diagnostic or {}


def fixture_path() -> Path:
    """The bundled noiseless matrix-game fixture."""
    return Path(str(resources.files("blind_igt") / "data" / "noiseless_matrix.json"))


def _grid(text):
    try:
        return [float(x) if "." in x or "e" in x.lower() else int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config; flags override its keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--jobs", type=int)
    common.add_argument("--verbose", "-v", action="count", default=0)

    ap = argparse.ArgumentParser(prog="blind-igt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"blind-igt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a random game spec (JSON)")
    g.add_argument("--kind", choices=["matrix", "markov"])
    for flag, typ in (("--m", int), ("--n", int), ("--d", int), ("--S", int), ("--tau", float),
                      ("--C", float), ("--gamma", float)):
        g.add_argument(flag, type=typ)

    s = sub.add_parser("solve-qre", parents=[common], help="solve a game spec's QRE")
    s.add_argument("--spec")
    s.add_argument("--tau", type=float, help="temperature (default: the game's own)")
    s.add_argument("--tol", type=float)
    s.add_argument("--damping", type=float)

    e = sub.add_parser("estimate", parents=[common], help="recover (theta, tau) from play")
    e.add_argument("--spec", help=f"game spec JSON, or '{BUNDLED}' for the noiseless fixture")
    e.add_argument("--data", help="dataset directory (counts CSV + dataset.json)")
    e.add_argument("--n", type=int, help="sample N rounds (per state for Markov games)")
    e.add_argument("--noiseless", action="store_true", help="use the exact QRE policies")
    e.add_argument("--c-assumed", type=float, dest="c_assumed")
    e.add_argument("--floor", type=float)
    e.add_argument("--alpha", type=float)
    e.add_argument("--mode", choices=["known-p", "estimated-p"])
    e.add_argument("--save-data", dest="save_data", help="also write the sampled dataset here")

    c = sub.add_parser("confset", parents=[common], help="scan the confidence set (CSV)")
    c.add_argument("--spec")
    c.add_argument("--data")
    c.add_argument("--n", type=int)
    c.add_argument("--delta", type=float)
    c.add_argument("--xi", type=float, help="soft-min gap (default: plug-in estimate)")
    c.add_argument("--tau-max", type=float, dest="tau_max")
    c.add_argument("--L", type=float)
    c.add_argument("--c-assumed", type=float, dest="c_assumed")
    c.add_argument("--taus", type=_floats, help="temperature grid, comma-separated")
    c.add_argument("--directions", type=int)
    c.add_argument("--floor", type=float)

    x = sub.add_parser("experiment", parents=[common], help="run a named experiment")
    x.add_argument("name", choices=sorted(EXPERIMENTS))
    x.add_argument("--trials", type=int)
    x.add_argument("--grid", type=_grid, help="sample sizes (N, or samples per state)")
    x.add_argument("--mode", choices=["known-p", "estimated-p"])
    x.add_argument("--c-assumed", type=_floats, dest="c_assumed",
                   help="assumed normalization constants (misspecified-c)")
    x.add_argument("--d-est", type=int, dest="d_est")
    x.add_argument("--floor", type=float)
    x.add_argument("--alpha", type=float)
    x.add_argument("--fixed-game", action="store_true", dest="fixed_game", default=None)

    v = sub.add_parser("verify", parents=[common], help="run the built-in oracle checks")
    v.add_argument("--outputs", help="also check an experiment output directory")
    return ap


def _merge(args) -> dict:
    """Effective config: file values, overridden by any flag that was given."""
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: invalid JSON at line {exc.lineno}: {exc.msg}")
        if not isinstance(cfg, dict):
            raise UsageError(f"config {args.config}: top level must be an object")
    for k, v in vars(args).items():
        if k in ("config", "command", "verbose") or v is None:
            continue
        if k == "noiseless" and v is False:
            continue
        cfg[k] = v
    return cfg


def _get(cfg, key, typ, default=None, required=False):
    if key not in cfg or cfg[key] is None:
        if required:
            raise UsageError(f"missing required setting '{key}'")
        return default
    try:
        if typ is list:
            val = cfg[key]
            if not isinstance(val, list):
                raise TypeError
            return val
        if typ is bool:
            if not isinstance(cfg[key], bool):
                raise TypeError
            return cfg[key]
        return typ(cfg[key])
    except (TypeError, ValueError):
        raise UsageError(f"setting '{key}' must be {typ.__name__}, got {cfg[key]!r}")


def _meta(cfg, command):
    return {"tool": "blind-igt", "version": __version__, "command": command,
            "seed": cfg.get("seed", 0), "config": cfg}


def _write_json(doc, out):
    text = json.dumps(doc, indent=1)
    if out:
        Path(out).write_text(text)
    else:
        print(text)


def _load_spec(cfg):
    path = _get(cfg, "spec", str, required=True)
    path = fixture_path() if path == BUNDLED else Path(path)
    try:
        return load_game(path)
    except KeyError as exc:
        raise UsageError(f"spec {path}: missing field {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"spec {path}: invalid JSON at line {exc.lineno}: {exc.msg}")


# -- subcommands ---------------------------------------------------------------

def cmd_generate(cfg):
    kind = _get(cfg, "kind", str, "matrix")
    seed = _get(cfg, "seed", int, 0)
    if kind == "matrix":
        spec = generate_matrix_game(_get(cfg, "m", int, 10), _get(cfg, "n", int, 10),
                                    _get(cfg, "d", int, 5), _get(cfg, "tau", float, 2.0),
                                    _get(cfg, "C", float, 1.0), seed=seed)
    elif kind == "markov":
        spec = generate_markov_game(_get(cfg, "S", int, 8), _get(cfg, "m", int, 5),
                                    _get(cfg, "n", int, 5), _get(cfg, "d", int, 6),
                                    _get(cfg, "tau", float, 1.5), _get(cfg, "C", float, 1.0),
                                    _get(cfg, "gamma", float, 0.9), seed=seed)
    else:
        raise UsageError(f"setting 'kind' must be matrix or markov, got {kind!r}")
    out = _get(cfg, "out", str)
    doc = spec.to_dict()
    doc["meta"] = _meta(cfg, "generate")
    _write_json(doc, out)


def _solver(cfg):
    kw = {}
    if "tol" in cfg:
        kw["tol"] = _get(cfg, "tol", float)
    if "damping" in cfg:
        kw["damping"] = _get(cfg, "damping", float)
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_solve_qre(cfg):
    spec = _load_spec(cfg)
    tau = _get(cfg, "tau", float, spec.tau_star)
    solver = _solver(cfg)
    if isinstance(spec, MatrixGameSpec):
        sol = solve_matrix_qre(spec.Q_star, tau, solver)
    else:
        sol = forward_solve_markov(spec.r_star, spec.P, spec.gamma, tau, solver)
    doc = sol.to_dict()
    doc["meta"] = _meta(cfg, "solve-qre")
    if not sol.converged:
        raise NumericalFailure("QRE solver did not converge", doc)
    _write_json(doc, _get(cfg, "out", str))


def _matrix_policy(cfg, spec):
    """Exact, loaded or freshly sampled policies for a matrix game."""
    sol = solve_matrix_qre(spec.Q_star, spec.tau_star, EXACT)
    if not sol.converged:
        raise NumericalFailure("QRE of the game did not converge", sol.to_dict())
    if cfg.get("noiseless"):
        return sol.policy, {"source": "exact QRE"}
    if cfg.get("data"):
        sample = load_dataset(cfg["data"])
        if not isinstance(sample, MatrixSample):
            raise UsageError("setting 'data' points at a Markov dataset but the game is a matrix game")
    else:
        N = _get(cfg, "n", int, required=True)
        sample = sample_matrix_play(sol.policy, N, stream(_get(cfg, "seed", int, 0), 0, Purpose.SAMPLE))
        if cfg.get("save_data"):
            save_matrix_sample(sample, cfg["save_data"], _meta(cfg, "estimate"))
    floor = _get(cfg, "floor", float)
    return empirical_policies(sample, floor), {"source": "sample", "N": sample.N,
                                               "floor_applied": floor_applied(sample)}


def cmd_estimate(cfg):
    spec = _load_spec(cfg)
    if isinstance(spec, MatrixGameSpec):
        C = _get(cfg, "c_assumed", float, spec.C)
        policy, info = _matrix_policy(cfg, spec)
        result = nls_estimate(build_system(spec.features, policy), C)
        doc = result.to_dict()
    else:
        C = _get(cfg, "c_assumed", float, spec.R)
        mode = _get(cfg, "mode", str, "known-p")
        if cfg.get("noiseless"):
            policies, P_hat, info = spec.policy, spec.P, {"source": "exact QRE"}
        else:
            if cfg.get("data"):
                data = load_dataset(cfg["data"])
                if not isinstance(data, MarkovDataset):
                    raise UsageError("setting 'data' points at a matrix dataset but the game is a Markov game")
            else:
                n = _get(cfg, "n", int, required=True)
                data = sample_markov_dataset(spec, spec.policy, n,
                                             stream(_get(cfg, "seed", int, 0), 0, Purpose.SAMPLE))
                if cfg.get("save_data"):
                    save_markov_dataset(data, cfg["save_data"], _meta(cfg, "estimate"))
            policies = markov_empirical_policies(data, _get(cfg, "floor", float))
            P_hat = estimate_transitions(data, _get(cfg, "alpha", float, 1.0))
            info = {"source": "sample", "K": data.K, "N_per_state": data.N_per_state}
        P_used = spec.P if mode == "known-p" else P_hat
        sy = build_markov_system(spec.features, policies)
        rec = recover_markov_rewards(sy, C, spec.features, policies, P_used, spec.gamma,
                                     dynamics_mode=mode.replace("-p", "_P"))
        doc = rec.to_dict()
        doc["r_error_inf"] = float(np.max(np.abs(rec.r_hat - spec.r_star)))
        result = rec.estimate
    doc["theta_error"] = float(np.linalg.norm(result.theta_hat - spec.theta_star))
    doc["tau_error"] = abs(result.tau_hat - spec.tau_star)
    doc["data"] = info
    doc["meta"] = _meta(cfg, "estimate")
    _write_json(doc, _get(cfg, "out", str))


def cmd_confset(cfg):
    spec = _load_spec(cfg)
    if not isinstance(spec, MatrixGameSpec):
        raise UsageError("confset supports matrix-game specs")
    policy, info = _matrix_policy(cfg, spec)
    sy = build_system(spec.features, policy)
    N = info.get("N") or _get(cfg, "n", int, required=True)
    xi = _get(cfg, "xi", float)
    plugin = xi is None
    if plugin:
        xi = plugin_xi(policy)
    C = _get(cfg, "c_assumed", float, spec.C)
    try:
        ccfg = ConfidenceConfig(delta=_get(cfg, "delta", float, 0.05), xi=xi,
                                L=_get(cfg, "L", float, spec.features.L), C=C,
                                tau_max=_get(cfg, "tau_max", float, 2 * spec.tau_star),
                                m=spec.features.m, n=spec.features.n, N=int(N), xi_plugin=plugin)
    except ValueError as exc:
        raise UsageError(str(exc))
    kappa = confidence_threshold(ccfg)
    try:
        est = nls_estimate(sy, C)
        extra = [est.theta_hat]
        tau_hat = est.tau_hat
    except NonUniformityError:
        extra, tau_hat = [], spec.tau_star
    taus = _get(cfg, "taus", list) or list(np.linspace(0.25 * tau_hat, 2.0 * tau_hat, 15))
    rows = scan_confidence_set(sy, kappa, C, taus, _get(cfg, "directions", int, 200),
                               seed=_get(cfg, "seed", int, 0), extra_directions=extra)
    meta = _meta(cfg, "confset")
    meta.update(kappa=kappa, xi=xi, xi_plugin=plugin, data=info)
    out = _get(cfg, "out", str)
    if out:
        write_scan_csv(rows, out, meta)
    else:
        print(json.dumps({"kappa": kappa, "inside": sum(r["inside"] for r in rows),
                          "points": len(rows), "xi": xi, "xi_plugin": plugin}))


def cmd_experiment(cfg):
    name = cfg["name"]
    overrides = {}
    for key, typ in (("seed", int), ("trials", int), ("grid", list), ("mode", str),
                     ("d_est", int), ("floor", float), ("alpha", float), ("fixed_game", bool)):
        if key in cfg:
            overrides[key] = _get(cfg, key, typ)
    if "out" in cfg:
        overrides["output_dir"] = _get(cfg, "out", str)
    try:
        ecfg = default_config(name, **overrides)
        if "c_assumed" in cfg:
            ecfg.c_ratios = [float(c) / ecfg.C for c in _get(cfg, "c_assumed", list)]
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))
    jobs = _get(cfg, "jobs", int) or available_jobs()
    summary = run_experiment(ecfg, jobs=jobs, write=True)
    rep = summary["report"]
    print(json.dumps({"experiment": name, "output": str(Path(ecfg.output_dir) / name),
                      "slopes": rep["slopes"], "failures": rep["failures"]}))
    if rep["failures"] == ecfg.trials:
        raise NumericalFailure("every trial failed",
                               {"errors": sorted({r.get("error", "") for r in summary["_rows"]})})


def cmd_verify(cfg):
    from .selftest import run_all
    results = run_all()
    bad = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        bad += not ok
    if cfg.get("outputs"):
        problems = verify_outputs(cfg["outputs"])
        for p in problems:
            print(f"FAIL  outputs: {p}")
        if not problems:
            print(f"PASS  outputs: aggregates in {cfg['outputs']} match raw records")
        bad += len(problems)
    print(f"{len(results) - sum(not ok for _, ok, _ in results)}/{len(results)} checks passed")
    if bad:
        raise NumericalFailure(f"{bad} self-test check(s) failed")


COMMANDS = {"generate": cmd_generate, "solve-qre": cmd_solve_qre, "estimate": cmd_estimate,
            "confset": cmd_confset, "experiment": cmd_experiment, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _merge(args)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, QRESolverError, NonUniformityError, ZeroProbabilityError,
            np.linalg.LinAlgError) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc),
                **getattr(exc, "diagnostic", {})}
        print(json.dumps(diag), file=sys.stderr)
        return EXIT_NUMERICAL
    except KeyError as exc:
        print(f"error: missing field {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
