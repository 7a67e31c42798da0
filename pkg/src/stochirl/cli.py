"""Command-line front end.

Subcommands::

    stochirl run CONFIG         expert -> K_T estimate -> data -> model-free IRL
    stochirl compare CONFIG     model-based and model-free side by side
    stochirl dump-paths CONFIG  raw behavior trajectories as CSV

Exit codes: 0 success, 2 invalid configuration, 3 insufficient excitation
(rank failure), 4 no convergence within the iteration budget, 5 other
numerical failure.  Failures print a one-line JSON record to stderr and
also write it to ``error.json`` in the output directory when possible.
"""

import argparse
import json
import os
import sys
import time

import numpy as np
import tomli_w

from . import __version__
from .config import load_config
from .errors import (
    ConfigError,
    ExcitationError,
    IterationError,
    SingularSystemError,
    StochIRLError,
)
from .expert import estimate_expert_gain, generate_expert_demo, write_demo_csv
from .irl_model_based import run_model_based_irl, verify_nonuniqueness, write_history_csv
from .irl_model_free import collect_behavior_data, run_model_free_irl, save_regression_data
from .lq_core import CostWeights, solve_lyapunov, solve_sare, sare_residual, theorem1_residuals
from .sde_sim import BACKEND, LinearPolicy, simulate_paths, write_paths_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXCITATION = 3
EXIT_NONCONVERGED = 4
EXIT_NUMERICAL = 5
MANIFEST_VERSION = 1

MF_EXTRA_COLUMNS = {"ls_residual_p": "ls_residual_p", "ls_residual_q": "ls_residual_q"}


class NotConverged(StochIRLError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (ExcitationError, SingularSystemError)):
        return EXIT_EXCITATION
    if isinstance(exc, (NotConverged, IterationError)):
        return EXIT_NONCONVERGED
    return EXIT_NUMERICAL


def _error_record(exc, code):
    rec = {"status": "error", "exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    for attr in ("field", "rank", "required", "step"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    return rec


def _clean(obj):
    """Drop None values (TOML has no null) and convert numpy values."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_manifest(cfg, out, command, args, artifacts):
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "command": command,
        "exact_functionals": bool(args.exact_functionals),
        "kernel_backend": BACKEND,
        "artifacts": sorted(os.path.relpath(p, out) for p in artifacts),
        "config": _clean(cfg.raw),
    }
    path = os.path.join(out, "manifest.toml")
    with open(path, "wb") as fh:
        tomli_w.dump(manifest, fh)
    return path


def _csv(path, writer, *wargs, **wkw):
    with open(path, "w", newline="") as fh:
        writer(*wargs, fh, **wkw)
    return path


def _theorem1(cfg, result):
    weights = CostWeights(result.Q_star, result.R)
    qn = float(np.linalg.norm(result.Q_star))
    r_sare, r_lyap = theorem1_residuals(cfg.system, weights, result.P_star, result.K_target)
    P_model = solve_lyapunov(
        cfg.system, result.K_target, result.Q_star + result.K_target.T @ result.R @ result.K_target
    )
    return {
        "sare_residual": r_sare,
        "lyapunov_residual": r_lyap,
        "sare_relative": r_sare / qn,
        "lyapunov_relative": r_lyap / qn,
        "sare_relative_model_P": sare_residual(cfg.system, weights, P_model) / qn,
    }


def _summary(cfg, result, K_T):
    nu = verify_nonuniqueness(cfg.system, cfg.target, result.R, result, K_init=cfg.K_init)
    return {
        "converged": result.converged,
        "stop_reason": result.stop_reason,
        "iterations": result.iterations,
        "gain_error_vs_estimate": result.gain_error,
        "gain_error_vs_true": float(np.linalg.norm(result.K_star - K_T)),
        "K_star": result.K_star.tolist(),
        "Q_star": result.Q_star.tolist(),
        "P_star": result.P_star.tolist(),
        "theorem1": _theorem1(cfg, result),
        "nonuniqueness": {"gain_identity": nu.gain_identity, "riccati_identity": nu.riccati_identity},
    }


def _prepare(cfg, out, args, artifacts):
    """Expert stage shared by ``run`` and ``compare``."""
    P_T, K_T = solve_sare(cfg.system, cfg.target, cfg.K_init)
    demo = generate_expert_demo(cfg.system, cfg.target, cfg.K_init, cfg.sim, k=cfg.expert_samples)
    est = estimate_expert_gain(demo)
    artifacts.append(_csv(os.path.join(out, "expert_demo.csv"), write_demo_csv, demo))
    data = collect_behavior_data(
        cfg.system, cfg.K0, cfg.noise, cfg.sim, est.K_hat, exact=args.exact_functionals
    )
    bundle = os.path.join(out, "data")
    save_regression_data(data, bundle)
    artifacts += [os.path.join(bundle, f) for f in sorted(os.listdir(bundle))]
    expert = {
        "K_T": K_T.tolist(),
        "P_T": P_T.tolist(),
        "K_T_hat": est.K_hat.tolist(),
        "K_T_hat_error": float(np.linalg.norm(est.K_hat - K_T)),
        "demo_condition": est.condition,
        "ranks": data.ranks,
    }
    return K_T, est.K_hat, data, expert


def _model_free(cfg, data):
    le = cfg.learner
    return run_model_free_irl(
        data, cfg.R, cfg.Q0, eps1=le["eps1"], max_iter=le["max_iter"], stop=le["stop_mode"],
        gain_tol=le["gain_tol"], q_mode=le["q_mode"], true_system=cfg.system,
    )


def _model_based(cfg, K_hat):
    mb = cfg.model_based
    return run_model_based_irl(
        cfg.system, cfg.R, cfg.Q0, K_hat, eps1=mb["eps1"], max_iter=mb["max_iter"],
        stop=mb["stop_mode"], gain_tol=mb["gain_tol"],
    )


def _plot(cfg, result, out, name, artifacts):
    if not cfg.output["plot"]:
        return
    from . import plotting

    if plotting.available():
        artifacts.append(plotting.plot_convergence(result, os.path.join(out, name)))


def run_experiment(cfg, args):
    """Full pipeline; returns the run report dict."""
    out = cfg.output["directory"]
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    artifacts = []
    K_T, K_hat, data, expert = _prepare(cfg, out, args, artifacts)
    mf = _model_free(cfg, data)
    artifacts.append(_csv(os.path.join(out, "history_model_free.csv"), write_history_csv, mf,
                          extra_columns=MF_EXTRA_COLUMNS))
    _plot(cfg, mf, out, "convergence_model_free.svg", artifacts)
    report = {"expert": expert, "model_free": _summary(cfg, mf, K_T)}
    if cfg.model_based["enabled"]:
        mb = _model_based(cfg, K_hat)
        artifacts.append(_csv(os.path.join(out, "history_model_based.csv"), write_history_csv, mb))
        _plot(cfg, mb, out, "convergence_model_based.svg", artifacts)
        report["model_based"] = _summary(cfg, mb, K_T)
    return _finish(cfg, args, out, "run", report, artifacts, t0, mf.converged)


def _paired_csv(mb, mf, fh):
    import csv

    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["i", "gain_gap", "q_gap", "p_gap", "gain_gap_mb_target", "gain_gap_mf_target"])
    for a, b in zip(mb.history, mf.history):
        writer.writerow([
            a.index,
            format(float(np.linalg.norm(a.K_next - b.K_next)), ".17g"),
            format(float(np.linalg.norm(a.Q - b.Q)), ".17g"),
            format(float(np.linalg.norm(a.P - b.P)), ".17g"),
            format(a.gain_gap, ".17g"),
            format(b.gain_gap, ".17g"),
        ])


def compare_algorithms(cfg, args):
    out = cfg.output["directory"]
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    artifacts = []
    K_T, K_hat, data, expert = _prepare(cfg, out, args, artifacts)
    mf = _model_free(cfg, data)
    mb = _model_based(cfg, K_hat)
    for name, res, extra in (("history_model_free.csv", mf, MF_EXTRA_COLUMNS),
                             ("history_model_based.csv", mb, None)):
        artifacts.append(_csv(os.path.join(out, name), write_history_csv, res, extra_columns=extra))
    with open(os.path.join(out, "paired_history.csv"), "w", newline="") as fh:
        _paired_csv(mb, mf, fh)
    artifacts.append(os.path.join(out, "paired_history.csv"))
    common = min(len(mb.history), len(mf.history))
    gaps = [float(np.linalg.norm(a.K_next - b.K_next)) for a, b in zip(mb.history, mf.history)]
    report = {
        "expert": expert,
        "model_free": _summary(cfg, mf, K_T),
        "model_based": _summary(cfg, mb, K_T),
        "comparison": {
            "common_iterations": common,
            "max_gain_gap": max(gaps),
            "exit_gain_gap": float(np.linalg.norm(mb.K_star - mf.K_star)),
        },
    }
    return _finish(cfg, args, out, "compare", report, artifacts, t0, mf.converged and mb.converged)


def dump_paths(cfg, args):
    out = cfg.output["directory"]
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    rec = simulate_paths(cfg.system, LinearPolicy(cfg.K0, cfg.noise), cfg.sim)
    path = os.path.join(out, "paths.csv")
    with open(path, "w", newline="") as fh:
        write_paths_csv(rec, fh, every=cfg.output["dump_every"])
    report = {"paths": len(rec), "grid_points": rec.t.size}
    return _finish(cfg, args, out, "dump-paths", report, [path], t0, True)


def _finish(cfg, args, out, command, report, artifacts, t0, converged):
    artifacts = list(artifacts)
    report_path = os.path.join(out, "report.json")
    artifacts.append(report_path)
    artifacts.append(os.path.join(out, "manifest.toml"))
    _write_manifest(cfg, out, command, args, artifacts)
    report.update({
        "status": "ok" if converged else "not_converged",
        "command": command,
        "seed": cfg.seed,
        "wall_time_s": time.perf_counter() - t0,
        "artifacts": sorted(artifacts),
    })
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not converged:
        raise NotConverged("iteration budget exhausted before a stop rule fired", report)
    return report


COMMANDS = {"run": run_experiment, "compare": compare_algorithms, "dump-paths": dump_paths}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stochirl",
        description="Inverse RL for stochastic linear-quadratic systems with multiplicative noise.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "expert demo, behavior data, model-free IRL (and model-based for reference)",
        "compare": "run both IRL variants and write a paired iterate history",
        "dump-paths": "write raw behavior trajectories as CSV",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="experiment TOML file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override output.directory")
        p.add_argument(
            "--exact-functionals", action="store_true",
            help="use exact expected window functionals from the moment equations "
                 "instead of Monte Carlo averages",
        )
        p.add_argument("--quiet", action="store_true", help="do not print the report summary")
    return parser


def _print_summary(report):
    mf = report.get("model_free")
    if mf is None:
        print(json.dumps({k: report[k] for k in ("status", "paths", "grid_points") if k in report}))
        return
    t1 = mf["theorem1"]
    print(f"status: {report['status']}  ({report['wall_time_s']:.2f} s)")
    print(f"model-free: {mf['iterations']} iterations, stop={mf['stop_reason']}, "
          f"|K*-K_T| = {mf['gain_error_vs_true']:.4g}")
    print(f"  K* = {np.round(mf['K_star'], 4).tolist()}")
    print(f"  Q* = {np.round(mf['Q_star'], 4).tolist()}")
    print(f"  P* = {np.round(mf['P_star'], 4).tolist()}")
    print(f"  learner Riccati residual / |Q*| = {t1['sare_relative']:.3g}, "
          f"Lyapunov residual / |Q*| = {t1['lyapunov_relative']:.3g}")
    if "model_based" in report:
        mb = report["model_based"]
        print(f"model-based: {mb['iterations']} iterations, |K*-K_T| = {mb['gain_error_vs_true']:.4g}")
    if "comparison" in report:
        print(f"exit gain gap between variants: {report['comparison']['exit_gain_gap']:.4g}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        out_dir = cfg.output["directory"]
        report = COMMANDS[args.command](cfg, args)
    except (StochIRLError, np.linalg.LinAlgError) as exc:
        code = _exit_code(exc)
        rec = _error_record(exc, code)
        print(json.dumps(rec), file=sys.stderr)
        if out_dir:
            try:
                os.makedirs(out_dir, exist_ok=True)
                with open(os.path.join(out_dir, "error.json"), "w") as fh:
                    json.dump(rec, fh, indent=2)
                    fh.write("\n")
            except OSError:
                pass
        return code
    if not args.quiet:
        _print_summary(report)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
