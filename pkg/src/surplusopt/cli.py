"""Command line experiment runner.

Usage::

    surplusopt run|verify|check|compare --config CONFIG [--out DIR] [--seed N] [--kmax N]

Exit codes: 0 success, 1 invalid configuration, 2 divergence,
3 verification disagreement, 4 I/O failure.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import baseline_fixed_point, estimate_decay, second_eigenvalue_modulus
from .config import dump_config, parse_config, validate
from .exceptions import ConfigurationError, DivergenceError, VerificationError
from .graph import max_epsilon
from .protocol import run

OUT_ENV = "SURPLUSOPT_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3, 4


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def write_trajectory_csv(trajectory, path):
    n, s = trajectory.n, trajectory.dim
    agent_cols = [f"{name}_{i + 1}_{d + 1}" for name in ("r", "q", "y") for i in range(n) for d in range(s)]
    header = (["k", "alpha_k"] + agent_cols
              + ["consensus_error", "surplus_norm", "velocity_norm", "optimality_gap",
                 "conservation_residual"]
              + [f"zbar_{d + 1}" for d in range(s)] + ["dist_sq_opt"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, alpha, (r, q, y), rec in zip(trajectory.ks, trajectory.alphas, trajectory.states,
                                            trajectory.records):
            row = [str(k), _fmt(alpha)]
            row += [_fmt(v) for v in np.concatenate([r.ravel(), q.ravel(), y.ravel()])]
            row += [_fmt(rec.consensus_error), _fmt(rec.surplus_norm), _fmt(rec.velocity_norm),
                    _fmt(rec.optimality_gap), _fmt(rec.conservation_residual)]
            row += [_fmt(v) for v in rec.zbar] + [_fmt(rec.dist_sq_opt)]
            writer.writerow(row)


def write_decay_csv(decay, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "e_k", "bound", "e_k_frobenius"])
        for (k, e, b), fro in zip(decay.rows(), decay.errors_frobenius):
            writer.writerow([k, _fmt(e), _fmt(b), _fmt(fro)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_json(data, path):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def emit_artifacts(trajectory, report, decay, outdir, config=None):
    """Write trajectory.csv, report.json, decay.csv and config-echo.json into ``outdir``.

    ``decay`` and ``config`` may be ``None`` to skip their files. Returns the
    list of written paths.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "trajectory.csv"
    write_trajectory_csv(trajectory, path)
    written.append(path)
    path = out / "report.json"
    _write_json(dict(report.to_dict(), diagnostics=trajectory.diagnostics), path)
    written.append(path)
    if decay is not None:
        path = out / "decay.csv"
        write_decay_csv(decay, path)
        written.append(path)
    if config is not None:
        path = out / "config-echo.json"
        path.write_text(dump_config(config))
        written.append(path)
    return written


def _distance(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def _check(config, out, stream):
    g, family, params, B, M, rho = validate(config)
    decay = estimate_decay(M, 200)
    col_residual = float(np.max(np.abs(M.matrix.sum(axis=0) - 1.0)))
    summary = {
        "epsilon_max": max_epsilon(g, config.T),
        "epsilon": config.epsilon,
        "gamma_hat": decay.gamma_hat,
        "Gamma_hat": decay.Gamma_hat,
        "spectral_radius": rho,
        "second_eigenvalue_modulus": second_eigenvalue_modulus(M.matrix),
        "column_sum_residual": col_residual,
        "strongly_connected": True,
    }
    for key, value in summary.items():
        print(f"{key}: {value}", file=stream)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(summary, out / "check.json")
    write_decay_csv(decay, out / "decay.csv")
    (out / "config-echo.json").write_text(dump_config(config))
    return summary


def _run(config, out, stream):
    _, _, _, _, M, _ = validate(config)
    traj, report = run(config)
    decay = estimate_decay(M, 200)
    emit_artifacts(traj, report, decay, out, config)
    print(f"converged: {report.converged}  final zbar: {report.x_star_hat.tolist()}  "
          f"final gap: {report.final_gap}", file=stream)
    last_clip = traj.diagnostics["last_clip_k"]
    if last_clip is not None and last_clip == config.k_max - 1:
        print("warning: gradient clipping was still active at the final iteration; "
              "the estimate may be stalled (try a longer run or a larger alpha0)", file=stream)
    if config.mode == "verify":
        print(f"verify: max local/stacked deviation {traj.diagnostics['verify_max_deviation']:.3e}",
              file=stream)
    return traj, report


def _compare(config, out, stream):
    _, family, _, _, M, _ = validate(config)
    results = {}
    for label, enabled in (("surplus_on", True), ("surplus_off", False)):
        cfg = replace(config, surplus_enabled=enabled, mode="run")
        traj, report = run(cfg)
        decay = estimate_decay(M, 200) if enabled else None
        emit_artifacts(traj, report, decay, out / label, cfg)
        results[label] = (traj, report)
    setup = config.materialize()
    x_star = setup.oracle.x_star
    baseline = baseline_fixed_point(setup.graph, config.T, family)
    summary = {"x_star": x_star, "baseline_fixed_point": baseline}
    for label, (traj, report) in results.items():
        summary[label] = {
            "zbar": report.x_star_hat,
            "final_gap": report.final_gap,
            "distance_to_x_star": _distance(report.x_star_hat, x_star),
            "converged": report.converged,
        }
    summary["surplus_off"]["distance_to_baseline_fixed_point"] = _distance(
        results["surplus_off"][1].x_star_hat, baseline)
    on = summary["surplus_on"]["distance_to_x_star"]
    off = summary["surplus_off"]["distance_to_x_star"]
    summary["distance_ratio"] = off / on if on > 0 else float("inf")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(summary, out / "compare.json")
    print(f"surplus on : |zbar - x*| = {on:.3e}", file=stream)
    print(f"surplus off: |zbar - x*| = {off:.3e}", file=stream)
    return summary


def execute(config, out=None, stream=None):
    """Run ``config`` in its mode and write artifacts; returns the exit status."""
    stream = stream or sys.stdout
    if out is None:
        out = config.output_dir or os.path.join(os.environ.get(OUT_ENV, "out"), config.mode)
    out = Path(out)
    try:
        if config.mode == "check":
            _check(config, out, stream)
        elif config.mode == "compare":
            _compare(config, out, stream)
        else:
            _run(config, out, stream)
    except ConfigurationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="surplusopt",
        description="Distributed second-order optimization over unbalanced digraphs.")
    parser.add_argument("mode", choices=["run", "verify", "check", "compare"])
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<mode> or ./out/<mode>)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--kmax", type=int, help="override k_max")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config, seed=args.seed, k_max=args.kmax, mode=args.mode)
    except ConfigurationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return execute(config, args.out)


if __name__ == "__main__":
    sys.exit(main())
