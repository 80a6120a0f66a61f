"""Command-line entry point.

Subcommands: ``run`` (simulate, emit trace + metrics + summary + figure),
``compare`` (both algorithms under identical noise), ``budget`` (cumulative
privacy bounds at chosen horizons), and ``plot`` (render a metrics CSV).

Exit codes are a stable contract: 0 success, 1 I/O failure, 2 validation
failure, 3 divergence.  Failures print a machine-readable JSON object to
stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment, plotting, privacy_accounting
from .config import ConfigError, RunConfig, load_config
from .graph_topology import fit_estimator_envelope, left_perron
from .learners import CorruptedStateError, DivergenceError, export_trace_csv
from .oracle_and_metrics import METRIC_COLUMNS, MetricRow, emit_metrics

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3

_DEFAULT_OUT = "ldp-gradtrack-out"


def _fail(code: int, kind: str, message: str, details=None) -> int:
    payload = {"error": {"code": code, "kind": kind, "message": message,
                         "details": details or []}}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.out_dir is not None:
        return cfg.out_dir
    return Path(_DEFAULT_OUT)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_combined_metrics(per_alg: dict[str, list[MetricRow]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("algorithm",) + METRIC_COLUMNS)
        for alg in sorted(per_alg):
            for r in per_alg[alg]:
                writer.writerow([alg, r.round] + [
                    f"{v:.17g}" for v in (r.avg_tracking_error, r.avg_loss_gap,
                                          r.consensus_gap, r.eps_s_max, r.eps_theta_max)])


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    result = experiment.run_experiment(cfg)
    emit_metrics(result.metrics, out / "metrics.csv")
    export_trace_csv(result.trace, out / "trace.csv",
                     theta_star=result.oracle.theta_star)
    _write_json(out / "summary.json", result.summary)
    plotting.render_metrics(out / "metrics.csv", out / "metrics.svg",
                            columns=["avg_tracking_error", "consensus_gap"],
                            loglog=args.loglog)
    print(f"wrote {out / 'metrics.csv'}, trace.csv, summary.json, metrics.svg")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    results = experiment.run_comparison(cfg)
    per_alg = {alg: res.metrics for alg, res in results.items()}
    _write_combined_metrics(per_alg, out / "compare_metrics.csv")
    _write_json(out / "compare_summary.json",
                {alg: res.summary for alg, res in results.items()})
    plotting.render_metrics(out / "compare_metrics.csv", out / "compare.svg",
                            columns=["avg_tracking_error"], loglog=args.loglog)
    print(f"wrote {out / 'compare_metrics.csv'}, compare_summary.json, compare.svg")
    return EXIT_OK


def cmd_budget(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    horizons = sorted({int(h) for h in args.horizons.split(",")} if args.horizons
                      else {cfg.rounds})
    if any(h < 0 for h in horizons):
        raise ConfigError("horizons must be nonnegative")
    if cfg.problem.clip_l1 is None:
        raise ConfigError("privacy budgets need a per-sample gradient bound: "
                          "set problem.clip_l1 in the config")
    if not all(z.enabled and th.enabled for z, th in cfg.schedules):
        raise ConfigError("privacy budgets need enabled noise on both variables "
                          "(sigma0 > 0)")
    perron = left_perron(cfg.weights)
    c_z, gamma_z = fit_estimator_envelope(cfg.weights, perron.u)
    if c_z == 0.0:
        c_z, gamma_z = 1e-12, 0.5
    T_max = max(horizons)
    series = privacy_accounting.sensitivity_series(
        cfg.weights, perron, cfg.problem.clip_l1, c_z, gamma_z, cfg.step, T_max)
    reports = {T: privacy_accounting.cumulative_budget(series, cfg.schedules, T)
               for T in horizons}
    payload = {
        "c_l": cfg.problem.clip_l1,
        "c_z": c_z,
        "gamma_z": gamma_z,
        "note": "all budgets are composition upper bounds, not exact values; "
                "tail_estimate extrapolates beyond T and is not a proved bound",
        "horizons": {
            str(T): {
                "eps_s": list(map(float, rep.eps_s)),
                "eps_theta": list(map(float, rep.eps_theta)),
                "eps_total": list(map(float, rep.eps_total)),
                "tail_estimate": list(map(float, rep.tail_estimate)),
            } for T, rep in reports.items()
        },
    }
    _write_json(out / "budget.json", payload)
    curve = privacy_accounting.budget_curve(series, cfg.schedules, horizons)
    with open(out / "budget_growth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "eps_s", "eps_theta"])
        for row in curve:
            writer.writerow([int(row[0]), f"{row[1]:.17g}", f"{row[2]:.17g}"])
    plotting.render_budget_growth(out / "budget_growth.csv", out / "budget_growth.svg")
    table = "\n".join(
        f"T={T}: max eps_total = {float(np.max(rep.eps_total)):.4g}"
        for T, rep in sorted(reports.items()))
    print(table)
    print(f"wrote {out / 'budget.json'}, budget_growth.csv, budget_growth.svg")
    return EXIT_OK


def cmd_plot(args) -> int:
    csv_path = Path(args.csv)
    out_path = Path(args.out) if args.out else csv_path.with_suffix(".svg")
    columns = args.columns.split(",") if args.columns else None
    plotting.render_metrics(csv_path, out_path, columns=columns, loglog=args.loglog)
    print(f"wrote {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldp-gradtrack",
        description="Locally differentially private gradient tracking simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("run", cmd_run), ("compare", cmd_compare), ("budget", cmd_budget)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--loglog", action="store_true", help="log-log figure axes")
        if name == "budget":
            p.add_argument("--horizons", help="comma-separated horizons, e.g. 1000,2000")
        p.set_defaults(fn=fn)

    p = sub.add_parser("plot")
    p.add_argument("csv", help="metrics CSV to render")
    p.add_argument("--out", help="output SVG path")
    p.add_argument("--columns", help="comma-separated column subset")
    p.add_argument("--loglog", action="store_true")
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        return _fail(EXIT_VALIDATION, "validation", str(exc), exc.details)
    except (DivergenceError, CorruptedStateError) as exc:
        return _fail(EXIT_DIVERGENCE, "divergence", str(exc))
    except ValueError as exc:
        return _fail(EXIT_VALIDATION, "validation", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
