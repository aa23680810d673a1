"""Command-line front-end for the Monte Carlo experiment drivers.

Three subcommands map to the three drivers::

    cranest fig4   --trials 200 --out rmse.csv
    cranest fig5   --trials 200 --out fractions.csv --format json
    cranest single --out record.json --dump-topology topo.txt \
                   --trace-residuals residuals.txt

A config file (``--config``) supplies ``key = value`` experiment settings;
command-line flags override it.  Exit status: 0 on success, 2 on a
configuration/validation problem, 1 on a runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .experiments import (
    default_config,
    emit_results,
    load_config,
    run_fig4_experiment,
    run_fig5_experiment,
    run_single,
    write_json_record,
)

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cranest",
        description="Monte Carlo state-estimation experiments over a simulated cellular uplink.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", metavar="PATH", help="key=value experiment config file")
        p.add_argument("--seed", type=int, metavar="INT", help="master seed (overrides config)")
        p.add_argument("--trials", type=int, metavar="INT", help="trials per sweep point (overrides config)")
        p.add_argument("--out", metavar="PATH", help="result file to write")
        p.add_argument("--format", choices=("csv", "json"), help="result file format (default csv)")

    p4 = sub.add_parser("fig4", help="RMSE vs measurement-noise sweep (boxplot statistics)")
    common(p4)
    p4.add_argument("--n-jobs", type=int, metavar="INT", help="worker processes (default 1)")

    p5 = sub.add_parser("fig5", help="unobservable-fraction sweep over redundancy x receiver density")
    common(p5)
    p5.add_argument("--n-jobs", type=int, metavar="INT", help="worker processes (default 1)")

    p1 = sub.add_parser("single", help="one instrumented trial with full dumps")
    common(p1)
    p1.add_argument("--dump-topology", metavar="PATH", help="write placement + channel dump")
    p1.add_argument("--trace-residuals", metavar="PATH", help="write per-iteration residual trace")
    p1.add_argument("--dump-edges", metavar="PATH", help="write the factor-graph edge list")
    return parser


def _build_config(args):
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != args.experiment:
            raise ValueError(
                f"config file is for experiment {cfg.experiment!r} but the "
                f"{args.experiment!r} subcommand was invoked"
            )
    else:
        cfg = default_config(args.experiment)
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.trials is not None:
        updates["trials"] = args.trials
    if args.out is not None:
        updates["out"] = args.out
    if args.format is not None:
        updates["format"] = args.format
    if getattr(args, "n_jobs", None) is not None:
        updates["n_jobs"] = args.n_jobs
    return replace(cfg, **updates) if updates else cfg


def _summary_path(out: str) -> str:
    p = Path(out)
    return str(p.with_suffix(f".summary{p.suffix or '.csv'}"))


def _run_fig4(cfg) -> int:
    rows, summaries = run_fig4_experiment(cfg)
    if cfg.out:
        emit_results(rows, cfg.out, cfg.format)
        emit_results(summaries, _summary_path(cfg.out), cfg.format)
        print(f"wrote {len(rows)} trial rows to {cfg.out}")
        print(f"wrote {len(summaries)} summaries to {_summary_path(cfg.out)}")
    for s in summaries:
        med = "n/a" if s["median"] is None else f"{s['median']:.6g}"
        print(
            f"sigma_n={s['sigma_n']:g}: median rmse {med} over {s['n_used']}/{s['n_trials']} trials "
            f"({s['n_unobservable']} unobservable, {s['n_nonconverged']} non-converged, "
            f"{s['n_outliers']} outliers)"
        )
    return 0


def _run_fig5(cfg) -> int:
    rows = run_fig5_experiment(cfg)
    if cfg.out:
        emit_results(rows, cfg.out, cfg.format)
        print(f"wrote {len(rows)} grid rows to {cfg.out}")
    for r in rows:
        print(
            f"M/N={r['m_over_n']:g} L/M={r['l_over_m']:g} (M={r['m']}, L={r['l']}): "
            f"unobservable {r['n_unobservable']}/{r['trials']} "
            f"({100.0 * r['fraction_unobservable']:.1f}%)"
        )
    return 0


def _run_single(cfg, args) -> int:
    record = run_single(
        cfg,
        dump_topology_path=args.dump_topology,
        trace_residuals_path=args.trace_residuals,
        dump_edges_path=args.dump_edges,
    )
    if cfg.out:
        write_json_record(record, cfg.out)
        print(f"wrote record to {cfg.out}")
    print(
        f"observable={record['observable']} converged={record['converged']} "
        f"iterations={record['iterations']}"
    )
    if record["max_abs_gbp_vs_oracle"] is not None:
        print(f"max abs difference vs closed-form solve: {record['max_abs_gbp_vs_oracle']:.3e}")
    if record["rmse_printed"] is not None:
        print(f"rmse vs direct-delivery baseline: {record['rmse_printed']:.6g}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _build_config(args)
    except (ValueError, TypeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        if args.experiment == "fig4":
            return _run_fig4(cfg)
        if args.experiment == "fig5":
            return _run_fig5(cfg)
        return _run_single(cfg, args)
    except Exception as err:  # runtime failures exit nonzero, per the CLI contract
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
