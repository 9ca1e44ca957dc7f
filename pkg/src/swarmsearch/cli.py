"""Command-line front-end: single runs, campaigns, field scans, re-summaries.

Exit code 0 covers any completed invocation, including missions that time out
(a failed search is a result, not an error); nonzero is reserved for real
problems such as bad configs or unreadable files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .campaign import (
    CampaignSummary,
    ConfigError,
    load_mission_config,
    parse_config,
    run_campaign,
    run_scan,
    scan_resolution,
    summarize,
    write_summary,
)
from .mission import run_mission


def resolve_config(name: str) -> Path:
    """Find a config file: a real path first, then the shipped config set."""
    p = Path(name)
    if p.is_file():
        return p
    candidates = [name] if name.endswith(".cfg") else [name, f"{name}.cfg"]
    for cand in candidates:
        builtin = resources.files("swarmsearch").joinpath("configs", cand)
        if builtin.is_file():
            return Path(str(builtin))
    raise ConfigError(f"config file not found: {name} (and no shipped config matches)")


def _print_summary(summary: CampaignSummary) -> None:
    for agg in summary.aggregates():
        print(
            f"{agg.case}: {agg.algorithm} start={agg.start} source={agg.source} "
            f"successes {agg.successes}/{agg.runs} "
            f"min {agg.min_s:.2f} s max {agg.max_s:.2f} s"
        )


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_mission_config(resolve_config(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.parallel:
        cfg = replace(cfg, parallel_decisions=True)
    out = Path(args.out)
    trace_path = out / f"{cfg.name}_seed{cfg.seed}.csv"
    snapshot_dir = out / "snapshots" if args.snapshots else None
    result = run_mission(cfg, trace_path=trace_path, snapshot_dir=snapshot_dir)
    if result.success:
        print(
            f"{cfg.name} ({cfg.algorithm}, seed {cfg.seed}): success at "
            f"{result.mission_time:.2f} s, found by robot {result.finder}"
        )
    else:
        print(
            f"{cfg.name} ({cfg.algorithm}, seed {cfg.seed}): failure, "
            f"no robot within tolerance by {result.mission_time:.2f} s"
        )
    print(f"trace written to {trace_path}")
    return 0


def _cmd_campaign(args: argparse.Namespace) -> int:
    spec = parse_config(resolve_config(args.config))
    if args.seed is not None:
        spec = replace(spec, base_seed=args.seed)
    summary = run_campaign(
        spec,
        out_dir=args.out,
        snapshots=args.snapshots,
        parallel=args.parallel,
        echo=args.verbose,
    )
    _print_summary(summary)
    out = Path(args.out) if args.out else Path(spec.out_dir or f"runs/{spec.name}")
    print(f"summary written to {out / 'summary.csv'}")
    return 0


def _cmd_scan(args: argparse.Namespace) -> int:
    path = resolve_config(args.config)
    cfg = load_mission_config(path)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    resolution = scan_resolution(path)
    out_path = Path(args.out) / f"scan_{cfg.name}.csv"
    run_scan(cfg, resolution, out_path)
    print(f"scan written to {out_path}")
    return 0


def _cmd_summarize(args: argparse.Namespace) -> int:
    summary = summarize(args.traces)
    _print_summary(summary)
    if args.out:
        write_summary(summary, args.out)
        print(f"summary written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmsearch",
        description="Multi-robot acoustic source seeking: missions, campaigns, scans.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a single mission from a [mission] config")
    run_p.add_argument("--config", required=True, help="config file or shipped config name")
    run_p.add_argument("--seed", type=int, default=None, help="override the mission seed")
    run_p.add_argument("--out", default="runs", help="output directory (default: runs)")
    run_p.add_argument("--snapshots", action="store_true", help="write belief snapshots")
    run_p.add_argument("--parallel", action="store_true", help="parallel robot decisions")
    run_p.set_defaults(func=_cmd_run)

    camp_p = sub.add_parser("campaign", help="run every case of a campaign config")
    camp_p.add_argument("--config", required=True, help="config file or shipped config name")
    camp_p.add_argument("--seed", type=int, default=None, help="override the base seed")
    camp_p.add_argument("--out", default=None, help="output directory")
    camp_p.add_argument("--snapshots", action="store_true", help="write belief snapshots")
    camp_p.add_argument("--parallel", action="store_true", help="parallel robot decisions")
    camp_p.add_argument("--verbose", action="store_true", help="print each run as it ends")
    camp_p.set_defaults(func=_cmd_campaign)

    scan_p = sub.add_parser("scan", help="grid-scan the configured field to CSV")
    scan_p.add_argument("--config", required=True, help="config file or shipped config name")
    scan_p.add_argument("--seed", type=int, default=None, help="override the scan seed")
    scan_p.add_argument("--out", default="runs", help="output directory (default: runs)")
    scan_p.set_defaults(func=_cmd_scan)

    summ_p = sub.add_parser("summarize", help="rebuild a summary from trace files")
    summ_p.add_argument("traces", nargs="+", help="mission trace CSV files")
    summ_p.add_argument("--out", default=None, help="also write the summary CSV here")
    summ_p.set_defaults(func=_cmd_summarize)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
