#!/usr/bin/env python3
"""
Command-line entry point.

    python seedforge.py gen --ext png [--out DIR] [--target "./fuzzer @@"] ...
    python seedforge.py gen --desc "php_serialize" --mime application/vnd.php.serialized
    python seedforge.py stats --series trials/ --compare llm stock --baseline stock
    python seedforge.py stats --pairs pairs.csv
    python seedforge.py diff run1/manifest.json run2/manifest.json

Exit codes for `gen`: 0 when a non-empty corpus was written, 1 when every
module came back empty, 2 for configuration errors.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import pandas as pd
from rich.console import Console
from tabulate import tabulate

import eval_stats
from corpus_model import SourceModule
from diff_runs import diff_manifests
from exceptions import ConfigError, SeedForgeError, StatsError, TargetMissing
from orchestrator import print_exit_report, run_pipeline
from pipeline_config import (
    ARCHIVE_BACKENDS,
    MINIMIZER_MODES,
    MIB,
    SEARCH_PROVIDERS,
    PipelineConfig,
    load_credentials,
)

console = Console(stderr=True)


def parse_modules(value: str) -> tuple[SourceModule, ...]:
    names = [name.strip() for name in value.split(",") if name.strip()]
    try:
        return tuple(SourceModule(name) for name in names)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seedforge", description="Build fuzzing seed corpora from the web")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a seed corpus")
    target_type = gen.add_mutually_exclusive_group(required=True)
    target_type.add_argument("--ext", help="Target file extension, e.g. png")
    target_type.add_argument("--desc", help="Free-text description of the input format")
    gen.add_argument("--mime", action="append", default=[], help="Extra MIME type (repeatable)")
    gen.add_argument("--out", type=Path, default=Path("output"), help="Output directory")
    gen.add_argument("--module-budget", type=float, default=3600.0, help="Seconds per module")
    gen.add_argument("--grace", type=float, default=60.0, help="Seconds past the budget before cancelling")
    gen.add_argument("--max-file-size", type=int, default=MIB, help="Largest seed kept, in bytes")
    gen.add_argument("--cap", type=int, default=40_000, help="Maximum corpus size before minimization")
    gen.add_argument("--modules", type=parse_modules, default=None,
                     help="Comma-separated subset of github,web,feature,bugtracker,commoncrawl")
    gen.add_argument("--target", help="Target command; @@ is replaced by the seed path, else stdin")
    gen.add_argument("--crash-timeout", type=float, default=1.0, help="Per-seed timeout for crash filtering")
    gen.add_argument("--crash-exit-code", type=int, action="append", default=[],
                     help="Exit status that counts as a crash (repeatable)")
    gen.add_argument("--minimizer", choices=MINIMIZER_MODES, default="auto")
    gen.add_argument("--afl-cmin", default="afl-cmin")
    gen.add_argument("--afl-showmap", default="afl-showmap")
    gen.add_argument("--search-provider", choices=SEARCH_PROVIDERS, default=None)
    gen.add_argument("--archive-backend", choices=ARCHIVE_BACKENDS, default="http")
    gen.add_argument("--crawl-id", default=None, help="Crawl archive snapshot, e.g. CC-MAIN-2025-08")
    gen.add_argument("--no-robots", action="store_true", help="Ignore robots.txt")
    gen.add_argument("--fixtures", type=Path, help="Replay recorded fixtures instead of live endpoints")
    gen.add_argument("--fixture-port", type=int, default=0)
    gen.add_argument("--force", action="store_true", help="Overwrite an existing corpus in --out")
    gen.add_argument("--no-cache", action="store_true", help="Disable the HTTP API cache")
    gen.add_argument("--cache-dir", type=Path, default=None)
    gen.add_argument("--env-file", type=Path, default=None, help="Load credentials from this .env file")

    stats = sub.add_parser("stats", help="Evaluation statistics over trial data")
    stats.add_argument("--series", type=Path, help="Directory of <corpus>/<target>/<trial>.log event logs")
    stats.add_argument("--pairs", type=Path, help="CSV with target,x,y columns")
    stats.add_argument("--compare", nargs=2, action="append", default=[], metavar=("X", "Y"),
                       help="Compare corpus X against corpus Y (repeatable)")
    stats.add_argument("--baseline", help="Corpus whose final coverage normalizes the others")
    stats.add_argument("--direction", choices=eval_stats.DIRECTIONS, default="greater")
    stats.add_argument("--aggregate", choices=("mean", "median"), default="mean",
                       help="How trials are reduced to one value per target before pairing")
    stats.add_argument("--step", type=float, default=3600.0, help="Time grid step for timeseries.csv")
    stats.add_argument("--format", choices=("csv", "json", "table"), default="csv")
    stats.add_argument("--out", type=Path, default=Path("output/stats"))

    diff = sub.add_parser("diff", help="Compare two corpus manifests")
    diff.add_argument("old", type=Path)
    diff.add_argument("new", type=Path)
    diff.add_argument("--report", type=Path, default=None)
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig(
        extension=args.ext,
        description=args.desc,
        mime_types=tuple(args.mime),
        module_budget=args.module_budget,
        grace=args.grace,
        max_file_size=args.max_file_size,
        corpus_cap=args.cap,
        output_dir=args.out,
        force=args.force,
        target_cmd=args.target,
        crash_timeout=args.crash_timeout,
        crash_exit_codes=tuple(args.crash_exit_code),
        use_cache=not args.no_cache,
        fixtures_dir=args.fixtures,
        fixture_port=args.fixture_port,
    )
    if args.modules is not None:
        config = replace(config, modules=args.modules)
    if args.cache_dir is not None:
        config = replace(config, cache_dir=args.cache_dir)
    config = replace(
        config,
        minimizer=replace(config.minimizer, mode=args.minimizer, afl_cmin=args.afl_cmin,
                          afl_showmap=args.afl_showmap),
        commoncrawl=replace(config.commoncrawl, archive_backend=args.archive_backend,
                            crawl_id=args.crawl_id or config.commoncrawl.crawl_id),
        web=replace(config.web, respect_robots=not args.no_robots),
    )
    if args.fixtures is None:
        config = load_credentials(config, args.env_file)
    if args.search_provider:
        config = replace(config, web=replace(config.web, provider=args.search_provider))
    return config


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        config = config_from_args(args)
        report = run_pipeline(config)
    except (ConfigError, TargetMissing) as e:
        console.print(f"[red]Error: {e}[/red]")
        return 2
    print_exit_report(report)
    return report.exit_code


def emit(frame: pd.DataFrame, name: str, out_dir: Path, fmt: str) -> None:
    if fmt == "table":
        console.print(f"\n[bold cyan]{name}[/bold cyan]")
        print(tabulate(frame, headers="keys", tablefmt="github", showindex=False, floatfmt=".4g"))
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.{fmt}"
    if fmt == "csv":
        frame.to_csv(path, index=False)
    else:
        frame.to_json(path, orient="records", indent=2)
    console.print(f"[green]Wrote {path}[/green]")


def cmd_stats(args: argparse.Namespace) -> int:
    if args.series is None and args.pairs is None:
        console.print("[red]Error: stats needs --series DIR and/or --pairs FILE[/red]")
        return 2
    try:
        if args.pairs is not None:
            pairs = eval_stats.load_pairs_file(args.pairs)
            row = eval_stats.wilcoxon_row("x", "y", args.pairs.stem, pairs, args.direction)
            emit(pd.DataFrame([row]), "wilcoxon_pairs", args.out, args.format)

        if args.series is not None:
            series = eval_stats.load_series_dir(args.series)
            emit(eval_stats.summary_table(series), "summary", args.out, args.format)
            emit(eval_stats.timeseries_table(series, args.step), "timeseries", args.out, args.format)
            if args.baseline:
                baseline = [t for t in series if t.corpus == args.baseline]
                if not baseline:
                    raise StatsError(f"No trials found for baseline corpus {args.baseline}")
                normalized = eval_stats.normalize_coverage(series, baseline)
                emit(eval_stats.normalized_table(normalized), "normalized_coverage", args.out, args.format)
            if args.compare:
                comparisons = [tuple(pair) for pair in args.compare]
                table = eval_stats.wilcoxon_table(series, comparisons, args.direction, args.aggregate)
                emit(table, "wilcoxon", args.out, args.format)
    except StatsError as e:
        console.print(f"[red]Error: {e}[/red]")
        return 2
    return 0


def cmd_diff(args: argparse.Namespace) -> int:
    for path in (args.old, args.new):
        if not path.exists():
            console.print(f"[red]File not found: {path}[/red]")
            return 2
    try:
        diff_manifests(args.old, args.new, args.report)
    except (OSError, ValueError, jsonschema.ValidationError) as e:
        console.print(f"[red]Error: {e}[/red]")
        return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    commands = {"gen": cmd_gen, "stats": cmd_stats, "diff": cmd_diff}
    try:
        return commands[args.command](args)
    except SeedForgeError as e:
        console.print(f"[red]Error: {e}[/red]")
        return 2
    except KeyboardInterrupt:
        console.print("[yellow]Interrupted[/yellow]")
        return 130


if __name__ == "__main__":
    sys.exit(main())
