#!/usr/bin/env python3
"""
Compare two generated corpora by their manifests.

Model output is nondeterministic, so every fuzzing trial gets a freshly
generated corpus. This shows how much two of them actually differ.

Usage:
    python diff_runs.py output_a/manifest.json output_b/manifest.json
    python seedforge.py diff output_a/manifest.json output_b/manifest.json
"""

import json
import sys
from pathlib import Path

from rich.console import Console
from rich.table import Table

from assembly import load_manifest
from corpus_model import MODULE_ORDER

console = Console()

LISTED = 20


def selected_digests(manifest: dict) -> dict[str, dict]:
    return {r["digest"]: r for r in manifest["records"] if r["selected"]}


def module_counts(manifest: dict) -> dict[str, int]:
    counts = {module.value: 0 for module in MODULE_ORDER}
    for record in manifest["records"]:
        if record["selected"]:
            counts[record["source_module"]] += 1
    return counts


def compare_manifests(old: dict, new: dict) -> dict:
    old_selected = selected_digests(old)
    new_selected = selected_digests(new)
    added = sorted(set(new_selected) - set(old_selected))
    removed = sorted(set(old_selected) - set(new_selected))

    old_counts = module_counts(old)
    new_counts = module_counts(new)
    return {
        "added": [{"digest": d, "source_module": new_selected[d]["source_module"],
                   "origin_url": new_selected[d]["origin_url"]} for d in added],
        "removed": [{"digest": d, "source_module": old_selected[d]["source_module"],
                     "origin_url": old_selected[d]["origin_url"]} for d in removed],
        "unchanged_count": len(set(old_selected) & set(new_selected)),
        "module_changes": {
            module: {"old": old_counts[module], "new": new_counts[module]}
            for module in old_counts
            if old_counts[module] or new_counts[module]
        },
        "summary_changes": {
            key: {"old": old["summary"][key], "new": new["summary"][key]}
            for key in ("harvested", "selected", "harvested_bytes")
        },
    }


def _change(old: int, new: int) -> str:
    change = new - old
    return f"+{change}" if change > 0 else str(change)


def display_diff(diff: dict) -> None:
    table = Table(title="Corpus Changes")
    table.add_column("Metric", style="cyan")
    table.add_column("Previous", style="yellow")
    table.add_column("Current", style="green")
    table.add_column("Change", style="magenta")

    for metric, values in diff["summary_changes"].items():
        table.add_row(metric.replace("_", " ").title(), str(values["old"]), str(values["new"]),
                      _change(values["old"], values["new"]))
    for module, values in diff["module_changes"].items():
        table.add_row(f"Selected from {module}", str(values["old"]), str(values["new"]),
                      _change(values["old"], values["new"]))
    console.print(table)

    console.print(f"\n[bold]Seeds in both corpora: {diff['unchanged_count']}[/bold]")
    for title, key, style, mark in (("ADDED", "added", "green", "+"), ("REMOVED", "removed", "red", "-")):
        entries = diff[key]
        if not entries:
            continue
        console.print(f"\n[bold {style}]{title} ({len(entries)}):[/bold {style}]")
        for entry in entries[:LISTED]:
            console.print(f"  {mark} {entry['digest'][:16]} [dim]{entry['source_module']} {entry['origin_url']}[/dim]")
        if len(entries) > LISTED:
            console.print(f"  ... and {len(entries) - LISTED} more")

    if not diff["added"] and not diff["removed"]:
        console.print("\n[bold green]Selected seeds are identical[/bold green]")


def diff_manifests(old_file: Path, new_file: Path, report_path: Path | None = None) -> dict:
    console.print("[blue]Comparing:[/blue]")
    console.print(f"  Old: {old_file}")
    console.print(f"  New: {new_file}")

    diff = compare_manifests(load_manifest(old_file), load_manifest(new_file))
    display_diff(diff)

    report_path = report_path or new_file.parent / "diff_report.json"
    with open(report_path, "w") as f:
        json.dump(diff, f, indent=2)
    console.print(f"\n[green]Diff report saved to {report_path}[/green]")
    return diff


def main():
    if len(sys.argv) != 3:
        console.print("Usage: python diff_runs.py OLD_MANIFEST NEW_MANIFEST")
        return 2
    old_file, new_file = Path(sys.argv[1]), Path(sys.argv[2])
    for path in (old_file, new_file):
        if not path.exists():
            console.print(f"[red]File not found: {path}[/red]")
            return 2
    diff_manifests(old_file, new_file)
    return 0


if __name__ == "__main__":
    sys.exit(main())
