"""
Corpus assembly: merge, size filter, balanced selection, crash filter, minimization.

Every harvested file ends up in the manifest exactly once, either selected or
with the reason it was dropped. Selection is water-filling round-robin: each
module's files are sorted smallest first and one file per module is taken in
turn (fixed module order) until the cap is reached.
"""

import json
import os
import shlex
import shutil
import subprocess
import tempfile
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import jsonschema
from rich.console import Console

from corpus_model import (
    MODULE_ORDER,
    FileTypeSpec,
    SeedFile,
    SourceModule,
    Subcorpus,
    partition_duplicates,
)
from exceptions import MinimizerError, TargetMissing

console = Console(stderr=True)

MIB = 1024 * 1024
DEFAULT_CAP = 40_000
MANIFEST_SCHEMA_VERSION = 1

SANITIZER_ENV = {
    "ASAN_OPTIONS": "abort_on_error=1:symbolize=0:detect_leaks=0",
    "UBSAN_OPTIONS": "halt_on_error=1:abort_on_error=1",
    "MSAN_OPTIONS": "abort_on_error=1",
}


class DropReason(str, Enum):
    OVERSIZE = "oversize"
    DUPLICATE = "duplicate"
    NOT_SELECTED = "not_selected"
    CRASHER = "crasher"
    MINIMIZED_OUT = "minimized_out"


MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "config", "module_stats", "summary", "records"],
    "properties": {
        "schema_version": {"const": MANIFEST_SCHEMA_VERSION},
        "config": {"type": "object"},
        "module_stats": {"type": "object"},
        "summary": {
            "type": "object",
            "required": ["harvested", "selected", "dropped", "harvested_bytes"],
        },
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["digest", "size", "source_module", "origin_url", "selected", "dropped_reason"],
                "properties": {
                    "digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
                    "size": {"type": "integer", "minimum": 0},
                    "source_module": {"enum": [m.value for m in SourceModule]},
                    "origin_url": {"type": "string"},
                    "selected": {"type": "boolean"},
                    "dropped_reason": {"enum": [r.value for r in DropReason] + [None]},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class ManifestRecord:
    digest: str
    size: int
    source_module: SourceModule
    origin_url: str
    dropped_reason: DropReason | None = None

    @property
    def selected(self) -> bool:
        return self.dropped_reason is None

    def to_dict(self, rewrite_url: Callable[[str], str] = str) -> dict:
        return {
            "digest": self.digest,
            "size": self.size,
            "source_module": self.source_module.value,
            "origin_url": rewrite_url(self.origin_url),
            "selected": self.selected,
            "dropped_reason": self.dropped_reason.value if self.dropped_reason else None,
        }


class CorpusManifest:
    """Provenance for one run: one record per harvested file."""

    def __init__(self, config_snapshot: dict | None = None, module_stats: dict | None = None):
        self.config_snapshot = config_snapshot or {}
        self.module_stats = module_stats or {}
        self._reasons: dict[int, DropReason | None] = {}
        self._seeds: dict[int, SeedFile] = {}

    def harvest(self, seeds) -> None:
        for seed in seeds:
            self._seeds[id(seed)] = seed
            self._reasons.setdefault(id(seed), None)

    def drop(self, seeds, reason: DropReason) -> None:
        for seed in seeds:
            self._seeds[id(seed)] = seed
            self._reasons[id(seed)] = reason

    @property
    def records(self) -> list[ManifestRecord]:
        records = [
            ManifestRecord(
                digest=seed.digest,
                size=seed.size_bytes,
                source_module=seed.source_module,
                origin_url=seed.origin_url,
                dropped_reason=self._reasons[key],
            )
            for key, seed in self._seeds.items()
        ]
        return sorted(records, key=lambda r: (r.digest, MODULE_ORDER[r.source_module], r.origin_url))

    def summary(self) -> dict:
        records = self.records
        dropped = {reason.value: 0 for reason in DropReason}
        for record in records:
            if record.dropped_reason is not None:
                dropped[record.dropped_reason.value] += 1
        return {
            "harvested": len(records),
            "selected": sum(1 for r in records if r.selected),
            "dropped": dropped,
            "harvested_bytes": sum(r.size for r in records),
        }

    def to_dict(self, rewrite_url: Callable[[str], str] = str) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "config": self.config_snapshot,
            "module_stats": self.module_stats,
            "summary": self.summary(),
            "records": [r.to_dict(rewrite_url) for r in self.records],
        }

    def write(self, path: Path, rewrite_url: Callable[[str], str] = str) -> None:
        data = self.to_dict(rewrite_url)
        jsonschema.validate(data, MANIFEST_SCHEMA)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")


def load_manifest(path: Path) -> dict:
    with open(path) as f:
        data = json.load(f)
    jsonschema.validate(data, MANIFEST_SCHEMA)
    return data


def merge_files(files: list[SeedFile], max_file_size: int = MIB,
                manifest: CorpusManifest | None = None) -> list[SeedFile]:
    """Dedup (canonical rule), then drop files strictly larger than max_file_size."""
    kept, duplicates = partition_duplicates(files)
    oversize = [seed for seed in kept if seed.size_bytes > max_file_size]
    candidates = [seed for seed in kept if seed.size_bytes <= max_file_size]
    if manifest is not None:
        manifest.harvest(files)
        manifest.drop(duplicates, DropReason.DUPLICATE)
        manifest.drop(oversize, DropReason.OVERSIZE)
    return candidates


def merge_and_filter(subcorpora: list[Subcorpus], max_file_size: int = MIB,
                     manifest: CorpusManifest | None = None) -> list[SeedFile]:
    """Concatenate subcorpora in module order and apply merge_files."""
    ordered = sorted(subcorpora, key=lambda sc: MODULE_ORDER[sc.module])
    files = [seed for subcorpus in ordered for seed in subcorpus.files]
    candidates = merge_files(files, max_file_size, manifest)
    console.print(f"[blue]Merged {len(files)} harvested files into {len(candidates)} candidates[/blue]")
    return candidates


def select_balanced(candidates: list[SeedFile], cap: int = DEFAULT_CAP,
                    manifest: CorpusManifest | None = None) -> list[SeedFile]:
    """Smallest-first selection balanced across modules; output sorted by (size, digest)."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    ordered = sorted(candidates, key=lambda s: s.sort_key)
    if len(ordered) <= cap:
        return ordered

    groups: dict[SourceModule, list[SeedFile]] = {}
    for seed in ordered:
        groups.setdefault(seed.source_module, []).append(seed)
    modules = sorted(groups, key=MODULE_ORDER.__getitem__)

    selected: list[SeedFile] = []
    depth = 0
    while len(selected) < cap:
        for module in modules:
            if depth < len(groups[module]) and len(selected) < cap:
                selected.append(groups[module][depth])
        depth += 1

    if manifest is not None:
        chosen = {id(seed) for seed in selected}
        manifest.drop([seed for seed in ordered if id(seed) not in chosen], DropReason.NOT_SELECTED)
    return sorted(selected, key=lambda s: s.sort_key)


def seed_name(seed: SeedFile, spec: FileTypeSpec | None) -> str:
    return spec.seed_filename(seed.digest) if spec is not None else seed.digest


def materialize(seeds: list[SeedFile], directory: Path, spec: FileTypeSpec | None) -> dict[str, SeedFile]:
    """Write seeds as <digest>.<ext> files; returns filename -> seed."""
    directory.mkdir(parents=True, exist_ok=True)
    names = {}
    for seed in seeds:
        name = seed_name(seed, spec)
        (directory / name).write_bytes(seed.content)
        names[name] = seed
    return names


def resolve_target(target_cmd: str) -> list[str]:
    """Split a target template and check its program exists; raises TargetMissing."""
    argv = shlex.split(target_cmd)
    if not argv:
        raise TargetMissing("Empty target command")
    program = argv[0]
    found = shutil.which(program)
    if found is None and not (Path(program).is_file() and os.access(program, os.X_OK)):
        raise TargetMissing(f"Target program not found or not executable: {program}")
    return argv


def sanitizer_env() -> dict[str, str]:
    env = dict(os.environ)
    for key, value in SANITIZER_ENV.items():
        env.setdefault(key, value)
    return env


class Outcome(str, Enum):
    OK = "ok"
    CRASH = "crash"
    TIMEOUT = "timeout"


def run_target(argv: list[str], seed_path: Path, content: bytes, timeout: float,
               crash_exit_codes: tuple[int, ...] = (), env: dict | None = None) -> Outcome:
    """Run the target once on a seed. `@@` in argv is the seed path, otherwise stdin."""
    uses_file = any("@@" in arg for arg in argv)
    cmd = [arg.replace("@@", str(seed_path)) for arg in argv]
    try:
        proc = subprocess.run(
            cmd,
            input=None if uses_file else content,
            stdin=subprocess.DEVNULL if uses_file else None,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
            timeout=timeout,
            env=env,
        )
    except subprocess.TimeoutExpired:
        return Outcome.TIMEOUT
    if proc.returncode < 0 or proc.returncode in crash_exit_codes:
        return Outcome.CRASH
    return Outcome.OK


@dataclass
class CrashFilterResult:
    kept: list[SeedFile]
    crashers: list[SeedFile] = field(default_factory=list)
    timeouts: list[SeedFile] = field(default_factory=list)


def crash_filter(selected: list[SeedFile], target_cmd: str | None, per_seed_timeout: float = 1.0,
                 crash_exit_codes: tuple[int, ...] = (), spec: FileTypeSpec | None = None,
                 workers: int = 4, manifest: CorpusManifest | None = None) -> CrashFilterResult:
    """Drop seeds that crash the target outright. Timeouts are kept with a warning."""
    if not target_cmd:
        return CrashFilterResult(kept=list(selected))
    argv = resolve_target(target_cmd)
    env = sanitizer_env()

    console.print(f"[blue]Crash-filtering {len(selected)} seeds against {argv[0]}...[/blue]")
    with tempfile.TemporaryDirectory(prefix="seedforge-crash-") as tmp:
        names = materialize(selected, Path(tmp), spec)
        paths = {id(seed): Path(tmp) / name for name, seed in names.items()}

        def check(seed: SeedFile) -> Outcome:
            return run_target(argv, paths[id(seed)], seed.content, per_seed_timeout, crash_exit_codes, env)

        with ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
            outcomes = list(executor.map(check, selected))

    result = CrashFilterResult(kept=[])
    for seed, outcome in zip(selected, outcomes):
        if outcome is Outcome.CRASH:
            result.crashers.append(seed)
            continue
        if outcome is Outcome.TIMEOUT:
            result.timeouts.append(seed)
        result.kept.append(seed)

    if result.timeouts:
        console.print(f"[yellow]{len(result.timeouts)} seeds timed out after {per_seed_timeout}s "
                      "(kept; timeouts are not crashes)[/yellow]")
    if result.crashers:
        console.print(f"[yellow]Dropped {len(result.crashers)} seeds that crash the target[/yellow]")
    if manifest is not None:
        manifest.drop(result.crashers, DropReason.CRASHER)
    return result


def greedy_cover(seeds: list[SeedFile], coverage: dict[str, frozenset[int]]) -> list[SeedFile]:
    """Smallest first, keep a seed iff it reaches an edge no kept seed reached."""
    covered: set[int] = set()
    survivors = []
    for seed in sorted(seeds, key=lambda s: s.sort_key):
        edges = coverage.get(seed.digest, frozenset())
        if edges - covered:
            covered |= edges
            survivors.append(seed)
    return survivors


def parse_showmap(text: str) -> frozenset[int]:
    """Edge ids from afl-showmap output lines of the form `edge:count`."""
    edges = set()
    for line in text.splitlines():
        edge, sep, _ = line.strip().partition(":")
        if sep and edge.isdigit():
            edges.add(int(edge))
    return frozenset(edges)


class ShowmapCoverage:
    """Edge sets from afl-showmap runs of an instrumented target."""

    def __init__(self, target_cmd: str, showmap: str = "afl-showmap", timeout: float = 1.0):
        self.argv = resolve_target(target_cmd)
        if shutil.which(showmap) is None:
            raise MinimizerError(f"{showmap} not found")
        self.showmap = showmap
        self.timeout = timeout

    def __call__(self, seed: SeedFile) -> frozenset[int]:
        uses_file = any("@@" in arg for arg in self.argv)
        with tempfile.TemporaryDirectory(prefix="seedforge-showmap-") as tmp:
            seed_path = Path(tmp) / seed.digest
            seed_path.write_bytes(seed.content)
            map_path = Path(tmp) / "map"
            cmd = [self.showmap, "-q", "-t", str(int(self.timeout * 1000)), "-m", "none",
                   "-o", str(map_path), "--"]
            cmd += [arg.replace("@@", str(seed_path)) for arg in self.argv]
            try:
                subprocess.run(cmd, input=None if uses_file else seed.content,
                               stdin=subprocess.DEVNULL if uses_file else None,
                               stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
                               timeout=self.timeout * 5 + 5, env=sanitizer_env())
            except subprocess.TimeoutExpired as e:
                raise MinimizerError(f"afl-showmap hung on {seed.digest[:12]}") from e
            if not map_path.exists():
                raise MinimizerError(f"afl-showmap wrote no map for {seed.digest[:12]}")
            return parse_showmap(map_path.read_text())


def minimize_internal(seeds: list[SeedFile], coverage: Callable[[SeedFile], frozenset[int]],
                      workers: int = 4) -> list[SeedFile]:
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
        edge_sets = list(executor.map(coverage, seeds))
    bitmaps = {seed.digest: frozenset(edges) for seed, edges in zip(seeds, edge_sets)}
    return greedy_cover(seeds, bitmaps)


def minimize_external(seeds: list[SeedFile], target_cmd: str, afl_cmin: str = "afl-cmin",
                      per_seed_timeout: float = 1.0, spec: FileTypeSpec | None = None) -> list[SeedFile]:
    """Run `afl-cmin -i IN -o OUT -t MS -m none -- target` and read back the survivors."""
    argv = resolve_target(target_cmd)
    if shutil.which(afl_cmin) is None:
        raise MinimizerError(f"{afl_cmin} not found")
    with tempfile.TemporaryDirectory(prefix="seedforge-cmin-") as tmp:
        in_dir, out_dir = Path(tmp) / "in", Path(tmp) / "out"
        names = materialize(seeds, in_dir, spec)
        cmd = [afl_cmin, "-i", str(in_dir), "-o", str(out_dir),
               "-t", str(int(per_seed_timeout * 1000)), "-m", "none", "--", *argv]
        try:
            proc = subprocess.run(cmd, capture_output=True, env=sanitizer_env(),
                                  timeout=max(600.0, len(seeds) * per_seed_timeout * 4))
        except subprocess.TimeoutExpired as e:
            raise MinimizerError("afl-cmin did not finish in time") from e
        if proc.returncode != 0 or not out_dir.is_dir():
            tail = proc.stderr.decode(errors="replace").strip().splitlines()[-1:] or [str(proc.returncode)]
            raise MinimizerError(f"afl-cmin failed: {tail[0]}")
        survivors = [names[p.name] for p in out_dir.iterdir() if p.name in names]
    return sorted(survivors, key=lambda s: s.sort_key)


@dataclass
class MinimizeResult:
    files: list[SeedFile]
    mode: str
    warning: str | None = None


def minimize(selected: list[SeedFile], mode: str = "auto", target_cmd: str | None = None,
             afl_cmin: str = "afl-cmin", afl_showmap: str = "afl-showmap", per_seed_timeout: float = 1.0,
             coverage: Callable[[SeedFile], frozenset[int]] | None = None, spec: FileTypeSpec | None = None,
             workers: int = 4, manifest: CorpusManifest | None = None) -> MinimizeResult:
    """Distill the corpus, failing open: any minimizer failure returns the input unchanged."""
    if not selected or mode == "off":
        return MinimizeResult(files=list(selected), mode="off")

    if mode == "auto":
        if target_cmd and shutil.which(afl_cmin):
            mode = "external"
        elif coverage is not None or (target_cmd and shutil.which(afl_showmap)):
            mode = "internal"
        else:
            console.print("[dim]No minimizer available (need --target and afl-cmin or afl-showmap); "
                          "corpus left unminimized[/dim]")
            return MinimizeResult(files=list(selected), mode="off")

    try:
        if mode == "external":
            if not target_cmd:
                raise MinimizerError("External minimization needs a target command")
            survivors = minimize_external(selected, target_cmd, afl_cmin, per_seed_timeout, spec)
        else:
            if coverage is None:
                if not target_cmd:
                    raise MinimizerError("Internal minimization needs a target command or coverage adapter")
                coverage = ShowmapCoverage(target_cmd, afl_showmap, per_seed_timeout)
            survivors = minimize_internal(selected, coverage, workers)
    except (MinimizerError, TargetMissing, OSError) as e:
        warning = f"Minimization failed ({e}); keeping the unminimized corpus"
        console.print(f"[bold red]WARNING: {warning}[/bold red]")
        return MinimizeResult(files=list(selected), mode=mode, warning=warning)

    if manifest is not None:
        kept = {id(seed) for seed in survivors}
        manifest.drop([seed for seed in selected if id(seed) not in kept], DropReason.MINIMIZED_OUT)
    console.print(f"[green]Minimized {len(selected)} seeds to {len(survivors)} ({mode})[/green]")
    return MinimizeResult(files=survivors, mode=mode)


def write_corpus(files: list[SeedFile], directory: Path, spec: FileTypeSpec | None) -> None:
    materialize(files, directory, spec)
