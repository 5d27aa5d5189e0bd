"""
Run the five gathering modules in parallel, then assemble the final corpus.

Each module gets its own wall-clock Budget. Modules stop themselves at fetch
boundaries once the budget expires; a watchdog cancels any module still
running at budget + grace and keeps whatever it had collected so far.

Output layout:
    <out>/subcorpora/<module>/<digest>.<ext>
    <out>/corpus/<digest>.<ext>
    <out>/manifest.json
"""

import shutil
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from rich.console import Console
from rich.table import Table

from assembly import (
    CorpusManifest,
    crash_filter,
    merge_and_filter,
    minimize,
    resolve_target,
    select_balanced,
    write_corpus,
)
from bugtracker_search import run_bugtracker_search
from commoncrawl_search import run_commoncrawl_search
from corpus_model import FileTypeSpec, SourceModule, Subcorpus
from exceptions import ConfigError, LlmClientError
from feature_search import run_feature_search
from fixture_server import FixtureServer
from github_search import run_github_search
from http_utils import Budget
from pipeline_config import HARVEST_MODULES, PipelineConfig
from query_gen import LlmClient, OpenAIChatClient, StubLlmClient
from web_search import run_web_search

console = Console(stderr=True)

FIXTURE_URL_PLACEHOLDER = "fixture:"

RUNNERS = {
    SourceModule.GITHUB: run_github_search,
    SourceModule.WEB: run_web_search,
    SourceModule.FEATURE: run_feature_search,
    SourceModule.BUGTRACKER: run_bugtracker_search,
    SourceModule.COMMONCRAWL: run_commoncrawl_search,
}

LLM_MODULES = set(HARVEST_MODULES) - {SourceModule.COMMONCRAWL}

OUTPUT_ENTRIES = ("manifest.json", "corpus", "subcorpora")


@dataclass
class ModuleRun:
    module: SourceModule
    subcorpus: Subcorpus
    status: str = "disabled"
    elapsed: float = 0.0

    def stats(self) -> dict:
        return {"status": self.status, "files": len(self.subcorpus), **self.subcorpus.stats.to_dict()}


@dataclass
class ExitReport:
    corpus_dir: Path
    manifest_path: Path
    modules: dict[SourceModule, ModuleRun]
    summary: dict
    final_count: int
    minimizer_mode: str = "off"
    diagnostics: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.final_count > 0 else 1


class _ModuleThread(threading.Thread):
    def __init__(self, run: ModuleRun, config: PipelineConfig, spec: FileTypeSpec,
                 client: LlmClient, budget: Budget):
        super().__init__(name=f"seedforge-{run.module.value}", daemon=True)
        self.run_state = run
        self.config = config
        self.spec = spec
        self.client = client
        self.budget = budget

    def run(self) -> None:
        state = self.run_state
        started = time.monotonic()
        try:
            RUNNERS[state.module](self.config, self.spec, self.client, self.budget,
                                  collector=state.subcorpus)
            state.status = "budget_exhausted" if self.budget.expired() else "completed"
        except Exception as e:
            state.subcorpus.warn(f"Module failed: {type(e).__name__}: {e}")
            state.status = "failed"
        finally:
            state.elapsed = time.monotonic() - started


def prepare_output(output_dir: Path, force: bool) -> None:
    """Refuse to clobber a previous run unless forced; raises ConfigError."""
    existing = [output_dir / name for name in OUTPUT_ENTRIES if (output_dir / name).exists()]
    if existing and not force:
        raise ConfigError(f"{output_dir} already holds a corpus; use --force to overwrite")
    for path in existing:
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    output_dir.mkdir(parents=True, exist_ok=True)


def make_llm_client(config: PipelineConfig) -> LlmClient:
    if config.fixtures_dir is not None:
        return StubLlmClient(fixtures_dir=Path(config.fixtures_dir) / "llm")
    return OpenAIChatClient(api_key=config.llm.api_key, base_url=config.llm.base_url)


def harvest(config: PipelineConfig, spec: FileTypeSpec, client: LlmClient | None) -> dict[SourceModule, ModuleRun]:
    """Run every enabled module concurrently under its own budget."""
    runs = {module: ModuleRun(module, Subcorpus(module)) for module in HARVEST_MODULES}
    threads: list[tuple[_ModuleThread, float]] = []

    for module in HARVEST_MODULES:
        if module not in config.modules:
            continue
        if client is None and module in LLM_MODULES:
            runs[module].subcorpus.warn("No LLM client available, module skipped")
            runs[module].status = "failed"
            continue
        budget = Budget(config.module_budget)
        thread = _ModuleThread(runs[module], config, spec, client, budget)
        runs[module].status = "running"
        thread.start()
        threads.append((thread, time.monotonic() + config.module_budget + config.grace))

    for thread, deadline in threads:
        thread.join(max(0.0, deadline - time.monotonic()))
        if thread.is_alive():
            thread.budget.cancel()
            state = thread.run_state
            state.status = "cancelled"
            state.elapsed = config.module_budget + config.grace
            state.subcorpus.warn(f"Still running at budget + grace ({state.elapsed:.0f}s); "
                                 "cancelled, keeping partial results")

    # Cancelled modules may still append after this point; freeze what they had.
    for run in runs.values():
        frozen = Subcorpus(run.module)
        frozen.absorb(run.subcorpus)
        run.subcorpus = frozen
    return runs


def write_subcorpora(runs: dict[SourceModule, ModuleRun], output_dir: Path, spec: FileTypeSpec) -> None:
    for module, run in runs.items():
        if run.status == "disabled":
            continue
        write_corpus(run.subcorpus.files, output_dir / "subcorpora" / module.value, spec)


def url_rewriter(base_url: str | None):
    if not base_url:
        return str
    return lambda url: url.replace(base_url, FIXTURE_URL_PLACEHOLDER)


def run_pipeline(config: PipelineConfig, client: LlmClient | None = None) -> ExitReport:
    """Harvest, assemble and write the corpus. Raises ConfigError or TargetMissing before any work."""
    config.validate()
    spec = config.file_type_spec()
    if config.target_cmd:
        resolve_target(config.target_cmd)
    output_dir = Path(config.output_dir)
    prepare_output(output_dir, config.force)

    server = None
    fixture_base = None
    if config.fixtures_dir is not None:
        server = FixtureServer(Path(config.fixtures_dir) / "http", port=config.fixture_port).start()
        fixture_base = server.url
        config = config.with_fixture_endpoints(fixture_base)

    diagnostics: list[str] = []
    if client is None:
        try:
            client = make_llm_client(config)
        except LlmClientError as e:
            console.print(f"[red]{e}[/red]")
            diagnostics.append(str(e))

    try:
        console.print(f"[blue]Gathering seeds for {spec.label} "
                      f"({len(config.modules)} modules, {config.module_budget:.0f}s each)...[/blue]")
        runs = harvest(config, spec, client)
    finally:
        if server is not None:
            server.stop()

    write_subcorpora(runs, output_dir, spec)
    for run in runs.values():
        diagnostics.extend(f"{run.module.value}: {w}" for w in run.subcorpus.warnings)

    manifest = CorpusManifest(
        config_snapshot=config.snapshot(),
        module_stats={module.value: run.stats() for module, run in runs.items()},
    )
    candidates = merge_and_filter([run.subcorpus for run in runs.values()], config.max_file_size, manifest)
    if not candidates:
        diagnostics.append("Every module came back empty; no corpus produced")

    selected = select_balanced(candidates, config.corpus_cap, manifest) if candidates else []
    filtered = crash_filter(
        selected,
        config.target_cmd,
        per_seed_timeout=config.crash_timeout,
        crash_exit_codes=config.crash_exit_codes,
        spec=spec,
        workers=config.minimizer.workers,
        manifest=manifest,
    )
    if filtered.timeouts:
        diagnostics.append(f"{len(filtered.timeouts)} seeds timed out under the target (kept)")
    result = minimize(
        filtered.kept,
        mode=config.minimizer.mode,
        target_cmd=config.target_cmd,
        afl_cmin=config.minimizer.afl_cmin,
        afl_showmap=config.minimizer.afl_showmap,
        per_seed_timeout=config.minimizer.per_seed_timeout,
        spec=spec,
        workers=config.minimizer.workers,
        manifest=manifest,
    )
    if result.warning:
        diagnostics.append(result.warning)

    corpus_dir = output_dir / "corpus"
    write_corpus(result.files, corpus_dir, spec)
    manifest_path = output_dir / "manifest.json"
    manifest.write(manifest_path, url_rewriter(fixture_base))

    report = ExitReport(
        corpus_dir=corpus_dir,
        manifest_path=manifest_path,
        modules=runs,
        summary=manifest.summary(),
        final_count=len(result.files),
        minimizer_mode=result.mode,
        diagnostics=diagnostics,
    )
    if report.exit_code == 0:
        console.print(f"[green]Corpus of {report.final_count} seeds written to {corpus_dir}[/green]")
    else:
        console.print("[bold red]No seeds survived; the corpus is empty[/bold red]")
    return report


def print_exit_report(report: ExitReport) -> None:
    table = Table(title="Seed Corpus Generation")
    table.add_column("Module", style="cyan")
    table.add_column("Status")
    table.add_column("Fetched", justify="right")
    table.add_column("Validated", justify="right")
    table.add_column("Rejected", justify="right")
    table.add_column("Files", justify="right", style="magenta")
    table.add_column("Bytes", justify="right")
    table.add_column("Time", justify="right", style="dim")

    for module, run in report.modules.items():
        stats = run.subcorpus.stats
        table.add_row(
            module.value,
            run.status,
            str(stats.fetched),
            str(stats.validated),
            str(stats.rejected),
            str(len(run.subcorpus)),
            f"{stats.bytes_downloaded:,}",
            f"{run.elapsed:.0f}s" if run.status != "disabled" else "-",
        )
    console.print(table)

    summary = report.summary
    dropped = ", ".join(f"{reason} {count}" for reason, count in summary["dropped"].items() if count)
    console.print(f"\n[bold]Harvested: {summary['harvested']} files ({summary['harvested_bytes']:,} bytes)[/bold]")
    console.print(f"[bold]Dropped:[/bold] {dropped or 'none'}")
    console.print(f"[bold]Final corpus: {report.final_count} seeds[/bold] [dim](minimizer: {report.minimizer_mode})[/dim]")
    console.print(f"[dim]Manifest: {report.manifest_path}[/dim]")

    if report.diagnostics:
        console.print(f"\n[yellow]{len(report.diagnostics)} warnings[/yellow]")
        for message in report.diagnostics[:10]:
            console.print(f"  - {message}")
        if len(report.diagnostics) > 10:
            console.print(f"  ... and {len(report.diagnostics) - 10} more")
