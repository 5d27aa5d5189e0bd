"""
Pipeline configuration: budgets, caps, per-module settings and credentials.

Credentials come from the environment (optionally a .env file); everything else
comes from CLI flags. `snapshot()` is what the manifest records, so it leaves
out credentials, output paths and anything that changes between otherwise
identical runs.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from dotenv import load_dotenv

from cache_config import CACHE_DIR, USER_AGENT
from corpus_model import FileTypeSpec, SourceModule
from exceptions import ConfigError
from query_gen import DEFAULT_MODELS, ModelParams

MIB = 1024 * 1024

HARVEST_MODULES = (
    SourceModule.GITHUB,
    SourceModule.WEB,
    SourceModule.FEATURE,
    SourceModule.BUGTRACKER,
    SourceModule.COMMONCRAWL,
)

MINIMIZER_MODES = ("auto", "external", "internal", "off")
SEARCH_PROVIDERS = ("google", "serpapi")
ARCHIVE_BACKENDS = ("http", "s3")
TRACKERS = ("launchpad", "bugzilla")


@dataclass
class LlmSettings:
    api_key: str | None = None
    base_url: str | None = None
    temperature: float = 1.0
    max_output_tokens: int = 2048
    models: dict[SourceModule, str] = field(default_factory=lambda: dict(DEFAULT_MODELS))

    def params_for(self, module: SourceModule) -> ModelParams:
        return ModelParams(
            model_name=self.models[module],
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
        )


@dataclass
class GitHubSettings:
    api_base: str = "https://api.github.com"
    token: str | None = None
    query_count: int = 50
    results_per_query: int = 10
    clone_concurrency: int = 4
    clone_size_cap: int = 200 * MIB
    rate_limit_attempts: int = 4
    backoff: float = 2.0
    local_repos: Path | None = None


@dataclass
class WebSettings:
    provider: str = "google"
    engine_url: str | None = None
    api_key: str | None = None
    cx: str | None = None
    query_count: int = 20
    results_per_query: int = 10
    max_depth: int | None = 3
    parallelism: int = 16
    politeness_delay: float = 1.0
    respect_robots: bool = True
    user_agent: str = USER_AGENT


@dataclass
class BugTrackerSettings:
    trackers: tuple[str, ...] = TRACKERS
    launchpad_base: str = "https://api.launchpad.net/devel"
    launchpad_distribution: str = "ubuntu"
    bugzilla_base: str = "https://bugzilla.redhat.com/rest"
    bugzilla_api_key: str | None = None
    query_count: int = 20
    results_per_query: int = 50
    download_workers: int = 8


@dataclass
class CommonCrawlSettings:
    index_base: str = "https://index.commoncrawl.org"
    archive_base: str = "https://data.commoncrawl.org"
    archive_backend: str = "http"
    s3_bucket: str = "commoncrawl"
    crawl_id: str = "CC-MAIN-2025-08"
    per_mime_limit: int = 5000
    url_patterns: tuple[str, ...] = ("*.com", "*.org", "*.net", "*.edu", "*.gov", "*.io", "*.de", "*.uk")
    max_pages_per_pattern: int = 3
    fetch_workers: int = 8
    index_attempts: int = 3
    backoff: float = 2.0


@dataclass
class MinimizerSettings:
    mode: str = "auto"
    afl_cmin: str = "afl-cmin"
    afl_showmap: str = "afl-showmap"
    per_seed_timeout: float = 1.0
    workers: int = field(default_factory=lambda: os.cpu_count() or 4)


@dataclass
class PipelineConfig:
    extension: str | None = None
    description: str | None = None
    mime_types: tuple[str, ...] = ()
    modules: tuple[SourceModule, ...] = HARVEST_MODULES
    module_budget: float = 3600.0
    grace: float = 60.0
    max_file_size: int = MIB
    corpus_cap: int = 40_000
    output_dir: Path = Path("output")
    force: bool = False
    target_cmd: str | None = None
    crash_timeout: float = 1.0
    crash_exit_codes: tuple[int, ...] = ()
    use_cache: bool = True
    cache_dir: Path = CACHE_DIR
    fixtures_dir: Path | None = None
    fixture_port: int = 0
    llm: LlmSettings = field(default_factory=LlmSettings)
    github: GitHubSettings = field(default_factory=GitHubSettings)
    web: WebSettings = field(default_factory=WebSettings)
    bugtracker: BugTrackerSettings = field(default_factory=BugTrackerSettings)
    commoncrawl: CommonCrawlSettings = field(default_factory=CommonCrawlSettings)
    minimizer: MinimizerSettings = field(default_factory=MinimizerSettings)

    def validate(self) -> None:
        if bool(self.extension) == bool(self.description):
            raise ConfigError("Exactly one of --ext or --desc is required")
        if self.module_budget <= 0:
            raise ConfigError(f"Module budget must be positive, got {self.module_budget}")
        if self.grace < 0:
            raise ConfigError(f"Grace period must be non-negative, got {self.grace}")
        if self.corpus_cap <= 0:
            raise ConfigError(f"Corpus cap must be positive, got {self.corpus_cap}")
        if self.max_file_size <= 0:
            raise ConfigError(f"Max file size must be positive, got {self.max_file_size}")
        unknown = [m for m in self.modules if m not in HARVEST_MODULES]
        if unknown:
            raise ConfigError(f"Unknown modules: {', '.join(str(m) for m in unknown)}")
        if self.minimizer.mode not in MINIMIZER_MODES:
            raise ConfigError(f"Minimizer must be one of {', '.join(MINIMIZER_MODES)}")
        if self.web.provider not in SEARCH_PROVIDERS:
            raise ConfigError(f"Search provider must be one of {', '.join(SEARCH_PROVIDERS)}")
        if self.commoncrawl.archive_backend not in ARCHIVE_BACKENDS:
            raise ConfigError(f"Archive backend must be one of {', '.join(ARCHIVE_BACKENDS)}")
        if self.web.max_depth is not None and self.web.max_depth < 0:
            raise ConfigError("Crawl depth must be non-negative")
        bad_trackers = set(self.bugtracker.trackers) - set(TRACKERS)
        if bad_trackers:
            raise ConfigError(f"Unknown trackers: {', '.join(sorted(bad_trackers))}")
        if self.fixtures_dir is not None and not Path(self.fixtures_dir).is_dir():
            raise ConfigError(f"Fixture directory {self.fixtures_dir} does not exist")

    def file_type_spec(self) -> FileTypeSpec:
        if self.description:
            return FileTypeSpec.from_description(self.description, mime_types=self.mime_types)
        return FileTypeSpec.from_extension(self.extension, extra_mime_types=self.mime_types)

    def with_fixture_endpoints(self, base_url: str) -> "PipelineConfig":
        """Point every remote endpoint at a local fixture server."""
        fixtures = Path(self.fixtures_dir)
        return replace(
            self,
            use_cache=False,
            llm=replace(self.llm, api_key=None, base_url=None),
            github=replace(self.github, api_base=f"{base_url}/github", token="fixture",
                           local_repos=fixtures / "repos", backoff=0.01),
            web=replace(self.web, engine_url=f"{base_url}/engine/{self.web.provider}",
                        api_key="fixture", cx="fixture", politeness_delay=0.0),
            bugtracker=replace(self.bugtracker, launchpad_base=f"{base_url}/launchpad/devel",
                               bugzilla_base=f"{base_url}/bugzilla/rest", bugzilla_api_key=None),
            commoncrawl=replace(self.commoncrawl, index_base=f"{base_url}/cc-index",
                                archive_base=f"{base_url}/cc-data", archive_backend="http",
                                backoff=0.01),
        )

    def snapshot(self) -> dict:
        """Reproducible subset of the configuration, recorded in the manifest."""
        return {
            "file_type": self.file_type_spec().snapshot(),
            "modules": [m.value for m in self.modules],
            "module_budget": self.module_budget,
            "grace": self.grace,
            "max_file_size": self.max_file_size,
            "corpus_cap": self.corpus_cap,
            "target_cmd": self.target_cmd,
            "crash_exit_codes": list(self.crash_exit_codes),
            "minimizer": {
                "mode": self.minimizer.mode,
                "per_seed_timeout": self.minimizer.per_seed_timeout,
            },
            "models": {m.value: name for m, name in self.llm.models.items()},
            "temperature": self.llm.temperature,
            "github": {
                "query_count": self.github.query_count,
                "results_per_query": self.github.results_per_query,
                "clone_size_cap": self.github.clone_size_cap,
            },
            "web": {
                "provider": self.web.provider,
                "query_count": self.web.query_count,
                "results_per_query": self.web.results_per_query,
                "max_depth": self.web.max_depth,
                "respect_robots": self.web.respect_robots,
            },
            "bugtracker": {
                "trackers": list(self.bugtracker.trackers),
                "query_count": self.bugtracker.query_count,
                "results_per_query": self.bugtracker.results_per_query,
            },
            "commoncrawl": {
                "crawl_id": self.commoncrawl.crawl_id,
                "per_mime_limit": self.commoncrawl.per_mime_limit,
            },
            "fixture_mode": self.fixtures_dir is not None,
        }


def load_credentials(config: PipelineConfig, env_file: Path | None = None) -> PipelineConfig:
    """Fill API credentials and endpoint overrides from the environment."""
    load_dotenv(env_file)
    env = os.environ
    return replace(
        config,
        llm=replace(config.llm, api_key=env.get("SEEDFORGE_LLM_API_KEY") or config.llm.api_key,
                    base_url=env.get("SEEDFORGE_LLM_BASE_URL") or config.llm.base_url),
        github=replace(config.github, token=env.get("GITHUB_TOKEN") or config.github.token),
        web=replace(config.web,
                    provider=env.get("SEEDFORGE_SEARCH_PROVIDER") or config.web.provider,
                    api_key=env.get("SEEDFORGE_SEARCH_API_KEY") or config.web.api_key,
                    cx=env.get("SEEDFORGE_SEARCH_CX") or config.web.cx),
        bugtracker=replace(config.bugtracker,
                           bugzilla_api_key=env.get("BUGZILLA_API_KEY") or config.bugtracker.bugzilla_api_key),
    )
