#!/usr/bin/env python3
"""
GitHub Search: find repositories likely to hold target files and sweep them.

For each generated query the repository search API is asked for the top
matches (API relevance order). Every unique repository is shallow-cloned
(depth 1, single branch, no tags, no submodules) and its working tree is
checked file by file with the either-condition rule: extension OR magic number.
"""

import os
import shutil
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import requests
from rich.console import Console

from cache_config import get_api_session
from corpus_model import FileTypeSpec, SeedFile, SourceModule, Subcorpus, validate_file
from exceptions import AuthError, BudgetExhausted, CloneFailure, LlmClientError, RateLimited
from http_utils import Budget, retry_after_seconds, retrying
from pipeline_config import PipelineConfig
from query_gen import LlmClient, gen_github_queries

console = Console(stderr=True)

CLONE_POLL_INTERVAL = 0.5


@dataclass(frozen=True)
class RepoRef:
    full_name: str
    clone_url: str
    matched_query: str
    html_url: str = ""

    @property
    def owner(self) -> str:
        return self.full_name.split("/", 1)[0]

    @property
    def name(self) -> str:
        return self.full_name.split("/", 1)[-1]

    @property
    def web_url(self) -> str:
        return self.html_url or f"https://github.com/{self.full_name}"


class GitHubClient:
    """Repository search over the GitHub REST API."""

    def __init__(self, token: str | None = None, api_base: str = "https://api.github.com",
                 session: requests.Session | None = None, budget: Budget | None = None,
                 attempts: int = 4, backoff: float = 2.0):
        self.api_base = api_base.rstrip("/")
        self.session = session or get_api_session(use_cache=False)
        self.budget = budget or Budget.unlimited()
        self.attempts = attempts
        self.backoff = backoff
        self.headers = {"Accept": "application/vnd.github+json"}
        if token:
            self.headers["Authorization"] = f"Bearer {token}"

    def _get(self, path: str, params: dict) -> dict:
        response = self.session.get(f"{self.api_base}{path}", params=params, headers=self.headers,
                                    timeout=self.budget.timeout())
        if response.status_code in (403, 429) and _is_rate_limited(response):
            error = RateLimited(f"GitHub rate limit hit for {params.get('q')!r}")
            error.retry_after = retry_after_seconds(response)
            raise error
        if response.status_code in (401, 403):
            raise AuthError(f"GitHub rejected the credentials (HTTP {response.status_code})")
        response.raise_for_status()
        return response.json()

    def search_repos(self, query: str, limit: int = 10) -> list[RepoRef]:
        """Top `limit` repositories for a query, in API ranking order."""
        params = {"q": query, "per_page": min(max(limit, 1), 100)}
        data = retrying(RateLimited, self.attempts, self.backoff, self.budget)(
            self._get, "/search/repositories", params
        )
        repos = []
        for item in data.get("items", [])[:limit]:
            full_name = item.get("full_name")
            clone_url = item.get("clone_url")
            if not full_name or not clone_url:
                continue
            repos.append(RepoRef(
                full_name=full_name,
                clone_url=clone_url,
                matched_query=query,
                html_url=item.get("html_url", ""),
            ))
        return repos


def _is_rate_limited(response: requests.Response) -> bool:
    if response.status_code == 429:
        return True
    if response.headers.get("X-RateLimit-Remaining") == "0" or "Retry-After" in response.headers:
        return True
    return "rate limit" in response.text.lower()


def directory_size(path: Path) -> int:
    total = 0
    for root, _, files in os.walk(path):
        for name in files:
            try:
                total += os.lstat(os.path.join(root, name)).st_size
            except OSError:
                pass
    return total


class GitCloner:
    """Shallow clone with `git`, killed when it outgrows the size cap or the budget."""

    def __init__(self, size_cap: int = 200 * 1024 * 1024, git: str = "git"):
        self.size_cap = size_cap
        self.git = git

    def clone(self, repo: RepoRef, dest: Path, budget: Budget) -> None:
        if shutil.which(self.git) is None:
            raise CloneFailure(f"git executable '{self.git}' not found")
        cmd = [self.git, "clone", "--depth", "1", "--single-branch", "--no-tags", "--quiet",
               repo.clone_url, str(dest)]
        env = {**os.environ, "GIT_TERMINAL_PROMPT": "0"}
        with tempfile.TemporaryFile() as stderr:
            proc = subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=stderr, env=env)
            try:
                while proc.poll() is None:
                    if budget.expired():
                        raise BudgetExhausted(f"Budget ran out while cloning {repo.full_name}")
                    if dest.exists() and directory_size(dest) > self.size_cap:
                        raise CloneFailure(f"{repo.full_name} exceeds the {self.size_cap} byte clone cap")
                    budget.sleep(CLONE_POLL_INTERVAL)
            finally:
                if proc.poll() is None:
                    proc.kill()
                    proc.wait()
            if proc.returncode != 0:
                stderr.seek(0)
                message = stderr.read().decode(errors="replace").strip().splitlines()
                raise CloneFailure(f"git clone {repo.full_name} failed: {message[-1] if message else proc.returncode}")


class LocalTreeCloner:
    """Copies `<root>/<owner>/<name>` instead of cloning; used by fixture mode."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def clone(self, repo: RepoRef, dest: Path, budget: Budget) -> None:
        budget.check()
        source = self.root / repo.owner / repo.name
        if not source.is_dir():
            raise CloneFailure(f"No fixture tree for {repo.full_name}")
        shutil.copytree(source, dest, symlinks=True)


def harvest_repo(repo: RepoRef, spec: FileTypeSpec, budget: Budget, cloner,
                 max_file_size: int = 1024 * 1024) -> Subcorpus:
    """Clone one repository and keep every working-tree file that validates.

    Raises CloneFailure when the clone fails. A budget that runs out mid-sweep
    ends the sweep and returns what was found so far.
    """
    fragment = Subcorpus(SourceModule.GITHUB)
    workdir = Path(tempfile.mkdtemp(prefix="seedforge-clone-"))
    tree = workdir / "tree"
    try:
        try:
            cloner.clone(repo, tree, budget)
        except BudgetExhausted as e:
            fragment.warn(str(e))
            return fragment
        fragment.count(bytes_downloaded=directory_size(tree))

        paths = sorted(p for p in tree.rglob("*") if ".git" not in p.relative_to(tree).parts)
        for path in paths:
            if path.is_symlink() or not path.is_file():
                continue
            if budget.expired():
                fragment.warn(f"Budget ran out while sweeping {repo.full_name}; keeping partial results")
                break
            relative = path.relative_to(tree).as_posix()
            fragment.count(fetched=1)
            if path.stat().st_size > max_file_size:
                fragment.count(rejected=1)
                continue
            content = path.read_bytes()
            result = validate_file(content, relative, spec)
            if not result.accepted:
                fragment.count(rejected=1)
                continue
            fragment.count(validated=1)
            fragment.add(SeedFile.create(
                content=content,
                source_module=SourceModule.GITHUB,
                origin_url=f"{repo.web_url}/blob/HEAD/{relative}",
                validation=result.rule,
            ))
    finally:
        shutil.rmtree(workdir, ignore_errors=True)
    return fragment


def make_cloner(config: PipelineConfig):
    if config.github.local_repos is not None:
        return LocalTreeCloner(config.github.local_repos)
    return GitCloner(size_cap=config.github.clone_size_cap)


def collect_repos(client: GitHubClient, queries, limit: int, budget: Budget,
                  subcorpus: Subcorpus) -> list[RepoRef]:
    """Run each query and return unique repositories in first-seen order."""
    repos: dict[str, RepoRef] = {}
    for query in queries:
        if budget.expired():
            subcorpus.warn("Budget ran out during repository search")
            break
        try:
            hits = client.search_repos(query, limit)
        except RateLimited as e:
            subcorpus.warn(f"{e}; skipping query")
            continue
        except requests.RequestException as e:
            subcorpus.warn(f"Search failed for {query!r}: {e}")
            continue
        for repo in hits:
            repos.setdefault(repo.full_name.lower(), repo)
    return list(repos.values())


def run_github_search(config: PipelineConfig, spec: FileTypeSpec, client: LlmClient, budget: Budget,
                      collector: Subcorpus | None = None, cloner=None) -> Subcorpus:
    subcorpus = collector or Subcorpus(SourceModule.GITHUB)

    console.print("[blue]github: generating repository search queries...[/blue]")
    try:
        plan = gen_github_queries(spec, client, config.llm.params_for(SourceModule.GITHUB),
                                  config.github.query_count)
    except LlmClientError as e:
        subcorpus.warn(f"Query generation failed, module aborted: {e}")
        return subcorpus
    for warning in plan.warnings:
        subcorpus.note(warning)

    github = GitHubClient(
        token=config.github.token,
        api_base=config.github.api_base,
        session=get_api_session(config.use_cache, cache_dir=config.cache_dir),
        budget=budget,
        attempts=config.github.rate_limit_attempts,
        backoff=config.github.backoff,
    )
    try:
        repos = collect_repos(github, plan.queries, config.github.results_per_query, budget, subcorpus)
    except AuthError as e:
        subcorpus.warn(f"{e}; module aborted")
        return subcorpus
    console.print(f"[blue]github: {len(repos)} unique repositories from {len(plan)} queries[/blue]")

    cloner = cloner or make_cloner(config)
    started = time.monotonic()
    with ThreadPoolExecutor(max_workers=config.github.clone_concurrency) as executor:
        futures = {
            executor.submit(harvest_repo, repo, spec, budget, cloner, config.max_file_size): repo
            for repo in repos
        }
        for future in as_completed(futures):
            repo = futures[future]
            try:
                fragment = future.result()
            except CloneFailure as e:
                subcorpus.warn(f"Skipped {repo.full_name}: {e}")
                continue
            except OSError as e:
                subcorpus.warn(f"Skipped {repo.full_name}: {e}")
                continue
            subcorpus.absorb(fragment)
            console.print(f"[dim]github: {repo.full_name} -> {len(fragment)} files[/dim]")

    console.print(f"[green]github: {len(subcorpus)} files from {len(repos)} repositories "
                  f"in {time.monotonic() - started:.0f}s[/green]")
    return subcorpus
