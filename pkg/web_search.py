#!/usr/bin/env python3
"""
Web Search: search-engine queries followed by a breadth-first crawl.

The engine returns result pages for each generated query; the crawler then
downloads every result and follows hyperlinks (anchors, images, embeds,
stylesheets, frames) level by level. Any response whose URL extension,
Content-Type or leading bytes match the target is a candidate and goes through
validate_file. HTML pages are parsed for more links until the depth limit.

The same crawler backs Feature-driven Web Search with the depth limit removed.
"""

import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from urllib.parse import urldefrag, urljoin, urlsplit, urlunsplit
from urllib.robotparser import RobotFileParser

import requests
from bs4 import BeautifulSoup
from rich.console import Console

from cache_config import USER_AGENT, get_api_session, get_session
from corpus_model import FileTypeSpec, SeedFile, SourceModule, Subcorpus, extension_of, validate_file
from exceptions import BudgetExhausted, LlmClientError, OversizeResponse, QuotaExceeded
from http_utils import Budget, read_capped
from pipeline_config import PipelineConfig
from query_gen import LlmClient, gen_web_queries

console = Console(stderr=True)

ENGINE_ENDPOINTS = {
    "google": "https://www.googleapis.com/customsearch/v1",
    "serpapi": "https://serpapi.com/search.json",
}
GOOGLE_PAGE_SIZE = 10

HTML_TYPES = ("text/html", "application/xhtml+xml")

LINK_ATTRIBUTES = (
    ("a", "href"),
    ("area", "href"),
    ("link", "href"),
    ("img", "src"),
    ("source", "src"),
    ("video", "src"),
    ("audio", "src"),
    ("embed", "src"),
    ("object", "data"),
    ("iframe", "src"),
)

QUOTA_MARKERS = ("quota", "ratelimitexceeded", "dailylimitexceeded", "run out of searches")


class SearchEngine(ABC):
    @abstractmethod
    def search(self, query: str, limit: int = 10) -> list[str]:
        """Result URLs for a query in engine order."""
        ...


class JsonApiSearchEngine(SearchEngine):
    """Google Programmable Search or SerpAPI, both plain JSON over HTTP."""

    def __init__(self, provider: str, api_key: str | None, cx: str | None = None,
                 endpoint: str | None = None, session: requests.Session | None = None,
                 budget: Budget | None = None):
        if provider not in ENGINE_ENDPOINTS:
            raise ValueError(f"Unknown search provider: {provider}")
        self.provider = provider
        self.api_key = api_key
        self.cx = cx
        self.endpoint = endpoint or ENGINE_ENDPOINTS[provider]
        self.session = session or get_api_session(use_cache=False)
        self.budget = budget or Budget.unlimited()

    def _params(self, query: str, limit: int, offset: int) -> dict:
        if self.provider == "google":
            return {"q": query, "key": self.api_key, "cx": self.cx,
                    "num": min(limit - offset, GOOGLE_PAGE_SIZE), "start": offset + 1}
        return {"engine": "google", "q": query, "api_key": self.api_key, "num": limit}

    def _links(self, data: dict) -> list[str]:
        items = data.get("items", []) if self.provider == "google" else data.get("organic_results", [])
        return [item["link"] for item in items if isinstance(item, dict) and item.get("link")]

    def _fetch(self, params: dict) -> dict:
        response = self.session.get(self.endpoint, params=params, timeout=self.budget.timeout())
        if response.status_code == 429:
            raise QuotaExceeded(f"{self.provider}: HTTP 429")
        if response.status_code == 403 and any(m in response.text.lower() for m in QUOTA_MARKERS):
            raise QuotaExceeded(f"{self.provider}: daily quota used up")
        response.raise_for_status()
        return response.json()

    def search(self, query: str, limit: int = 10) -> list[str]:
        urls: list[str] = []
        while len(urls) < limit:
            links = self._links(self._fetch(self._params(query, limit, len(urls))))
            fresh = [link for link in links if link not in urls]
            urls.extend(fresh)
            if self.provider != "google" or not fresh or len(links) < GOOGLE_PAGE_SIZE:
                break
        return urls[:limit]


def make_engine(config: PipelineConfig, budget: Budget) -> JsonApiSearchEngine:
    return JsonApiSearchEngine(
        provider=config.web.provider,
        api_key=config.web.api_key,
        cx=config.web.cx,
        endpoint=config.web.engine_url,
        session=get_api_session(config.use_cache, cache_dir=config.cache_dir),
        budget=budget,
    )


def search_all(engine: SearchEngine, queries, limit: int, budget: Budget,
               subcorpus: Subcorpus) -> list[str]:
    """Run queries in order; a quota error stops further queries but keeps earlier results."""
    seeds: dict[str, None] = {}
    for query in queries:
        if budget.expired():
            subcorpus.warn("Budget ran out during engine search")
            break
        try:
            results = engine.search(query, limit)
        except QuotaExceeded as e:
            subcorpus.warn(f"Search quota exceeded ({e}); crawling {len(seeds)} URLs found so far")
            break
        except (requests.RequestException, ValueError) as e:
            subcorpus.warn(f"Search failed for {query!r}: {e}")
            continue
        for url in results:
            seeds.setdefault(url, None)
    return list(seeds)


def canonicalize_url(url: str) -> str:
    """Scheme and host lowercased, default port and fragment dropped, empty path as '/'."""
    url, _ = urldefrag(url.strip())
    parts = urlsplit(url)
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    port = parts.port
    if port and not ((scheme == "http" and port == 80) or (scheme == "https" and port == 443)):
        host = f"{host}:{port}"
    return urlunsplit((scheme, host, parts.path or "/", parts.query, ""))


def extract_links(html: bytes, base_url: str) -> list[str]:
    soup = BeautifulSoup(html, "lxml")
    base = soup.find("base", href=True)
    if base is not None:
        base_url = urljoin(base_url, base["href"].strip())

    links: dict[str, None] = {}
    for tag, attr in LINK_ATTRIBUTES:
        for element in soup.find_all(tag):
            value = element.get(attr)
            if not value or not isinstance(value, str):
                continue
            url, _ = urldefrag(urljoin(base_url, value.strip()))
            if urlsplit(url).scheme in ("http", "https"):
                links.setdefault(url, None)
    return list(links)


class CrawlFrontier:
    """Shared BFS queue with a visited set and per-host politeness slots.

    URLs are marked visited when enqueued, so none is fetched twice. Each host
    hands out fetch slots at least `politeness_delay` seconds apart. The crawl is
    over when the queue is empty and no worker is still processing a page.
    """

    def __init__(self, max_depth: int | None, politeness_delay: float = 1.0, clock=time.monotonic):
        self.max_depth = max_depth
        self.politeness_delay = politeness_delay
        self._clock = clock
        self._queue: deque[tuple[str, int]] = deque()
        self._visited: set[str] = set()
        self._next_slot: dict[str, float] = {}
        self._in_flight = 0
        self._cond = threading.Condition()

    def push(self, url: str, depth: int) -> bool:
        if self.max_depth is not None and depth > self.max_depth:
            return False
        canonical = canonicalize_url(url)
        with self._cond:
            if canonical in self._visited:
                return False
            self._visited.add(canonical)
            self._queue.append((canonical, depth))
            self._cond.notify()
        return True

    def pop(self, budget: Budget) -> tuple[str, int] | None:
        """Next (url, depth), or None when the crawl is finished or out of budget."""
        with self._cond:
            while True:
                if budget.expired():
                    self._cond.notify_all()
                    return None
                if self._queue:
                    url, depth = self._queue.popleft()
                    self._in_flight += 1
                    break
                if self._in_flight == 0:
                    self._cond.notify_all()
                    return None
                self._cond.wait(timeout=min(0.5, budget.remaining()))
        budget.sleep(self.reserve(urlsplit(url).netloc))
        return url, depth

    def reserve(self, host: str) -> float:
        """Claim the host's next fetch slot; returns how long to wait for it."""
        with self._cond:
            now = self._clock()
            slot = max(now, self._next_slot.get(host, now))
            self._next_slot[host] = slot + self.politeness_delay
        return slot - now

    def done(self) -> None:
        with self._cond:
            self._in_flight -= 1
            self._cond.notify_all()

    def can_expand(self, depth: int) -> bool:
        return self.max_depth is None or depth < self.max_depth

    @property
    def visited_count(self) -> int:
        with self._cond:
            return len(self._visited)


class RobotsCache:
    """robots.txt per origin. Missing or unreadable files allow everything."""

    def __init__(self, session: requests.Session, user_agent: str, budget: Budget):
        self.session = session
        self.user_agent = user_agent
        self.budget = budget
        self._parsers: dict[str, Future] = {}
        self._lock = threading.Lock()

    def allowed(self, url: str) -> bool:
        parts = urlsplit(url)
        origin = f"{parts.scheme}://{parts.netloc}"
        with self._lock:
            pending = self._parsers.get(origin)
            owner = pending is None
            if owner:
                pending = self._parsers[origin] = Future()
        if owner:
            # only callers for this origin wait on the fetch
            try:
                pending.set_result(self._fetch(origin))
            except BaseException as e:
                pending.set_exception(e)
                with self._lock:
                    self._parsers.pop(origin, None)
                raise
        return pending.result().can_fetch(self.user_agent, url)

    def _fetch(self, origin: str) -> RobotFileParser:
        parser = RobotFileParser(f"{origin}/robots.txt")
        try:
            response = self.session.get(f"{origin}/robots.txt", timeout=self.budget.timeout(10))
        except requests.RequestException:
            parser.allow_all = True
            return parser
        if response.status_code in (401, 403):
            parser.disallow_all = True
        elif response.status_code >= 400:
            parser.allow_all = True
        else:
            parser.parse(response.text.splitlines())
        return parser


class Crawler:
    """Breadth-first crawler feeding one Subcorpus from a pool of fetch workers."""

    def __init__(self, spec: FileTypeSpec, module: SourceModule, budget: Budget,
                 max_file_size: int = 1024 * 1024, max_depth: int | None = 3,
                 parallelism: int = 16, politeness_delay: float = 1.0, respect_robots: bool = True,
                 user_agent: str | None = None, session: requests.Session | None = None,
                 collector: Subcorpus | None = None):
        self.spec = spec
        self.budget = budget
        self.max_file_size = max_file_size
        self.max_depth = max_depth
        self.parallelism = parallelism
        self.politeness_delay = politeness_delay
        self.session = session or get_session(user_agent or USER_AGENT, pool_size=parallelism)
        self.robots = None
        if respect_robots:
            self.robots = RobotsCache(self.session, self.session.headers.get("User-Agent", "*"), budget)
        self.subcorpus = collector or Subcorpus(module)

    def crawl(self, seeds: list[str]) -> Subcorpus:
        frontier = CrawlFrontier(self.max_depth, self.politeness_delay)
        for url in seeds:
            frontier.push(url, 0)
        label = self.subcorpus.module.value
        console.print(f"[blue]{label}: crawling from {len(seeds)} seed URLs "
                      f"(depth {'unbounded' if self.max_depth is None else self.max_depth})[/blue]")

        with ThreadPoolExecutor(max_workers=self.parallelism) as executor:
            futures = [executor.submit(self._worker, frontier) for _ in range(self.parallelism)]
            for future in as_completed(futures):
                try:
                    future.result()
                except Exception as e:
                    self.subcorpus.warn(f"Crawl worker failed: {e}")

        if self.budget.expired():
            self.subcorpus.warn("Budget ran out; crawl stopped with partial results")
        console.print(f"[green]{label}: visited {frontier.visited_count} URLs, "
                      f"kept {len(self.subcorpus)} files[/green]")
        return self.subcorpus

    def _worker(self, frontier: CrawlFrontier) -> None:
        while True:
            item = frontier.pop(self.budget)
            if item is None:
                return
            url, depth = item
            try:
                self.visit(url, depth, frontier)
            except (requests.RequestException, OversizeResponse, BudgetExhausted) as e:
                console.print(f"[dim]{self.subcorpus.module.value}: {url}: {e}[/dim]")
            finally:
                frontier.done()

    def _is_candidate(self, url: str, content_type: str, is_html: bool) -> bool:
        if self.spec.is_description:
            return not is_html
        return extension_of(url) in self.spec.extensions or self.spec.matches_mime(content_type)

    def visit(self, url: str, depth: int, frontier: CrawlFrontier) -> None:
        if self.robots is not None and not self.robots.allowed(url):
            console.print(f"[dim]robots.txt disallows {url}[/dim]")
            return

        response = self.session.get(url, stream=True, timeout=self.budget.timeout())
        if response.status_code != 200:
            response.close()
            return
        content_type = response.headers.get("Content-Type", "")
        is_html = content_type.split(";", 1)[0].strip().lower() in HTML_TYPES
        by_headers = self._is_candidate(url, content_type, is_html)

        # Without magic signatures the body cannot promote a non-candidate.
        if not is_html and not by_headers and not self.spec.magic_signatures:
            response.close()
            self.subcorpus.count(fetched=1, rejected=1)
            return

        head_check = None if is_html or by_headers else self.spec.matches_magic
        try:
            body = read_capped(response, self.max_file_size, self.budget,
                               accept_head=head_check, head_length=self.spec.magic_length)
        except OversizeResponse:
            if is_html:
                self.subcorpus.warn(f"HTML page over {self.max_file_size} bytes, links not followed: {url}")
            raise
        if body is None:
            self.subcorpus.count(fetched=1, rejected=1, bytes_downloaded=self.spec.magic_length)
            return
        self.subcorpus.count(fetched=1, bytes_downloaded=len(body))

        if by_headers or (not self.spec.is_description and self.spec.matches_magic(body)):
            result = validate_file(body, url, self.spec)
            if result.accepted:
                self.subcorpus.count(validated=1)
                self.subcorpus.add(SeedFile.create(
                    content=body,
                    source_module=self.subcorpus.module,
                    origin_url=url,
                    validation=result.rule,
                ))
            else:
                self.subcorpus.count(rejected=1)
        elif not is_html:
            self.subcorpus.count(rejected=1)

        if is_html and frontier.can_expand(depth):
            for link in extract_links(body, url):
                frontier.push(link, depth + 1)


def crawl(seeds: list[str], spec: FileTypeSpec, budget: Budget, config: PipelineConfig,
          module: SourceModule = SourceModule.WEB, max_depth: int | None = 3,
          collector: Subcorpus | None = None) -> Subcorpus:
    crawler = Crawler(
        spec=spec,
        module=module,
        budget=budget,
        max_file_size=config.max_file_size,
        max_depth=max_depth,
        parallelism=config.web.parallelism,
        politeness_delay=config.web.politeness_delay,
        respect_robots=config.web.respect_robots,
        user_agent=config.web.user_agent,
        collector=collector,
    )
    return crawler.crawl(seeds)


def run_web_search(config: PipelineConfig, spec: FileTypeSpec, client: LlmClient, budget: Budget,
                   collector: Subcorpus | None = None, engine: SearchEngine | None = None) -> Subcorpus:
    subcorpus = collector or Subcorpus(SourceModule.WEB)

    console.print("[blue]web: generating search queries...[/blue]")
    try:
        plan = gen_web_queries(spec, client, config.llm.params_for(SourceModule.WEB),
                               config.web.query_count)
    except LlmClientError as e:
        subcorpus.warn(f"Query generation failed, module aborted: {e}")
        return subcorpus
    for warning in plan.warnings:
        subcorpus.note(warning)

    engine = engine or make_engine(config, budget)
    seeds = search_all(engine, plan.queries, config.web.results_per_query, budget, subcorpus)
    console.print(f"[blue]web: {len(seeds)} result URLs from {len(plan)} queries[/blue]")
    return crawl(seeds, spec, budget, config, SourceModule.WEB, config.web.max_depth, subcorpus)
