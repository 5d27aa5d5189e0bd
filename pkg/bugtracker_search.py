#!/usr/bin/env python3
"""
Bug Tracker Search: reproducer attachments from public bug trackers.

Crash reports often carry the input that triggered the bug. Generated
queries are run against Ubuntu Launchpad and Red Hat Bugzilla; attachments of
the matching reports are downloaded and kept when their filename extension or
magic number matches the target.

Both trackers sit behind TrackerClient, so another tracker only needs a new
client class.
"""

import base64
import binascii
import json
import re
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from enum import Enum

import requests
from rich.console import Console

from cache_config import get_session
from corpus_model import FileTypeSpec, SeedFile, SourceModule, Subcorpus, validate_file
from exceptions import BudgetExhausted, LlmClientError, OversizeResponse, TrackerError
from http_utils import Budget, read_capped
from pipeline_config import PipelineConfig
from query_gen import LlmClient, gen_bugtracker_queries

console = Console(stderr=True)

BUGZILLA_PAGE_SIZE = 25
LAUNCHPAD_PAGE_SIZE = 75


class Tracker(str, Enum):
    LAUNCHPAD = "launchpad"
    BUGZILLA = "bugzilla"


@dataclass(frozen=True)
class AttachmentRef:
    attachment_id: str
    filename: str
    mime_type: str
    size: int | None
    download_url: str

    def __post_init__(self):
        if self.size is not None and self.size < 0:
            raise ValueError(f"Attachment {self.attachment_id} has negative size {self.size}")


@dataclass(frozen=True)
class BugReportRef:
    tracker: Tracker
    bug_id: str
    title: str
    url: str
    attachments: tuple[AttachmentRef, ...] = ()


class TrackerClient(ABC):
    tracker: Tracker

    def __init__(self, base_url: str, session: requests.Session | None = None,
                 budget: Budget | None = None):
        self.base_url = base_url.rstrip("/")
        self.session = session or get_session()
        self.budget = budget or Budget.unlimited()

    def _get_json(self, url: str, params: dict | None = None, headers: dict | None = None) -> dict:
        self.budget.check()
        try:
            response = self.session.get(url, params=params, headers=headers, timeout=self.budget.timeout())
        except requests.RequestException as e:
            raise TrackerError(f"{self.tracker.value}: {url}: {e}") from e
        if response.status_code >= 400:
            raise TrackerError(f"{self.tracker.value}: {url}: HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as e:
            raise TrackerError(f"{self.tracker.value}: {url}: invalid JSON") from e

    @abstractmethod
    def search(self, query: str, limit: int = 50) -> list[BugReportRef]:
        """Bug reports matching the query, with attachment metadata filled in."""
        ...

    @abstractmethod
    def download(self, attachment: AttachmentRef, max_bytes: int) -> bytes:
        ...


class BugzillaClient(TrackerClient):
    """Bugzilla 5 REST API. Public bugs need no credentials."""

    tracker = Tracker.BUGZILLA

    def __init__(self, base_url: str = "https://bugzilla.redhat.com/rest", api_key: str | None = None,
                 session: requests.Session | None = None, budget: Budget | None = None):
        super().__init__(base_url, session, budget)
        self.headers = {"X-BUGZILLA-API-KEY": api_key} if api_key else {}
        self.site_url = re.sub(r"/rest(\.cgi)?$", "", self.base_url)

    @staticmethod
    def text_criteria(query: str) -> dict[str, str]:
        """Match every word of the query in the summary or in any comment."""
        return {
            "j_top": "OR",
            "f1": "short_desc", "o1": "allwordssubstr", "v1": query,
            "f2": "longdesc", "o2": "allwordssubstr", "v2": query,
        }

    def search(self, query: str, limit: int = 50) -> list[BugReportRef]:
        bugs: dict[str, dict] = {}
        offset = 0
        while len(bugs) < limit:
            page_size = min(BUGZILLA_PAGE_SIZE, limit - len(bugs))
            data = self._get_json(f"{self.base_url}/bug", params={
                **self.text_criteria(query),
                "limit": page_size,
                "offset": offset,
                "include_fields": "id,summary",
            }, headers=self.headers)
            page = [bug for bug in data.get("bugs", []) if isinstance(bug, dict) and "id" in bug]
            before = len(bugs)
            for bug in page:
                if len(bugs) < limit:
                    bugs.setdefault(str(bug["id"]), bug)
            if len(page) < page_size or len(bugs) == before:
                break
            offset += len(page)

        refs = []
        for bug_id, bug in bugs.items():
            try:
                attachments = self.attachments(bug_id)
            except (TrackerError, KeyError, TypeError, ValueError) as e:
                console.print(f"[dim]bugzilla: skipped bug {bug_id}: {e}[/dim]")
                continue
            refs.append(BugReportRef(
                tracker=self.tracker,
                bug_id=bug_id,
                title=bug.get("summary", ""),
                url=f"{self.site_url}/show_bug.cgi?id={bug_id}",
                attachments=attachments,
            ))
        return refs

    def attachments(self, bug_id: str) -> tuple[AttachmentRef, ...]:
        data = self._get_json(f"{self.base_url}/bug/{bug_id}/attachment",
                              params={"exclude_fields": "data"}, headers=self.headers)
        refs = []
        for item in data.get("bugs", {}).get(bug_id, []):
            if item.get("is_obsolete") or item.get("is_private"):
                continue
            attachment_id = str(item["id"])
            refs.append(AttachmentRef(
                attachment_id=attachment_id,
                filename=item.get("file_name", ""),
                mime_type=item.get("content_type", ""),
                size=item.get("size"),
                download_url=f"{self.base_url}/bug/attachment/{attachment_id}",
            ))
        return tuple(refs)

    def download(self, attachment: AttachmentRef, max_bytes: int) -> bytes:
        self.budget.check()
        response = self.session.get(attachment.download_url, params={"include_fields": "data"},
                                    headers=self.headers, stream=True, timeout=self.budget.timeout())
        if response.status_code >= 400:
            response.close()
            raise TrackerError(f"bugzilla: attachment {attachment.attachment_id}: HTTP {response.status_code}")
        # base64 inflates the payload by 4/3
        raw = read_capped(response, max_bytes * 4 // 3 + 64 * 1024, self.budget)
        try:
            payload = json.loads(raw)["attachments"][attachment.attachment_id]["data"]
            content = base64.b64decode(payload)
        except (ValueError, KeyError, TypeError, binascii.Error) as e:
            raise TrackerError(f"bugzilla: attachment {attachment.attachment_id}: bad payload") from e
        if len(content) > max_bytes:
            raise OversizeResponse(f"bugzilla: attachment {attachment.attachment_id} is {len(content)} bytes")
        return content


class LaunchpadClient(TrackerClient):
    """Launchpad web service (anonymous, JSON) for one distribution."""

    tracker = Tracker.LAUNCHPAD

    def __init__(self, base_url: str = "https://api.launchpad.net/devel", distribution: str = "ubuntu",
                 session: requests.Session | None = None, budget: Budget | None = None):
        super().__init__(base_url, session, budget)
        self.distribution = distribution

    def search(self, query: str, limit: int = 50) -> list[BugReportRef]:
        bug_links: dict[str, None] = {}
        url = f"{self.base_url}/{self.distribution}"
        params = {"ws.op": "searchTasks", "search_text": query, "ws.size": min(LAUNCHPAD_PAGE_SIZE, limit)}
        while url and len(bug_links) < limit:
            data = self._get_json(url, params=params)
            before = len(bug_links)
            for task in data.get("entries", []):
                link = task.get("bug_link") if isinstance(task, dict) else None
                if link and len(bug_links) < limit:
                    bug_links.setdefault(link, None)
            if len(bug_links) == before:
                break
            url = data.get("next_collection_link")
            params = None

        refs = []
        for link in bug_links:
            try:
                refs.append(self._bug(link))
            except (TrackerError, KeyError, TypeError, ValueError) as e:
                console.print(f"[dim]launchpad: skipped {link}: {e}[/dim]")
        return refs

    def _bug(self, bug_link: str) -> BugReportRef:
        bug = self._get_json(bug_link)
        bug_id = str(bug["id"])
        attachments = []
        collection = bug.get("attachments_collection_link")
        while collection:
            data = self._get_json(collection)
            for item in data.get("entries", []):
                data_link = item.get("data_link")
                if not data_link:
                    continue
                self_link = item.get("self_link", data_link)
                attachments.append(AttachmentRef(
                    attachment_id=self_link.rstrip("/").rsplit("/", 1)[-1],
                    filename=item.get("title", ""),
                    mime_type="",
                    size=None,
                    download_url=data_link,
                ))
            collection = data.get("next_collection_link")
        return BugReportRef(
            tracker=self.tracker,
            bug_id=bug_id,
            title=bug.get("title", ""),
            url=bug.get("web_link") or f"https://bugs.launchpad.net/bugs/{bug_id}",
            attachments=tuple(attachments),
        )

    def download(self, attachment: AttachmentRef, max_bytes: int) -> bytes:
        self.budget.check()
        response = self.session.get(attachment.download_url, stream=True, timeout=self.budget.timeout())
        if response.status_code >= 400:
            response.close()
            raise TrackerError(f"launchpad: attachment {attachment.attachment_id}: HTTP {response.status_code}")
        return read_capped(response, max_bytes, self.budget)


def search_tracker(client: TrackerClient, query: str, limit: int = 50) -> list[BugReportRef]:
    return client.search(query, limit)


def fetch_attachments(client: TrackerClient, refs: list[BugReportRef], spec: FileTypeSpec, budget: Budget,
                      max_file_size: int = 1024 * 1024, workers: int = 8,
                      collector: Subcorpus | None = None) -> Subcorpus:
    """Download each distinct attachment once and keep those that validate."""
    subcorpus = collector or Subcorpus(SourceModule.BUGTRACKER)
    pending: dict[tuple[str, str], tuple[BugReportRef, AttachmentRef]] = {}
    for ref in refs:
        for attachment in ref.attachments:
            pending.setdefault((ref.tracker.value, attachment.attachment_id), (ref, attachment))

    def fetch_one(ref: BugReportRef, attachment: AttachmentRef) -> None:
        if budget.expired():
            return
        if attachment.size is not None and attachment.size > max_file_size:
            subcorpus.count(rejected=1)
            console.print(f"[dim]{ref.tracker.value}: {attachment.filename} is "
                          f"{attachment.size} bytes, skipped[/dim]")
            return
        try:
            content = client.download(attachment, max_file_size)
        except (TrackerError, OversizeResponse, BudgetExhausted, requests.RequestException) as e:
            console.print(f"[dim]{ref.tracker.value}: {attachment.filename}: {e}[/dim]")
            return
        subcorpus.count(fetched=1, bytes_downloaded=len(content))
        result = validate_file(content, attachment.filename, spec)
        if not result.accepted:
            subcorpus.count(rejected=1)
            return
        subcorpus.count(validated=1)
        subcorpus.add(SeedFile.create(
            content=content,
            source_module=SourceModule.BUGTRACKER,
            origin_url=ref.url,
            validation=result.rule,
        ))

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(fetch_one, ref, attachment) for ref, attachment in pending.values()]
        for future in as_completed(futures):
            future.result()
    return subcorpus


def make_clients(config: PipelineConfig, budget: Budget) -> list[TrackerClient]:
    settings = config.bugtracker
    session = get_session(pool_size=settings.download_workers * 2)
    clients = []
    for name in settings.trackers:
        if name == Tracker.LAUNCHPAD.value:
            clients.append(LaunchpadClient(settings.launchpad_base, settings.launchpad_distribution,
                                           session=session, budget=budget))
        elif name == Tracker.BUGZILLA.value:
            clients.append(BugzillaClient(settings.bugzilla_base, settings.bugzilla_api_key,
                                          session=session, budget=budget))
    return clients


def harvest_tracker(client: TrackerClient, queries, spec: FileTypeSpec, budget: Budget,
                    config: PipelineConfig, subcorpus: Subcorpus) -> int:
    """Search one tracker with every query, then fetch the attachments; returns bugs seen."""
    bugs: dict[str, BugReportRef] = {}
    for query in queries:
        if budget.expired():
            break
        try:
            refs = search_tracker(client, query, config.bugtracker.results_per_query)
        except (TrackerError, BudgetExhausted) as e:
            subcorpus.warn(f"Skipping query {query!r}: {e}")
            continue
        for ref in refs:
            bugs.setdefault(ref.bug_id, ref)
    with_attachments = [ref for ref in bugs.values() if ref.attachments]
    console.print(f"[blue]{client.tracker.value}: {len(bugs)} bugs, "
                  f"{len(with_attachments)} with attachments[/blue]")
    fetch_attachments(client, with_attachments, spec, budget, config.max_file_size,
                      config.bugtracker.download_workers, subcorpus)
    return len(bugs)


def run_bugtracker_search(config: PipelineConfig, spec: FileTypeSpec, client: LlmClient, budget: Budget,
                          collector: Subcorpus | None = None,
                          trackers: list[TrackerClient] | None = None) -> Subcorpus:
    subcorpus = collector or Subcorpus(SourceModule.BUGTRACKER)

    console.print("[blue]bugtracker: generating bug search queries...[/blue]")
    try:
        plan = gen_bugtracker_queries(spec, client, config.llm.params_for(SourceModule.BUGTRACKER),
                                      config.bugtracker.query_count)
    except LlmClientError as e:
        subcorpus.warn(f"Query generation failed, module aborted: {e}")
        return subcorpus
    for warning in plan.warnings:
        subcorpus.note(warning)

    trackers = trackers if trackers is not None else make_clients(config, budget)
    with ThreadPoolExecutor(max_workers=max(len(trackers), 1)) as executor:
        futures = {
            executor.submit(harvest_tracker, tracker, plan.queries, spec, budget, config, subcorpus): tracker
            for tracker in trackers
        }
        for future in as_completed(futures):
            tracker = futures[future]
            try:
                future.result()
            except Exception as e:
                subcorpus.warn(f"{tracker.tracker.value} failed: {e}")

    console.print(f"[green]bugtracker: {len(subcorpus)} attachments kept[/green]")
    return subcorpus
