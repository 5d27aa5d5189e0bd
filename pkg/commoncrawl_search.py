#!/usr/bin/env python3
"""
Common Crawl Search: archived responses whose recorded mime type matches.

No language model is involved. For every mime type of the target the CDX
index of one crawl is queried with an exact `mime` filter, and each matching
record is fetched from the public archive with a byte-range request, unpacked
from its WARC envelope, stripped of HTTP headers and validated.

The CDX API needs a URL key, so lookups walk a list of domain wildcard
patterns (one per top-level domain) until the per-mime cap is reached.
"""

import io
import json
import zlib
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import requests
from rich.console import Console
from warcio.archiveiterator import ArchiveIterator
from warcio.recordloader import ArchiveLoadFailed
from warcio.statusandheaders import StatusAndHeadersParserException

from cache_config import get_api_session, get_session
from corpus_model import FileTypeSpec, SeedFile, SourceModule, Subcorpus, validate_file
from exceptions import BudgetExhausted, ConfigError, CorruptRecord, IndexServiceError, OversizeResponse
from http_utils import Budget, read_capped, retrying
from pipeline_config import PipelineConfig

console = Console(stderr=True)

# WARC + HTTP headers and gzip framing around a payload
RECORD_OVERHEAD = 64 * 1024


@dataclass(frozen=True)
class CrawlRecordRef:
    archive_path: str
    byte_offset: int
    record_length: int
    url: str
    content_mime_type: str

    def __post_init__(self):
        if self.byte_offset < 0:
            raise ValueError(f"Record offset must be >= 0, got {self.byte_offset}")
        if self.record_length <= 0:
            raise ValueError(f"Record length must be > 0, got {self.record_length}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.archive_path, self.byte_offset)

    @classmethod
    def from_cdx(cls, row: dict) -> "CrawlRecordRef":
        return cls(
            archive_path=row["filename"],
            byte_offset=int(row["offset"]),
            record_length=int(row["length"]),
            url=row["url"],
            content_mime_type=row.get("mime", ""),
        )


class CdxIndexClient:
    """Client for the pywb-style CDX server at index.commoncrawl.org."""

    def __init__(self, base_url: str = "https://index.commoncrawl.org",
                 url_patterns: tuple[str, ...] = ("*.com",), max_pages: int = 3,
                 session: requests.Session | None = None, budget: Budget | None = None,
                 attempts: int = 3, backoff: float = 2.0):
        self.base_url = base_url.rstrip("/")
        self.url_patterns = url_patterns
        self.max_pages = max_pages
        self.session = session or get_api_session(use_cache=False)
        self.budget = budget or Budget.unlimited()
        self.attempts = attempts
        self.backoff = backoff

    def _query(self, crawl_id: str, params: dict) -> list[dict]:
        try:
            response = self.session.get(f"{self.base_url}/{crawl_id}-index", params=params,
                                        timeout=self.budget.timeout(60))
        except requests.RequestException as e:
            raise IndexServiceError(f"CDX request failed: {e}") from e
        if response.status_code == 404:
            return []
        if response.status_code == 400 and params.get("page", 0) > 0:
            return []
        if response.status_code >= 400:
            raise IndexServiceError(f"CDX server answered HTTP {response.status_code}")
        rows = []
        for line in response.text.splitlines():
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                console.print("[dim]commoncrawl: skipped malformed index line[/dim]")
        return rows

    def lookup(self, mime: str, crawl_id: str, limit: int = 5000) -> list[CrawlRecordRef]:
        """Records whose mime equals `mime` exactly, at most `limit`, in index order.

        Raises IndexServiceError once retries are used up.
        """
        if not mime:
            raise ValueError("mime must be non-empty")
        policy = retrying(IndexServiceError, self.attempts, self.backoff, self.budget)
        refs: dict[tuple[str, int], CrawlRecordRef] = {}

        for pattern in self.url_patterns:
            for page in range(self.max_pages):
                if len(refs) >= limit or self.budget.expired():
                    return list(refs.values())
                params = {
                    "url": pattern,
                    "output": "json",
                    "filter": [f"=mime:{mime}", "=status:200"],
                    "limit": limit - len(refs),
                    "page": page,
                }
                rows = policy(self._query, crawl_id, params)
                before = len(refs)
                for row in rows:
                    if row.get("mime") != mime or str(row.get("status", "200")) != "200":
                        continue
                    try:
                        ref = CrawlRecordRef.from_cdx(row)
                    except (KeyError, TypeError, ValueError):
                        continue
                    if len(refs) < limit:
                        refs.setdefault(ref.key, ref)
                if len(refs) == before:
                    break
        return list(refs.values())


def index_lookup(index: CdxIndexClient, mime: str, crawl_id: str = "CC-MAIN-2025-08",
                 limit: int = 5000) -> list[CrawlRecordRef]:
    return index.lookup(mime, crawl_id, limit)


class ArchiveReader(ABC):
    @abstractmethod
    def read_range(self, path: str, offset: int, length: int) -> bytes:
        ...


class HttpArchiveReader(ArchiveReader):
    """Byte ranges over HTTPS from data.commoncrawl.org."""

    def __init__(self, base_url: str = "https://data.commoncrawl.org",
                 session: requests.Session | None = None, budget: Budget | None = None):
        self.base_url = base_url.rstrip("/")
        self.session = session or get_session()
        self.budget = budget or Budget.unlimited()

    def read_range(self, path: str, offset: int, length: int) -> bytes:
        headers = {"Range": f"bytes={offset}-{offset + length - 1}"}
        try:
            response = self.session.get(f"{self.base_url}/{path.lstrip('/')}", headers=headers,
                                        stream=True, timeout=self.budget.timeout())
        except requests.RequestException as e:
            raise CorruptRecord(f"Range fetch failed for {path}: {e}") from e
        if response.status_code != 206:
            response.close()
            raise CorruptRecord(f"Range fetch for {path} answered HTTP {response.status_code}")
        return read_capped(response, length, self.budget)


class S3ArchiveReader(ArchiveReader):
    """Byte ranges from the public `commoncrawl` bucket with an anonymous client."""

    def __init__(self, bucket: str = "commoncrawl", client=None):
        import boto3
        from botocore import UNSIGNED
        from botocore.config import Config

        self.bucket = bucket
        self.client = client or boto3.client("s3", config=Config(signature_version=UNSIGNED))

    def read_range(self, path: str, offset: int, length: int) -> bytes:
        from botocore.exceptions import BotoCoreError, ClientError, NoCredentialsError

        try:
            response = self.client.get_object(
                Bucket=self.bucket, Key=path, Range=f"bytes={offset}-{offset + length - 1}"
            )
            return response["Body"].read()
        except NoCredentialsError as e:
            raise ConfigError(f"S3 archive access needs credentials: {e}") from e
        except (ClientError, BotoCoreError) as e:
            raise CorruptRecord(f"S3 range read failed for {path}: {e}") from e


def extract_payload(raw: bytes, max_bytes: int) -> bytes:
    """HTTP payload of the single gzip-framed WARC response record in `raw`."""
    try:
        for record in ArchiveIterator(io.BytesIO(raw)):
            if record.rec_type != "response":
                continue
            payload = record.content_stream().read(max_bytes + 1)
            if len(payload) > max_bytes:
                raise OversizeResponse(f"Payload larger than {max_bytes} bytes")
            if getattr(record.raw_stream, "limit", 0) > 0:
                raise CorruptRecord("Record payload is truncated")
            return payload
    except (ArchiveLoadFailed, StatusAndHeadersParserException, zlib.error, EOFError, ValueError) as e:
        raise CorruptRecord(f"Cannot decode record: {e}") from e
    raise CorruptRecord("No response record in range")


def fetch_record(ref: CrawlRecordRef, spec: FileTypeSpec, reader: ArchiveReader,
                 max_file_size: int = 1024 * 1024) -> SeedFile | None:
    """Fetch, unpack and validate one record; None means the payload was rejected.

    Raises CorruptRecord for unreadable records and OversizeResponse for payloads
    above max_file_size.
    """
    if ref.record_length > max_file_size + RECORD_OVERHEAD:
        raise OversizeResponse(f"{ref.url}: record of {ref.record_length} bytes")
    raw = reader.read_range(ref.archive_path, ref.byte_offset, ref.record_length)
    if len(raw) < ref.record_length:
        raise CorruptRecord(f"{ref.url}: got {len(raw)} of {ref.record_length} bytes")
    payload = extract_payload(raw, max_file_size)
    result = validate_file(payload, ref.url, spec)
    if not result.accepted:
        return None
    return SeedFile.create(
        content=payload,
        source_module=SourceModule.COMMONCRAWL,
        origin_url=ref.url,
        validation=result.rule,
    )


def make_reader(config: PipelineConfig, budget: Budget) -> ArchiveReader:
    settings = config.commoncrawl
    if settings.archive_backend == "s3":
        return S3ArchiveReader(settings.s3_bucket)
    return HttpArchiveReader(settings.archive_base, get_session(pool_size=settings.fetch_workers), budget)


def make_index(config: PipelineConfig, budget: Budget) -> CdxIndexClient:
    settings = config.commoncrawl
    return CdxIndexClient(
        base_url=settings.index_base,
        url_patterns=settings.url_patterns,
        max_pages=settings.max_pages_per_pattern,
        session=get_api_session(config.use_cache, cache_dir=config.cache_dir),
        budget=budget,
        attempts=settings.index_attempts,
        backoff=settings.backoff,
    )


def fetch_records(refs: list[CrawlRecordRef], spec: FileTypeSpec, reader: ArchiveReader, budget: Budget,
                  max_file_size: int, workers: int, subcorpus: Subcorpus) -> None:
    def fetch_one(ref: CrawlRecordRef) -> None:
        if budget.expired():
            return
        try:
            seed = fetch_record(ref, spec, reader, max_file_size)
        except (CorruptRecord, OversizeResponse, BudgetExhausted, requests.RequestException) as e:
            subcorpus.count(rejected=1)
            console.print(f"[dim]commoncrawl: {ref.url}: {e}[/dim]")
            return
        subcorpus.count(fetched=1, bytes_downloaded=ref.record_length)
        if seed is None:
            subcorpus.count(rejected=1)
            return
        subcorpus.count(validated=1)
        subcorpus.add(seed)

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(fetch_one, ref) for ref in refs]
        for future in as_completed(futures):
            future.result()


def run_commoncrawl_search(config: PipelineConfig, spec: FileTypeSpec, client, budget: Budget,
                           collector: Subcorpus | None = None, index: CdxIndexClient | None = None,
                           reader: ArchiveReader | None = None) -> Subcorpus:
    """Run the module. `client` is part of the shared module signature and is never called."""
    subcorpus = collector or Subcorpus(SourceModule.COMMONCRAWL)
    settings = config.commoncrawl
    if not spec.mime_types:
        subcorpus.warn("No mime types for this target (use --mime); nothing to look up")
        return subcorpus

    index = index or make_index(config, budget)
    try:
        reader = reader or make_reader(config, budget)
    except ConfigError as e:
        subcorpus.warn(str(e))
        return subcorpus

    seen: set[tuple[str, int]] = set()
    for mime in spec.mime_types:
        if budget.expired():
            subcorpus.warn("Budget ran out during index lookups")
            break
        try:
            refs = index_lookup(index, mime, settings.crawl_id, settings.per_mime_limit)
        except IndexServiceError as e:
            subcorpus.warn(f"Index service failed ({e}); module aborted")
            break
        fresh = [ref for ref in refs if ref.key not in seen]
        seen.update(ref.key for ref in fresh)
        console.print(f"[blue]commoncrawl: {len(fresh)} records for {mime} in {settings.crawl_id}[/blue]")
        try:
            fetch_records(fresh, spec, reader, budget, config.max_file_size, settings.fetch_workers, subcorpus)
        except ConfigError as e:
            subcorpus.warn(f"{e}; module aborted")
            break

    console.print(f"[green]commoncrawl: {len(subcorpus)} records kept[/green]")
    return subcorpus
