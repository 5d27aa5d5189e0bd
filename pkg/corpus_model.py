"""
Core data types shared by every gathering module.

FileTypeSpec describes the target input format, SeedFile is one harvested
candidate, and Subcorpus collects the candidates one module produced.
Validation follows the either-condition rule: a file is kept when its name
carries a target extension OR its leading bytes match a magic signature.
Description mode disables both filters.
"""

import hashlib
import json
import mimetypes
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path, PurePosixPath
from urllib.parse import unquote, urlsplit

import jsonschema
from rich.console import Console

from exceptions import FileTypeSpecError, SignatureTableError

console = Console(stderr=True)

SIGNATURE_TABLE = Path(__file__).parent / "signatures.json"
SIGNATURE_TABLE_VERSION = 1

SIGNATURE_TABLE_SCHEMA = {
    "type": "object",
    "required": ["version", "types"],
    "properties": {
        "version": {"type": "integer"},
        "source": {"type": "string"},
        "types": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["aliases", "mime_types", "magic"],
                "properties": {
                    "aliases": {"type": "array", "items": {"type": "string"}},
                    "mime_types": {"type": "array", "items": {"type": "string"}},
                    "magic": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["offset", "hex"],
                            "properties": {
                                "offset": {"type": "integer", "minimum": 0},
                                "hex": {"type": "string", "pattern": "^([0-9A-Fa-f]{2})+$"},
                            },
                        },
                    },
                },
            },
        },
    },
}


class FileTypeMode(str, Enum):
    EXTENSION = "extension"
    DESCRIPTION = "description"


class SourceModule(str, Enum):
    """Where a seed came from. Declaration order is the canonical module order."""

    GITHUB = "github"
    WEB = "web"
    FEATURE = "feature"
    BUGTRACKER = "bugtracker"
    COMMONCRAWL = "commoncrawl"
    EXTERNAL = "external"


class Validation(str, Enum):
    BY_EXTENSION = "extension"
    BY_MAGIC = "magic"
    UNFILTERED = "unfiltered"


MODULE_ORDER = {module: index for index, module in enumerate(SourceModule)}


@dataclass(frozen=True)
class MagicSignature:
    offset: int
    data: bytes

    def __post_init__(self):
        if self.offset < 0:
            raise FileTypeSpecError(f"Magic signature offset must be >= 0, got {self.offset}")
        if not self.data:
            raise FileTypeSpecError("Magic signature bytes must be non-empty")

    @property
    def end(self) -> int:
        return self.offset + len(self.data)

    def matches(self, content: bytes) -> bool:
        return content[self.offset:self.end] == self.data


@dataclass(frozen=True)
class FileTypeSpec:
    """The target input format, either by extension or by free-text description."""

    mode: FileTypeMode
    primary_extension: str = ""
    aliases: tuple[str, ...] = ()
    magic_signatures: tuple[MagicSignature, ...] = ()
    mime_types: tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self):
        if self.mode is FileTypeMode.EXTENSION:
            ext = self.primary_extension
            if not ext or ext != ext.lower() or ext.startswith("."):
                raise FileTypeSpecError(
                    f"Extension mode needs a lowercase extension without a leading dot, got {ext!r}"
                )
        else:
            if not self.description.strip():
                raise FileTypeSpecError("Description mode needs a non-empty description")
            if self.magic_signatures or self.aliases:
                raise FileTypeSpecError("Description mode takes no magic signatures or aliases")

    @classmethod
    def from_extension(cls, extension: str, extra_mime_types: tuple[str, ...] = (),
                       table_path: Path = SIGNATURE_TABLE) -> "FileTypeSpec":
        """Build a spec from the bundled signature table; unknown extensions get no magic."""
        ext = extension.strip().lstrip(".").lower()
        if not ext:
            raise FileTypeSpecError("Empty extension")
        table = load_signature_table(table_path)
        entry_key = None
        for key, entry in table.items():
            if ext == key or ext in entry["aliases"]:
                entry_key = key
                break

        if entry_key is None:
            guessed, _ = mimetypes.guess_type(f"file.{ext}")
            console.print(f"[yellow]Extension '{ext}' is not in the signature table; "
                          "validating by extension only[/yellow]")
            mime_types = tuple(dict.fromkeys(([guessed] if guessed else []) + list(extra_mime_types)))
            return cls(mode=FileTypeMode.EXTENSION, primary_extension=ext, mime_types=mime_types)

        entry = table[entry_key]
        names = [entry_key] + list(entry["aliases"])
        aliases = tuple(n for n in names if n != ext)
        signatures = tuple(
            MagicSignature(offset=sig["offset"], data=bytes.fromhex(sig["hex"]))
            for sig in entry["magic"]
        )
        mime_types = tuple(dict.fromkeys(list(entry["mime_types"]) + list(extra_mime_types)))
        return cls(
            mode=FileTypeMode.EXTENSION,
            primary_extension=ext,
            aliases=aliases,
            magic_signatures=signatures,
            mime_types=mime_types,
        )

    @classmethod
    def from_description(cls, description: str, mime_types: tuple[str, ...] = ()) -> "FileTypeSpec":
        return cls(mode=FileTypeMode.DESCRIPTION, description=description.strip(),
                   mime_types=tuple(mime_types))

    @property
    def is_description(self) -> bool:
        return self.mode is FileTypeMode.DESCRIPTION

    @property
    def extensions(self) -> frozenset[str]:
        if self.is_description:
            return frozenset()
        return frozenset((self.primary_extension, *self.aliases))

    @property
    def magic_length(self) -> int:
        """Number of leading bytes validation may look at."""
        return max((sig.end for sig in self.magic_signatures), default=0)

    @property
    def label(self) -> str:
        return self.primary_extension if not self.is_description else self.description

    def matches_magic(self, content: bytes) -> bool:
        head = content[:self.magic_length]
        return any(sig.matches(head) for sig in self.magic_signatures)

    def matches_mime(self, content_type: str | None) -> bool:
        if not content_type:
            return False
        mime = content_type.split(";", 1)[0].strip().lower()
        return mime in {m.lower() for m in self.mime_types}

    def seed_filename(self, digest: str) -> str:
        return digest if self.is_description else f"{digest}.{self.primary_extension}"

    def snapshot(self) -> dict:
        return {
            "mode": self.mode.value,
            "primary_extension": self.primary_extension,
            "aliases": list(self.aliases),
            "magic_signatures": [
                {"offset": sig.offset, "hex": sig.data.hex().upper()} for sig in self.magic_signatures
            ],
            "mime_types": list(self.mime_types),
            "description": self.description,
        }


@dataclass(frozen=True)
class ValidationResult:
    accepted: bool
    rule: Validation | None = None


@dataclass(frozen=True)
class SeedFile:
    """One candidate input with its provenance."""

    content: bytes = field(repr=False)
    size_bytes: int
    digest: str
    source_module: SourceModule
    origin_url: str
    retrieved_at: datetime
    validation: Validation

    def __post_init__(self):
        if self.size_bytes != len(self.content):
            raise ValueError("size_bytes must equal the content length")

    @classmethod
    def create(cls, content: bytes, source_module: SourceModule, origin_url: str,
               validation: Validation, retrieved_at: datetime | None = None) -> "SeedFile":
        return cls(
            content=content,
            size_bytes=len(content),
            digest=content_digest(content),
            source_module=source_module,
            origin_url=origin_url,
            retrieved_at=retrieved_at or datetime.now(timezone.utc),
            validation=validation,
        )

    @property
    def sort_key(self) -> tuple[int, str]:
        return (self.size_bytes, self.digest)


@dataclass
class SubcorpusStats:
    fetched: int = 0
    validated: int = 0
    rejected: int = 0
    bytes_downloaded: int = 0

    def to_dict(self) -> dict:
        return {
            "fetched": self.fetched,
            "validated": self.validated,
            "rejected": self.rejected,
            "bytes_downloaded": self.bytes_downloaded,
        }


class Subcorpus:
    """Thread-safe collector for the files one module harvested.

    Files may arrive in any order from concurrent workers. The `files` view is
    canonical: ordered by (origin_url, digest) with later duplicates of a digest
    dropped, so the same set of arrivals always yields the same subcorpus.
    """

    def __init__(self, module: SourceModule):
        self.module = module
        self.stats = SubcorpusStats()
        self.warnings: list[str] = []
        self._candidates: list[SeedFile] = []
        self._lock = threading.Lock()

    def add(self, seed: SeedFile) -> None:
        with self._lock:
            self._candidates.append(seed)

    def extend(self, seeds) -> None:
        with self._lock:
            self._candidates.extend(seeds)

    def count(self, fetched: int = 0, validated: int = 0, rejected: int = 0,
              bytes_downloaded: int = 0) -> None:
        with self._lock:
            self.stats.fetched += fetched
            self.stats.validated += validated
            self.stats.rejected += rejected
            self.stats.bytes_downloaded += bytes_downloaded

    def warn(self, message: str) -> None:
        console.print(f"[yellow]{self.module.value}: {message}[/yellow]")
        with self._lock:
            self.warnings.append(message)

    def note(self, message: str) -> None:
        """Record a warning that has already been printed elsewhere."""
        with self._lock:
            self.warnings.append(message)

    def absorb(self, other: "Subcorpus") -> None:
        """Fold a fragment collected by a worker into this subcorpus."""
        with other._lock:
            candidates = list(other._candidates)
            stats = SubcorpusStats(**other.stats.to_dict())
            warnings = list(other.warnings)
        with self._lock:
            self._candidates.extend(candidates)
            self.stats.fetched += stats.fetched
            self.stats.validated += stats.validated
            self.stats.rejected += stats.rejected
            self.stats.bytes_downloaded += stats.bytes_downloaded
            self.warnings.extend(warnings)

    @property
    def files(self) -> list[SeedFile]:
        with self._lock:
            candidates = list(self._candidates)
        seen = set()
        files = []
        for seed in sorted(candidates, key=lambda s: (s.origin_url, s.digest)):
            if seed.digest in seen:
                continue
            seen.add(seed.digest)
            files.append(seed)
        return files

    def __len__(self) -> int:
        return len(self.files)


_signature_cache: dict[Path, dict] = {}
_signature_lock = threading.Lock()


def load_signature_table(path: Path = SIGNATURE_TABLE) -> dict:
    """Load and schema-check the extension -> (aliases, mime types, magic) table."""
    with _signature_lock:
        if path in _signature_cache:
            return _signature_cache[path]
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise SignatureTableError(f"Cannot read signature table {path}: {e}") from e
        try:
            jsonschema.validate(data, SIGNATURE_TABLE_SCHEMA)
        except jsonschema.ValidationError as e:
            raise SignatureTableError(f"Signature table {path} is malformed: {e.message}") from e
        if data["version"] != SIGNATURE_TABLE_VERSION:
            raise SignatureTableError(
                f"Signature table version {data['version']} is not supported "
                f"(expected {SIGNATURE_TABLE_VERSION})"
            )
        _signature_cache[path] = data["types"]
        return data["types"]


def extension_of(name_hint: str) -> str:
    """Lowercase extension of a path or URL, ignoring query strings and fragments."""
    if not name_hint:
        return ""
    path = urlsplit(name_hint).path if "://" in name_hint else name_hint.split("?", 1)[0].split("#", 1)[0]
    name = PurePosixPath(unquote(path).replace("\\", "/")).name
    if "." not in name.strip("."):
        return ""
    return name.rsplit(".", 1)[1].lower()


def validate_file(content: bytes, name_hint: str, spec: FileTypeSpec) -> ValidationResult:
    """Accept a file if its extension OR its magic number matches the file type."""
    if spec.is_description:
        return ValidationResult(accepted=True, rule=Validation.UNFILTERED)
    if extension_of(name_hint) in spec.extensions:
        return ValidationResult(accepted=True, rule=Validation.BY_EXTENSION)
    if spec.matches_magic(content):
        return ValidationResult(accepted=True, rule=Validation.BY_MAGIC)
    return ValidationResult(accepted=False)


def content_digest(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


def partition_duplicates(files: list[SeedFile]) -> tuple[list[SeedFile], list[SeedFile]]:
    """Split files into (representatives, duplicates) under the canonical order."""
    kept = []
    duplicates = []
    seen = set()
    for seed in sorted(files, key=lambda s: s.sort_key):
        if seed.digest in seen:
            duplicates.append(seed)
        else:
            seen.add(seed.digest)
            kept.append(seed)
    return kept, duplicates


def dedup(files: list[SeedFile]) -> list[SeedFile]:
    """One file per digest, sorted by (size, digest); the first in that order wins."""
    kept, _ = partition_duplicates(files)
    return kept
