"""Tests for file type specs, validation and deduplication."""

import json
import sys
import threading
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from corpus_model import (
    FileTypeMode,
    FileTypeSpec,
    SeedFile,
    SourceModule,
    Subcorpus,
    Validation,
    content_digest,
    dedup,
    extension_of,
    load_signature_table,
    partition_duplicates,
    validate_file,
)
from exceptions import FileTypeSpecError, SignatureTableError

# (extension, sample leading bytes)
KNOWN_FORMATS = [
    ("png", b"\x89PNG\r\n\x1a\n\x00\x00"),
    ("jpeg", b"\xff\xd8\xff\xe0\x00\x10JFIF"),
    ("tiff", b"II*\x00\x08\x00\x00\x00"),
    ("tiff", b"MM\x00*\x00\x00\x00\x08"),
    ("pdf", b"%PDF-1.7\n"),
    ("xml", b'<?xml version="1.0"?><a/>'),
    ("zip", b"PK\x03\x04\x14\x00"),
    ("gz", b"\x1f\x8b\x08\x00"),
    ("wav", b"RIFF\x24\x00\x00\x00WAVEfmt "),
    ("flac", b"fLaC\x00\x00\x00\x22"),
    ("ogg", b"OggS\x00\x02"),
    ("sqlite", b"SQLite format 3\x00\x10\x00"),
    ("elf", b"\x7fELF\x02\x01\x01"),
    ("gif", b"GIF89a\x01\x00"),
]


def seed(content: bytes, module=SourceModule.WEB, url="https://example.com/x") -> SeedFile:
    return SeedFile.create(content, module, url, Validation.BY_MAGIC)


class TestSignatureTable:
    @pytest.mark.parametrize("extension,leading", KNOWN_FORMATS)
    def test_known_magic_accepted_without_extension(self, extension, leading):
        spec = FileTypeSpec.from_extension(extension)
        result = validate_file(leading + b"rest of file", "download", spec)
        assert result.accepted
        assert result.rule is Validation.BY_MAGIC

    def test_covers_at_least_twelve_formats(self):
        table = load_signature_table()
        with_magic = [key for key, entry in table.items() if entry["magic"]]
        assert len(with_magic) >= 12

    def test_alias_resolves_to_entry(self):
        spec = FileTypeSpec.from_extension("JPG")
        assert spec.primary_extension == "jpg"
        assert "jpeg" in spec.extensions
        assert "image/jpeg" in spec.mime_types

    def test_unknown_extension_has_no_magic(self):
        spec = FileTypeSpec.from_extension("zzfmt")
        assert spec.magic_signatures == ()
        assert spec.extensions == frozenset({"zzfmt"})

    def test_extra_mime_types_appended(self):
        spec = FileTypeSpec.from_extension("png", extra_mime_types=("image/apng",))
        assert spec.mime_types == ("image/png", "image/apng")

    def test_malformed_table(self, tmp_path):
        path = tmp_path / "signatures.json"
        path.write_text(json.dumps({"version": 1, "types": {"png": {"aliases": []}}}))
        with pytest.raises(SignatureTableError):
            load_signature_table(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "signatures.json"
        path.write_text(json.dumps({"version": 99, "types": {}}))
        with pytest.raises(SignatureTableError):
            load_signature_table(path)


class TestFileTypeSpec:
    def test_extension_must_be_lowercase(self):
        with pytest.raises(FileTypeSpecError):
            FileTypeSpec(mode=FileTypeMode.EXTENSION, primary_extension="PNG")

    def test_extension_without_dot(self):
        with pytest.raises(FileTypeSpecError):
            FileTypeSpec(mode=FileTypeMode.EXTENSION, primary_extension=".png")

    def test_leading_dot_stripped_by_constructor(self):
        assert FileTypeSpec.from_extension(".png").primary_extension == "png"

    def test_description_needs_text(self):
        with pytest.raises(FileTypeSpecError):
            FileTypeSpec.from_description("   ")

    def test_description_seed_names_have_no_extension(self):
        spec = FileTypeSpec.from_description("ELF binaries with DWARF debug info")
        assert spec.seed_filename("ab12") == "ab12"
        assert FileTypeSpec.from_extension("png").seed_filename("ab12") == "ab12.png"

    def test_mime_match_ignores_parameters(self):
        spec = FileTypeSpec.from_extension("xml")
        assert spec.matches_mime("text/xml; charset=utf-8")
        assert not spec.matches_mime("text/html")
        assert not spec.matches_mime(None)

    def test_offset_signature(self):
        spec = FileTypeSpec.from_extension("webp")
        assert spec.matches_magic(b"RIFF\x00\x00\x00\x00WEBPVP8 ")
        assert not spec.matches_magic(b"WEBP")


class TestValidateFile:
    def test_extension_only(self):
        spec = FileTypeSpec.from_extension("png")
        result = validate_file(b"not a png at all", "https://example.com/img/logo.PNG?size=2", spec)
        assert result.accepted
        assert result.rule is Validation.BY_EXTENSION

    def test_magic_only(self):
        spec = FileTypeSpec.from_extension("png")
        assert validate_file(b"\x89PNG\r\n\x1a\nIHDR", "attachment.bin", spec).accepted

    def test_neither(self):
        spec = FileTypeSpec.from_extension("png")
        assert not validate_file(b"GIF89a", "image.gif", spec).accepted

    def test_description_mode_accepts_everything(self):
        spec = FileTypeSpec.from_description("regular expressions")
        result = validate_file(b"a*b", "", spec)
        assert result.accepted
        assert result.rule is Validation.UNFILTERED

    @pytest.mark.parametrize("hint,expected", [
        ("https://example.com/a/b.tar.gz?x=1#frag", "gz"),
        ("repo/tests/data/.hidden", ""),
        ("C:\\samples\\clip.WAV", "wav"),
        ("https://example.com/dir/", ""),
        ("name%2Epng", "png"),
        ("", ""),
    ])
    def test_extension_of(self, hint, expected):
        assert extension_of(hint) == expected


class TestDedup:
    def test_one_per_digest(self):
        files = [seed(b"aaa"), seed(b"aaa", SourceModule.GITHUB), seed(b"bb")]
        result = dedup(files)
        assert [f.content for f in result] == [b"bb", b"aaa"]

    def test_keeps_first_in_canonical_order(self):
        first = seed(b"same", SourceModule.FEATURE, "https://b.example/1")
        second = seed(b"same", SourceModule.GITHUB, "https://a.example/2")
        kept, duplicates = partition_duplicates([first, second])
        assert len(kept) == 1
        assert len(duplicates) == 1

    def test_order_independent(self):
        files = [seed(bytes([i]) * (i % 5 + 1)) for i in range(30)] + [seed(b"\x03\x03\x03\x03")]
        forward = [f.digest for f in dedup(files)]
        backward = [f.digest for f in dedup(list(reversed(files)))]
        assert forward == backward
        assert len(forward) == len({content_digest(f.content) for f in files})

    def test_size_must_match_content(self):
        with pytest.raises(ValueError):
            SeedFile(content=b"abc", size_bytes=4, digest=content_digest(b"abc"),
                     source_module=SourceModule.WEB, origin_url="x",
                     retrieved_at=seed(b"abc").retrieved_at, validation=Validation.BY_MAGIC)


class TestSubcorpus:
    def test_within_module_duplicates_collapse(self):
        subcorpus = Subcorpus(SourceModule.WEB)
        subcorpus.add(seed(b"x", url="https://example.com/b"))
        subcorpus.add(seed(b"x", url="https://example.com/a"))
        subcorpus.add(seed(b"y", url="https://example.com/c"))

        assert len(subcorpus) == 2
        assert [f.origin_url for f in subcorpus.files] == ["https://example.com/a", "https://example.com/c"]

    def test_concurrent_adds(self):
        subcorpus = Subcorpus(SourceModule.GITHUB)

        def worker(offset):
            for i in range(100):
                subcorpus.add(seed(f"{offset}-{i}".encode(), SourceModule.GITHUB))
                subcorpus.count(fetched=1)

        threads = [threading.Thread(target=worker, args=(n,)) for n in range(8)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        assert len(subcorpus) == 800
        assert subcorpus.stats.fetched == 800

    def test_absorb_merges_stats_and_warnings(self):
        main = Subcorpus(SourceModule.BUGTRACKER)
        fragment = Subcorpus(SourceModule.BUGTRACKER)
        fragment.add(seed(b"poc", SourceModule.BUGTRACKER))
        fragment.count(fetched=3, validated=1, rejected=2, bytes_downloaded=30)
        fragment.note("tracker returned 503")

        main.absorb(fragment)

        assert len(main) == 1
        assert main.stats.to_dict() == {"fetched": 3, "validated": 1, "rejected": 2, "bytes_downloaded": 30}
        assert main.warnings == ["tracker returned 503"]
