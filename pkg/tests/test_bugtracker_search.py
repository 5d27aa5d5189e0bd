import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from bugtracker_search import (
    AttachmentRef,
    BugReportRef,
    BugzillaClient,
    LaunchpadClient,
    Tracker,
    fetch_attachments,
    harvest_tracker,
    run_bugtracker_search,
)
from corpus_model import SourceModule, Subcorpus
from exceptions import TrackerError
from http_utils import Budget
from pipeline_config import PipelineConfig
from query_gen import StubLlmClient
from tests.fixture_data import BUGZILLA_POC, LAUNCHPAD_POC, PNG_MAGIC, build_fixture_tree

PNG = PipelineConfig(extension="png").file_type_spec()


def as_json(payload, status=200):
    return lambda query: (status, {"Content-Type": "application/json"}, json.dumps(payload).encode())


class CountingClient(BugzillaClient):
    def __init__(self, payloads):
        super().__init__("http://unused.invalid/rest")
        self.payloads = payloads
        self.downloads = []

    def download(self, attachment, max_bytes):
        self.downloads.append(attachment.attachment_id)
        return self.payloads[attachment.attachment_id]


def bug(bug_id, *attachments) -> BugReportRef:
    return BugReportRef(Tracker.BUGZILLA, bug_id, "title", f"https://bugzilla.example/{bug_id}", tuple(attachments))


def attachment(attachment_id, filename="poc.png", size=None) -> AttachmentRef:
    return AttachmentRef(attachment_id, filename, "image/png", size, f"https://bugzilla.example/a/{attachment_id}")


class TestBugzillaClient:
    def test_search_skips_obsolete_attachments(self, tmp_path, fixture_server):
        tree = build_fixture_tree(tmp_path / "fixtures", PNG)
        server = fixture_server(tree / "http")
        client = BugzillaClient(f"{server.url}/bugzilla/rest", budget=Budget(30))

        refs = client.search("png overflow")

        assert [r.bug_id for r in refs] == ["42"]
        assert [a.attachment_id for a in refs[0].attachments] == ["9"]
        assert refs[0].url == f"{server.url}/bugzilla/show_bug.cgi?id=42"

    def test_download_decodes_base64(self, tmp_path, fixture_server):
        tree = build_fixture_tree(tmp_path / "fixtures", PNG)
        server = fixture_server(tree / "http")
        client = BugzillaClient(f"{server.url}/bugzilla/rest", budget=Budget(30))
        ref = AttachmentRef("9", "poc.png", "image/png", None, f"{server.url}/bugzilla/rest/bug/attachment/9")

        assert client.download(ref, 1024) == BUGZILLA_POC

    def test_bad_payload(self, fixture_server):
        server = fixture_server(routes={"/rest/bug/attachment/5": as_json({"attachments": {}})})
        client = BugzillaClient(f"{server.url}/rest", budget=Budget(30))
        with pytest.raises(TrackerError):
            client.download(AttachmentRef("5", "x", "", None, f"{server.url}/rest/bug/attachment/5"), 1024)

    def test_http_error(self, fixture_server):
        server = fixture_server(routes={"/rest/bug": as_json({}, status=500)})
        with pytest.raises(TrackerError):
            BugzillaClient(f"{server.url}/rest", budget=Budget(30)).search("q")

    def test_pagination_stops_at_limit(self, fixture_server):
        offsets = []

        def handler(query):
            offset = int(query["offset"][0])
            offsets.append(offset)
            size = int(query["limit"][0])
            bugs = [{"id": offset + i, "summary": "s"} for i in range(size)]
            return 200, {}, json.dumps({"bugs": bugs}).encode()

        server = fixture_server(routes={"/rest/bug": handler})
        client = BugzillaClient(f"{server.url}/rest", budget=Budget(30))
        client.attachments = lambda bug_id: ()

        refs = client.search("q", limit=30)

        assert len(refs) == 30
        assert offsets == [0, 25]

    def test_search_matches_summary_or_comments(self, fixture_server):
        seen = []

        def handler(query):
            seen.append(query)
            return 200, {}, json.dumps({"bugs": []}).encode()

        server = fixture_server(routes={"/rest/bug": handler})
        BugzillaClient(f"{server.url}/rest", budget=Budget(30)).search("png heap overflow")

        query = seen[0]
        assert query["j_top"] == ["OR"]
        assert {query["f1"][0], query["f2"][0]} == {"short_desc", "longdesc"}
        assert query["o1"] == query["o2"] == ["allwordssubstr"]
        assert query["v1"] == query["v2"] == ["png heap overflow"]
        assert "quicksearch" not in query


class TestLaunchpadClient:
    def test_search_follows_collection_links(self, tmp_path, fixture_server):
        tree = build_fixture_tree(tmp_path / "fixtures", PNG)
        server = fixture_server(tree / "http")
        client = LaunchpadClient(f"{server.url}/launchpad/devel", budget=Budget(30))

        refs = client.search("png crash")

        assert len(refs) == 1
        assert refs[0].bug_id == "1"
        assert refs[0].attachments[0].attachment_id == "7"
        assert refs[0].attachments[0].filename == "repro.png"
        assert client.download(refs[0].attachments[0], 1024) == LAUNCHPAD_POC


class TestFetchAttachments:
    def test_each_attachment_downloaded_once(self):
        client = CountingClient({"1": PNG_MAGIC + b"one", "2": b"not png"})
        refs = [bug("10", attachment("1")), bug("11", attachment("1"), attachment("2", "notes.txt"))]

        subcorpus = fetch_attachments(client, refs, PNG, Budget(30), workers=2)

        assert sorted(client.downloads) == ["1", "2"]
        assert [f.content for f in subcorpus.files] == [PNG_MAGIC + b"one"]
        assert subcorpus.stats.rejected == 1

    def test_declared_oversize_skipped_without_download(self):
        client = CountingClient({})
        subcorpus = fetch_attachments(client, [bug("1", attachment("3", size=5000))], PNG, Budget(30),
                                      max_file_size=1000)
        assert client.downloads == []
        assert len(subcorpus) == 0

    def test_negative_size_rejected(self):
        with pytest.raises(ValueError):
            attachment("4", size=-1)

    def test_failed_query_skipped(self):
        class FailingClient(CountingClient):
            def search(self, query, limit=50):
                if query == "bad":
                    raise TrackerError("bugzilla: HTTP 503")
                return [bug("7", attachment("8"))]

        client = FailingClient({"8": PNG_MAGIC + b"eight"})
        subcorpus = Subcorpus(SourceModule.BUGTRACKER)

        seen = harvest_tracker(client, ["bad", "good"], PNG, Budget(30), PipelineConfig(extension="png"), subcorpus)

        assert seen == 1
        assert len(subcorpus) == 1
        assert any("503" in w for w in subcorpus.warnings)


class TestRunBugtrackerSearch:
    def test_fixture_run(self, tmp_path, fixture_server):
        tree = build_fixture_tree(tmp_path / "fixtures", PNG)
        server = fixture_server(tree / "http")
        config = PipelineConfig(extension="png", fixtures_dir=tree).with_fixture_endpoints(server.url)
        config.bugtracker.query_count = 2

        subcorpus = run_bugtracker_search(config, PNG, StubLlmClient(fixtures_dir=tree / "llm"), Budget(60))

        assert {f.content for f in subcorpus.files} == {LAUNCHPAD_POC, BUGZILLA_POC}
        assert {f.origin_url for f in subcorpus.files} == {
            f"{server.url}/lp/bugs/1",
            f"{server.url}/bugzilla/show_bug.cgi?id=42",
        }

    def test_single_tracker(self, tmp_path, fixture_server):
        tree = build_fixture_tree(tmp_path / "fixtures", PNG)
        server = fixture_server(tree / "http")
        config = PipelineConfig(extension="png", fixtures_dir=tree).with_fixture_endpoints(server.url)
        config.bugtracker.query_count = 2
        config.bugtracker.trackers = ("bugzilla",)

        subcorpus = run_bugtracker_search(config, PNG, StubLlmClient(fixtures_dir=tree / "llm"), Budget(60))

        assert [f.content for f in subcorpus.files] == [BUGZILLA_POC]
        assert not server.hits("/launchpad")
