import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from corpus_model import SourceModule
from feature_search import run_feature_search
from http_utils import Budget
from pipeline_config import PipelineConfig
from query_gen import StubLlmClient, describe_target, prompt_digest, render_template
from tests.fixture_data import SHARED, SITE_A, SITE_B, build_fixture_tree
from web_search import SearchEngine

PNG = PipelineConfig(extension="png").file_type_spec()


class RecordingEngine(SearchEngine):
    def __init__(self, results):
        self.results = results
        self.queries = []

    def search(self, query, limit=10):
        self.queries.append(query)
        return list(self.results)


def fixture_config(tree: Path, server_url: str) -> PipelineConfig:
    config = PipelineConfig(extension="png", fixtures_dir=tree).with_fixture_endpoints(server_url)
    config.web.respect_robots = False
    return config


class TestRunFeatureSearch:
    def test_crawl_is_not_depth_limited(self, tmp_path, fixture_server):
        tree = build_fixture_tree(tmp_path / "fixtures", PNG)
        server = fixture_server(tree / "http")
        config = fixture_config(tree, server.url)
        config.web.max_depth = 0

        subcorpus = run_feature_search(config, PNG, StubLlmClient(fixtures_dir=tree / "llm"), Budget(60))

        assert {f.content for f in subcorpus.files} == {SITE_A, SITE_B, SHARED}
        assert all(f.source_module is SourceModule.FEATURE for f in subcorpus.files)

    def test_every_expanded_query_is_searched(self, tmp_path, fixture_server):
        tree = build_fixture_tree(tmp_path / "fixtures", PNG)
        server = fixture_server(tree / "http")
        engine = RecordingEngine([f"{server.url}/site/a.png"])

        subcorpus = run_feature_search(fixture_config(tree, server.url), PNG,
                                       StubLlmClient(fixtures_dir=tree / "llm"), Budget(60), engine=engine)

        assert len(engine.queries) == 6
        assert {f.content for f in subcorpus.files} == {SITE_A}

    def test_no_descriptors(self, tmp_path):
        prompt = render_template("feature_descriptors", target=describe_target(PNG), count=33)
        client = StubLlmClient({prompt_digest(prompt): "\n\n"})
        engine = RecordingEngine([])

        subcorpus = run_feature_search(PipelineConfig(extension="png"), PNG, client, Budget(60), engine=engine)

        assert len(subcorpus) == 0
        assert engine.queries == []
        assert any("descriptors" in w for w in subcorpus.warnings)

    def test_llm_failure_aborts_module(self):
        subcorpus = run_feature_search(PipelineConfig(extension="png"), PNG, StubLlmClient(), Budget(60),
                                       engine=RecordingEngine([]))
        assert len(subcorpus) == 0
        assert any("aborted" in w for w in subcorpus.warnings)
