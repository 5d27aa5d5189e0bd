"""Tests for prompt rendering, response parsing and query plans."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from corpus_model import FileTypeSpec, SourceModule
from exceptions import LlmClientError, MalformedResponse
from query_gen import (
    FEATURE_DESCRIPTOR_COUNT,
    MAX_QUERY_LENGTH,
    QUERIES_PER_FEATURE,
    ModelParams,
    OpenAIChatClient,
    StubLlmClient,
    describe_target,
    expand_features,
    gen_bugtracker_queries,
    gen_feature_descriptors,
    gen_github_queries,
    gen_web_queries,
    parse_response,
    prompt_digest,
    render_template,
)

PNG = FileTypeSpec.from_extension("png")
REGEX = FileTypeSpec.from_description("regular expressions")


def numbered(prefix: str, count: int) -> str:
    return "\n".join(f"{i + 1}. {prefix} {i}" for i in range(count))


class ScriptedClient(StubLlmClient):
    """Returns a different canned reply on each call for the same prompt."""

    def __init__(self, replies):
        super().__init__()
        self.replies = list(replies)

    def complete(self, prompt, params):
        self.calls.append((prompt_digest(prompt), params.model_name))
        if not self.replies:
            raise LlmClientError("no more replies")
        return self.replies.pop(0)


def stub_for(template: str, spec: FileTypeSpec, count: int, reply: str) -> StubLlmClient:
    prompt = render_template(template, target=describe_target(spec), count=count)
    return StubLlmClient({prompt_digest(prompt): reply})


class TestTemplates:
    @pytest.mark.parametrize("name", ["github_queries", "web_queries", "bugtracker_queries", "feature_descriptors"])
    def test_extension_mode_names_extension_only(self, name):
        prompt = render_template(name, target=describe_target(PNG), count=5)
        assert ".png files" in prompt
        assert "{{" not in prompt

    @pytest.mark.parametrize("name", ["github_queries", "web_queries", "bugtracker_queries", "feature_descriptors"])
    def test_description_mode_names_description_only(self, name):
        prompt = render_template(name, target=describe_target(REGEX), count=5)
        assert "regular expressions" in prompt
        assert ".png" not in prompt

    def test_expansion_template(self):
        prompt = render_template("feature_expansion", descriptor="Interlaced PNG (Adam7)", count=3)
        assert "Interlaced PNG (Adam7)" in prompt
        assert "{{" not in prompt


class TestParseResponse:
    def test_strips_markers_and_blank_lines(self):
        queries, warnings = parse_response("1. png test suite\n\n- sample png\n* \"libpng corpus\"\n3) iCCP chunk\n")
        assert queries == ["png test suite", "sample png", "libpng corpus", "iCCP chunk"]
        assert warnings == []

    def test_case_insensitive_duplicates(self):
        queries, warnings = parse_response("PNG samples\npng samples\nother")
        assert queries == ["PNG samples", "other"]
        assert len(warnings) == 1

    def test_long_lines_truncated(self):
        queries, warnings = parse_response("x" * (MAX_QUERY_LENGTH + 40))
        assert len(queries[0]) == MAX_QUERY_LENGTH
        assert warnings

    def test_empty_is_malformed(self):
        with pytest.raises(MalformedResponse):
            parse_response("\n  \n- \n")

    def test_non_text_is_malformed(self):
        with pytest.raises(MalformedResponse):
            parse_response(None)


class TestQueryPlans:
    def test_github_fifty(self):
        client = stub_for("github_queries", PNG, 50, numbered("png repo", 50))
        plan = gen_github_queries(PNG, client)
        assert len(plan) == 50
        assert plan.module is SourceModule.GITHUB
        assert client.calls[0][1] == ModelParams.for_module(SourceModule.GITHUB).model_name

    def test_web_twenty(self):
        client = stub_for("web_queries", PNG, 20, numbered("png sample", 25))
        plan = gen_web_queries(PNG, client)
        assert len(plan) == 20
        assert len(client.calls) == 1

    def test_bugtracker(self):
        client = stub_for("bugtracker_queries", REGEX, 20, numbered("regex crash", 20))
        assert len(gen_bugtracker_queries(REGEX, client)) == 20

    def test_shortfall_reprompts_once(self):
        client = ScriptedClient([numbered("a", 3), numbered("a", 3) + "\nb extra\nc extra"])
        plan = gen_web_queries(PNG, client, count=5)

        assert len(client.calls) == 2
        assert len(plan) == 5
        assert plan.warnings == ()

    def test_shortfall_after_reprompt_warns(self):
        client = ScriptedClient([numbered("a", 3), numbered("a", 3)])
        plan = gen_web_queries(PNG, client, count=5)

        assert len(plan) == 3
        assert any("3 of 5" in w for w in plan.warnings)

    def test_malformed_then_good(self):
        client = ScriptedClient(["", numbered("q", 4)])
        plan = gen_github_queries(PNG, client, count=4)
        assert len(plan) == 4

    def test_client_error_propagates(self):
        with pytest.raises(LlmClientError):
            gen_github_queries(PNG, StubLlmClient())


class TestFeatureExpansion:
    def test_thirty_three_by_three(self):
        descriptors = [f"feature {i}" for i in range(FEATURE_DESCRIPTOR_COUNT)]
        responses = {}
        prompt = render_template("feature_descriptors", target=describe_target(PNG), count=FEATURE_DESCRIPTOR_COUNT)
        responses[prompt_digest(prompt)] = "\n".join(descriptors)
        for descriptor in descriptors:
            expansion = render_template("feature_expansion", descriptor=descriptor, count=QUERIES_PER_FEATURE)
            responses[prompt_digest(expansion)] = "\n".join(f"{descriptor} query {j}" for j in range(3))
        client = StubLlmClient(responses)

        found = gen_feature_descriptors(PNG, client)
        plan = expand_features(found, client)

        assert len(found) == 33
        assert len(plan) == 99

    def test_extra_descriptors_dropped(self):
        client = stub_for("feature_descriptors", PNG, 2, "one\ntwo\nthree")
        assert gen_feature_descriptors(PNG, client, count=2) == ["one", "two"]

    def test_failed_descriptor_skipped(self):
        expansion = render_template("feature_expansion", descriptor="works", count=2)
        client = StubLlmClient({prompt_digest(expansion): "works a\nworks b"})

        plan = expand_features(["works", "unknown"], client, per_descriptor=2)

        assert plan.queries == ("works a", "works b")
        assert any("unknown" in w for w in plan.warnings)

    def test_expansions_deduplicated_across_descriptors(self):
        responses = {}
        for descriptor in ("a", "b"):
            prompt = render_template("feature_expansion", descriptor=descriptor, count=2)
            responses[prompt_digest(prompt)] = f"shared query\n{descriptor} only"
        plan = expand_features(["a", "b"], StubLlmClient(responses), per_descriptor=2)
        assert plan.queries == ("shared query", "a only", "b only")


class TestClients:
    def test_stub_reads_fixture_dir(self, tmp_path):
        prompt = "hello"
        (tmp_path / f"{prompt_digest(prompt)}.txt").write_text("world")
        assert StubLlmClient(fixtures_dir=tmp_path).complete(prompt, ModelParams("m")) == "world"

    def test_openai_client_needs_key(self, monkeypatch):
        monkeypatch.delenv("SEEDFORGE_LLM_API_KEY", raising=False)
        with pytest.raises(LlmClientError):
            OpenAIChatClient()
