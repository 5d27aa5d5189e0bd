"""
Search-query generation for the gathering modules.

Each module asks a chat-completion model for a batch of search strings using a
fixed prompt template from prompts/. Templates use {{ name }} placeholders and
mention the target either by extension or by description, never both.

The client is pluggable: OpenAIChatClient talks to any OpenAI-compatible
endpoint, StubLlmClient replays canned responses keyed by the sha256 of the
prompt so the whole pipeline can run offline and deterministically.
"""

import hashlib
import os
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

from rich.console import Console

from corpus_model import FileTypeSpec, SourceModule
from exceptions import LlmClientError, MalformedResponse

console = Console(stderr=True)

PROMPTS_DIR = Path(__file__).parent / "prompts"

GITHUB_QUERY_COUNT = 50
WEB_QUERY_COUNT = 20
FEATURE_DESCRIPTOR_COUNT = 33
QUERIES_PER_FEATURE = 3
BUGTRACKER_QUERY_COUNT = 20
MAX_QUERY_LENGTH = 256

DEFAULT_MODELS = {
    SourceModule.GITHUB: "gpt-4.1",
    SourceModule.WEB: "gpt-4o",
    SourceModule.FEATURE: "gpt-4.1",
    SourceModule.BUGTRACKER: "gpt-4o",
}

# "1. foo", "2) foo", "- foo", "* foo", "• foo"
LIST_MARKER = re.compile(r"^\s*(?:\d+\s*[.):-]\s*|[-*•]\s+)")


@dataclass(frozen=True)
class ModelParams:
    model_name: str
    temperature: float = 1.0
    max_output_tokens: int = 2048

    @classmethod
    def for_module(cls, module: SourceModule) -> "ModelParams":
        return cls(model_name=DEFAULT_MODELS[module])


@dataclass(frozen=True)
class QueryPlan:
    """Search strings generated for one module, plus the prompt that produced them."""

    module: SourceModule
    queries: tuple[str, ...]
    prompt_used: str
    model_name: str
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.queries)

    @property
    def is_empty(self) -> bool:
        return not self.queries


class LlmClient(ABC):
    """Chat-completion client. Implementations must allow concurrent calls."""

    @abstractmethod
    def complete(self, prompt: str, params: ModelParams) -> str:
        ...


class OpenAIChatClient(LlmClient):
    """Client for any OpenAI-compatible chat-completions endpoint."""

    def __init__(self, api_key: str | None = None, base_url: str | None = None,
                 timeout: float = 120.0, max_retries: int = 2):
        from openai import OpenAI

        api_key = api_key or os.environ.get("SEEDFORGE_LLM_API_KEY")
        if not api_key:
            raise LlmClientError("SEEDFORGE_LLM_API_KEY is not set")
        self.client = OpenAI(
            api_key=api_key,
            base_url=base_url or os.environ.get("SEEDFORGE_LLM_BASE_URL") or None,
            timeout=timeout,
            max_retries=max_retries,
        )

    def complete(self, prompt: str, params: ModelParams) -> str:
        import openai

        try:
            response = self.client.chat.completions.create(
                model=params.model_name,
                messages=[{"role": "user", "content": prompt}],
                temperature=params.temperature,
                max_tokens=params.max_output_tokens,
            )
        except openai.APIError as e:
            raise LlmClientError(f"{params.model_name}: {e}") from e
        if not response.choices:
            return ""
        return response.choices[0].message.content or ""


class StubLlmClient(LlmClient):
    """Replays canned responses keyed by prompt digest.

    Responses come from the `responses` mapping first, then from
    `<fixtures_dir>/<digest>.txt`. An unknown prompt is a client error, the
    same way an unreachable endpoint would be.
    """

    def __init__(self, responses: dict[str, str] | None = None, fixtures_dir: Path | None = None):
        self.responses = dict(responses or {})
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def complete(self, prompt: str, params: ModelParams) -> str:
        digest = prompt_digest(prompt)
        with self._lock:
            self.calls.append((digest, params.model_name))
        if digest in self.responses:
            return self.responses[digest]
        if self.fixtures_dir is not None:
            path = self.fixtures_dir / f"{digest}.txt"
            if path.exists():
                return path.read_text(encoding="utf-8")
        raise LlmClientError(f"No canned response for prompt {digest[:12]}")


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def load_template(name: str) -> str:
    path = PROMPTS_DIR / f"{name}.txt"
    return path.read_text(encoding="utf-8")


def render_template(name: str, **kwargs) -> str:
    """Load a prompt template and replace its {{ key }} placeholders."""
    template = load_template(name)
    for key, value in kwargs.items():
        template = template.replace(f"{{{{ {key} }}}}", str(value))
    return template


def describe_target(spec: FileTypeSpec) -> str:
    if spec.is_description:
        return f'files of the type described as "{spec.description}"'
    return f".{spec.primary_extension} files"


def parse_response(text) -> tuple[list[str], list[str]]:
    """Split a model response into distinct queries, one per line.

    Returns (queries, warnings). Raises MalformedResponse when nothing usable
    is left after stripping list markers and blank lines.
    """
    if not isinstance(text, str):
        raise MalformedResponse(f"Expected text, got {type(text).__name__}")

    queries = []
    warnings = []
    seen = set()
    for line in text.splitlines():
        query = LIST_MARKER.sub("", line, count=1).strip().strip('"').strip()
        if not query:
            continue
        if len(query) > MAX_QUERY_LENGTH:
            warnings.append(f"Truncated query longer than {MAX_QUERY_LENGTH} characters")
            query = query[:MAX_QUERY_LENGTH].rstrip()
        key = query.casefold()
        if key in seen:
            warnings.append(f"Dropped duplicate query: {query}")
            continue
        seen.add(key)
        queries.append(query)

    if not queries:
        raise MalformedResponse("Response contained no queries")
    return queries, warnings


def _collect(prompt: str, client: LlmClient, params: ModelParams, count: int,
             label: str) -> tuple[list[str], list[str]]:
    """Ask for `count` lines, re-prompting once on a shortfall or malformed reply."""
    queries: list[str] = []
    warnings: list[str] = []
    seen = set()

    for attempt in range(2):
        text = client.complete(prompt, params)
        try:
            lines, parse_warnings = parse_response(text)
        except MalformedResponse as e:
            warnings.append(f"{label}: {e}")
            continue
        warnings.extend(f"{label}: {w}" for w in parse_warnings)
        for line in lines:
            if line.casefold() in seen:
                continue
            seen.add(line.casefold())
            queries.append(line)
        if len(queries) >= count:
            break
        if attempt == 0:
            console.print(f"[dim]{label}: got {len(queries)} of {count}, re-prompting once[/dim]")

    if len(queries) < count:
        warnings.append(f"{label}: model returned {len(queries)} of {count} requested")
    return queries[:count], warnings


def _report(warnings: list[str]) -> None:
    for warning in warnings:
        console.print(f"[yellow]{warning}[/yellow]")


def _plan(module: SourceModule, template: str, spec: FileTypeSpec, client: LlmClient,
          params: ModelParams | None, count: int) -> QueryPlan:
    params = params or ModelParams.for_module(module)
    prompt = render_template(template, target=describe_target(spec), count=count)
    queries, warnings = _collect(prompt, client, params, count, module.value)
    _report(warnings)
    return QueryPlan(
        module=module,
        queries=tuple(queries),
        prompt_used=prompt,
        model_name=params.model_name,
        warnings=tuple(warnings),
    )


def gen_github_queries(spec: FileTypeSpec, client: LlmClient, params: ModelParams | None = None,
                       count: int = GITHUB_QUERY_COUNT) -> QueryPlan:
    """Repository-search queries; raises LlmClientError if the endpoint fails."""
    return _plan(SourceModule.GITHUB, "github_queries", spec, client, params, count)


def gen_web_queries(spec: FileTypeSpec, client: LlmClient, params: ModelParams | None = None,
                    count: int = WEB_QUERY_COUNT) -> QueryPlan:
    return _plan(SourceModule.WEB, "web_queries", spec, client, params, count)


def gen_bugtracker_queries(spec: FileTypeSpec, client: LlmClient, params: ModelParams | None = None,
                           count: int = BUGTRACKER_QUERY_COUNT) -> QueryPlan:
    return _plan(SourceModule.BUGTRACKER, "bugtracker_queries", spec, client, params, count)


def gen_feature_descriptors(spec: FileTypeSpec, client: LlmClient, params: ModelParams | None = None,
                            count: int = FEATURE_DESCRIPTOR_COUNT) -> list[str]:
    """One-shot prompt for distinct format features; extra lines beyond `count` are dropped."""
    return list(_plan(SourceModule.FEATURE, "feature_descriptors", spec, client, params, count).queries)


def expand_features(descriptors: list[str], client: LlmClient, params: ModelParams | None = None,
                    per_descriptor: int = QUERIES_PER_FEATURE) -> QueryPlan:
    """Turn each feature descriptor into `per_descriptor` complete search queries.

    A descriptor whose request fails is skipped; the rest still contribute.
    The plan is the order-preserving, case-folded dedup of all expansions.
    """
    params = params or ModelParams.for_module(SourceModule.FEATURE)
    queries: list[str] = []
    warnings: list[str] = []
    prompts: list[str] = []
    seen = set()

    if not descriptors:
        warnings.append("feature: no descriptors to expand")

    for descriptor in descriptors:
        prompt = render_template("feature_expansion", descriptor=descriptor, count=per_descriptor)
        prompts.append(prompt)
        try:
            expansion, expansion_warnings = _collect(
                prompt, client, params, per_descriptor, f"feature '{descriptor}'"
            )
        except LlmClientError as e:
            warnings.append(f"feature '{descriptor}': skipped ({e})")
            continue
        warnings.extend(expansion_warnings)
        for query in expansion:
            if query.casefold() in seen:
                continue
            seen.add(query.casefold())
            queries.append(query)

    _report(warnings)
    return QueryPlan(
        module=SourceModule.FEATURE,
        queries=tuple(queries),
        prompt_used=prompts[0] if prompts else "",
        model_name=params.model_name,
        warnings=tuple(warnings),
    )


def empty_plan(module: SourceModule, reason: str) -> QueryPlan:
    return QueryPlan(module=module, queries=(), prompt_used="", model_name="", warnings=(reason,))
