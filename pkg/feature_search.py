#!/usr/bin/env python3
"""
Feature-driven Web Search.

The model first lists distinct format features ("PDF with embedded
JavaScript"), then expands each into three complete queries. The top results
of every query seed the same crawler Web Search uses, but without a depth
limit: only the module budget stops it.
"""

from rich.console import Console

from corpus_model import FileTypeSpec, SourceModule, Subcorpus
from exceptions import LlmClientError
from http_utils import Budget
from pipeline_config import PipelineConfig
from query_gen import LlmClient, expand_features, gen_feature_descriptors
from web_search import SearchEngine, crawl, make_engine, search_all

console = Console(stderr=True)

FEATURE_RESULTS_PER_QUERY = 10


def run_feature_search(config: PipelineConfig, spec: FileTypeSpec, client: LlmClient, budget: Budget,
                       collector: Subcorpus | None = None, engine: SearchEngine | None = None) -> Subcorpus:
    subcorpus = collector or Subcorpus(SourceModule.FEATURE)
    params = config.llm.params_for(SourceModule.FEATURE)

    console.print("[blue]feature: generating feature descriptors...[/blue]")
    try:
        descriptors = gen_feature_descriptors(spec, client, params)
    except LlmClientError as e:
        subcorpus.warn(f"Descriptor generation failed, module aborted: {e}")
        return subcorpus
    if not descriptors:
        subcorpus.warn("Model produced no feature descriptors; nothing to search")
        return subcorpus
    console.print(f"[blue]feature: {len(descriptors)} descriptors, expanding into queries...[/blue]")

    plan = expand_features(descriptors, client, params)
    for warning in plan.warnings:
        subcorpus.note(warning)
    if plan.is_empty:
        subcorpus.warn("No feature queries survived expansion")
        return subcorpus

    engine = engine or make_engine(config, budget)
    seeds = search_all(engine, plan.queries, FEATURE_RESULTS_PER_QUERY, budget, subcorpus)
    console.print(f"[blue]feature: {len(seeds)} result URLs from {len(plan)} queries[/blue]")
    return crawl(seeds, spec, budget, config, SourceModule.FEATURE, max_depth=None, collector=subcorpus)
