"""Candidate pipeline: expansion, refinement, toggling, merging.

Expansion runs per label: recommend combos, generate and score each combo
concurrently, drop near-duplicates inside the label's pool, keep the top k
under the label's own axis objective, then attach survivors as children.
Refine, toggle, and merge each produce exactly one child.

The score baseline is always the generation source: the parent node for
expansion, the refined node for refinement, the toggled node's parent for
toggling, and the first merge input for merges.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from . import agents
from . import library as lib
from .errors import (
    EmptyPrompt,
    MalformedPayload,
    ProviderError,
    SelfMerge,
    StrategyNotOnNode,
    ToggleOnRoot,
)
from .graph import Canvas, Origin, OriginKind, Score2D, add_child
from .textdiff import similarity

log = logging.getLogger(__name__)

Observer = Callable[[str, dict], None]


@dataclass(frozen=True)
class PipelineConfig:
    combos_per_label: int = 3
    top_k: int = 3
    similarity_threshold: float = 0.9
    delta_cap: int = 25
    seed: int | None = None
    max_workers: int = 4


@dataclass(frozen=True)
class Candidate:
    label_id: int
    version_index: int
    strategy_ids: tuple[int, ...]
    summary: str
    text: str
    score: Score2D


@dataclass(frozen=True)
class ExpansionFailure:
    label_id: int
    stage: str
    detail: str
    version_index: int | None = None


class Objective(Enum):
    ENGAGEMENT = "engagement"
    EXPOSITION = "exposition"
    SUM = "sum"


def objective_for_label(label_id: int) -> Objective:
    axis = lib.axis_of_label(label_id)
    return Objective.EXPOSITION if axis is lib.Axis.EXPOSITION else Objective.ENGAGEMENT


def _rank_key(objective: Objective):
    if objective is Objective.ENGAGEMENT:
        return lambda pair: (-pair[1].score.engagement, -pair[1].score.exposition, pair[0])
    if objective is Objective.EXPOSITION:
        return lambda pair: (-pair[1].score.exposition, -pair[1].score.engagement, pair[0])
    return lambda pair: (
        -(pair[1].score.engagement + pair[1].score.exposition),
        -pair[1].score.engagement,
        pair[0],
    )


def filter_top_k(candidates: list[Candidate], objective: Objective, k: int) -> list[Candidate]:
    """Top k under the objective; ties break toward the other axis, then input order."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    indexed = list(enumerate(candidates))
    indexed.sort(key=_rank_key(objective))
    return [candidate for _, candidate in indexed[:k]]


def dedupe(
    candidates: list[Candidate], threshold: float
) -> tuple[list[Candidate], list[Candidate]]:
    """Greedy near-duplicate drop, scanning best-scored first.

    A candidate is dropped when its token similarity to an already-kept one
    reaches the threshold. Returns (kept, dropped), each in scan order.
    """
    indexed = list(enumerate(candidates))
    indexed.sort(key=_rank_key(Objective.SUM))
    kept: list[Candidate] = []
    dropped: list[Candidate] = []
    for _, candidate in indexed:
        if any(similarity(candidate.text, keeper.text) >= threshold for keeper in kept):
            dropped.append(candidate)
        else:
            kept.append(candidate)
    return kept, dropped


def _candidates_for_label(
    canvas: Canvas,
    source_id: str,
    label_id: int,
    overall_content: str,
    bias: dict[int, float] | None,
    provider: agents.CompletionProvider,
    models: agents.ModelConfig,
    config: PipelineConfig,
    failures: list[ExpansionFailure],
    observer: Observer | None,
) -> list[Candidate]:
    source = canvas.node(source_id)
    try:
        combos = agents.recommend(
            label_id,
            source.text,
            overall_content,
            config.combos_per_label,
            bias,
            provider=provider,
            params=_reason_params(models, config.seed),
        )
    except (ProviderError, MalformedPayload) as exc:
        failures.append(ExpansionFailure(label_id, "recommend", str(exc)))
        return []

    def build(combo: agents.StrategyCombo) -> Candidate:
        draft = agents.generate(
            source.text,
            overall_content,
            combo.strategy_ids,
            provider=provider,
            params=_gen_params(models, config.seed),
        )
        if observer:
            observer(
                "candidate_generated",
                {
                    "label_id": label_id,
                    "version_index": combo.version_index,
                    "strategies": sorted(draft.strategies),
                    "summary": draft.summary,
                },
            )
        value = agents.score(
            draft.new_text,
            baseline=(source.text, source.score),
            provider=provider,
            params=_score_params(models, config.seed),
            delta_cap=config.delta_cap,
        )
        if observer:
            observer(
                "candidate_scored",
                {
                    "label_id": label_id,
                    "version_index": combo.version_index,
                    "engagement": value.engagement,
                    "exposition": value.exposition,
                },
            )
        return Candidate(
            label_id=label_id,
            version_index=combo.version_index,
            strategy_ids=tuple(sorted(draft.strategies)),
            summary=draft.summary,
            text=draft.new_text,
            score=value,
        )

    candidates: list[Candidate] = []
    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        futures = [(combo, pool.submit(build, combo)) for combo in combos]
        for combo, future in futures:
            try:
                candidates.append(future.result())
            except Exception as exc:
                failures.append(
                    ExpansionFailure(label_id, "generate", str(exc), combo.version_index)
                )
    return candidates


def expand(
    canvas: Canvas,
    source_id: str,
    label_ids,
    overall_content: str = "",
    bias: dict[int, float] | None = None,
    *,
    provider: agents.CompletionProvider,
    models: agents.ModelConfig,
    config: PipelineConfig | None = None,
    observer: Observer | None = None,
) -> tuple[list[str], list[ExpansionFailure]]:
    """Expand one node along the given labels; returns (child ids, failures)."""
    config = config or PipelineConfig()
    canvas.node(source_id)
    added: list[str] = []
    failures: list[ExpansionFailure] = []
    seen_labels: set[int] = set()
    for label_id in label_ids:
        if label_id in seen_labels:
            continue
        seen_labels.add(label_id)
        lib.get_label(label_id)
        pool = _candidates_for_label(
            canvas, source_id, label_id, overall_content, bias,
            provider, models, config, failures, observer,
        )
        kept, dropped = dedupe(pool, config.similarity_threshold)
        for candidate in dropped:
            if observer:
                observer(
                    "candidate_filtered",
                    {
                        "label_id": label_id,
                        "version_index": candidate.version_index,
                        "reason": "duplicate",
                    },
                )
        winners = filter_top_k(kept, objective_for_label(label_id), config.top_k)
        for candidate in kept:
            if candidate not in winners and observer:
                observer(
                    "candidate_filtered",
                    {
                        "label_id": label_id,
                        "version_index": candidate.version_index,
                        "reason": "beyond_top_k",
                    },
                )
        for candidate in winners:
            node_id = add_child(
                canvas,
                [source_id],
                text=candidate.text,
                strategies=frozenset(candidate.strategy_ids),
                origin=Origin.label_expansion([label_id]),
                summary=candidate.summary,
                score=candidate.score,
            )
            added.append(node_id)
    return added, failures


def refine(
    canvas: Canvas,
    node_id: str,
    instruction: str,
    overall_content: str = "",
    *,
    provider: agents.CompletionProvider,
    models: agents.ModelConfig,
    config: PipelineConfig | None = None,
) -> str:
    """Revise one node under a custom instruction; strategies are inherited."""
    config = config or PipelineConfig()
    if not instruction or not instruction.strip():
        raise EmptyPrompt("refine requires a non-empty instruction")
    node = canvas.node(node_id)
    draft = agents.generate(
        node.text,
        overall_content,
        sorted(node.strategies),
        agents.Refinement(custom_prompt=instruction),
        provider=provider,
        params=_gen_params(models, config.seed),
    )
    value = agents.score(
        draft.new_text,
        baseline=(node.text, node.score),
        provider=provider,
        params=_score_params(models, config.seed),
        delta_cap=config.delta_cap,
    )
    return add_child(
        canvas,
        [node_id],
        text=draft.new_text,
        strategies=node.strategies,
        origin=Origin.refine(instruction),
        summary=draft.summary,
        score=value,
    )


def toggle_strategy(
    canvas: Canvas,
    node_id: str,
    strategy_id: int,
    enabled: bool,
    overall_content: str = "",
    *,
    provider: agents.CompletionProvider,
    models: agents.ModelConfig,
    config: PipelineConfig | None = None,
) -> str:
    """Regenerate from the node's parent with one strategy switched on or off."""
    config = config or PipelineConfig()
    lib.get_strategy(strategy_id)
    node = canvas.node(node_id)
    if node.origin.kind is OriginKind.ROOT:
        raise ToggleOnRoot("the original segment has no strategies to toggle")
    if not enabled and strategy_id not in node.strategies:
        raise StrategyNotOnNode(f"strategy {strategy_id} is not applied on {node_id}")
    target = set(node.strategies)
    if enabled:
        target.add(strategy_id)
    else:
        target.discard(strategy_id)
    parent = canvas.node(node.parents[0])
    draft = agents.generate(
        parent.text,
        overall_content,
        sorted(target),
        provider=provider,
        params=_gen_params(models, config.seed),
    )
    value = agents.score(
        draft.new_text,
        baseline=(parent.text, parent.score),
        provider=provider,
        params=_score_params(models, config.seed),
        delta_cap=config.delta_cap,
    )
    return add_child(
        canvas,
        [node_id],
        text=draft.new_text,
        strategies=frozenset(target),
        origin=Origin.toggle_strategy(strategy_id),
        summary=draft.summary,
        score=value,
    )


def merge(
    canvas: Canvas,
    node_a: str,
    node_b: str,
    overall_content: str = "",
    *,
    provider: agents.CompletionProvider,
    models: agents.ModelConfig,
    config: PipelineConfig | None = None,
) -> str:
    """Blend two nodes into one child carrying both parents' strategies."""
    config = config or PipelineConfig()
    if node_a == node_b:
        raise SelfMerge(f"cannot merge {node_a} with itself")
    first = canvas.node(node_a)
    second = canvas.node(node_b)
    union = sorted(first.strategies | second.strategies)
    draft = agents.generate(
        first.text,
        overall_content,
        union,
        agents.Refinement(merge_with=second.text),
        provider=provider,
        params=_gen_params(models, config.seed),
    )
    value = agents.score(
        draft.new_text,
        baseline=(first.text, first.score),
        provider=provider,
        params=_score_params(models, config.seed),
        delta_cap=config.delta_cap,
    )
    return add_child(
        canvas,
        [node_a, node_b],
        text=draft.new_text,
        strategies=frozenset(union),
        origin=Origin.merge(),
        summary=draft.summary,
        score=value,
    )


def _gen_params(models: agents.ModelConfig, seed: int | None) -> agents.CompletionParams:
    return agents.CompletionParams(
        model_name=models.gen_model or "offline-generator",
        temperature=0.7,
        seed=seed,
    )


def _score_params(models: agents.ModelConfig, seed: int | None) -> agents.CompletionParams:
    return agents.CompletionParams(
        model_name=models.score_model or "offline-scorer",
        temperature=0.0,
        seed=seed,
    )


def _reason_params(models: agents.ModelConfig, seed: int | None) -> agents.CompletionParams:
    return agents.CompletionParams(
        model_name=models.reason_model or "offline-reasoner",
        temperature=0.7,
        seed=seed,
    )
