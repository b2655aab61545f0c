"""Pipeline tests: ranking oracle, dedupe properties, end-to-end expansion."""

import random
import re

import pytest

from scribespace import agents, pipeline
from scribespace import library as lib
from scribespace.agents import CompletionParams, MockProvider, ModelConfig
from scribespace.errors import (
    EmptyPrompt,
    ProviderError,
    SelfMerge,
    StrategyNotOnNode,
    ToggleOnRoot,
)
from scribespace.graph import (
    Origin,
    OriginKind,
    Score2D,
    add_child,
    create_canvas,
    validate_canvas,
)
from scribespace.pipeline import Candidate, Objective, PipelineConfig, dedupe, filter_top_k
from scribespace.textdiff import similarity

SEGMENT = (
    "Tardigrades survive desiccation by replacing the water in their cells "
    "with a glassy sugar matrix that locks proteins in place until rehydration."
)
CONTEXT = "An article on extreme survival tricks in microscopic animals."
MODELS = ModelConfig()
CONFIG = PipelineConfig(seed=11)


def _canvas():
    return create_canvas("d1", (0, len(SEGMENT)), SEGMENT, Score2D(50, 50))


def _candidate(i, eng, exp, text=None):
    return Candidate(
        label_id=5,
        version_index=i,
        strategy_ids=(8,),
        summary="s",
        text=text if text is not None else f"text {i}",
        score=Score2D(eng, exp),
    )


# -- ranking oracle --


def _beats(a, b, objective):
    ia, ca = a
    ib, cb = b
    if objective is Objective.ENGAGEMENT:
        if ca.score.engagement != cb.score.engagement:
            return ca.score.engagement > cb.score.engagement
        if ca.score.exposition != cb.score.exposition:
            return ca.score.exposition > cb.score.exposition
        return ia < ib
    if objective is Objective.EXPOSITION:
        if ca.score.exposition != cb.score.exposition:
            return ca.score.exposition > cb.score.exposition
        if ca.score.engagement != cb.score.engagement:
            return ca.score.engagement > cb.score.engagement
        return ia < ib
    sa = ca.score.engagement + ca.score.exposition
    sb = cb.score.engagement + cb.score.exposition
    if sa != sb:
        return sa > sb
    if ca.score.engagement != cb.score.engagement:
        return ca.score.engagement > cb.score.engagement
    return ia < ib


def _oracle_top_k(candidates, objective, k):
    remaining = list(enumerate(candidates))
    chosen = []
    while remaining and len(chosen) < k:
        best = remaining[0]
        for item in remaining[1:]:
            if _beats(item, best, objective):
                best = item
        chosen.append(best[1])
        remaining.remove(best)
    return chosen


def test_filter_top_k_matches_selection_oracle():
    rng = random.Random(20260815)
    for _ in range(300):
        n = rng.randint(0, 8)
        candidates = [
            _candidate(i, rng.randint(0, 4) * 25, rng.randint(0, 4) * 25)
            for i in range(1, n + 1)
        ]
        k = rng.randint(0, 5)
        for objective in Objective:
            got = filter_top_k(candidates, objective, k)
            want = _oracle_top_k(candidates, objective, k)
            assert got == want, (objective, k, [(c.score.engagement, c.score.exposition) for c in candidates])


def test_filter_top_k_edges():
    assert filter_top_k([], Objective.SUM, 3) == []
    one = [_candidate(1, 10, 20)]
    assert filter_top_k(one, Objective.ENGAGEMENT, 0) == []
    assert filter_top_k(one, Objective.ENGAGEMENT, 5) == one
    with pytest.raises(ValueError):
        filter_top_k(one, Objective.ENGAGEMENT, -1)


# -- dedupe --


def test_dedupe_properties_on_random_pools():
    rng = random.Random(99)
    words = ["flux", "core", "melt", "vent"]
    threshold = 0.8
    for _ in range(200):
        pool = [
            _candidate(
                i,
                rng.randint(0, 100),
                rng.randint(0, 100),
                text=" ".join(rng.choice(words) for _ in range(rng.randint(4, 9))),
            )
            for i in range(1, rng.randint(2, 7))
        ]
        kept, dropped = dedupe(pool, threshold)
        assert sorted(
            (c.version_index, c.text) for c in kept + dropped
        ) == sorted((c.version_index, c.text) for c in pool)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert similarity(a.text, b.text) < threshold
        for d in dropped:
            assert any(similarity(d.text, k.text) >= threshold for k in kept)
        again = dedupe(pool, threshold)
        assert again == (kept, dropped)


def test_dedupe_keeps_best_scored_duplicate():
    a = _candidate(1, 40, 40, text="same words here")
    b = _candidate(2, 90, 90, text="same words here")
    kept, dropped = dedupe([a, b], 0.9)
    assert kept == [b]
    assert dropped == [a]


# -- expansion --


def test_expand_adds_top_k_children_per_label():
    canvas = _canvas()
    added, failures = pipeline.expand(
        canvas, canvas.root_id, [5],
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=CONFIG,
    )
    assert failures == []
    assert len(added) == 3
    allowed = lib.get_label(5).strategy_ids
    for node_id in added:
        node = canvas.node(node_id)
        assert node.parents == (canvas.root_id,)
        assert node.origin.kind is OriginKind.LABEL_EXPANSION
        assert node.origin.label_ids == (5,)
        assert node.strategies and node.strategies <= allowed
        assert 25 <= node.score.engagement <= 75
        assert 25 <= node.score.exposition <= 75
    assert validate_canvas(canvas) == []


def test_expand_is_deterministic():
    def run():
        canvas = _canvas()
        added, _ = pipeline.expand(
            canvas, canvas.root_id, [5, 1],
            overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=CONFIG,
        )
        return [
            (n, canvas.node(n).text, canvas.node(n).score, tuple(sorted(canvas.node(n).strategies)))
            for n in added
        ]

    assert run() == run()


def test_expand_covers_each_requested_label():
    canvas = _canvas()
    added, failures = pipeline.expand(
        canvas, canvas.root_id, [5, 1, 5],
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=CONFIG,
    )
    assert failures == []
    by_label = {}
    for node_id in added:
        label = canvas.node(node_id).origin.label_ids[0]
        by_label.setdefault(label, []).append(node_id)
    assert set(by_label) == {5, 1}
    assert len(by_label[5]) == 3  # repeated label is expanded once
    for node_id in by_label[1]:
        assert canvas.node(node_id).strategies <= lib.get_label(1).strategy_ids


def test_expand_respects_top_k_and_reports_drops():
    events = []
    canvas = _canvas()
    config = PipelineConfig(seed=11, top_k=1)
    added, failures = pipeline.expand(
        canvas, canvas.root_id, [5],
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=config,
        observer=lambda kind, payload: events.append((kind, payload)),
    )
    assert failures == []
    assert len(added) == 1
    generated = [e for e in events if e[0] == "candidate_generated"]
    scored = [e for e in events if e[0] == "candidate_scored"]
    filtered = [e for e in events if e[0] == "candidate_filtered"]
    assert len(generated) == 3
    assert len(scored) == 3
    assert len(filtered) == 2
    assert all(e[1]["reason"] == "beyond_top_k" for e in filtered)


def test_expand_dedupes_with_aggressive_threshold():
    canvas = _canvas()
    config = PipelineConfig(seed=11, similarity_threshold=0.01)
    added, failures = pipeline.expand(
        canvas, canvas.root_id, [5],
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=config,
    )
    assert failures == []
    assert len(added) == 1


class _FailingRecommender:
    def __init__(self, fail_labels):
        self.inner = MockProvider()
        self.fail_labels = fail_labels

    def complete(self, prompt_text, params):
        if "strategy recommendation" in prompt_text:
            match = re.search(r"^Label (\d+) \(", prompt_text, re.MULTILINE)
            if match and int(match.group(1)) in self.fail_labels:
                raise ProviderError("recommender offline")
        return self.inner.complete(prompt_text, params)


def test_expand_records_per_label_failures_and_continues():
    canvas = _canvas()
    added, failures = pipeline.expand(
        canvas, canvas.root_id, [5, 1],
        overall_content=CONTEXT,
        provider=_FailingRecommender({5}), models=MODELS, config=CONFIG,
    )
    assert [f.label_id for f in failures] == [5]
    assert failures[0].stage == "recommend"
    assert added
    assert all(canvas.node(n).origin.label_ids == (1,) for n in added)


class _FailingGenerator:
    def __init__(self):
        self.inner = MockProvider()

    def complete(self, prompt_text, params):
        if "Your task is to revise the" in prompt_text:
            raise ProviderError("generator offline")
        return self.inner.complete(prompt_text, params)


def test_expand_records_per_candidate_failures():
    canvas = _canvas()
    added, failures = pipeline.expand(
        canvas, canvas.root_id, [5],
        overall_content=CONTEXT,
        provider=_FailingGenerator(), models=MODELS, config=CONFIG,
    )
    assert added == []
    assert len(failures) == 3
    assert all(f.stage == "generate" for f in failures)
    assert sorted(f.version_index for f in failures) == [1, 2, 3]


def test_expand_bias_changes_order_not_membership():
    # Weights reorder recommendations before generation; the resulting child
    # set must still satisfy every label-subset invariant.
    canvas = _canvas()
    bias = {s: 4.0 for s in lib.get_label(5).strategy_ids if s % 2 == 0}
    added, failures = pipeline.expand(
        canvas, canvas.root_id, [5], bias=bias,
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=CONFIG,
    )
    assert failures == []
    for node_id in added:
        assert canvas.node(node_id).strategies <= lib.get_label(5).strategy_ids


# -- refine / toggle / merge --


def _seed_child(canvas, strategy_ids):
    draft = agents.generate(
        canvas.node(canvas.root_id).text,
        CONTEXT,
        strategy_ids,
        provider=MockProvider(),
        params=CompletionParams(model_name="offline-generator", seed=11),
    )
    value = agents.score(
        draft.new_text,
        baseline=(canvas.node(canvas.root_id).text, canvas.node(canvas.root_id).score),
        provider=MockProvider(),
        params=CompletionParams(model_name="offline-scorer", seed=11),
    )
    return add_child(
        canvas,
        [canvas.root_id],
        text=draft.new_text,
        strategies=frozenset(draft.strategies),
        origin=Origin.label_expansion([5]),
        summary=draft.summary,
        score=value,
    )


def test_refine_inherits_strategies_and_score():
    canvas = _canvas()
    child = _seed_child(canvas, [11, 13])
    refined = pipeline.refine(
        canvas, child, "make the second sentence shorter",
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=CONFIG,
    )
    node = canvas.node(refined)
    assert node.parents == (child,)
    assert node.origin.kind is OriginKind.REFINE
    assert node.origin.prompt == "make the second sentence shorter"
    assert node.strategies == canvas.node(child).strategies
    # No strategy change, so the offline scorer holds the position steady.
    assert node.score == canvas.node(child).score


def test_refine_rejects_blank_instruction():
    canvas = _canvas()
    child = _seed_child(canvas, [11])
    with pytest.raises(EmptyPrompt):
        pipeline.refine(
            canvas, child, "   ",
            provider=MockProvider(), models=MODELS, config=CONFIG,
        )


def test_toggle_off_removes_one_strategy():
    canvas = _canvas()
    child = _seed_child(canvas, [11, 13])
    toggled = pipeline.toggle_strategy(
        canvas, child, 13, enabled=False,
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=CONFIG,
    )
    node = canvas.node(toggled)
    assert node.parents == (child,)
    assert node.origin.kind is OriginKind.TOGGLE_STRATEGY
    assert node.origin.strategy_id == 13
    assert node.strategies == frozenset({11})
    tags = {int(m) for m in agents.TAG_RE.findall(node.text)}
    assert tags == {11}
    # Both 11 and 13 lead with engagement; dropping one halves the push.
    assert node.score == Score2D(57, 48)


def test_toggle_on_adds_a_strategy():
    canvas = _canvas()
    child = _seed_child(canvas, [11])
    toggled = pipeline.toggle_strategy(
        canvas, child, 14, enabled=True,
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=CONFIG,
    )
    node = canvas.node(toggled)
    assert node.strategies == frozenset({11, 14})
    assert node.score == Score2D(64, 46)


def test_toggle_guards():
    canvas = _canvas()
    child = _seed_child(canvas, [11])
    with pytest.raises(ToggleOnRoot):
        pipeline.toggle_strategy(
            canvas, canvas.root_id, 11, enabled=False,
            provider=MockProvider(), models=MODELS, config=CONFIG,
        )
    with pytest.raises(StrategyNotOnNode):
        pipeline.toggle_strategy(
            canvas, child, 14, enabled=False,
            provider=MockProvider(), models=MODELS, config=CONFIG,
        )


def test_merge_unions_strategies_and_keeps_both_parents():
    canvas = _canvas()
    a = _seed_child(canvas, [11])
    b = _seed_child(canvas, [14])
    merged = pipeline.merge(
        canvas, a, b,
        overall_content=CONTEXT, provider=MockProvider(), models=MODELS, config=CONFIG,
    )
    node = canvas.node(merged)
    assert node.parents == (a, b)
    assert node.origin.kind is OriginKind.MERGE
    assert node.strategies == frozenset({11, 14})
    assert canvas.node(a).text.split()[0] in node.text
    # Baseline is the first parent; only 14 is new relative to it.
    assert node.score == Score2D(
        canvas.node(a).score.engagement + 7, canvas.node(a).score.exposition - 2
    )
    assert validate_canvas(canvas) == []


def test_merge_rejects_self():
    canvas = _canvas()
    a = _seed_child(canvas, [11])
    with pytest.raises(SelfMerge):
        pipeline.merge(canvas, a, a, provider=MockProvider(), models=MODELS, config=CONFIG)
