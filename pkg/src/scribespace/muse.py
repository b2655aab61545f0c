"""Reflective coaching layer: session analysis, suggestions, strategy bias.

A report summarizes the author's editing history and proposes next moves.
Accepting or rejecting a suggestion nudges per-strategy weights, which only
ever reorder recommended combos; membership of a label's strategy set is
never altered by feedback.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import agents, prompts
from . import library as lib
from .errors import UnknownSuggestion

BIAS_FLOOR = 0.25
BIAS_CEILING = 4.0
ACCEPT_FACTOR = 1.5
REJECT_FACTOR = 0.67


@dataclass(frozen=True)
class MuseSuggestion:
    index: int
    label_id: int | None
    strategy_id: int | None
    rationale: str

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "label_id": self.label_id,
            "strategy_id": self.strategy_id,
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MuseSuggestion":
        return cls(
            index=data["index"],
            label_id=data.get("label_id"),
            strategy_id=data.get("strategy_id"),
            rationale=data["rationale"],
        )


@dataclass(frozen=True)
class MuseReport:
    strengths: tuple[str, ...]
    weaknesses: tuple[str, ...]
    patterns: tuple[str, ...]
    suggestions: tuple[MuseSuggestion, ...]

    def to_dict(self) -> dict:
        return {
            "strengths": list(self.strengths),
            "weaknesses": list(self.weaknesses),
            "patterns": list(self.patterns),
            "suggestions": [s.to_dict() for s in self.suggestions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MuseReport":
        return cls(
            strengths=tuple(data["strengths"]),
            weaknesses=tuple(data["weaknesses"]),
            patterns=tuple(data["patterns"]),
            suggestions=tuple(MuseSuggestion.from_dict(s) for s in data["suggestions"]),
        )


# History lines are the canonical serialization of author actions fed to the
# analyzer. Session code writes them; the offline provider parses them back.

def history_expand(label_ids, count: int) -> str:
    ids = ",".join(str(l) for l in label_ids)
    return f"expand labels={ids} count={count}"


def history_confirm(node_id: str, strategy_ids) -> str:
    ids = ",".join(str(s) for s in sorted(strategy_ids)) or "-"
    return f"confirm node={node_id} strategies={ids}"


def history_refine(node_id: str, instruction: str) -> str:
    return f"refine node={node_id} prompt={instruction}"


def history_toggle(node_id: str, strategy_id: int, enabled: bool) -> str:
    return f"toggle node={node_id} strategy={strategy_id} {'on' if enabled else 'off'}"


def history_merge(node_a: str, node_b: str) -> str:
    return f"merge a={node_a} b={node_b}"


def history_apply(node_id: str) -> str:
    return f"apply node={node_id}"


def history_verdict(suggestion_index: int, accepted: bool) -> str:
    return f"verdict suggestion={suggestion_index} {'accepted' if accepted else 'rejected'}"


def analyze(
    history_lines,
    *,
    provider: agents.CompletionProvider,
    params: agents.CompletionParams,
) -> MuseReport:
    """Run the analyzer over the session history and build a report."""
    prompt = prompts.build_analyzer_prompt("\n".join(history_lines))
    data = agents.call_with_retries(
        provider, prompt, params, lambda raw: agents.parse_agent_payload(raw, "MuseOut")
    )
    suggestions = tuple(
        MuseSuggestion(
            index=i,
            label_id=item.get("label_id"),
            strategy_id=item.get("strategy_id"),
            rationale=item["rationale"],
        )
        for i, item in enumerate(data["suggestions"], start=1)
    )
    return MuseReport(
        strengths=tuple(data["strengths"]),
        weaknesses=tuple(data["weaknesses"]),
        patterns=tuple(data["patterns"]),
        suggestions=suggestions,
    )


def apply_verdict(
    bias: dict[int, float], strategy_ids, accepted: bool
) -> dict[int, float]:
    """Multiply the named strategies' weights up or down, clamped to bounds."""
    factor = ACCEPT_FACTOR if accepted else REJECT_FACTOR
    updated = dict(bias)
    for sid in strategy_ids:
        weight = updated.get(sid, 1.0) * factor
        updated[sid] = max(BIAS_FLOOR, min(BIAS_CEILING, weight))
    return updated


def affected_strategies(suggestion: MuseSuggestion) -> tuple[int, ...]:
    if suggestion.strategy_id is not None:
        return (suggestion.strategy_id,)
    if suggestion.label_id is not None:
        return tuple(sorted(lib.get_label(suggestion.label_id).strategy_ids))
    return ()


def ingest_feedback(
    bias: dict[int, float],
    report: MuseReport,
    suggestion_index: int,
    accepted: bool,
) -> tuple[dict[int, float], tuple[int, ...]]:
    """Apply a verdict on one suggestion; returns (new bias, affected ids)."""
    matches = [s for s in report.suggestions if s.index == suggestion_index]
    if not matches:
        raise UnknownSuggestion(f"no suggestion with index {suggestion_index}")
    targets = affected_strategies(matches[0])
    return apply_verdict(bias, targets, accepted), targets


def bias_adjust(combos, bias: dict[int, float]):
    """Reorder recommended combos by weight; see agents.reorder_by_bias."""
    return agents.reorder_by_bias(combos, bias)
