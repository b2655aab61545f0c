"""Agent runtime: completion providers, payload parsing, retries, agent ops.

The live provider targets an OpenAI-compatible chat-completion endpoint. The
mock provider is a pure function of (prompt_text, seed): it parses its inputs
back out of the finished prompt (see prompts.py fill conventions) and applies
deterministic text transforms, so every golden and property test runs with
zero network access.

Mock text model: applying strategy ``s`` to a text appends a sentinel tag
``⟦Ss⟧`` plus a canned sentence, and annotates roughly one word in eight
(word index ≡ s mod 8) with ``⟨s⟩``. Tags drive the mock scorer; annotations
keep sibling drafts lexically distinct so near-duplicate filtering behaves
like it does on real generations.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import random
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

from . import library as lib
from . import prompts
from .errors import DegenerateOutput, InvalidDraft, MalformedPayload, ProviderError
from .graph import Score2D

log = logging.getLogger(__name__)

MAX_PAYLOAD_RETRIES = 3  # correction re-asks after the initial call

TAG_OPEN = "⟦S"
TAG_CLOSE = "⟧"
TAG_RE = re.compile(r"⟦S(\d+)⟧")
_STRATEGY_LINE_RE = re.compile(r"^Strategy_(\d+) \(", re.MULTILINE)
_LABEL_HEADER_RE = re.compile(r"^Label (\d+) \(", re.MULTILINE)
_COMBO_COUNT_RE = re.compile(r"Provide (\d+) different versions")
_STRATEGY_TOKEN_RE = re.compile(r"^Strategy_(\d+)$")
_BASELINE_SCORE_RE = re.compile(r"and its score\s*(\{[^}]*\})")


@dataclass(frozen=True)
class CompletionParams:
    model_name: str
    temperature: float = 0.7
    max_tokens: int = 1024
    seed: int | None = None


class CompletionProvider(Protocol):
    def complete(self, prompt_text: str, params: CompletionParams) -> str: ...


@dataclass(frozen=True)
class ModelConfig:
    """Model-name routing: generation, reasoning, and scoring slots."""

    api_base: str = "https://api.openai.com/v1"
    api_key: str = ""
    gen_model: str = ""
    reason_model: str = ""
    score_model: str = ""

    @classmethod
    def from_env(cls) -> "ModelConfig":
        return cls(
            api_base=os.environ.get("SB_API_BASE", "https://api.openai.com/v1"),
            api_key=os.environ.get("SB_API_KEY", ""),
            gen_model=os.environ.get("SB_MODEL_GEN", ""),
            reason_model=os.environ.get("SB_MODEL_REASON", ""),
            score_model=os.environ.get("SB_MODEL_SCORE", ""),
        )


def _redacted(headers: dict) -> dict:
    safe = dict(headers)
    if "Authorization" in safe:
        safe["Authorization"] = "Bearer ***"
    return safe


class LiveProvider:
    """OpenAI-compatible chat-completion client with transport retries."""

    def __init__(self, config: ModelConfig, timeout: float = 60.0, transport_retries: int = 2):
        if not config.api_key:
            raise ProviderError("live provider requires an API key (SB_API_KEY)")
        self._config = config
        self._timeout = timeout
        self._transport_retries = transport_retries

    def complete(self, prompt_text: str, params: CompletionParams) -> str:
        if not params.model_name:
            raise ProviderError("no model name configured for this call")
        url = self._config.api_base.rstrip("/") + "/chat/completions"
        headers = {
            "Authorization": f"Bearer {self._config.api_key}",
            "Content-Type": "application/json",
        }
        body: dict = {
            "model": params.model_name,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            body["seed"] = params.seed

        log.debug("POST %s headers=%s model=%s prompt_bytes=%d",
                  url, _redacted(headers), params.model_name, len(prompt_text))
        last_error: Exception | None = None
        for attempt in range(self._transport_retries + 1):
            try:
                response = httpx.post(url, headers=headers, json=body, timeout=self._timeout)
            except httpx.HTTPError as exc:
                last_error = exc
                time.sleep(0.5 * (attempt + 1))
                continue
            if response.status_code != 200:
                raise ProviderError(
                    f"provider returned HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                data = response.json()
                content = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError) as exc:
                raise ProviderError(f"unexpected completion envelope: {exc}")
            log.debug("completion received, %d bytes", len(content))
            return content
        raise ProviderError(f"transport failure after retries: {last_error}")


def _stable_rng(prompt_text: str, seed: int | None) -> random.Random:
    digest = hashlib.sha256(f"{seed}|{prompt_text}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def canned_sentence(strategy_id: int) -> str:
    card = lib.get_strategy(strategy_id)
    return f"{TAG_OPEN}{strategy_id}{TAG_CLOSE} {card.name}: {card.usage_note}"


def _annotate_words(text: str, strategy_id: int) -> str:
    # Mark every eighth word so drafts from different combos stay lexically
    # distinct even on long sources.
    units = re.findall(r"\S+|\s+", text)
    word_index = 0
    for i, unit in enumerate(units):
        if unit.strip():
            if word_index % 8 == strategy_id % 8 and TAG_OPEN not in unit:
                units[i] = f"{unit}⟨{strategy_id}⟩"
            word_index += 1
    return "".join(units)


class MockProvider:
    """Deterministic offline provider; output is pure in (prompt, seed)."""

    def complete(self, prompt_text: str, params: CompletionParams) -> str:
        if "strategy recommendation" in prompt_text:
            return self._recommend(prompt_text, params.seed)
        if "Your task is to revise the" in prompt_text:
            return self._generate(prompt_text)
        if "You are an engaging audience" in prompt_text:
            return self._score(prompt_text)
        if "reflective writing coach" in prompt_text:
            return self._analyze(prompt_text)
        raise ProviderError("mock provider cannot serve this prompt kind")

    # -- recommender --

    def _recommend(self, prompt: str, seed: int | None) -> str:
        allowed = sorted({int(m) for m in _STRATEGY_LINE_RE.findall(prompt)})
        label_match = _LABEL_HEADER_RE.search(prompt)
        count_match = _COMBO_COUNT_RE.search(prompt)
        if not allowed or not label_match or not count_match:
            raise ProviderError("mock recommender could not parse its prompt")
        label_id = int(label_match.group(1))
        n = int(count_match.group(1))
        axis = lib.Axis.EXPOSITION if label_id <= 4 else lib.Axis.ENGAGEMENT

        anchors = [s for s in allowed if lib.primary_axis(s) is axis] or list(allowed)
        pool: list[frozenset[int]] = []
        for size in (1, 2, 3):
            if size > len(allowed):
                break
            for combo in itertools.combinations(allowed, size):
                if any(s in anchors for s in combo):
                    pool.append(frozenset(combo))

        rng = _stable_rng(prompt, seed)
        seen: set[frozenset[int]] = set()
        combos: list[list[int]] = []
        for index in range(1, n + 1):
            # Versions alternate single-strategy and two-strategy combos.
            want = 2 if index % 2 == 0 else 1
            want = min(want, len(allowed))
            candidates = [c for c in pool if len(c) == want and c not in seen]
            if not candidates:
                candidates = [c for c in pool if c not in seen]
            if not candidates:
                raise ProviderError(
                    f"mock recommender exhausted distinct combos for label {label_id}"
                )
            choice = rng.choice(candidates)
            seen.add(choice)
            combos.append(sorted(choice))

        payload = {
            f"Version{i}": [f"Strategy_{s}" for s in combo]
            for i, combo in enumerate(combos, start=1)
        }
        return json.dumps(payload)

    # -- generator --

    def _generate(self, prompt: str) -> str:
        combo = sorted({int(m) for m in _STRATEGY_LINE_RE.findall(prompt)})
        source = prompts.extract_fenced_after(prompt, "to the Text:")
        if source is None:
            raise ProviderError("mock generator could not find the source text")
        merge_with = prompts.extract_fenced_after(prompt, prompts.MERGE_INSTRUCTION_HEADER)
        instruction = prompts.extract_fenced_after(prompt, prompts.CUSTOM_INSTRUCTION_HEADER)

        text = source
        summary_bits: list[str] = []
        if merge_with is not None:
            text = f"{text}\n{merge_with}"
            summary_bits.append("merged both versions")

        existing = {int(m) for m in TAG_RE.findall(text)}
        additions = [s for s in combo if s not in existing]
        for sid in additions:
            text = _annotate_words(text, sid)
        if additions:
            text = text + " " + " ".join(canned_sentence(s) for s in additions)
            summary_bits.append(
                "applied " + ", ".join(f"Strategy_{s}" for s in additions)
            )
        if instruction is not None:
            text = f"{text} (Author note applied: {instruction})"
            summary_bits.append(f"followed instruction: {instruction}")
        if not summary_bits:
            summary_bits.append("no textual change required")

        payload = {
            "strategies": [f"Strategy_{s}" for s in combo],
            "summary": "; ".join(summary_bits),
            "newText": text,
        }
        return json.dumps(payload)

    # -- scorer --

    def _score(self, prompt: str) -> str:
        current = prompts.extract_fenced_after(prompt, prompts.CURRENT_VERSION_HEADER)
        if current is None:
            raise ProviderError("mock scorer could not find the text to evaluate")
        baseline_text = prompts.extract_fenced_after(prompt, "This is the original text:")
        score_match = _BASELINE_SCORE_RE.search(prompt)
        if baseline_text is not None and score_match:
            base = json.loads(score_match.group(1))
            base_eng, base_exp = int(base["engagement"]), int(base["exposition"])
            base_tags = {int(m) for m in TAG_RE.findall(baseline_text)}
        else:
            base_eng, base_exp = 50, 50
            base_tags = set()

        new_tags = {int(m) for m in TAG_RE.findall(current)} - base_tags
        eng_tags = sum(1 for s in new_tags if lib.primary_axis(s) is lib.Axis.ENGAGEMENT)
        exp_tags = len(new_tags) - eng_tags
        engagement = base_eng + 7 * eng_tags - 2 * exp_tags
        exposition = base_exp + 7 * exp_tags - 2 * eng_tags
        payload = {
            "engagement": engagement,
            "exposition": exposition,
            "explanation": f"{len(new_tags)} newly applied technique tags",
        }
        return json.dumps(payload)

    # -- analyzer --

    def _analyze(self, prompt: str) -> str:
        history = prompts.extract_fenced_after(prompt, "interaction history")
        if history is None:
            raise ProviderError("mock analyzer could not find the history block")
        lines = [ln for ln in history.splitlines() if ln.strip()]
        empty = {"strengths": [], "weaknesses": [], "patterns": [], "suggestions": []}
        if not lines:
            return json.dumps(empty)

        labels_used: list[int] = []
        confirmed: list[int] = []
        refines = merges = toggles = confirms = 0
        for line in lines:
            if line.startswith("expand "):
                m = re.search(r"labels=([\d,]+)", line)
                if m:
                    labels_used.extend(int(x) for x in m.group(1).split(","))
            elif line.startswith("confirm "):
                confirms += 1
                m = re.search(r"strategies=([\d,]+)", line)
                if m:
                    confirmed.extend(int(x) for x in m.group(1).split(","))
            elif line.startswith("refine "):
                refines += 1
            elif line.startswith("merge "):
                merges += 1
            elif line.startswith("toggle "):
                toggles += 1

        strengths: list[str] = []
        if confirms:
            strengths.append("Reviews and confirms candidate drafts before applying them.")
        if merges:
            strengths.append("Combines parallel drafts instead of discarding alternatives.")
        if refines:
            strengths.append("Steers revisions with custom instructions.")

        weaknesses: list[str] = []
        if not refines:
            weaknesses.append("Relies on label expansion alone; custom instructions go unused.")
        if not toggles:
            weaknesses.append("Never isolates a single technique by toggling it off.")
        if labels_used and all(l >= 5 for l in labels_used):
            weaknesses.append("Exploration leans entirely on engagement labels.")
        elif labels_used and all(l <= 4 for l in labels_used):
            weaknesses.append("Exploration leans entirely on exposition labels.")

        patterns: list[str] = []
        if labels_used:
            top_label = min(
                set(labels_used), key=lambda l: (-labels_used.count(l), l)
            )
            patterns.append(f"Label {top_label} drives most expansions.")
        if confirmed:
            top_strategy = min(
                set(confirmed), key=lambda s: (-confirmed.count(s), s)
            )
            patterns.append(f"Strategy_{top_strategy} recurs in confirmed drafts.")

        suggestions: list[dict] = []
        used = set(labels_used)
        if labels_used and all(l >= 5 for l in labels_used):
            target = min(l for l in range(1, 5) if l not in used)
            suggestions.append({
                "label_id": target,
                "strategy_id": None,
                "rationale": "Balance the narrative push with an exposition-side pass.",
            })
        elif labels_used and all(l <= 4 for l in labels_used):
            target = min(l for l in range(5, 9) if l not in used)
            suggestions.append({
                "label_id": target,
                "strategy_id": None,
                "rationale": "Add an engagement-side pass to the factual groundwork.",
            })
        elif labels_used:
            unused = [l for l in range(1, 9) if l not in used]
            if unused:
                target = min(unused)
                suggestions.append({
                    "label_id": target,
                    "strategy_id": None,
                    "rationale": "This label's techniques are untried so far.",
                })
        if labels_used:
            top_label = min(set(labels_used), key=lambda l: (-labels_used.count(l), l))
            pool = sorted(lib.get_label(top_label).strategy_ids)
            untried = [s for s in pool if s not in set(confirmed)]
            if untried:
                suggestions.append({
                    "label_id": None,
                    "strategy_id": untried[0],
                    "rationale": (
                        f"Strategy_{untried[0]} sits in your most-used label "
                        "but has never reached a confirmed draft."
                    ),
                })

        return json.dumps({
            "strengths": strengths,
            "weaknesses": weaknesses,
            "patterns": patterns,
            "suggestions": suggestions,
        })


# -- payload parsing --


@dataclass(frozen=True)
class StrategyCombo:
    version_index: int
    strategy_ids: tuple[int, ...]

    def __post_init__(self):
        if self.version_index < 1:
            raise MalformedPayload(f"version index {self.version_index} < 1")
        if not self.strategy_ids:
            raise MalformedPayload("empty strategy combo")
        if len(set(self.strategy_ids)) != len(self.strategy_ids):
            raise MalformedPayload(f"duplicate ids in combo {self.strategy_ids}")
        for sid in self.strategy_ids:
            if sid not in lib.STRATEGY_IDS:
                raise MalformedPayload(f"strategy id {sid} outside 1..25")


@dataclass(frozen=True)
class Draft:
    strategies: tuple[int, ...]
    summary: str
    new_text: str


@dataclass(frozen=True)
class RawScore:
    engagement: int
    exposition: int
    explanation: str = ""


@dataclass(frozen=True)
class RubricBands:
    """Five 20-point score bands per axis, as shown in the scorer prompt."""

    engagement: tuple[tuple[int, int, str], ...]
    exposition: tuple[tuple[int, int, str], ...]

    def partitions_range(self) -> bool:
        for bands in (self.engagement, self.exposition):
            expected_low = 0
            for low, high, _ in bands:
                if low != expected_low or high < low:
                    return False
                expected_low = high + 1
            if expected_low != 101:
                return False
        return True


DEFAULT_RUBRIC = RubricBands(
    engagement=(
        (0, 20, "Extremely boring and dry, no storytelling elements"),
        (21, 40, "Barely engaging, logical but lacks emotion or creativity"),
        (41, 60, "Moderately engaging, uses some analogies or description but still feels academic"),
        (61, 80, "Quite engaging, includes storytelling techniques and relatable examples"),
        (81, 100, "Highly immersive, vivid storytelling with strong emotional or narrative appeal"),
    ),
    exposition=(
        (0, 20, "Highly inaccurate or pseudoscientific, major factual errors"),
        (21, 40, "Misleading or speculative, lacks clarity or evidence"),
        (41, 60, "Mostly accurate but vague or oversimplified"),
        (61, 80, "Generally accurate, minor imprecision, lacks citations"),
        (81, 100, "Highly accurate, precise, and well-aligned with scientific consensus"),
    ),
)


def _unwrap(raw: str) -> str:
    text = raw.strip()
    if text.startswith("```"):
        first_newline = text.find("\n")
        if first_newline < 0:
            return ""
        text = text[first_newline + 1 :]
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def _load_json_object(raw: str) -> dict:
    try:
        value = json.loads(_unwrap(raw))
    except (ValueError, RecursionError) as exc:
        raise MalformedPayload(f"not valid JSON: {exc}", fragment=raw)
    if not isinstance(value, dict):
        raise MalformedPayload(f"expected a JSON object, got {type(value).__name__}", fragment=raw)
    return value


def _strategy_id_list(value, raw: str, allow_empty: bool = False) -> list[int]:
    if not isinstance(value, list) or (not value and not allow_empty):
        raise MalformedPayload("strategy list must be a non-empty array", fragment=raw)
    ids: list[int] = []
    for item in value:
        if not isinstance(item, str):
            raise MalformedPayload(f"strategy entry {item!r} is not a string", fragment=raw)
        match = _STRATEGY_TOKEN_RE.match(item)
        if not match:
            raise MalformedPayload(f"bad strategy token {item!r}", fragment=raw)
        sid = int(match.group(1))
        if sid not in lib.STRATEGY_IDS:
            raise MalformedPayload(f"strategy id {sid} outside 1..25", fragment=raw)
        ids.append(sid)
    if len(set(ids)) != len(ids):
        raise MalformedPayload(f"duplicate strategy ids {ids}", fragment=raw)
    return ids


def parse_recommender(raw: str) -> list[StrategyCombo]:
    data = _load_json_object(raw)
    if not data:
        raise MalformedPayload("recommender payload has no versions", fragment=raw)
    combos: list[StrategyCombo] = []
    for index, (key, value) in enumerate(data.items(), start=1):
        if not isinstance(key, str) or not key.startswith("Version"):
            raise MalformedPayload(f"unexpected key {key!r}", fragment=raw)
        ids = _strategy_id_list(value, raw)
        combos.append(StrategyCombo(version_index=index, strategy_ids=tuple(ids)))
    return combos


def parse_generator(raw: str) -> Draft:
    data = _load_json_object(raw)
    if set(data) != {"strategies", "summary", "newText"}:
        raise MalformedPayload(f"generator keys {sorted(data)} != expected", fragment=raw)
    ids = _strategy_id_list(data["strategies"], raw, allow_empty=True)
    summary = data["summary"]
    new_text = data["newText"]
    if not isinstance(summary, str) or not summary.strip():
        raise MalformedPayload("summary must be a non-empty string", fragment=raw)
    if not isinstance(new_text, str) or not new_text.strip():
        raise MalformedPayload("newText must be a non-empty string", fragment=raw)
    return Draft(strategies=tuple(ids), summary=summary, new_text=new_text)


def parse_scorer(raw: str) -> RawScore:
    data = _load_json_object(raw)
    if not set(data) <= {"engagement", "exposition", "explanation"}:
        raise MalformedPayload(f"scorer has extra keys {sorted(data)}", fragment=raw)
    values = {}
    for axis in ("engagement", "exposition"):
        if axis not in data:
            raise MalformedPayload(f"scorer missing {axis}", fragment=raw)
        value = data[axis]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedPayload(f"{axis} must be numeric, got {value!r}", fragment=raw)
        values[axis] = int(round(value))
    explanation = data.get("explanation", "")
    if not isinstance(explanation, str):
        raise MalformedPayload("explanation must be a string", fragment=raw)
    return RawScore(values["engagement"], values["exposition"], explanation)


def parse_muse_report(raw: str) -> dict:
    data = _load_json_object(raw)
    expected = {"strengths", "weaknesses", "patterns", "suggestions"}
    if set(data) != expected:
        raise MalformedPayload(f"analyzer keys {sorted(data)} != expected", fragment=raw)
    for key in ("strengths", "weaknesses", "patterns"):
        if not isinstance(data[key], list) or not all(isinstance(x, str) for x in data[key]):
            raise MalformedPayload(f"{key} must be a list of strings", fragment=raw)
    if not isinstance(data["suggestions"], list):
        raise MalformedPayload("suggestions must be a list", fragment=raw)
    for item in data["suggestions"]:
        if not isinstance(item, dict) or "rationale" not in item:
            raise MalformedPayload(f"bad suggestion entry {item!r}", fragment=raw)
        label_id = item.get("label_id")
        strategy_id = item.get("strategy_id")
        if label_id is None and strategy_id is None:
            raise MalformedPayload("suggestion targets neither label nor strategy", fragment=raw)
        if label_id is not None and label_id not in lib.LABEL_IDS:
            raise MalformedPayload(f"suggestion label {label_id} outside 1..8", fragment=raw)
        if strategy_id is not None and strategy_id not in lib.STRATEGY_IDS:
            raise MalformedPayload(f"suggestion strategy {strategy_id} outside 1..25", fragment=raw)
    return data


_PARSERS: dict[str, Callable[[str], object]] = {
    "RecommenderOut": parse_recommender,
    "GeneratorOut": parse_generator,
    "ScorerOut": parse_scorer,
    "MuseOut": parse_muse_report,
}


def parse_agent_payload(raw: str, schema: str):
    """Strict parse of provider output; tolerant only of fences/whitespace."""
    parser = _PARSERS.get(schema)
    if parser is None:
        raise ValueError(f"unknown payload schema {schema}")
    return parser(raw)


def call_with_retries(
    provider: CompletionProvider,
    prompt: str,
    params: CompletionParams,
    parse: Callable[[str], object],
):
    """Initial call plus up to MAX_PAYLOAD_RETRIES correction re-asks.

    Only malformed payloads trigger a retry; provider failures propagate
    immediately. The correction instruction is appended to the same prompt.
    """
    last: MalformedPayload | None = None
    for attempt in range(1 + MAX_PAYLOAD_RETRIES):
        ask = prompt if attempt == 0 else f"{prompt}\n\n{prompts.CORRECTION_INSTRUCTION}"
        raw = provider.complete(ask, params)
        try:
            return parse(raw)
        except MalformedPayload as exc:
            log.debug("malformed payload on attempt %d: %s", attempt + 1, exc)
            last = exc
    assert last is not None
    raise last


# -- agent operations --


@dataclass(frozen=True)
class Refinement:
    custom_prompt: str | None = None
    disable: int | None = None
    merge_with: str | None = None


def recommend(
    label_id: int,
    text: str,
    overall_content: str,
    n: int,
    bias: dict[int, float] | None = None,
    *,
    provider: CompletionProvider,
    params: CompletionParams,
) -> list[StrategyCombo]:
    """Ask for n distinct strategy combos drawn from one label's set."""
    if n < 1:
        raise InvalidDraft(f"combo count must be >= 1, got {n}")
    label = lib.get_label(label_id)
    allowed = set(label.strategy_ids)
    header = f"Label {label.id} ({label.name}) strategies:"
    prompt = prompts.build_recommender_prompt(
        header, lib.strategy_info_block(allowed), text, overall_content, n
    )

    def parse_and_check(raw: str) -> list[StrategyCombo]:
        combos = parse_recommender(raw)
        if len(combos) != n:
            raise MalformedPayload(f"expected {n} combos, got {len(combos)}", fragment=raw)
        seen: set[frozenset[int]] = set()
        for combo in combos:
            ids = set(combo.strategy_ids)
            if not ids <= allowed:
                raise MalformedPayload(
                    f"combo {sorted(ids)} escapes label {label_id} set", fragment=raw
                )
            key = frozenset(ids)
            if key in seen:
                raise MalformedPayload(f"duplicate combo {sorted(ids)}", fragment=raw)
            seen.add(key)
        return combos

    combos = call_with_retries(provider, prompt, params, parse_and_check)
    if bias:
        combos = reorder_by_bias(combos, bias)
    return combos


def reorder_by_bias(
    combos: list[StrategyCombo], bias: dict[int, float]
) -> list[StrategyCombo]:
    """Stable sort by descending mean strategy weight; membership untouched."""

    def mean_weight(combo: StrategyCombo) -> float:
        return sum(bias.get(s, 1.0) for s in combo.strategy_ids) / len(combo.strategy_ids)

    return sorted(combos, key=mean_weight, reverse=True)


def generate(
    source_text: str,
    overall_content: str,
    strategy_ids: list[int] | tuple[int, ...],
    refinement: Refinement | None = None,
    *,
    provider: CompletionProvider,
    params: CompletionParams,
) -> Draft:
    """Produce one revised draft applying the given strategies."""
    if not source_text or not source_text.strip():
        raise InvalidDraft("source text must be non-empty")
    effective = sorted(set(strategy_ids))
    refinement = refinement or Refinement()
    if refinement.disable is not None:
        effective = [s for s in effective if s != refinement.disable]

    prompt = prompts.build_generator_prompt(
        lib.strategy_info_block(effective),
        source_text,
        overall_content,
        custom_instruction=refinement.custom_prompt,
        merge_with=refinement.merge_with,
    )

    def parse_and_check(raw: str) -> Draft:
        draft = parse_generator(raw)
        if sorted(draft.strategies) != effective:
            raise MalformedPayload(
                f"draft strategies {sorted(draft.strategies)} != requested {effective}",
                fragment=raw,
            )
        return draft

    draft = call_with_retries(provider, prompt, params, parse_and_check)
    if draft.new_text.strip() == source_text.strip():
        raise DegenerateOutput("generator returned the source text unchanged")
    return draft


def score(
    text: str,
    baseline: tuple[str, Score2D] | None = None,
    *,
    provider: CompletionProvider,
    params: CompletionParams,
    delta_cap: int = 25,
) -> Score2D:
    """Score a text on both axes; clamped to [0,100] and baseline±delta_cap."""
    if not text or not text.strip():
        raise InvalidDraft("cannot score empty text")
    if baseline is not None:
        baseline_text, baseline_score = baseline
        prompt = prompts.build_scorer_prompt(
            text,
            baseline_text=baseline_text,
            baseline_score_json=json.dumps(baseline_score.to_dict(), sort_keys=True),
        )
    else:
        prompt = prompts.build_scorer_prompt(text)

    raw_score: RawScore = call_with_retries(provider, prompt, params, parse_scorer)

    def clamp(value: int, base: int | None) -> int:
        low, high = 0, 100
        if base is not None:
            low = max(low, base - delta_cap)
            high = min(high, base + delta_cap)
        return max(low, min(high, value))

    base_eng = baseline[1].engagement if baseline else None
    base_exp = baseline[1].exposition if baseline else None
    return Score2D(clamp(raw_score.engagement, base_eng), clamp(raw_score.exposition, base_exp))
