"""Strategy library: 25 revision strategies and 8 revision labels.

The library is loaded once from the embedded YAML data file and is immutable
afterwards, so it is safe for unrestricted concurrent reads. Per-label
strategy sets are derived by inverting the per-strategy label lists; the
per-strategy table is the single normative mapping and the two views cannot
drift apart (validate_library cross-checks them anyway so injected faults are
detectable).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources

import yaml

from .errors import UnknownLabel, UnknownStrategy

# sha256 of data/strategies.yaml; asserted at load so silent edits fail fast.
DATA_SHA256 = "1ccbd27903f3ec5f700aa5b5688590e06c99d1c1ca88e5ca8f33c07f28d2615c"

LABEL_IDS = range(1, 9)
STRATEGY_IDS = range(1, 26)


class Axis(Enum):
    EXPOSITION = "exposition"
    ENGAGEMENT = "engagement"


@dataclass(frozen=True)
class StrategyCard:
    id: int
    name: str
    definition: str
    usage_note: str
    example: str
    labels: frozenset[int]
    category: str


@dataclass(frozen=True)
class Label:
    id: int
    name: str
    axis: Axis
    description: str
    strategy_ids: frozenset[int]


@dataclass(frozen=True)
class ValidationReport:
    inconsistencies: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.inconsistencies


@dataclass(frozen=True)
class Library:
    strategies: dict[int, StrategyCard] = field(default_factory=dict)
    labels: dict[int, Label] = field(default_factory=dict)


def _load_library() -> Library:
    data_path = resources.files("scribespace").joinpath("data/strategies.yaml")
    raw = data_path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != DATA_SHA256:
        raise RuntimeError(
            f"strategy data file checksum mismatch: {digest} != {DATA_SHA256}; "
            "the embedded library must not be edited without updating DATA_SHA256"
        )
    doc = yaml.safe_load(raw)

    strategies: dict[int, StrategyCard] = {}
    for row in doc["strategies"]:
        strategies[row["id"]] = StrategyCard(
            id=row["id"],
            name=row["name"],
            definition=row["definition"].strip(),
            usage_note=row["usage_note"].strip(),
            example=row["example"].strip(),
            labels=frozenset(row["labels"]),
            category=row["category"],
        )

    # Per-label sets are the inversion of the per-strategy lists.
    inverted: dict[int, set[int]] = {lid: set() for lid in LABEL_IDS}
    for card in strategies.values():
        for lid in card.labels:
            inverted[lid].add(card.id)

    labels: dict[int, Label] = {}
    for row in doc["labels"]:
        labels[row["id"]] = Label(
            id=row["id"],
            name=row["name"],
            axis=Axis(row["axis"]),
            description=row["description"].strip(),
            strategy_ids=frozenset(inverted[row["id"]]),
        )
    return Library(strategies=strategies, labels=labels)


_LIBRARY: Library | None = None


def library() -> Library:
    global _LIBRARY
    if _LIBRARY is None:
        _LIBRARY = _load_library()
    return _LIBRARY


def get_strategy(strategy_id: int) -> StrategyCard:
    card = library().strategies.get(strategy_id)
    if card is None:
        raise UnknownStrategy(f"unknown strategy id {strategy_id}")
    return card


def get_label(label_id: int) -> Label:
    label = library().labels.get(label_id)
    if label is None:
        raise UnknownLabel(f"unknown label id {label_id}")
    return label


def strategies_for_label(label_id: int) -> set[int]:
    """Strategy ids belonging to a label (inversion of the strategy table)."""
    return set(get_label(label_id).strategy_ids)


def labels_for_strategy(strategy_id: int) -> set[int]:
    """Label ids a strategy belongs to, straight from the strategy table."""
    return set(get_strategy(strategy_id).labels)


def axis_of_label(label_id: int) -> Axis:
    return get_label(label_id).axis


def primary_label(strategy_id: int) -> int:
    """A strategy's primary label: the lowest label id it belongs to."""
    return min(get_strategy(strategy_id).labels)


def primary_axis(strategy_id: int) -> Axis:
    """Axis of the strategy's primary label; drives mock score arithmetic."""
    return Axis.EXPOSITION if primary_label(strategy_id) <= 4 else Axis.ENGAGEMENT


def validate_library(lib: Library | None = None) -> ValidationReport:
    """Cross-check the two library views and the id ranges.

    Report-only: returns every inconsistency found instead of raising, so a
    tampered copy (tests inject faults) yields a precise finding list. The
    shipped library yields an empty report.
    """
    lib = lib or library()
    problems: list[str] = []

    for sid, card in sorted(lib.strategies.items()):
        if sid not in STRATEGY_IDS:
            problems.append(f"strategy id {sid} outside 1..25")
            continue
        if not card.labels:
            problems.append(f"strategy {sid} has an empty label set")
        for lid in sorted(card.labels):
            if lid not in LABEL_IDS:
                problems.append(f"strategy {sid} references label {lid} outside 1..8")
            elif lid in lib.labels and sid not in lib.labels[lid].strategy_ids:
                problems.append(
                    f"strategy {sid} claims label {lid} but label {lid}'s set omits it"
                )

    for lid, label in sorted(lib.labels.items()):
        if lid not in LABEL_IDS:
            problems.append(f"label id {lid} outside 1..8")
            continue
        expected_axis = Axis.EXPOSITION if lid <= 4 else Axis.ENGAGEMENT
        if label.axis is not expected_axis:
            problems.append(f"label {lid} carries axis {label.axis.value}")
        if not label.strategy_ids:
            problems.append(f"label {lid} has an empty strategy set")
        for sid in sorted(label.strategy_ids):
            if sid not in lib.strategies:
                problems.append(f"label {lid} lists unknown strategy {sid}")
            elif lid not in lib.strategies[sid].labels:
                problems.append(
                    f"label {lid} lists strategy {sid} but strategy {sid}'s labels omit it"
                )

    missing = set(STRATEGY_IDS) - set(lib.strategies)
    for sid in sorted(missing):
        problems.append(f"strategy id {sid} missing from the library")
    missing_labels = set(LABEL_IDS) - set(lib.labels)
    for lid in sorted(missing_labels):
        problems.append(f"label id {lid} missing from the library")

    return ValidationReport(inconsistencies=tuple(problems))


def with_label_strategies(lib: Library, label_id: int, strategy_ids: set[int]) -> Library:
    """Copy of the library with one label's strategy set replaced.

    Exists so fault-injection tests can build inconsistent copies without
    touching the shipped singleton.
    """
    labels = dict(lib.labels)
    labels[label_id] = replace(labels[label_id], strategy_ids=frozenset(strategy_ids))
    return Library(strategies=dict(lib.strategies), labels=labels)


def strategy_info_block(strategy_ids: list[int] | set[int]) -> str:
    """Human-readable strategy list used to fill prompt templates.

    One line per strategy, id-sorted. The ``Strategy_<id>`` prefix is the
    contract both the live models and the offline mock key on.
    """
    lines = []
    for sid in sorted(strategy_ids):
        card = get_strategy(sid)
        lines.append(
            f"Strategy_{card.id} ({card.name}): {card.definition} "
            f"Usage: {card.usage_note} Example: {card.example}"
        )
    return "\n".join(lines)
