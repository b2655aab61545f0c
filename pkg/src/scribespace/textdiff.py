"""Word-level diff and similarity on top of one true LCS implementation.

Diff operates on alternating word/whitespace units so concatenating the
Kept+Inserted spans reproduces the new text byte-for-byte (Kept+Deleted the
old one). Similarity ignores whitespace and uses plain word tokens.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum


class DiffKind(Enum):
    KEPT = "kept"
    INSERTED = "inserted"
    DELETED = "deleted"


@dataclass(frozen=True)
class DiffSpan:
    kind: DiffKind
    text: str


def tokenize_units(text: str) -> list[str]:
    """Split into word and whitespace-run units; ''.join round-trips exactly."""
    return re.findall(r"\S+|\s+", text)


def tokenize_words(text: str) -> list[str]:
    return re.findall(r"\S+", text)


def _lcs_table(a: list[str], b: list[str]) -> list[list[int]]:
    # Classic DP: table[i][j] = LCS length of a[:i], b[:j].
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        row = table[i]
        prev = table[i - 1]
        ai = a[i - 1]
        for j in range(1, m + 1):
            if ai == b[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = prev[j] if prev[j] >= row[j - 1] else row[j - 1]
    return table


def lcs_length(a: list[str], b: list[str]) -> int:
    return _lcs_table(a, b)[len(a)][len(b)]


def diff(old: str, new: str) -> list[DiffSpan]:
    """Minimal word-level edit script from old to new.

    At each divergence deletions are emitted before insertions. Adjacent
    units of the same kind are merged into one span.
    """
    a = tokenize_units(old)
    b = tokenize_units(new)
    table = _lcs_table(a, b)

    # Backtrack from the bottom-right corner; ops come out reversed.
    ops: list[tuple[DiffKind, str]] = []
    i, j = len(a), len(b)
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1]:
            ops.append((DiffKind.KEPT, a[i - 1]))
            i -= 1
            j -= 1
        elif table[i - 1][j] >= table[i][j - 1]:
            ops.append((DiffKind.DELETED, a[i - 1]))
            i -= 1
        else:
            ops.append((DiffKind.INSERTED, b[j - 1]))
            j -= 1
    while i > 0:
        ops.append((DiffKind.DELETED, a[i - 1]))
        i -= 1
    while j > 0:
        ops.append((DiffKind.INSERTED, b[j - 1]))
        j -= 1
    ops.reverse()

    # Within a divergence the backtrack above yields insertions before
    # deletions; normalize to deleted-then-inserted, then merge runs.
    normalized: list[tuple[DiffKind, str]] = []
    pending_inserts: list[tuple[DiffKind, str]] = []
    for kind, text in ops:
        if kind is DiffKind.INSERTED:
            pending_inserts.append((kind, text))
        elif kind is DiffKind.DELETED:
            normalized.append((kind, text))
        else:
            normalized.extend(pending_inserts)
            pending_inserts = []
            normalized.append((kind, text))
    normalized.extend(pending_inserts)

    spans: list[DiffSpan] = []
    for kind, text in normalized:
        if spans and spans[-1].kind is kind:
            spans[-1] = DiffSpan(kind, spans[-1].text + text)
        else:
            spans.append(DiffSpan(kind, text))
    return spans


def reconstruct_new(spans: list[DiffSpan]) -> str:
    return "".join(s.text for s in spans if s.kind is not DiffKind.DELETED)


def reconstruct_old(spans: list[DiffSpan]) -> str:
    return "".join(s.text for s in spans if s.kind is not DiffKind.INSERTED)


def similarity(a: str, b: str) -> float:
    """Normalized token-LCS ratio 2*LCS/(|A|+|B|), whitespace-insensitive.

    Returns 1.0 for two empty texts, 0.0 when exactly one side is empty.
    """
    ta = tokenize_words(a)
    tb = tokenize_words(b)
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    return 2.0 * lcs_length(ta, tb) / (len(ta) + len(tb))
