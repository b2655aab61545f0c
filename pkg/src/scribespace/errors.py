"""Error types shared across the engine.

Every domain failure raises a subclass of :class:`DomainError` so callers
(service layer, CLI) can map families of errors to exit codes or HTTP
statuses without matching on message text.
"""

from __future__ import annotations


class DomainError(Exception):
    """Base class for all engine-level failures."""


# --- strategy library ---

class UnknownLabel(DomainError):
    """Label id outside 1..8."""


class UnknownStrategy(DomainError):
    """Strategy id outside 1..25."""


# --- version graph ---

class EmptySegment(DomainError):
    """Canvas creation with empty or blank segment text."""


class AnchorOutOfRange(DomainError):
    """Segment anchor does not fit inside the document."""


class AnchorOverlap(DomainError):
    """Segment anchor overlaps an existing canvas on the same document."""


class UnknownNode(DomainError):
    """Node id not present in the canvas."""


class UnknownParent(DomainError):
    """add_child referenced a parent id that does not exist."""


class ParentArityMismatch(DomainError):
    """Parent count does not match the node origin (2 iff merge)."""


class InvalidDraft(DomainError):
    """Draft payload violates node invariants (bad strategy ids, blank text)."""


class NotConfirmed(DomainError):
    """apply requested on a node that is not confirmed."""


class NoLineagePath(DomainError):
    """diff reference is not an ancestor of the node."""


class UnknownCanvas(DomainError):
    """Canvas id not present in the session."""


class UnknownDocument(DomainError):
    """Document id not present in the session."""


class UnknownSession(DomainError):
    """Session id not present in the store."""


# --- agents ---

class ProviderError(DomainError):
    """Completion provider failed (network, HTTP, or hard refusal)."""


class MalformedPayload(DomainError):
    """Provider output failed schema validation after all retries.

    Keeps a truncated copy of the offending fragment for logs.
    """

    def __init__(self, message: str, fragment: str = ""):
        super().__init__(message)
        self.fragment = fragment[:500]


class DegenerateOutput(DomainError):
    """Generator returned text identical to its source."""


# --- pipeline ---

class EmptyPrompt(DomainError):
    """refine called with a blank custom prompt."""


class StrategyNotOnNode(DomainError):
    """toggle disable for a strategy the node does not carry."""


class ToggleOnRoot(DomainError):
    """toggle requested on the root node, which has no regeneration base."""


class SelfMerge(DomainError):
    """merge called with the same node on both sides."""


class PartialExpansion(DomainError):
    """Some labels of an expansion failed; carries per-label failures.

    Raised only when the caller asked for strict handling; the pipeline
    normally reports partial results without raising.
    """

    def __init__(self, message: str, added: list, failures: list):
        super().__init__(message)
        self.added = added
        self.failures = failures


# --- muse ---

class UnknownSuggestion(DomainError):
    """Feedback verdict referenced a suggestion index that does not exist."""


# --- persistence ---

class StorageError(DomainError):
    """Filesystem-level failure while appending or reading a session log."""


class SchemaViolation(DomainError):
    """Event failed validation before append."""


class CorruptLog(DomainError):
    """A session log record failed checksum or parse; carries the seq."""

    def __init__(self, message: str, seq: int):
        super().__init__(message)
        self.seq = seq


class VersionMismatch(DomainError):
    """Archive or log declares an unsupported schema version."""
