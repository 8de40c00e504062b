"""Shared vocabulary of the review pipeline: findings, code units, severities, reports.

Everything here is immutable after construction and safe to share between
threads; the operations are pure functions.
"""

from __future__ import annotations

import enum
import hashlib
import string
from dataclasses import dataclass, field


class Severity(enum.IntEnum):
    """Totally ordered severity scale used for sorting and CI gating."""

    INFO = 0
    MINOR = 1
    MAJOR = 2
    CRITICAL = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, text: str) -> "Severity":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown severity: {text!r}") from None


def severity_max(a: Severity, b: Severity) -> Severity:
    """Greater of two severities under the total order."""
    return a if a >= b else b


class FindingKind(enum.Enum):
    BUG = "bug"
    CODE_SMELL = "code_smell"
    STANDARDS_VIOLATION = "standards_violation"
    OPTIMIZATION = "optimization"

    @property
    def label(self) -> str:
        return self.value

    @classmethod
    def from_label(cls, text: str) -> "FindingKind":
        key = text.strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "smell": "code_smell",
            "codesmell": "code_smell",
            "standards": "standards_violation",
            "standards_deviation": "standards_violation",
            "style": "standards_violation",
            "optimisation": "optimization",
            "performance": "optimization",
        }
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown finding kind: {text!r}")


class AgentRole(enum.Enum):
    """The four pipeline roles, in hand-off order."""

    REVIEWER = "reviewer"
    BUG_REPORTER = "bug_reporter"
    SMELL_ANALYST = "smell_analyst"
    OPTIMIZER = "optimizer"

    @property
    def label(self) -> str:
        return self.value

    @property
    def tag_name(self) -> str:
        return _TAG_NAMES[self]

    @property
    def pipeline_index(self) -> int:
        return PIPELINE_ORDER.index(self)

    @classmethod
    def from_label(cls, text: str) -> "AgentRole":
        key = text.strip()
        for role in cls:
            if key in (role.value, role.tag_name):
                return role
        raise ValueError(f"unknown agent role: {text!r}")


PIPELINE_ORDER = [
    AgentRole.REVIEWER,
    AgentRole.BUG_REPORTER,
    AgentRole.SMELL_ANALYST,
    AgentRole.OPTIMIZER,
]

_TAG_NAMES = {
    AgentRole.REVIEWER: "Reviewer",
    AgentRole.BUG_REPORTER: "BugReporter",
    AgentRole.SMELL_ANALYST: "SmellAnalyst",
    AgentRole.OPTIMIZER: "Optimizer",
}


@dataclass(frozen=True)
class LineSpan:
    """Inclusive 1-based line range."""

    start_line: int
    end_line: int

    def __post_init__(self) -> None:
        if self.start_line < 1:
            raise ValueError(f"start_line must be >= 1, got {self.start_line}")
        if self.end_line < self.start_line:
            raise ValueError(
                f"end_line ({self.end_line}) must be >= start_line ({self.start_line})"
            )

    @property
    def line_count(self) -> int:
        return self.end_line - self.start_line + 1

    def contains(self, other: "LineSpan") -> bool:
        return self.start_line <= other.start_line and other.end_line <= self.end_line


@dataclass(frozen=True)
class ReplacementPatch:
    """Whole-line replacement suggestion; never applied automatically."""

    file: str
    span: LineSpan
    replacement: str


@dataclass(frozen=True)
class Finding:
    """One located issue with an actionable recommendation."""

    id: str
    kind: FindingKind
    severity: Severity
    file: str
    span: LineSpan
    message: str
    recommendation: str = ""
    suggested_patch: ReplacementPatch | None = None
    agent: AgentRole = AgentRole.REVIEWER
    round: int = 1
    confidence: float = 0.5

    def __post_init__(self) -> None:
        if not self.message:
            raise ValueError("finding message must be non-empty")
        if self.round < 0:
            raise ValueError(f"round must be >= 0, got {self.round}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


class UnitOrigin(enum.Enum):
    TREE = "tree"
    DIFF = "diff"


@dataclass(frozen=True)
class CodeUnit:
    """A line-windowed slice of a file: the atomic review granule."""

    unit_id: str
    file: str
    span: LineSpan
    content: str
    origin: UnitOrigin
    context_note: str = ""

    def __post_init__(self) -> None:
        n_lines = len(self.content.split("\n")) if self.content else 0
        if n_lines != self.span.line_count:
            raise ValueError(
                f"unit {self.unit_id}: content has {n_lines} lines, "
                f"span covers {self.span.line_count}"
            )


@dataclass(frozen=True)
class ReviewReport:
    """Aggregated, deduplicated findings plus run metadata."""

    run_id: str
    target_description: str
    findings: tuple[Finding, ...]
    rounds_executed: int
    units_reviewed: int
    backend_descriptor: str
    started_at: str
    finished_at: str
    incomplete_units: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.rounds_executed < 1:
            raise ValueError("rounds_executed must be >= 1")
        if self.units_reviewed < 0:
            raise ValueError("units_reviewed must be >= 0")


_TRAILING_PUNCT = string.punctuation + " "


def normalize_message(message: str) -> str:
    """Lowercase, collapse whitespace runs, strip trailing punctuation.

    Idempotent: normalize(normalize(m)) == normalize(m).
    """
    collapsed = " ".join(message.lower().split())
    return collapsed.rstrip(_TRAILING_PUNCT)


def finding_fingerprint(f: Finding) -> bytes:
    """Dedup digest over location, kind, and normalized message.

    Agent, round, severity, and confidence are deliberately excluded so the
    same issue surfaced by different agents (or rounds) collapses to one.
    """
    material = "\x1f".join(
        [
            f.file,
            f.kind.label,
            str(f.span.start_line),
            str(f.span.end_line),
            normalize_message(f.message),
        ]
    )
    return hashlib.sha256(material.encode("utf-8")).digest()


def finding_sort_key(f: Finding) -> tuple:
    """Report ordering: severity desc, file asc, start line asc, fingerprint asc."""
    return (-int(f.severity), f.file, f.span.start_line, finding_fingerprint(f))
