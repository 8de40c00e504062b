"""Turn a review target (source tree or unified diff) into CodeUnits.

Chunking is line-window based: language-agnostic and deterministic. Diff
review uses new-side spans only; removed lines remain visible through the
hunk text carried in each unit's context note.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import CodeUnit, LineSpan, UnitOrigin


class IngestionError(Exception):
    pass


class RootNotFound(IngestionError):
    def __init__(self, root: str):
        self.root = root
        super().__init__(f"review root not found or not a directory: {root}")


class MalformedHunkHeader(IngestionError):
    def __init__(self, line_no: int, line: str = ""):
        self.line_no = line_no
        self.line = line
        super().__init__(f"malformed hunk header at line {line_no}: {line!r}")


class LineCountMismatch(IngestionError):
    def __init__(self, hunk_index: int):
        self.hunk_index = hunk_index
        super().__init__(f"hunk {hunk_index}: body does not match declared line counts")


@dataclass(frozen=True)
class ChunkPolicy:
    max_lines: int = 200
    overlap_lines: int = 10

    def __post_init__(self) -> None:
        if self.max_lines < 1:
            raise ValueError("max_lines must be positive")
        if not 0 <= self.overlap_lines < self.max_lines:
            raise ValueError("overlap_lines must satisfy 0 <= overlap < max_lines")


@dataclass(frozen=True)
class TreePath:
    root: str
    include_globs: tuple[str, ...] = ()
    exclude_globs: tuple[str, ...] = ()


@dataclass(frozen=True)
class DiffText:
    diff: str
    root: str | None = None


ReviewTarget = TreePath | DiffText


class LineTag(enum.Enum):
    CONTEXT = " "
    ADD = "+"
    REMOVE = "-"


class ChangeKind(enum.Enum):
    ADDED = "added"
    DELETED = "deleted"
    MODIFIED = "modified"
    RENAMED = "renamed"


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    lines: tuple[tuple[LineTag, str], ...]


@dataclass(frozen=True)
class FileChange:
    old_path: str | None
    new_path: str | None
    hunks: tuple[Hunk, ...]
    change_kind: ChangeKind


@dataclass
class TreeWalk:
    """Result of a tree walk: readable text files plus skip/error bookkeeping."""

    files: list[tuple[str, str]] = field(default_factory=list)
    skipped_binary: list[str] = field(default_factory=list)
    unreadable: list[str] = field(default_factory=list)


def _glob_to_regex(pattern: str) -> re.Pattern:
    out = []
    i = 0
    while i < len(pattern):
        c = pattern[i]
        if c == "*":
            if pattern[i : i + 2] == "**":
                out.append(".*")
                i += 2
                if i < len(pattern) and pattern[i] == "/":
                    i += 1
                continue
            out.append("[^/]*")
        elif c == "?":
            out.append("[^/]")
        else:
            out.append(re.escape(c))
        i += 1
    return re.compile("^" + "".join(out) + "$")


def _matches_any(rel_path: str, patterns: tuple[str, ...]) -> bool:
    basename = rel_path.rsplit("/", 1)[-1]
    for pat in patterns:
        rx = _glob_to_regex(pat)
        if rx.match(rel_path) or rx.match(basename):
            return True
    return False


def _looks_binary(raw: bytes) -> bool:
    return b"\x00" in raw[:8192]


def walk_tree(target: TreePath) -> TreeWalk:
    """Collect matching text files under the root, sorted by path.

    Binary files (NUL byte in the first 8192 bytes) are skipped and counted;
    per-file read errors are collected without aborting the walk.
    """
    root = Path(target.root)
    if not root.is_dir():
        raise RootNotFound(target.root)
    result = TreeWalk()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        if target.include_globs and not _matches_any(rel, target.include_globs):
            continue
        if _matches_any(rel, target.exclude_globs):
            continue
        try:
            raw = path.read_bytes()
        except OSError:
            result.unreadable.append(rel)
            continue
        if _looks_binary(raw):
            result.skipped_binary.append(rel)
            continue
        result.files.append((rel, raw.decode("utf-8", errors="replace")))
    return result


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_SKIP_PREFIXES = (
    "diff --git ",
    "index ",
    "new file mode",
    "old mode",
    "new mode",
    "deleted file mode",
    "similarity index",
    "rename from",
    "rename to",
    "copy from",
    "copy to",
    "Binary files",
)


def _clean_diff_path(raw: str) -> str | None:
    path = raw.split("\t")[0].strip()
    if path == "/dev/null":
        return None
    if path.startswith(("a/", "b/")):
        path = path[2:]
    return path


def parse_unified_diff(diff: str) -> list[FileChange]:
    """Parse unified diff text into FileChange structures.

    Tolerates git-style preamble lines; aborts with position info on a
    malformed hunk header or a hunk body that contradicts its counts.
    """
    changes: list[FileChange] = []
    lines = diff.split("\n")
    i = 0
    n = len(lines)
    old_path: str | None = None
    pending_old: str | None = None
    in_file = False
    hunks: list[Hunk] = []
    hunk_index = 0
    new_path: str | None = None

    def flush_file() -> None:
        nonlocal in_file, hunks
        if in_file:
            changes.append(_make_change(old_path, new_path, tuple(hunks)))
        in_file = False
        hunks = []

    while i < n:
        line = lines[i]
        if line.startswith("--- "):
            pending_old = _clean_diff_path(line[4:])
            i += 1
            continue
        if line.startswith("+++ "):
            flush_file()
            old_path = pending_old
            new_path = _clean_diff_path(line[4:])
            pending_old = None
            in_file = True
            i += 1
            continue
        if line.startswith("@@"):
            m = _HUNK_RE.match(line)
            if not m or not in_file:
                raise MalformedHunkHeader(i + 1, line)
            old_start = int(m.group(1))
            old_count = int(m.group(2)) if m.group(2) is not None else 1
            new_start = int(m.group(3))
            new_count = int(m.group(4)) if m.group(4) is not None else 1
            i += 1
            body: list[tuple[LineTag, str]] = []
            seen_old = seen_new = 0
            while seen_old < old_count or seen_new < new_count:
                if i >= n:
                    raise LineCountMismatch(hunk_index)
                body_line = lines[i]
                if body_line.startswith("\\"):
                    i += 1
                    continue
                tag = body_line[:1]
                if tag == " " or body_line == "":
                    if seen_old >= old_count or seen_new >= new_count:
                        raise LineCountMismatch(hunk_index)
                    body.append((LineTag.CONTEXT, body_line[1:]))
                    seen_old += 1
                    seen_new += 1
                elif tag == "-":
                    if seen_old >= old_count:
                        raise LineCountMismatch(hunk_index)
                    body.append((LineTag.REMOVE, body_line[1:]))
                    seen_old += 1
                elif tag == "+":
                    if seen_new >= new_count:
                        raise LineCountMismatch(hunk_index)
                    body.append((LineTag.ADD, body_line[1:]))
                    seen_new += 1
                else:
                    raise LineCountMismatch(hunk_index)
                i += 1
            hunks.append(Hunk(old_start, old_count, new_start, new_count, tuple(body)))
            hunk_index += 1
            continue
        if line.startswith(_SKIP_PREFIXES) or line == "":
            i += 1
            continue
        # unknown preamble/trailing line between files; skip
        i += 1
    flush_file()
    return changes


def _make_change(old_path, new_path, hunks) -> FileChange:
    if old_path is None and new_path is not None:
        kind = ChangeKind.ADDED
    elif new_path is None and old_path is not None:
        kind = ChangeKind.DELETED
    elif old_path == new_path:
        kind = ChangeKind.MODIFIED
    else:
        kind = ChangeKind.RENAMED
    return FileChange(old_path, new_path, hunks, kind)


def serialize_file_changes(changes: list[FileChange]) -> str:
    """Inverse of parse_unified_diff for round-trip checks and fixtures."""
    out: list[str] = []
    for change in changes:
        out.append(f"--- {'a/' + change.old_path if change.old_path else '/dev/null'}")
        out.append(f"+++ {'b/' + change.new_path if change.new_path else '/dev/null'}")
        for hunk in change.hunks:
            out.append(
                f"@@ -{hunk.old_start},{hunk.old_count} "
                f"+{hunk.new_start},{hunk.new_count} @@"
            )
            for tag, text in hunk.lines:
                out.append(tag.value + text)
    return "\n".join(out) + ("\n" if out else "")


def chunk_file(path: str, content: str, policy: ChunkPolicy) -> list[CodeUnit]:
    """Cover lines 1..L with windows of at most max_lines.

    Consecutive windows overlap by exactly overlap_lines; the last window is
    clamped to end at L. Empty content yields no units.
    """
    if content == "":
        return []
    all_lines = content.split("\n")
    if all_lines and all_lines[-1] == "":
        all_lines = all_lines[:-1]
    if not all_lines:
        return []
    total = len(all_lines)
    units: list[CodeUnit] = []
    start = 1
    while True:
        end = min(start + policy.max_lines - 1, total)
        units.append(
            CodeUnit(
                unit_id=f"{path}:{start}-{end}",
                file=path,
                span=LineSpan(start, end),
                content="\n".join(all_lines[start - 1 : end]),
                origin=UnitOrigin.TREE,
            )
        )
        if end >= total:
            break
        start = start + policy.max_lines - policy.overlap_lines
    return units


def units_from_diff(
    changes: list[FileChange],
    root: str | None,
    policy: ChunkPolicy,
) -> tuple[list[CodeUnit], list[str]]:
    """One CodeUnit per hunk of each non-deleted change, on new-side spans.

    Spans are expanded by overlap_lines of context in both directions when
    the file content is available under root, clamped to file bounds. A
    missing context file degrades to the hunk's new-side text with a warning.
    """
    units: list[CodeUnit] = []
    warnings: list[str] = []
    seen_ids: dict[str, int] = {}

    def register(unit_id: str) -> str:
        count = seen_ids.get(unit_id, 0)
        seen_ids[unit_id] = count + 1
        return unit_id if count == 0 else f"{unit_id}-dup{count}"

    for change in changes:
        if change.change_kind is ChangeKind.DELETED or change.new_path is None:
            continue
        path = change.new_path
        file_lines: list[str] | None = None
        if root is not None:
            fs_path = Path(root) / path
            if fs_path.is_file():
                file_lines = fs_path.read_text(
                    encoding="utf-8", errors="replace"
                ).split("\n")
                if file_lines and file_lines[-1] == "":
                    file_lines = file_lines[:-1]
            else:
                warnings.append(f"context file missing: {path}")
        for hunk in change.hunks:
            if hunk.new_count == 0:
                continue
            new_end = hunk.new_start + hunk.new_count - 1
            note = _render_hunk(hunk)
            if file_lines:
                start = max(1, hunk.new_start - policy.overlap_lines)
                end = min(len(file_lines), new_end + policy.overlap_lines)
                content = "\n".join(file_lines[start - 1 : end])
            else:
                start, end = hunk.new_start, new_end
                content = "\n".join(
                    text
                    for tag, text in hunk.lines
                    if tag in (LineTag.CONTEXT, LineTag.ADD)
                )
            units.append(
                CodeUnit(
                    unit_id=register(f"{path}:{start}-{end}"),
                    file=path,
                    span=LineSpan(start, end),
                    content=content,
                    origin=UnitOrigin.DIFF,
                    context_note=note,
                )
            )
    return units, warnings


def _render_hunk(hunk: Hunk) -> str:
    header = (
        f"@@ -{hunk.old_start},{hunk.old_count} +{hunk.new_start},{hunk.new_count} @@"
    )
    return "\n".join([header] + [tag.value + text for tag, text in hunk.lines])
