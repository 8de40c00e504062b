"""Seeded-defect fixture: issue definitions plus the matching script builder.

The fixture tree under tests/fixtures/seeded_tree carries six deliberate
issues; build_seeded_script() produces a scripted-backend fixture whose
responses surface exactly those issues, identically in every round.
"""

from __future__ import annotations

import json
from pathlib import Path

from revq.ingestion import ChunkPolicy, TreePath, chunk_file, walk_tree
from revq.model import PIPELINE_ORDER

FIXTURES = Path(__file__).parent / "fixtures"
SEEDED_ROOT = FIXTURES / "seeded_tree"
CLEAN_ROOT = FIXTURES / "clean_tree"

# (kind, file, start_line, end_line) after dedup
SEEDED_EXPECTED = {
    ("bug", "src/app.py", 7, 9),
    ("code_smell", "src/app.py", 1, 3),
    ("bug", "src/utils.js", 6, 8),
    ("standards_violation", "src/main.c", 6, 6),
    ("code_smell", "src/lib.rb", 2, 9),
    ("optimization", "src/helper.go", 4, 8),
}

_BUG1_REVIEWER = {
    "kind": "bug",
    "severity": "minor",
    "start_line": 7,
    "end_line": 9,
    "message": "Division happens before the zero check on divisor.",
    "recommendation": "Check divisor for zero before dividing.",
    "confidence": 0.6,
}
# same issue, re-surfaced by the bug agent with different casing/severity;
# must dedup with the reviewer's copy
_BUG1_BUG_AGENT = {
    "kind": "bug",
    "severity": "major",
    "start_line": 7,
    "end_line": 9,
    "message": "division happens  before the zero CHECK on divisor",
    "recommendation": "Move the zero check above the division.",
    "confidence": 0.9,
}
_SMELL1 = {
    "kind": "code_smell",
    "severity": "minor",
    "start_line": 1,
    "end_line": 3,
    "message": "compute_report takes eight positional parameters.",
    "recommendation": "Group the inputs into a single parameter object.",
    "confidence": 0.7,
}
_BUG2 = {
    "kind": "bug",
    "severity": "critical",
    "start_line": 6,
    "end_line": 8,
    "message": 'Loose equality compares items against the string "0".',
    "recommendation": "Use === and compare against the intended type.",
    "confidence": 0.9,
}
_VIOLATION = {
    "kind": "standards_violation",
    "severity": "minor",
    "start_line": 6,
    "end_line": 6,
    "message": "gets() cannot bound its input and is banned by the C standard.",
    "recommendation": "Use fgets(name, sizeof name, stdin) instead.",
    "confidence": 0.95,
}
_SMELL2 = {
    "kind": "code_smell",
    "severity": "minor",
    "start_line": 2,
    "end_line": 9,
    "message": "Duplicated name normalization in format_user and format_admin.",
    "recommendation": "Extract a shared normalize_name helper.",
    "confidence": 0.8,
}
_OPTIMIZATION = {
    "kind": "optimization",
    "severity": "minor",
    "start_line": 4,
    "end_line": 8,
    "message": "String concatenation in a loop reallocates on every iteration.",
    "recommendation": "Accumulate with strings.Builder.",
    "confidence": 0.8,
    "patch": {
        "start_line": 4,
        "end_line": 8,
        "replacement": (
            "\tvar sb strings.Builder\n"
            "\tfor _, p := range parts {\n"
            "\t\tsb.WriteString(p)\n"
            "\t\tsb.WriteString(\",\")\n"
            "\t}\n"
            "\treturn sb.String()"
        ),
    },
}

_ROLE_RESPONSES = {
    ("Reviewer", "src/app.py"): [_BUG1_REVIEWER, _SMELL1],
    ("BugReporter", "src/app.py"): [_BUG1_BUG_AGENT],
    ("BugReporter", "src/utils.js"): [_BUG2],
    ("SmellAnalyst", "src/main.c"): [_VIOLATION],
    ("SmellAnalyst", "src/lib.rb"): [_SMELL2],
    ("Optimizer", "src/helper.go"): [_OPTIMIZATION],
}


def seeded_units(root: Path = SEEDED_ROOT, policy: ChunkPolicy | None = None):
    policy = policy or ChunkPolicy()
    walk = walk_tree(TreePath(root=str(root)))
    units = []
    for path, content in walk.files:
        units.extend(chunk_file(path, content, policy))
    return units


def build_seeded_script(root: Path = SEEDED_ROOT, rounds: int = 5) -> dict:
    """Scripted fixture covering every (role, round, unit) tag."""
    tags = {}
    for unit in seeded_units(root):
        for round_num in range(1, rounds + 1):
            for role in PIPELINE_ORDER:
                findings = _ROLE_RESPONSES.get((role.tag_name, unit.file), [])
                tag = f"{role.tag_name}/round-{round_num}/{unit.unit_id}"
                tags[tag] = json.dumps({"findings": findings})
    return {"tags": tags}


def write_seeded_script(path: Path, root: Path = SEEDED_ROOT, rounds: int = 5) -> Path:
    path.write_text(json.dumps(build_seeded_script(root, rounds)), encoding="utf-8")
    return path


# matches every prompt, so any tag resolves to an empty findings list
EMPTY_SCRIPT = {"substrings": [{"match": "", "response": '{"findings": []}'}]}


def write_empty_script(path: Path) -> Path:
    path.write_text(json.dumps(EMPTY_SCRIPT), encoding="utf-8")
    return path
