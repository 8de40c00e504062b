import json
import random

import pytest

from revq.agents import load_agent_specs
from revq.coordinator import (
    AbortedByBackend,
    MessageBus,
    PipelineConfig,
    dedup_findings,
    run_pipeline,
)
from revq.gateway import ScriptedBackend
from revq.model import (
    AgentRole,
    CodeUnit,
    Finding,
    FindingKind,
    LineSpan,
    PIPELINE_ORDER,
    Severity,
    UnitOrigin,
    finding_fingerprint,
    normalize_message,
)


@pytest.fixture(scope="module")
def specs():
    return load_agent_specs()


def make_unit(file="src/a.py", n_lines=6):
    return CodeUnit(
        unit_id=f"{file}:1-{n_lines}",
        file=file,
        span=LineSpan(1, n_lines),
        content="\n".join(f"l{i}" for i in range(n_lines)),
        origin=UnitOrigin.TREE,
    )


def make_finding(**overrides):
    base = dict(
        id="f",
        kind=FindingKind.BUG,
        severity=Severity.MINOR,
        file="src/a.py",
        span=LineSpan(2, 3),
        message="issue here",
        recommendation="fix it",
        agent=AgentRole.REVIEWER,
        round=1,
        confidence=0.6,
    )
    base.update(overrides)
    return Finding(**base)


def two_findings_script(unit, rounds=5):
    """Every round serves the same two findings from the reviewer."""
    reviewer_payload = json.dumps(
        {"findings": [
            {"kind": "bug", "severity": "major", "start_line": 2, "end_line": 2,
             "message": "seeded bug"},
            {"kind": "code_smell", "severity": "minor", "start_line": 4,
             "end_line": 5, "message": "seeded smell"},
        ]}
    )
    empty = json.dumps({"findings": []})
    tags = {}
    for r in range(1, rounds + 1):
        for role in PIPELINE_ORDER:
            payload = reviewer_payload if role is AgentRole.REVIEWER else empty
            tags[f"{role.tag_name}/round-{r}/{unit.unit_id}"] = payload
    return ScriptedBackend({"tags": tags})


class TestDedup:
    def test_byte_identical_collapse(self):
        result = dedup_findings([make_finding(), make_finding()])
        assert len(result) == 1

    def test_merge_rules(self):
        a = make_finding(severity=Severity.MINOR, confidence=0.6,
                         agent=AgentRole.REVIEWER, recommendation="guard the call")
        b = make_finding(severity=Severity.MAJOR, confidence=0.9,
                         agent=AgentRole.BUG_REPORTER, recommendation="add a test")
        (merged,) = dedup_findings([a, b])
        assert merged.severity is Severity.MAJOR
        assert merged.confidence == 0.9
        assert merged.agent is AgentRole.REVIEWER
        assert merged.recommendation == "guard the call; add a test"

    def test_different_files_retained(self):
        result = dedup_findings([make_finding(file="a.py"), make_finding(file="b.py")])
        assert len(result) == 2

    def test_idempotent_and_permutation_invariant(self):
        rng = random.Random(5)
        findings = [
            make_finding(
                file=rng.choice(["a.py", "b.py"]),
                severity=rng.choice(list(Severity)),
                agent=rng.choice(list(AgentRole)),
                message=rng.choice(["one issue", "another issue"]),
                confidence=rng.random(),
                round=rng.randint(1, 3),
            )
            for _ in range(20)
        ]
        once = dedup_findings(findings)
        assert dedup_findings(once) == once
        shuffled = findings[:]
        rng.shuffle(shuffled)
        assert dedup_findings(shuffled) == once

    def test_output_sorted(self):
        result = dedup_findings(
            [
                make_finding(file="b.py", severity=Severity.MINOR, message="x"),
                make_finding(file="a.py", severity=Severity.CRITICAL, message="y"),
            ]
        )
        assert [f.severity for f in result] == [Severity.CRITICAL, Severity.MINOR]


class TestPipeline:
    def test_fixed_point_stop(self, specs):
        unit = make_unit()
        gateway = two_findings_script(unit)
        report = run_pipeline(
            [unit], specs, PipelineConfig(max_rounds=5), gateway, run_id="r1"
        )
        assert report.rounds_executed == 2
        assert len(report.findings) == 2
        assert report.units_reviewed == 1

    def test_zero_units(self, specs):
        bus = MessageBus()
        report = run_pipeline(
            [], specs, PipelineConfig(), ScriptedBackend({"tags": {}}), bus=bus
        )
        assert report.findings == ()
        assert report.rounds_executed == 1
        assert report.units_reviewed == 0
        assert [m.payload_type for m in bus.messages] == ["RoundComplete"]

    def test_fail_fast_aborts(self, specs):
        unit = make_unit()
        bus = MessageBus()
        with pytest.raises(AbortedByBackend):
            run_pipeline(
                [unit],
                specs,
                PipelineConfig(fail_fast=True),
                ScriptedBackend({"tags": {}}),
                bus=bus,
            )
        assert bus.messages[-1].payload_type == "Abort"

    def test_partial_failure_marks_incomplete(self, specs):
        good = make_unit(file="src/a.py")
        bad = make_unit(file="src/b.py")
        gateway = two_findings_script(good)
        report = run_pipeline(
            [good, bad], specs, PipelineConfig(), gateway, run_id="r"
        )
        assert report.incomplete_units == ("src/b.py:1-6",)
        assert len(report.findings) == 2

    def test_bus_message_counts_single_round(self, specs):
        unit = make_unit()
        empty = ScriptedBackend(
            {"substrings": [{"match": "", "response": '{"findings": []}'}]}
        )
        bus = MessageBus()
        run_pipeline([unit], specs, PipelineConfig(max_rounds=1), empty, bus=bus)
        types = [m.payload_type for m in bus.messages]
        assert types.count("TaskAssignment") == 4
        assert types.count("FindingsBatch") == 4
        assert types.count("RoundComplete") == 1
        assert [m.msg_id for m in bus.messages] == list(range(1, 10))

    def test_role_order_from_transcript_tags(self, specs, tmp_path):
        from revq.gateway import RecordingGateway, load_transcript

        unit = make_unit()
        gateway = RecordingGateway(two_findings_script(unit), tmp_path / "t.jsonl")
        run_pipeline([unit], specs, PipelineConfig(max_rounds=1), gateway)
        _, entries = load_transcript(tmp_path / "t.jsonl")
        roles = [e["tag"].split("/")[0] for e in entries]
        assert roles == ["Reviewer", "BugReporter", "SmellAnalyst", "Optimizer"]

    def test_monotonic_accumulation(self, specs):
        unit = make_unit()
        gateway = two_findings_script(unit)
        report_one = run_pipeline(
            [unit], specs, PipelineConfig(max_rounds=1, stop_on_no_new_findings=False),
            two_findings_script(unit),
        )
        report_two = run_pipeline(
            [unit], specs, PipelineConfig(max_rounds=2, stop_on_no_new_findings=False),
            gateway,
        )
        fps_one = {finding_fingerprint(f) for f in report_one.findings}
        fps_two = {finding_fingerprint(f) for f in report_two.findings}
        assert fps_one <= fps_two

    def test_bus_log_file(self, specs, tmp_path):
        unit = make_unit()
        log = tmp_path / "bus.jsonl"
        bus = MessageBus(log)
        run_pipeline(
            [unit], specs, PipelineConfig(max_rounds=1), two_findings_script(unit),
            bus=bus,
        )
        rows = [json.loads(line) for line in log.read_text().splitlines()]
        assert [r["msg_id"] for r in rows] == list(range(1, len(rows) + 1))
        assert rows[-1]["type"] == "RoundComplete"


def brute_force_dedup_oracle(findings):
    """Independent group-by for cross-checking dedup severity behavior."""
    groups = {}
    for f in findings:
        key = (
            f.file,
            f.kind,
            f.span.start_line,
            f.span.end_line,
            " ".join(f.message.lower().split()).rstrip(
                "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~ "
            ),
        )
        groups.setdefault(key, []).append(f)
    return groups


def test_dedup_against_brute_force_oracle():
    rng = random.Random(11)
    findings = [
        make_finding(
            file=rng.choice(["a.py", "b.py", "c.py"]),
            kind=rng.choice(list(FindingKind)),
            severity=rng.choice(list(Severity)),
            message=rng.choice(["dup issue", "Dup  issue.", "unique issue"]),
            span=LineSpan(*sorted([rng.randint(1, 4), rng.randint(1, 4)])),
        )
        for _ in range(30)
    ]
    result = dedup_findings(findings)
    oracle = brute_force_dedup_oracle(findings)
    assert len(result) == len(oracle)
    for merged in result:
        key = (
            merged.file,
            merged.kind,
            merged.span.start_line,
            merged.span.end_line,
            normalize_message(merged.message),
        )
        group = oracle[key]
        assert merged.severity == max(f.severity for f in group)
        assert merged.confidence == max(f.confidence for f in group)
