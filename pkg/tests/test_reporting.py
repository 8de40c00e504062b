import json

import pytest

from revq.figures import render_summary_figure
from revq.model import (
    AgentRole,
    Finding,
    FindingKind,
    LineSpan,
    ReplacementPatch,
    ReviewReport,
    Severity,
)
from revq.reporting import (
    RenderOptions,
    exit_status,
    parse_report,
    render,
    render_json,
    render_markdown,
    render_sarif,
    validate_sarif,
)


def make_finding(**overrides):
    base = dict(
        id="abc123",
        kind=FindingKind.BUG,
        severity=Severity.MAJOR,
        file="a.c",
        span=LineSpan(3, 5),
        message="null deref",
        recommendation="add a check",
        agent=AgentRole.BUG_REPORTER,
        round=1,
        confidence=0.8,
    )
    base.update(overrides)
    return Finding(**base)


def make_report(findings=(), **overrides):
    base = dict(
        run_id="run-1",
        target_description="tree:fixtures",
        findings=tuple(findings),
        rounds_executed=2,
        units_reviewed=3,
        backend_descriptor="scripted",
        started_at="2026-08-24T10:00:00Z",
        finished_at="2026-08-24T10:00:04Z",
    )
    base.update(overrides)
    return ReviewReport(**base)


class TestJson:
    def test_round_trip(self):
        patch = ReplacementPatch("a.c", LineSpan(3, 5), "fixed();\nmore();")
        report = make_report(
            [make_finding(suggested_patch=patch), make_finding(file="b.c", id="x")],
            incomplete_units=("u1",),
        )
        assert parse_report(render_json(report)) == report

    def test_deterministic(self):
        report = make_report([make_finding()])
        assert render_json(report) == render_json(report)

    def test_canonical_shape(self):
        text = render_json(make_report())
        data = json.loads(text)
        assert data["schema_version"] == 1
        assert "  " not in text.split("\n")[0]


class TestSarif:
    def test_empty_report(self):
        doc = json.loads(render_sarif(make_report()))
        assert doc["version"] == "2.1.0"
        assert doc["runs"][0]["results"] == []
        assert validate_sarif(doc) == []

    def test_major_bug_result(self):
        doc = json.loads(render_sarif(make_report([make_finding()])))
        (result,) = doc["runs"][0]["results"]
        assert result["ruleId"] == "revq/bug"
        assert result["level"] == "error"
        region = result["locations"][0]["physicalLocation"]["region"]
        assert (region["startLine"], region["endLine"]) == (3, 5)
        assert doc["runs"][0]["tool"]["driver"]["name"] == "revq"

    @pytest.mark.parametrize(
        "severity,level",
        [
            (Severity.CRITICAL, "error"),
            (Severity.MAJOR, "error"),
            (Severity.MINOR, "warning"),
            (Severity.INFO, "note"),
        ],
    )
    def test_level_mapping(self, severity, level):
        doc = json.loads(render_sarif(make_report([make_finding(severity=severity)])))
        assert doc["runs"][0]["results"][0]["level"] == level

    def test_validator_flags_problems(self):
        assert validate_sarif({"version": "1.0", "runs": []})
        broken = {
            "version": "2.1.0",
            "runs": [
                {
                    "tool": {"driver": {}},
                    "results": [{"message": {}, "level": "fatal"}],
                }
            ],
        }
        problems = validate_sarif(broken)
        assert any("driver.name" in p for p in problems)
        assert any("message.text" in p for p in problems)
        assert any("level" in p for p in problems)


class TestMarkdown:
    def test_sections_and_table(self):
        text = render_markdown(make_report([make_finding()]))
        assert "## a.c" in text
        assert "| major | 3-5 | bug | null deref | add a check |" in text

    def test_patch_fenced_block(self):
        patch = ReplacementPatch("a.c", LineSpan(3, 5), "safe_call();")
        text = render_markdown(make_report([make_finding(suggested_patch=patch)]))
        assert "```diff" in text
        assert "+safe_call();" in text

    def test_redact_strips_patches(self):
        patch = ReplacementPatch("a.c", LineSpan(3, 5), "secret();")
        text = render_markdown(
            make_report([make_finding(suggested_patch=patch)]),
            RenderOptions(format="markdown", redact_content=True),
        )
        assert "secret" not in text


class TestFiltering:
    def test_min_severity_applies_to_all_formats(self):
        report = make_report(
            [make_finding(), make_finding(severity=Severity.INFO, id="i", file="b.c")]
        )
        opts_major = RenderOptions(min_severity=Severity.MAJOR)
        assert len(json.loads(render_json(report, opts_major))["findings"]) == 1
        sarif = json.loads(render_sarif(report, opts_major))
        assert len(sarif["runs"][0]["results"]) == 1
        md = render_markdown(report, opts_major)
        assert "b.c" not in md

    def test_monotonic(self):
        report = make_report(
            [
                make_finding(severity=s, id=str(i), file=f"f{i}.c")
                for i, s in enumerate(Severity)
            ]
        )
        counts = [
            len(json.loads(render_json(report, RenderOptions(min_severity=s)))["findings"])
            for s in Severity
        ]
        assert counts == sorted(counts, reverse=True)

    def test_unknown_format_rejected(self):
        with pytest.raises(ValueError):
            render(make_report(), RenderOptions(format="xml"))


class TestExitStatus:
    def test_below_gate(self):
        report = make_report([make_finding(severity=Severity.MINOR)])
        assert exit_status(report, Severity.MAJOR) == 0

    def test_at_or_above_gate(self):
        report = make_report([make_finding(severity=Severity.CRITICAL)])
        assert exit_status(report, Severity.MAJOR) == 1

    def test_empty(self):
        assert exit_status(make_report(), Severity.INFO) == 0


def test_summary_figure_written(tmp_path):
    report = make_report([make_finding(), make_finding(severity=Severity.MINOR, id="2")])
    out = render_summary_figure(report, tmp_path / "summary.png")
    assert out.is_file()
    assert out.stat().st_size > 0
