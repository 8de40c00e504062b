"""Render a ReviewReport as JSON, Markdown, or SARIF, plus CI exit gating.

JSON output is canonical (sorted keys, no insignificant whitespace) so a
replayed run can be compared byte-for-byte against the recorded one. A small
structural validator for SARIF 2.1.0 required properties lives here too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .model import (
    AgentRole,
    Finding,
    FindingKind,
    LineSpan,
    ReplacementPatch,
    ReviewReport,
    Severity,
)

REPORT_SCHEMA_VERSION = 1
SARIF_VERSION = "2.1.0"
SARIF_SCHEMA_URI = (
    "https://raw.githubusercontent.com/oasis-tcs/sarif-spec/master/"
    "Schemata/sarif-schema-2.1.0.json"
)
TOOL_NAME = "revq"

SARIF_LEVEL = {
    Severity.CRITICAL: "error",
    Severity.MAJOR: "error",
    Severity.MINOR: "warning",
    Severity.INFO: "note",
}

_RULE_DESCRIPTIONS = {
    FindingKind.BUG: "Potential bug or logic error",
    FindingKind.CODE_SMELL: "Design-level code smell",
    FindingKind.STANDARDS_VIOLATION: "Deviation from coding standards",
    FindingKind.OPTIMIZATION: "Optimization opportunity",
}


@dataclass(frozen=True)
class RenderOptions:
    format: str = "json"  # json | markdown | sarif
    min_severity: Severity = Severity.INFO
    include_patches: bool = True
    redact_content: bool = False


def _filtered(report: ReviewReport, opts: RenderOptions) -> list[Finding]:
    out = [f for f in report.findings if f.severity >= opts.min_severity]
    if not opts.include_patches or opts.redact_content:
        out = [replace(f, suggested_patch=None) for f in out]
    return out


def _finding_to_dict(f: Finding) -> dict:
    patch = None
    if f.suggested_patch is not None:
        patch = {
            "file": f.suggested_patch.file,
            "span": {
                "start_line": f.suggested_patch.span.start_line,
                "end_line": f.suggested_patch.span.end_line,
            },
            "replacement": f.suggested_patch.replacement,
        }
    return {
        "id": f.id,
        "kind": f.kind.label,
        "severity": f.severity.label,
        "file": f.file,
        "span": {"start_line": f.span.start_line, "end_line": f.span.end_line},
        "message": f.message,
        "recommendation": f.recommendation,
        "suggested_patch": patch,
        "agent": f.agent.label,
        "round": f.round,
        "confidence": f.confidence,
    }


def _finding_from_dict(data: dict) -> Finding:
    patch = None
    if data.get("suggested_patch") is not None:
        p = data["suggested_patch"]
        patch = ReplacementPatch(
            file=p["file"],
            span=LineSpan(p["span"]["start_line"], p["span"]["end_line"]),
            replacement=p["replacement"],
        )
    return Finding(
        id=data["id"],
        kind=FindingKind.from_label(data["kind"]),
        severity=Severity.from_label(data["severity"]),
        file=data["file"],
        span=LineSpan(data["span"]["start_line"], data["span"]["end_line"]),
        message=data["message"],
        recommendation=data["recommendation"],
        suggested_patch=patch,
        agent=AgentRole.from_label(data["agent"]),
        round=data["round"],
        confidence=data["confidence"],
    )


def report_to_dict(report: ReviewReport, opts: RenderOptions | None = None) -> dict:
    opts = opts or RenderOptions()
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "run_id": report.run_id,
        "target_description": report.target_description,
        "backend_descriptor": report.backend_descriptor,
        "started_at": report.started_at,
        "finished_at": report.finished_at,
        "rounds_executed": report.rounds_executed,
        "units_reviewed": report.units_reviewed,
        "incomplete_units": list(report.incomplete_units),
        "findings": [_finding_to_dict(f) for f in _filtered(report, opts)],
    }


def render_json(report: ReviewReport, opts: RenderOptions | None = None) -> str:
    """Canonical JSON: sorted keys, compact separators, trailing newline."""
    return (
        json.dumps(report_to_dict(report, opts), sort_keys=True, separators=(",", ":"))
        + "\n"
    )


def parse_report(text: str) -> ReviewReport:
    """Inverse of render_json for round-trip checks and the replay command."""
    data = json.loads(text)
    if data.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema_version: {data.get('schema_version')}")
    return ReviewReport(
        run_id=data["run_id"],
        target_description=data["target_description"],
        findings=tuple(_finding_from_dict(d) for d in data["findings"]),
        rounds_executed=data["rounds_executed"],
        units_reviewed=data["units_reviewed"],
        backend_descriptor=data["backend_descriptor"],
        started_at=data["started_at"],
        finished_at=data["finished_at"],
        incomplete_units=tuple(data.get("incomplete_units", [])),
    )


def _md_escape(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")


def render_markdown(report: ReviewReport, opts: RenderOptions | None = None) -> str:
    opts = opts or RenderOptions()
    findings = _filtered(report, opts)
    lines = [
        f"# Code review report `{report.run_id}`",
        "",
        f"- Target: {report.target_description or '(unspecified)'}",
        f"- Backend: {report.backend_descriptor}",
        f"- Rounds executed: {report.rounds_executed}",
        f"- Units reviewed: {report.units_reviewed}",
        f"- Findings: {len(findings)}",
        "",
    ]
    if report.incomplete_units:
        lines.append(
            f"> Incomplete units: {', '.join(report.incomplete_units)}"
        )
        lines.append("")
    by_file: dict[str, list[Finding]] = {}
    for f in findings:
        by_file.setdefault(f.file, []).append(f)
    for file in sorted(by_file):
        lines.append(f"## {file}")
        lines.append("")
        lines.append("| Severity | Lines | Kind | Message | Recommendation |")
        lines.append("| --- | --- | --- | --- | --- |")
        for f in by_file[file]:
            lines.append(
                f"| {f.severity.label} "
                f"| {f.span.start_line}-{f.span.end_line} "
                f"| {f.kind.label} "
                f"| {_md_escape(f.message)} "
                f"| {_md_escape(f.recommendation)} |"
            )
        lines.append("")
        for f in by_file[file]:
            if f.suggested_patch is None:
                continue
            p = f.suggested_patch
            lines.append(
                f"Suggested replacement for lines "
                f"{p.span.start_line}-{p.span.end_line}:"
            )
            lines.append("")
            lines.append("```diff")
            for row in p.replacement.split("\n"):
                lines.append(f"+{row}")
            lines.append("```")
            lines.append("")
    return "\n".join(lines)


def render_sarif(report: ReviewReport, opts: RenderOptions | None = None) -> str:
    opts = opts or RenderOptions()
    findings = _filtered(report, opts)
    rules = [
        {
            "id": f"{TOOL_NAME}/{kind.label.replace('_', '-')}",
            "name": kind.label,
            "shortDescription": {"text": _RULE_DESCRIPTIONS[kind]},
        }
        for kind in FindingKind
    ]
    results = []
    for f in findings:
        properties = {
            "agent": f.agent.label,
            "confidence": f.confidence,
            "round": f.round,
        }
        if f.recommendation:
            properties["recommendation"] = f.recommendation
        results.append(
            {
                "ruleId": f"{TOOL_NAME}/{f.kind.label.replace('_', '-')}",
                "level": SARIF_LEVEL[f.severity],
                "message": {"text": f.message},
                "locations": [
                    {
                        "physicalLocation": {
                            "artifactLocation": {"uri": f.file},
                            "region": {
                                "startLine": f.span.start_line,
                                "endLine": f.span.end_line,
                            },
                        }
                    }
                ],
                "properties": properties,
            }
        )
    doc = {
        "$schema": SARIF_SCHEMA_URI,
        "version": SARIF_VERSION,
        "runs": [
            {
                "tool": {
                    "driver": {
                        "name": TOOL_NAME,
                        "informationUri": "https://example.invalid/revq",
                        "rules": rules,
                    }
                },
                "results": results,
            }
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def validate_sarif(doc: dict) -> list[str]:
    """Structural check of SARIF 2.1.0 required properties; [] means valid."""
    problems: list[str] = []
    if doc.get("version") != SARIF_VERSION:
        problems.append(f"version must be {SARIF_VERSION!r}")
    runs = doc.get("runs")
    if not isinstance(runs, list) or not runs:
        return problems + ["runs must be a non-empty array"]
    for ri, run in enumerate(runs):
        driver = run.get("tool", {}).get("driver", {})
        if not isinstance(driver.get("name"), str) or not driver.get("name"):
            problems.append(f"runs[{ri}].tool.driver.name missing")
        results = run.get("results")
        if not isinstance(results, list):
            problems.append(f"runs[{ri}].results must be an array")
            continue
        for i, result in enumerate(results):
            message = result.get("message", {})
            if not isinstance(message.get("text"), str) or not message.get("text"):
                problems.append(f"runs[{ri}].results[{i}].message.text missing")
            if result.get("level") not in ("error", "warning", "note", "none"):
                problems.append(f"runs[{ri}].results[{i}].level invalid")
            for loc in result.get("locations", []):
                region = loc.get("physicalLocation", {}).get("region", {})
                start = region.get("startLine")
                end = region.get("endLine", start)
                if not isinstance(start, int) or start < 1:
                    problems.append(
                        f"runs[{ri}].results[{i}] region.startLine invalid"
                    )
                elif isinstance(end, int) and end < start:
                    problems.append(
                        f"runs[{ri}].results[{i}] region endLine < startLine"
                    )
    return problems


def render(report: ReviewReport, opts: RenderOptions) -> str:
    if opts.format == "json":
        return render_json(report, opts)
    if opts.format in ("markdown", "md"):
        return render_markdown(report, opts)
    if opts.format == "sarif":
        return render_sarif(report, opts)
    raise ValueError(f"unknown render format: {opts.format}")


def exit_status(report: ReviewReport, gate: Severity) -> int:
    """0 when no finding reaches the gate severity, 1 otherwise."""
    return 1 if any(f.severity >= gate for f in report.findings) else 0
