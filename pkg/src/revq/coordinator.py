"""Centralized coordination: message bus, task delegation, discussion rounds.

The pipeline runs the four roles in fixed hand-off order per unit, repeats
for up to max_rounds, and stops early once a round contributes no new
post-dedup findings. Units may be processed concurrently within a round
(findings are unit-scoped until final aggregation); all bus messages and the
final report are applied in deterministic canonical order.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .agents import AgentOutput, AgentSpec, run_agent
from .gateway import GatewayError
from .model import (
    AgentRole,
    CodeUnit,
    Finding,
    PIPELINE_ORDER,
    ReviewReport,
    finding_fingerprint,
    finding_sort_key,
    severity_max,
)


class AbortedByBackend(Exception):
    def __init__(self, unit_id: str, role: AgentRole, cause: Exception):
        self.unit_id = unit_id
        self.role = role
        self.cause = cause
        super().__init__(f"{role.label} failed on unit {unit_id}: {cause}")


@dataclass(frozen=True)
class PipelineConfig:
    max_rounds: int = 2
    stop_on_no_new_findings: bool = True
    fail_fast: bool = False

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")


@dataclass(frozen=True)
class AgentMessage:
    msg_id: int
    sender: str  # role tag name or "System"
    recipient: str  # role tag name or "Broadcast"
    round: int
    payload_type: str  # TaskAssignment | FindingsBatch | RoundComplete | Abort
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "msg_id": self.msg_id,
                "from": self.sender,
                "to": self.recipient,
                "round": self.round,
                "type": self.payload_type,
                "data": self.payload,
            },
            sort_keys=True,
        )


class MessageBus:
    """Append-only, strictly increasing msg_ids; optionally mirrored to JSONL."""

    def __init__(self, log_path: str | Path | None = None):
        self.messages: list[AgentMessage] = []
        self._next_id = 1
        self._log_path = Path(log_path) if log_path else None
        self._log_error: str | None = None
        self._aborted = False
        self._lock = threading.Lock()

    @property
    def log_error(self) -> str | None:
        return self._log_error

    def emit(
        self,
        sender: str,
        recipient: str,
        round_num: int,
        payload_type: str,
        payload: dict,
    ) -> AgentMessage:
        with self._lock:
            if self._aborted:
                raise RuntimeError("message bus is closed after Abort")
            msg = AgentMessage(
                self._next_id, sender, recipient, round_num, payload_type, payload
            )
            self._next_id += 1
            self.messages.append(msg)
            if payload_type == "Abort":
                self._aborted = True
            if self._log_path is not None and self._log_error is None:
                try:
                    with self._log_path.open("a", encoding="utf-8") as fh:
                        fh.write(msg.to_json() + "\n")
                except OSError as exc:
                    self._log_error = f"bus log write failed: {exc}"
            return msg


def _finding_summary(f: Finding) -> dict:
    return {
        "id": f.id,
        "kind": f.kind.label,
        "severity": f.severity.label,
        "file": f.file,
        "start_line": f.span.start_line,
        "end_line": f.span.end_line,
        "message": f.message,
    }


def _merge_key(f: Finding) -> tuple:
    """Canonical within-group order: earliest round, pipeline order, then ties."""
    return (
        f.round,
        f.agent.pipeline_index,
        -int(f.severity),
        -f.confidence,
        f.message,
        f.recommendation,
    )


def dedup_findings(findings: list[Finding]) -> list[Finding]:
    """Collapse fingerprint-equal findings into one merged finding each.

    Merge rules: severity and confidence take the group maximum; distinct
    non-empty recommendations are joined in canonical first-seen order; agent
    and round come from the earliest contributor. Output is sorted in report
    order. Permutation-invariant and idempotent.
    """
    groups: dict[bytes, list[Finding]] = {}
    for f in findings:
        groups.setdefault(finding_fingerprint(f), []).append(f)
    merged: list[Finding] = []
    for fp, group in groups.items():
        group.sort(key=_merge_key)
        base = group[0]
        severity = base.severity
        confidence = base.confidence
        recs: list[str] = []
        patch = base.suggested_patch
        for member in group:
            severity = severity_max(severity, member.severity)
            confidence = max(confidence, member.confidence)
            rec = member.recommendation.strip()
            if rec and rec not in recs:
                recs.append(rec)
            if patch is None:
                patch = member.suggested_patch
        merged.append(
            replace(
                base,
                id=fp.hex()[:12],
                severity=severity,
                confidence=confidence,
                recommendation="; ".join(recs),
                suggested_patch=patch,
            )
        )
    merged.sort(key=finding_sort_key)
    return merged


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class _UnitRoundResult:
    unit: CodeUnit
    steps: list[tuple[AgentRole, AgentOutput | None, Exception | None]]
    new_findings: list[Finding] = field(default_factory=list)


def _run_unit_round(
    unit: CodeUnit,
    specs: dict[AgentRole, AgentSpec],
    prior: list[Finding],
    gateway,
    round_num: int,
) -> _UnitRoundResult:
    """Run the four roles sequentially for one unit; stop the unit on error."""
    accumulated = list(prior)
    result = _UnitRoundResult(unit=unit, steps=[])
    for role in PIPELINE_ORDER:
        try:
            output = run_agent(specs[role], unit, accumulated, gateway, round_num)
        except GatewayError as exc:
            result.steps.append((role, None, exc))
            return result
        result.steps.append((role, output, None))
        accumulated.extend(output.findings)
        result.new_findings.extend(output.findings)
    return result


def run_pipeline(
    units: list[CodeUnit],
    specs: dict[AgentRole, AgentSpec],
    config: PipelineConfig,
    gateway,
    *,
    run_id: str = "run",
    target_description: str = "",
    bus: MessageBus | None = None,
) -> ReviewReport:
    """Drive all units through the agent pipeline and aggregate the report."""
    started_at = _utc_now_iso()
    bus = bus or MessageBus()
    accumulated: dict[str, list[Finding]] = {u.unit_id: [] for u in units}
    all_findings: list[Finding] = []
    incomplete: set[str] = set()
    diagnostics: list[str] = []

    if not units:
        bus.emit("System", "Broadcast", 1, "RoundComplete", {"new_findings": 0})
        return ReviewReport(
            run_id=run_id,
            target_description=target_description,
            findings=(),
            rounds_executed=1,
            units_reviewed=0,
            backend_descriptor=gateway.descriptor,
            started_at=started_at,
            finished_at=_utc_now_iso(),
        )

    max_workers = max(1, getattr(gateway, "max_in_flight", 1))
    rounds_executed = 0
    for round_num in range(1, config.max_rounds + 1):
        rounds_executed = round_num
        before_fps = {finding_fingerprint(f) for f in dedup_findings(all_findings)}

        def task(unit: CodeUnit) -> _UnitRoundResult:
            return _run_unit_round(
                unit, specs, accumulated[unit.unit_id], gateway, round_num
            )

        active = [u for u in units if u.unit_id not in incomplete]
        if max_workers > 1 and len(active) > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                results = list(pool.map(task, active))
        else:
            results = [task(u) for u in active]

        # apply results in canonical unit order on the coordinating thread
        for result in results:
            unit = result.unit
            for role, output, error in result.steps:
                bus.emit(
                    "System",
                    role.tag_name,
                    round_num,
                    "TaskAssignment",
                    {"unit_id": unit.unit_id},
                )
                if error is not None:
                    incomplete.add(unit.unit_id)
                    diagnostics.append(
                        f"{role.label} failed on {unit.unit_id}: {error}"
                    )
                    if config.fail_fast:
                        bus.emit(
                            "System",
                            "Broadcast",
                            round_num,
                            "Abort",
                            {"reason": str(error), "unit_id": unit.unit_id},
                        )
                        raise AbortedByBackend(unit.unit_id, role, error)
                    break
                bus.emit(
                    role.tag_name,
                    "Broadcast",
                    round_num,
                    "FindingsBatch",
                    {
                        "unit_id": unit.unit_id,
                        "findings": [_finding_summary(f) for f in output.findings],
                    },
                )
                diagnostics.extend(output.diagnostics)
            accumulated[unit.unit_id].extend(result.new_findings)
            all_findings.extend(result.new_findings)

        after = dedup_findings(all_findings)
        after_fps = {finding_fingerprint(f) for f in after}
        bus.emit(
            "System",
            "Broadcast",
            round_num,
            "RoundComplete",
            {"new_findings": len(after_fps - before_fps)},
        )
        if config.stop_on_no_new_findings and after_fps == before_fps:
            break

    final = dedup_findings(all_findings)
    return ReviewReport(
        run_id=run_id,
        target_description=target_description,
        findings=tuple(final),
        rounds_executed=rounds_executed,
        units_reviewed=len(units),
        backend_descriptor=gateway.descriptor,
        started_at=started_at,
        finished_at=_utc_now_iso(),
        incomplete_units=tuple(sorted(incomplete)),
    )
