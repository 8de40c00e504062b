"""The four review agents: prompt builders plus structured-response parsers.

Each agent consumes a CodeUnit and the findings accumulated so far, asks the
model for a JSON payload, and parses it defensively. Parsing is total: any
response text yields a valid AgentOutput, degrading to a single whole-unit
finding when no structured payload can be recovered.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .gateway import ChatRequest, ChatResponse
from .model import (
    AgentRole,
    CodeUnit,
    Finding,
    FindingKind,
    LineSpan,
    PIPELINE_ORDER,
    ReplacementPatch,
    Severity,
    finding_fingerprint,
)

RESPONSE_SCHEMA_ID = "revq.findings.v1"

PLACEHOLDERS = {"unit_content", "file", "span", "prior_findings", "context_note"}

# which kinds each role is allowed to emit; enforced at parse time
ROLE_KINDS = {
    AgentRole.REVIEWER: frozenset(FindingKind),
    AgentRole.BUG_REPORTER: frozenset({FindingKind.BUG}),
    AgentRole.SMELL_ANALYST: frozenset(
        {FindingKind.CODE_SMELL, FindingKind.STANDARDS_VIOLATION}
    ),
    AgentRole.OPTIMIZER: frozenset({FindingKind.OPTIMIZATION}),
}

# kind assigned to the degraded fallback finding per role
PRIMARY_KIND = {
    AgentRole.REVIEWER: FindingKind.BUG,
    AgentRole.BUG_REPORTER: FindingKind.BUG,
    AgentRole.SMELL_ANALYST: FindingKind.CODE_SMELL,
    AgentRole.OPTIMIZER: FindingKind.OPTIMIZATION,
}

_PROMPT_BASENAMES = {
    AgentRole.REVIEWER: "reviewer",
    AgentRole.BUG_REPORTER: "bug_reporter",
    AgentRole.SMELL_ANALYST: "smell_analyst",
    AgentRole.OPTIMIZER: "optimizer",
}


class UnfilledPlaceholder(Exception):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"template references undeclared placeholder {{{name}}}")


class ParseStatus(enum.Enum):
    CLEAN = "clean"
    REPAIRED = "repaired"
    DEGRADED = "degraded"


@dataclass(frozen=True)
class AgentSpec:
    role: AgentRole
    system_prompt_template: str
    user_prompt_template: str
    response_schema_id: str = RESPONSE_SCHEMA_ID
    system_prompt_path: str = ""
    user_prompt_path: str = ""


@dataclass
class AgentOutput:
    findings: list[Finding]
    raw_text: str
    parse_status: ParseStatus
    diagnostics: list[str] = field(default_factory=list)


def load_agent_specs(prompt_dir: str | Path | None = None) -> dict[AgentRole, AgentSpec]:
    """Load the per-role prompt templates, from prompt_dir or the packaged defaults."""
    specs: dict[AgentRole, AgentSpec] = {}
    for role in PIPELINE_ORDER:
        base = _PROMPT_BASENAMES[role]
        if prompt_dir is not None:
            sys_path = Path(prompt_dir) / f"{base}.system.txt"
            user_path = Path(prompt_dir) / f"{base}.user.txt"
            sys_text = sys_path.read_text(encoding="utf-8")
            user_text = user_path.read_text(encoding="utf-8")
            sys_name, user_name = str(sys_path), str(user_path)
        else:
            pkg = resources.files("revq").joinpath("prompts")
            sys_res = pkg.joinpath(f"{base}.system.txt")
            user_res = pkg.joinpath(f"{base}.user.txt")
            sys_text = sys_res.read_text(encoding="utf-8")
            user_text = user_res.read_text(encoding="utf-8")
            sys_name = f"revq/prompts/{base}.system.txt"
            user_name = f"revq/prompts/{base}.user.txt"
        specs[role] = AgentSpec(
            role=role,
            system_prompt_template=sys_text,
            user_prompt_template=user_text,
            system_prompt_path=sys_name,
            user_prompt_path=user_name,
        )
    return specs


_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def _fill_template(template: str, values: dict[str, str]) -> str:
    for match in _PLACEHOLDER_RE.finditer(template):
        name = match.group(1)
        if name not in values:
            raise UnfilledPlaceholder(name)
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template)


def render_prior_findings(prior: list[Finding]) -> str:
    """Numbered list, severity-descending, as shown to the next agent."""
    if not prior:
        return "None."
    ordered = sorted(prior, key=lambda f: -int(f.severity))
    rows = []
    for i, f in enumerate(ordered, 1):
        rows.append(
            f"{i}. {f.kind.label} @ lines {f.span.start_line}-{f.span.end_line}: "
            f"{f.message} (severity: {f.severity.label})"
        )
    return "\n".join(rows)


def build_prompt(
    spec: AgentSpec,
    unit: CodeUnit,
    prior: list[Finding],
    round_num: int = 1,
) -> ChatRequest:
    """Fill the role templates for one unit and produce a tagged request."""
    values = {
        "unit_content": unit.content,
        "file": unit.file,
        "span": f"lines {unit.span.start_line}-{unit.span.end_line}",
        "prior_findings": render_prior_findings(prior),
        "context_note": unit.context_note or "None.",
    }
    return ChatRequest(
        system_prompt=_fill_template(spec.system_prompt_template, values),
        user_prompt=_fill_template(spec.user_prompt_template, values),
        tag=f"{spec.role.tag_name}/round-{round_num}/{unit.unit_id}",
    )


_FENCE_RE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)


def _extract_json_payload(text: str):
    """Return (payload, was_clean) for the largest parseable JSON container.

    Tries the whole text, then fenced blocks, then every balanced object or
    array found by scanning; only dict/list payloads count.
    """
    stripped = text.strip()
    try:
        payload = json.loads(stripped)
        if isinstance(payload, (dict, list)):
            return payload, True
    except json.JSONDecodeError:
        pass

    candidates: list[tuple[int, object]] = []
    for m in _FENCE_RE.finditer(text):
        inner = m.group(1).strip()
        try:
            payload = json.loads(inner)
        except json.JSONDecodeError:
            continue
        if isinstance(payload, (dict, list)):
            candidates.append((len(inner), payload))

    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch not in "{[":
            continue
        try:
            payload, end = decoder.raw_decode(text, i)
        except (json.JSONDecodeError, ValueError):
            continue
        if isinstance(payload, (dict, list)):
            candidates.append((end - i, payload))

    if not candidates:
        return None, False
    candidates.sort(key=lambda c: c[0])
    return candidates[-1][1], False


def _coerce_int(value) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        try:
            return int(value.strip())
        except ValueError:
            return None
    return None


def _map_span(unit: CodeUnit, raw_start, raw_end) -> LineSpan:
    """Clamp a unit-relative span and remap it to file coordinates."""
    unit_len = unit.span.line_count
    start = _coerce_int(raw_start)
    end = _coerce_int(raw_end)
    if start is None:
        start = 1
    if end is None:
        end = start
    start = min(max(start, 1), unit_len)
    end = min(max(end, start), unit_len)
    return LineSpan(
        unit.span.start_line + start - 1,
        unit.span.start_line + end - 1,
    )


def _finding_id(f: Finding) -> str:
    return finding_fingerprint(f).hex()[:12]


def _item_to_finding(
    role: AgentRole,
    unit: CodeUnit,
    round_num: int,
    item,
    diagnostics: list[str],
) -> Finding | None:
    if not isinstance(item, dict):
        diagnostics.append(f"{role.label}: dropped non-object finding item")
        return None
    message = item.get("message")
    if not isinstance(message, str) or not message.strip():
        diagnostics.append(f"{role.label}: dropped item without a message")
        return None
    try:
        kind = FindingKind.from_label(str(item.get("kind", "")))
    except ValueError:
        diagnostics.append(
            f"{role.label}: dropped item with unknown kind {item.get('kind')!r}"
        )
        return None
    if kind not in ROLE_KINDS[role]:
        diagnostics.append(
            f"{role.label}: dropped out-of-discipline kind {kind.label!r}"
        )
        return None
    try:
        severity = Severity.from_label(str(item.get("severity", "")))
    except ValueError:
        severity = Severity.MINOR
    span = _map_span(unit, item.get("start_line"), item.get("end_line"))
    confidence = item.get("confidence", 0.5)
    if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
        confidence = 0.5
    confidence = min(max(float(confidence), 0.0), 1.0)
    recommendation = item.get("recommendation", "")
    if not isinstance(recommendation, str):
        recommendation = ""
    patch = None
    raw_patch = item.get("patch")
    if isinstance(raw_patch, dict) and isinstance(raw_patch.get("replacement"), str):
        patch_span = _map_span(
            unit, raw_patch.get("start_line"), raw_patch.get("end_line")
        )
        patch = ReplacementPatch(
            file=unit.file, span=patch_span, replacement=raw_patch["replacement"]
        )
    elif raw_patch is not None:
        diagnostics.append(f"{role.label}: dropped malformed patch object")
    finding = Finding(
        id="",
        kind=kind,
        severity=severity,
        file=unit.file,
        span=span,
        message=message.strip(),
        recommendation=recommendation.strip(),
        suggested_patch=patch,
        agent=role,
        round=round_num,
        confidence=confidence,
    )
    return _with_id(finding)


def _with_id(finding: Finding) -> Finding:
    from dataclasses import replace

    return replace(finding, id=_finding_id(finding))


def _degraded_output(
    role: AgentRole, unit: CodeUnit, round_num: int, text: str, diagnostics: list[str]
) -> AgentOutput:
    message = text.strip()[:500] or "(empty model response)"
    finding = _with_id(
        Finding(
            id="",
            kind=PRIMARY_KIND[role],
            severity=Severity.MINOR,
            file=unit.file,
            span=unit.span,
            message=message,
            agent=role,
            round=round_num,
            confidence=0.5,
        )
    )
    return AgentOutput(
        findings=[finding],
        raw_text=text,
        parse_status=ParseStatus.DEGRADED,
        diagnostics=diagnostics,
    )


def parse_agent_response(
    role: AgentRole,
    unit: CodeUnit,
    response: ChatResponse,
    round_num: int = 1,
) -> AgentOutput:
    """Total parser: every response text yields a valid AgentOutput."""
    diagnostics: list[str] = []
    payload, was_clean = _extract_json_payload(response.text)
    if payload is None:
        return _degraded_output(role, unit, round_num, response.text, diagnostics)

    if isinstance(payload, dict):
        items = payload.get("findings")
        if not isinstance(items, list):
            items = [payload] if "kind" in payload else []
    else:
        items = payload

    findings: list[Finding] = []
    for item in items:
        finding = _item_to_finding(role, unit, round_num, item, diagnostics)
        if finding is not None:
            findings.append(finding)
    status = ParseStatus.CLEAN if was_clean else ParseStatus.REPAIRED
    return AgentOutput(
        findings=findings,
        raw_text=response.text,
        parse_status=status,
        diagnostics=diagnostics,
    )


_REPAIR_INSTRUCTION = (
    "\n\nYour previous answer could not be parsed. Respond again with ONLY a "
    'single JSON object of the form {"findings": [...]} and no other text.'
)


def run_agent(
    spec: AgentSpec,
    unit: CodeUnit,
    prior: list[Finding],
    gateway,
    round_num: int = 1,
) -> AgentOutput:
    """One agent pass over one unit: prompt, model call, parse, optional repair."""
    request = build_prompt(spec, unit, prior, round_num)
    response = gateway.complete(request)
    output = parse_agent_response(spec.role, unit, response, round_num)
    if output.parse_status is ParseStatus.DEGRADED and getattr(
        gateway, "is_live", False
    ):
        retry = ChatRequest(
            system_prompt=request.system_prompt,
            user_prompt=request.user_prompt + _REPAIR_INSTRUCTION,
            tag=request.tag + "/repair",
            temperature=request.temperature,
            max_output_tokens=request.max_output_tokens,
        )
        retry_response = gateway.complete(retry)
        retry_output = parse_agent_response(spec.role, unit, retry_response, round_num)
        if retry_output.parse_status is not ParseStatus.DEGRADED:
            return retry_output
    return output
