"""Command-line surface: `revq review`, `revq replay`, `revq agents`.

Configuration layers: built-in defaults, then a discovered or explicit
`revq.toml`, then command-line flags; later layers override earlier ones.
Exit codes: 0 clean, 1 gated findings, 2 tool error.
"""

from __future__ import annotations

import json
import sys
import uuid
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .agents import RESPONSE_SCHEMA_ID, load_agent_specs
from .coordinator import (
    AbortedByBackend,
    MessageBus,
    PipelineConfig,
    run_pipeline,
)
from .figures import render_summary_figure
from .gateway import (
    BackendConfig,
    GatewayError,
    RecordingGateway,
    ReplayBackend,
    build_backend,
    load_transcript,
)
from .ingestion import (
    ChunkPolicy,
    DiffText,
    IngestionError,
    TreePath,
    chunk_file,
    parse_unified_diff,
    units_from_diff,
    walk_tree,
)
from .model import PIPELINE_ORDER, ReviewReport, Severity
from .reporting import (
    RenderOptions,
    exit_status,
    render_json,
    render_markdown,
    render_sarif,
)


class ConfigError(Exception):
    pass


def _discover_config(start: Path) -> Path | None:
    for directory in [start, *start.parents]:
        candidate = directory / "revq.toml"
        if candidate.is_file():
            return candidate
    return None


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _layer(file_value, flag_value, default):
    """Flag overrides file overrides default."""
    if flag_value is not None:
        return flag_value
    if file_value is not None:
        return file_value
    return default


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _make_run_dir(output_dir: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    run_dir = Path(output_dir) / f"run-{stamp}-{uuid.uuid4().hex[:6]}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def _ingest(target, policy: ChunkPolicy):
    """Return (units, target_description, warnings)."""
    warnings: list[str] = []
    if isinstance(target, TreePath):
        walk = walk_tree(target)
        units = []
        for path, content in walk.files:
            units.extend(chunk_file(path, content, policy))
        if walk.skipped_binary:
            warnings.append(f"skipped {len(walk.skipped_binary)} binary file(s)")
        for path in walk.unreadable:
            warnings.append(f"unreadable file: {path}")
        return units, f"tree:{target.root}", warnings
    changes = parse_unified_diff(target.diff)
    units, diff_warnings = units_from_diff(changes, target.root, policy)
    warnings.extend(diff_warnings)
    return units, "diff", warnings


def _print_summary(report: ReviewReport) -> None:
    by_kind: dict[str, int] = {}
    by_severity: dict[str, int] = {}
    for f in report.findings:
        by_kind[f.kind.label] = by_kind.get(f.kind.label, 0) + 1
        by_severity[f.severity.label] = by_severity.get(f.severity.label, 0) + 1
    click.echo(f"run {report.run_id}: {len(report.findings)} finding(s)")
    click.echo(
        f"  units reviewed: {report.units_reviewed}, "
        f"rounds executed: {report.rounds_executed}, "
        f"backend: {report.backend_descriptor}"
    )
    if by_kind:
        click.echo(
            "  by kind: "
            + ", ".join(f"{k}={v}" for k, v in sorted(by_kind.items()))
        )
        click.echo(
            "  by severity: "
            + ", ".join(f"{k}={v}" for k, v in sorted(by_severity.items()))
        )
    if report.incomplete_units:
        click.echo(f"  incomplete units: {len(report.incomplete_units)}")


def _write_artifacts(
    report: ReviewReport, run_dir: Path, formats: list[str], opts: RenderOptions
) -> None:
    (run_dir / "report.json").write_text(
        render_json(report, replace(opts, format="json")), encoding="utf-8"
    )
    (run_dir / "report.md").write_text(
        render_markdown(report, replace(opts, format="markdown")), encoding="utf-8"
    )
    if "sarif" in formats:
        (run_dir / "report.sarif").write_text(
            render_sarif(report, replace(opts, format="sarif")), encoding="utf-8"
        )
    try:
        render_summary_figure(report, run_dir / "summary.png")
    except Exception as exc:  # figure failure never fails the run
        click.echo(f"warning: summary figure failed: {exc}", err=True)


def _build_run_config(ctx_params: dict) -> dict:
    """Merge defaults, config file, and flags into one resolved mapping."""
    config_path = ctx_params.get("config")
    file_path = Path(config_path) if config_path else _discover_config(Path.cwd())
    data = _load_config_file(file_path)
    target_cfg = data.get("target", {})
    backend_cfg = data.get("backend", {})
    chunk_cfg = data.get("chunk", {})
    pipeline_cfg = data.get("pipeline", {})
    render_cfg = data.get("render", {})
    p = ctx_params
    resolved = {
        "path": _layer(target_cfg.get("path"), p.get("path"), None),
        "diff": _layer(target_cfg.get("diff"), p.get("diff"), None),
        "include": p.get("include") or tuple(target_cfg.get("include", ())),
        "exclude": p.get("exclude") or tuple(target_cfg.get("exclude", ())),
        "backend": _layer(backend_cfg.get("kind"), p.get("backend"), "scripted"),
        "endpoint_url": _layer(backend_cfg.get("endpoint_url"), p.get("endpoint"), ""),
        "model_name": _layer(backend_cfg.get("model"), p.get("model"), "gpt-4"),
        "api_key_env": _layer(
            backend_cfg.get("api_key_env"), p.get("api_key_env"), "REVQ_API_KEY"
        ),
        "script": _layer(backend_cfg.get("script"), p.get("script"), ""),
        "transcript": _layer(backend_cfg.get("transcript"), p.get("transcript"), ""),
        "rate_limit": int(_layer(backend_cfg.get("rate_limit"), None, 30)),
        "max_retries": int(_layer(backend_cfg.get("max_retries"), None, 3)),
        "timeout_seconds": int(_layer(backend_cfg.get("timeout_seconds"), None, 60)),
        "max_lines": int(
            _layer(chunk_cfg.get("max_lines"), p.get("max_lines"), 200)
        ),
        "overlap_lines": int(
            _layer(chunk_cfg.get("overlap_lines"), p.get("overlap_lines"), 10)
        ),
        "max_rounds": int(
            _layer(pipeline_cfg.get("max_rounds"), p.get("max_rounds"), 2)
        ),
        "stop_on_no_new_findings": bool(
            _layer(pipeline_cfg.get("stop_on_no_new_findings"), None, True)
        ),
        "fail_fast": _layer(
            pipeline_cfg.get("fail_fast"), p.get("fail_fast") or None, False
        ),
        "gate": _layer(data.get("gate"), p.get("gate"), "major"),
        "min_severity": _layer(render_cfg.get("min_severity"), None, "info"),
        "formats": list(p.get("format") or render_cfg.get("formats", [])),
        "output_dir": _layer(data.get("output_dir"), p.get("out"), "revq-runs"),
        "prompt_dir": _layer(data.get("prompt_dir"), p.get("prompt_dir"), None),
        "record": p.get("record") or "",
    }
    return resolved


def _build_target(cfg: dict):
    if cfg["diff"]:
        source = cfg["diff"]
        if source == "-":
            diff_text = sys.stdin.read()
        else:
            diff_path = Path(source)
            if not diff_path.is_file():
                raise ConfigError(f"diff file not found: {source}")
            diff_text = diff_path.read_text(encoding="utf-8")
        return DiffText(diff=diff_text, root=cfg["path"])
    if cfg["path"]:
        return TreePath(
            root=cfg["path"],
            include_globs=tuple(cfg["include"]),
            exclude_globs=tuple(cfg["exclude"]),
        )
    raise ConfigError("a review target is required: --path DIR or --diff FILE|-")


def _build_backend_config(cfg: dict, kind_override: str | None = None) -> BackendConfig:
    return BackendConfig(
        kind=kind_override or cfg["backend"],
        endpoint_url=cfg["endpoint_url"],
        model_name=cfg["model_name"],
        api_key_env=cfg["api_key_env"],
        script_path=cfg["script"],
        transcript_path=cfg["transcript"],
        rate_limit=cfg["rate_limit"],
        max_retries=cfg["max_retries"],
        timeout_seconds=cfg["timeout_seconds"],
    )


@click.group()
@click.version_option(__version__, prog_name="revq")
def main() -> None:
    """Multi-agent LLM code review with deterministic replay."""


_common_target_options = [
    click.option("--path", type=str, default=None, help="Source tree to review."),
    click.option(
        "--diff", type=str, default=None, help="Unified diff file, or '-' for stdin."
    ),
    click.option("--include", multiple=True, help="Glob of files to include."),
    click.option("--exclude", multiple=True, help="Glob of files to exclude."),
    click.option("--config", type=str, default=None, help="Path to revq.toml."),
    click.option("--gate", type=str, default=None, help="Severity gate for exit code."),
    click.option("--max-rounds", "max_rounds", type=int, default=None),
    click.option("--max-lines", "max_lines", type=int, default=None),
    click.option("--overlap-lines", "overlap_lines", type=int, default=None),
    click.option("--out", type=str, default=None, help="Output directory root."),
    click.option("--prompt-dir", "prompt_dir", type=str, default=None),
    click.option(
        "--format",
        "format",
        multiple=True,
        type=click.Choice(["json", "md", "sarif"]),
        help="Extra report formats (json and md are always written).",
    ),
    click.option("--fail-fast", "fail_fast", is_flag=True, default=False),
]


def _apply_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


@main.command("review")
@_apply_options(_common_target_options)
@click.option(
    "--backend",
    type=click.Choice(["live", "scripted", "replay"]),
    default=None,
)
@click.option("--script", type=str, default=None, help="Scripted fixture file.")
@click.option("--transcript", type=str, default=None, help="Transcript for replay.")
@click.option("--record", type=str, default=None, help="Record transcript to FILE.")
@click.option("--endpoint", type=str, default=None, help="Live endpoint URL.")
@click.option("--model", type=str, default=None, help="Live model name.")
@click.option("--api-key-env", "api_key_env", type=str, default=None)
def cmd_review(**params) -> None:
    """Review a source tree or diff and write report artifacts."""
    try:
        code = _run_review(params)
    except (ConfigError, IngestionError, GatewayError, AbortedByBackend) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    sys.exit(code)


def _run_review(params: dict) -> int:
    cfg = _build_run_config(params)
    gate = Severity.from_label(cfg["gate"])
    target = _build_target(cfg)
    policy = ChunkPolicy(cfg["max_lines"], cfg["overlap_lines"])
    units, target_description, warnings = _ingest(target, policy)
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)

    backend = build_backend(_build_backend_config(cfg))
    gateway = backend
    if cfg["record"]:
        gateway = RecordingGateway(backend, cfg["record"])

    specs = load_agent_specs(cfg["prompt_dir"])
    pipeline = PipelineConfig(
        max_rounds=cfg["max_rounds"],
        stop_on_no_new_findings=cfg["stop_on_no_new_findings"],
        fail_fast=bool(cfg["fail_fast"]),
    )
    run_dir = _make_run_dir(cfg["output_dir"])
    run_id = run_dir.name
    bus = MessageBus(run_dir / "bus.jsonl")
    report = run_pipeline(
        units,
        specs,
        pipeline,
        gateway,
        run_id=run_id,
        target_description=target_description,
        bus=bus,
    )
    if bus.log_error:
        click.echo(f"warning: {bus.log_error}", err=True)
    if isinstance(gateway, RecordingGateway):
        gateway.finalize(report.run_id, report.started_at, report.finished_at)

    opts = RenderOptions(min_severity=Severity.from_label(cfg["min_severity"]))
    _write_artifacts(report, run_dir, cfg["formats"], opts)
    _print_summary(report)
    click.echo(f"  artifacts: {run_dir}")
    return exit_status(report, gate)


@main.command("replay")
@_apply_options(_common_target_options)
@click.option("--transcript", type=str, required=True, help="Recorded transcript.")
@click.option(
    "--baseline",
    type=str,
    default=None,
    help="report.json of the recorded run (default: sibling of the transcript).",
)
def cmd_replay(**params) -> None:
    """Re-run a recorded pipeline and check the report is byte-identical."""
    try:
        code = _run_replay(params)
    except (ConfigError, IngestionError, GatewayError, AbortedByBackend) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    sys.exit(code)


def _run_replay(params: dict) -> int:
    cfg = _build_run_config(params)
    gate = Severity.from_label(cfg["gate"])
    transcript_path = Path(params["transcript"])
    if not transcript_path.is_file():
        raise ConfigError(f"transcript not found: {transcript_path}")
    header, _ = load_transcript(transcript_path)

    target = _build_target(cfg)
    policy = ChunkPolicy(cfg["max_lines"], cfg["overlap_lines"])
    units, target_description, warnings = _ingest(target, policy)
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)

    gateway = ReplayBackend(transcript_path)
    specs = load_agent_specs(cfg["prompt_dir"])
    # replay is strict: any divergence from the recording must abort loudly
    pipeline = PipelineConfig(
        max_rounds=cfg["max_rounds"],
        stop_on_no_new_findings=cfg["stop_on_no_new_findings"],
        fail_fast=True,
    )
    run_dir = _make_run_dir(cfg["output_dir"])
    bus = MessageBus(run_dir / "bus.jsonl")
    report = run_pipeline(
        units,
        specs,
        pipeline,
        gateway,
        run_id=header.get("run_id") or run_dir.name,
        target_description=target_description,
        bus=bus,
    )
    # reuse the recorded wall-clock metadata so the report can match byte-for-byte
    if header.get("started_at") and header.get("finished_at"):
        report = replace(
            report,
            started_at=header["started_at"],
            finished_at=header["finished_at"],
        )

    opts = RenderOptions(min_severity=Severity.from_label(cfg["min_severity"]))
    _write_artifacts(report, run_dir, cfg["formats"], opts)

    baseline_path = (
        Path(params["baseline"])
        if params.get("baseline")
        else transcript_path.parent / "report.json"
    )
    if baseline_path.is_file():
        identical = (
            baseline_path.read_bytes() == (run_dir / "report.json").read_bytes()
        )
        click.echo(f"identical: {'true' if identical else 'false'}")
    else:
        click.echo("identical: unknown (no baseline report found)", err=True)
    _print_summary(report)
    click.echo(f"  artifacts: {run_dir}")
    return exit_status(report, gate)


@main.command("agents")
@click.option("--prompt-dir", "prompt_dir", type=str, default=None)
@click.option("--json", "as_json", is_flag=True, default=False)
def cmd_agents(prompt_dir: str | None, as_json: bool) -> None:
    """Show the agent roster with active prompt template paths."""
    specs = load_agent_specs(prompt_dir)
    if as_json:
        roster = [
            {
                "role": role.tag_name,
                "system_prompt": specs[role].system_prompt_path,
                "user_prompt": specs[role].user_prompt_path,
                "response_schema_id": specs[role].response_schema_id,
            }
            for role in PIPELINE_ORDER
        ]
        click.echo(json.dumps(roster, indent=2))
        return
    click.echo(f"response schema: {RESPONSE_SCHEMA_ID}")
    for role in PIPELINE_ORDER:
        spec = specs[role]
        click.echo(f"{role.tag_name}:")
        click.echo(f"  system: {spec.system_prompt_path}")
        click.echo(f"  user:   {spec.user_prompt_path}")


if __name__ == "__main__":
    main()
