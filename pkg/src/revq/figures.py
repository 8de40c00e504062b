"""Summary figures rendered next to the report files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .model import FindingKind, ReviewReport, Severity

_SEVERITY_COLORS = {
    Severity.CRITICAL: "#b2182b",
    Severity.MAJOR: "#ef8a62",
    Severity.MINOR: "#fddbc7",
    Severity.INFO: "#d1e5f0",
}


def render_summary_figure(report: ReviewReport, path: str | Path) -> Path:
    """Bar chart of finding counts by kind, stacked by severity."""
    path = Path(path)
    kinds = list(FindingKind)
    severities = list(reversed(list(Severity)))  # critical first
    counts = {
        sev: [
            sum(
                1
                for f in report.findings
                if f.kind is kind and f.severity is sev
            )
            for kind in kinds
        ]
        for sev in severities
    }

    fig, ax = plt.subplots(figsize=(7, 4))
    x = range(len(kinds))
    bottoms = [0] * len(kinds)
    for sev in severities:
        ax.bar(
            x,
            counts[sev],
            bottom=bottoms,
            label=sev.label,
            color=_SEVERITY_COLORS[sev],
            edgecolor="black",
            linewidth=0.5,
        )
        bottoms = [b + c for b, c in zip(bottoms, counts[sev])]
    ax.set_xticks(list(x))
    ax.set_xticklabels([k.label.replace("_", "\n") for k in kinds])
    ax.set_ylabel("findings")
    ax.set_title(f"Findings by kind and severity ({report.run_id})")
    if report.findings:
        ax.legend(title="severity", frameon=False)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
