"""Human-readable rendering of audit reports."""
from __future__ import annotations

from .model import AuditReport, Severity


def render_report(report: AuditReport) -> str:
    """Deterministic Markdown document for an audit report."""
    lines: list[str] = []
    lines.append(f"# Security Audit Report: {report.contract_id}")
    lines.append("")
    lines.append("## Executive Summary")
    lines.append("")
    lines.append(report.summary.strip() or "No summary available.")
    lines.append("")
    lines.append("## Contract Understanding")
    lines.append("")
    lines.append(report.initial_analysis.strip())
    lines.append("")
    lines.append("## Audit Plan")
    lines.append("")
    if report.plan:
        for task in report.plan:
            lines.append(
                f"{task.index}. **{task.title}** (target: `{task.target}`, "
                f"concern: {task.concern}, priority: {task.priority})"
            )
    else:
        lines.append("No audit plan recorded.")
    lines.append("")
    lines.append("## Findings")
    lines.append("")
    if not report.findings:
        lines.append("No findings above threshold.")
    else:
        for severity in sorted(Severity, key=lambda s: -s.rank):
            bucket = [f for f in report.findings if f.severity == severity]
            if not bucket:
                continue
            lines.append(f"### {severity.value}")
            lines.append("")
            for f in bucket:
                loc = f.location
                lines.append(f"#### {f.finding_id}: {f.vuln_type}")
                lines.append("")
                lines.append(f.description.strip())
                lines.append("")
                lines.append(
                    f"- Location: `{loc.file}` lines {loc.start_line}-{loc.end_line}"
                    + (f" ({loc.function_name})" if loc.function_name else "")
                )
                lines.append(f"- Confidence: {f.confidence:.2f}")
                for snippet in f.evidence:
                    lines.append(f"- Evidence: {snippet}")
                lines.append("- Recommendation: (to be completed by the audit owner)")
                lines.append("")
    lines.append("## Run Metadata")
    lines.append("")
    for key in sorted(report.run_metadata):
        lines.append(f"- {key}: {report.run_metadata[key]}")
    lines.append("")
    return "\n".join(lines)
