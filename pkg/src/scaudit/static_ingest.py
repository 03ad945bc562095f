"""Ingestion of static-analyzer detector reports (Slither --json shape).

The analyzer is never executed here; its output file is consumed as an input
artifact and rendered into a deterministic advisory hint block for the
initial-analysis prompt.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import CodeLocation

log = logging.getLogger(__name__)

IMPACT_LEVELS = ["High", "Medium", "Low", "Informational", "Optimization"]


class FormatError(ValueError):
    """The document is not a detector report at all."""


@dataclass
class StaticFinding:
    detector: str
    impact: str
    confidence_label: str
    description: str
    locations: list[CodeLocation] = field(default_factory=list)

    @property
    def impact_rank(self) -> int:
        # High first; unknown impacts sink to the bottom.
        try:
            return IMPACT_LEVELS.index(self.impact)
        except ValueError:
            return len(IMPACT_LEVELS)


@dataclass
class ParseResult:
    findings: list[StaticFinding]
    warnings: int


def _locations_of(entry: dict[str, Any]) -> list[CodeLocation]:
    locations = []
    for element in entry.get("elements", []):
        mapping = element.get("source_mapping") or {}
        lines = mapping.get("lines") or []
        if not lines:
            continue
        locations.append(
            CodeLocation(
                file=str(mapping.get("filename_short", mapping.get("filename", "?"))),
                start_line=min(lines),
                end_line=max(lines),
                function_name=element.get("name"),
            )
        )
    return locations


def parse_static_report(doc: dict[str, Any]) -> ParseResult:
    """Extract detector findings from an analyzer report document.

    Malformed entries are skipped and counted; unknown fields are ignored.
    """
    results = doc.get("results")
    if not isinstance(results, dict) or "detectors" not in results:
        raise FormatError("document has no results.detectors array")
    detectors = results["detectors"]
    if not isinstance(detectors, list):
        raise FormatError("results.detectors is not an array")

    findings: list[StaticFinding] = []
    warnings = 0
    for entry in detectors:
        if not isinstance(entry, dict):
            warnings += 1
            continue
        check = entry.get("check")
        impact = entry.get("impact")
        if not check or impact not in IMPACT_LEVELS:
            warnings += 1
            log.warning("skipping malformed detector entry: check=%r impact=%r", check, impact)
            continue
        findings.append(
            StaticFinding(
                detector=str(check),
                impact=str(impact),
                confidence_label=str(entry.get("confidence", "Unknown")),
                description=str(entry.get("description", "")).strip(),
                locations=_locations_of(entry),
            )
        )
    return ParseResult(findings=findings, warnings=warnings)


def parse_static_report_file(path: str | Path) -> ParseResult:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"not a JSON document: {exc}") from exc
    return parse_static_report(doc)


def to_hints(findings: list[StaticFinding], cap: int = 20, char_budget: int = 8000) -> str:
    """Render findings as a deterministic advisory text block.

    Sorted by impact (High first) then detector name, truncated to `cap`
    entries, and clipped to `char_budget` characters overall.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    header = "Static analysis hints (advisory; cross-reference against the code):"
    if not findings:
        return header + "\nno static findings"
    ordered = sorted(findings, key=lambda f: (f.impact_rank, f.detector))
    lines = [header]
    for f in ordered[:cap]:
        if f.locations:
            spans = ",".join(f"{loc.start_line}-{loc.end_line}" for loc in f.locations)
        else:
            spans = "?"
        desc = " ".join(f.description.split())
        lines.append(f"[{f.impact}] {f.detector} @ lines {spans}: {desc}")
    omitted = len(ordered) - cap
    if omitted > 0:
        lines.append(f"{omitted} omitted")
    text = "\n".join(lines)
    if len(text) > char_budget:
        text = text[: char_budget - 12].rstrip() + "\n[truncated]"
    return text
