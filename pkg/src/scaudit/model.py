"""Core domain types shared by the audit pipeline.

Contracts, audit plans, findings, reports and ground truth all live here so
that every other module speaks the same vocabulary.  These are plain value
types: safe to copy and to send across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Any, Optional


class Severity(str, Enum):
    CRITICAL = "Critical"
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"
    INFORMATIONAL = "Informational"

    @property
    def rank(self) -> int:
        """Higher rank = more severe."""
        order = [
            Severity.INFORMATIONAL,
            Severity.LOW,
            Severity.MEDIUM,
            Severity.HIGH,
            Severity.CRITICAL,
        ]
        return order.index(self)


SEVERITY_NAMES = [s.value for s in Severity]


@dataclass(frozen=True)
class CodeLocation:
    file: str
    start_line: int
    end_line: int
    function_name: Optional[str] = None

    def overlaps(self, other: "CodeLocation") -> bool:
        if self.file != other.file:
            return False
        return self.start_line <= other.end_line and other.start_line <= self.end_line

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CodeLocation":
        return cls(
            file=str(d["file"]),
            start_line=int(d["start_line"]),
            end_line=int(d["end_line"]),
            function_name=d.get("function_name"),
        )


@dataclass
class ContractInput:
    contract_id: str
    source_code: str
    context_docs: list[str] = field(default_factory=list)
    static_report_path: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.source_code:
            raise ValueError("source_code must be non-empty")
        if not self.contract_id:
            raise ValueError("contract_id must be non-empty")


@dataclass(frozen=True)
class SubTask:
    index: int
    title: str
    target: str
    concern: str
    priority: int

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("sub-task index must be >= 1")
        if self.priority < 1:
            raise ValueError("sub-task priority must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SubTask":
        return cls(
            index=int(d["index"]),
            title=str(d["title"]),
            target=str(d["target"]),
            concern=str(d["concern"]),
            priority=int(d["priority"]),
        )


@dataclass
class Finding:
    finding_id: str
    vuln_type: str
    description: str
    location: CodeLocation
    severity: Severity
    confidence: float
    evidence: list[str] = field(default_factory=list)
    origin_subtask: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "finding_id": self.finding_id,
            "vuln_type": self.vuln_type,
            "description": self.description,
            "location": self.location.to_dict(),
            "severity": self.severity.value,
            "confidence": self.confidence,
            "evidence": list(self.evidence),
            "origin_subtask": self.origin_subtask,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Finding":
        return cls(
            finding_id=str(d["finding_id"]),
            vuln_type=str(d["vuln_type"]),
            description=str(d["description"]),
            location=CodeLocation.from_dict(d["location"]),
            severity=Severity(d["severity"]),
            confidence=float(d["confidence"]),
            evidence=[str(e) for e in d.get("evidence", [])],
            origin_subtask=int(d.get("origin_subtask", 0)),
        )


@dataclass
class GroundTruthFinding:
    finding_id: str
    vuln_type: str
    description: str
    location: CodeLocation
    severity: Severity
    expert_id: str
    evidence: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "finding_id": self.finding_id,
            "vuln_type": self.vuln_type,
            "description": self.description,
            "location": self.location.to_dict(),
            "severity": self.severity.value,
            "expert_id": self.expert_id,
            "evidence": list(self.evidence),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GroundTruthFinding":
        return cls(
            finding_id=str(d["finding_id"]),
            vuln_type=str(d["vuln_type"]),
            description=str(d["description"]),
            location=CodeLocation.from_dict(d["location"]),
            severity=Severity(d["severity"]),
            expert_id=str(d.get("expert_id", "unknown")),
            evidence=[str(e) for e in d.get("evidence", [])],
        )


@dataclass
class AuditReport:
    contract_id: str
    initial_analysis: str
    plan: list[SubTask]
    findings: list[Finding]
    summary: str
    run_metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "contract_id": self.contract_id,
            "initial_analysis": self.initial_analysis,
            "plan": [t.to_dict() for t in self.plan],
            "findings": [f.to_dict() for f in self.findings],
            "summary": self.summary,
            "run_metadata": dict(self.run_metadata),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AuditReport":
        return cls(
            contract_id=str(d["contract_id"]),
            initial_analysis=str(d["initial_analysis"]),
            plan=[SubTask.from_dict(t) for t in d["plan"]],
            findings=[Finding.from_dict(f) for f in d["findings"]],
            summary=str(d["summary"]),
            run_metadata=dict(d.get("run_metadata", {})),
        )

    def to_json(self, **kwargs: Any) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "AuditReport":
        return cls.from_dict(json.loads(text))


def rank_findings(findings: list[Finding]) -> list[Finding]:
    """Canonical report ordering: severity desc, confidence desc, id asc.

    Stable and idempotent; the output is a permutation of the input.
    """
    return sorted(findings, key=lambda f: (-f.severity.rank, -f.confidence, f.finding_id))


def validate_finding(f: Finding, source: str) -> list[str]:
    """Return a list of invariant violations (empty when the finding is valid)."""
    violations: list[str] = []
    if not 0.0 <= f.confidence <= 1.0:
        violations.append("confidence out of range")
    if f.location.start_line > f.location.end_line:
        violations.append("start_line > end_line")
    if f.location.start_line < 1:
        violations.append("start_line < 1")
    else:
        n_lines = source.count("\n") + 1
        if f.location.end_line > n_lines:
            violations.append("location beyond end of source")
    if not isinstance(f.severity, Severity):
        violations.append("severity not in enum")
    return violations
