"""Staged audit workflow: initial analysis, planning, per-sub-task review and
calibration with a confidence gate, synthesis, and report assembly."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from .blocks import parse_block, render_block
from .gateway import Completion, CompletionRequest, Gateway
from .kb import VectorIndex, formulate_query
from .model import (
    AuditReport,
    CodeLocation,
    ContractInput,
    Finding,
    Severity,
    SubTask,
    rank_findings,
)
from .report import render_report


class EmptyAnalysis(RuntimeError):
    pass


class PlanParseError(RuntimeError):
    pass


class FindingParseError(RuntimeError):
    pass


class SynthesisParseError(RuntimeError):
    pass


DEFAULT_PROMPTS = {
    "a1": (
        "You are a smart contract security analyst. Produce a precise initial "
        "analysis of the contract: business logic, roles, key functions, state "
        "variables, modifiers, events, and exposed assets."
    ),
    "a2": (
        "You are an audit planner. From the initial analysis and the contract, "
        "produce a prioritized audit plan. Emit the sub-tasks as a fenced "
        "`subtasks` block: a YAML list of entries with fields index, title, "
        "target, concern, priority (1 = highest)."
    ),
    "a3e": (
        "You are a focused security reviewer. Investigate exactly one concern "
        "in the contract and report observed patterns and exploit conditions."
    ),
    "a3v": (
        "You are a calibration reviewer. Re-examine the preliminary finding "
        "against the contract code; discard unsupported assertions. Emit a "
        "fenced `finding` block with fields vuln_type, description, location "
        "{file, start_line, end_line, function_name}, severity, confidence "
        "(0-1), evidence (list). If nothing holds up, emit `no_finding: true` "
        "inside the block."
    ),
    "a4": (
        "You are a findings synthesizer. Correlate the validated findings, "
        "identify shared root causes, and reassess severities. You may emit a "
        "fenced `severity_overrides` block mapping finding_id to a severity."
    ),
}


@dataclass
class WorkflowConfig:
    threshold_confidence: float = 0.7
    prompts: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_PROMPTS))
    use_static: bool = False
    use_rag: bool = False
    retrieval_k: int = 3
    model_id: str = "primary"
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold_confidence <= 1.0:
            raise ValueError("threshold_confidence must be in [0, 1]")
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be >= 1")
        merged = dict(DEFAULT_PROMPTS)
        merged.update(self.prompts)
        self.prompts = merged

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "threshold_confidence": self.threshold_confidence,
                "prompts": self.prompts,
                "use_static": self.use_static,
                "use_rag": self.use_rag,
                "retrieval_k": self.retrieval_k,
                "model_id": self.model_id,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class StageRecord:
    stage: str  # A1..A5; A3 yields one record per sub-task
    input_digest: str
    output: Any
    llm_steps: int
    elapsed: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "input_digest": self.input_digest,
            "output": self.output,
            "llm_steps": self.llm_steps,
            "elapsed": self.elapsed,
        }


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


class WorkflowEngine:
    """Runs one audit; owns its stage records exclusively."""

    def __init__(
        self,
        gateway: Gateway,
        cfg: WorkflowConfig,
        kb_index: Optional[VectorIndex] = None,
    ) -> None:
        self.gateway = gateway
        self.cfg = cfg
        self.kb_index = kb_index
        self.records: list[StageRecord] = []
        self.llm_steps = 0

    def _complete(self, system: str, user: str) -> Completion:
        req = CompletionRequest(
            model_id=self.cfg.model_id,
            system_prompt=system,
            user_prompt=user,
            max_tokens=self.cfg.max_tokens,
        )
        self.llm_steps += 1
        return self.gateway.complete(req)

    def _record(self, stage: str, input_digest: str, output: Any, steps: int, started: float) -> None:
        self.records.append(
            StageRecord(
                stage=stage,
                input_digest=input_digest,
                output=output,
                llm_steps=steps,
                elapsed=time.monotonic() - started,
            )
        )

    # -- A1 -----------------------------------------------------------------
    def assemble_a1_prompt(self, contract: ContractInput, hints: Optional[str]) -> str:
        parts = [f"Contract source:\n{contract.source_code}"]
        if contract.context_docs:
            docs = "\n\n".join(contract.context_docs)
            parts.append(f"Context documents:\n{docs}")
        if self.cfg.use_static and hints:
            parts.append(hints)
        return "\n\n".join(parts)

    def stage_a1(self, contract: ContractInput, hints: Optional[str] = None) -> str:
        started = time.monotonic()
        steps_before = self.llm_steps
        user = self.assemble_a1_prompt(contract, hints)
        text = self._complete(self.cfg.prompts["a1"], user).text
        if not text.strip():
            text = self._complete(self.cfg.prompts["a1"], user).text
        if not text.strip():
            raise EmptyAnalysis("initial analysis is blank after retry")
        self._record("A1", _digest(user), text, self.llm_steps - steps_before, started)
        return text

    # -- A2 -----------------------------------------------------------------
    def stage_a2(self, s1: str, contract: ContractInput) -> tuple[str, list[SubTask]]:
        if not s1.strip():
            raise ValueError("initial analysis must be non-empty")
        started = time.monotonic()
        steps_before = self.llm_steps
        user = f"Initial analysis:\n{s1}\n\nContract source:\n{contract.source_code}"
        plan_text = self._complete(self.cfg.prompts["a2"], user).text
        try:
            tasks = extract_subtasks(plan_text)
        except PlanParseError:
            retry_user = user + "\n\nYour previous answer had no valid subtasks block; reformat your answer."
            plan_text = self._complete(self.cfg.prompts["a2"], retry_user).text
            tasks = extract_subtasks(plan_text)
        self._record(
            "A2",
            _digest(s1, contract.source_code),
            {"plan_text": plan_text, "subtasks": [t.to_dict() for t in tasks]},
            self.llm_steps - steps_before,
            started,
        )
        return plan_text, tasks

    # -- A3 -----------------------------------------------------------------
    def execute_subtask(self, task: SubTask, contract: ContractInput, s1: str) -> Optional[Finding]:
        started = time.monotonic()
        steps_before = self.llm_steps
        review_user = (
            f"Sub-task {task.index}: {task.title}\n"
            f"Target: {task.target}\nConcern: {task.concern}\n\n"
            f"Initial analysis:\n{s1}\n\nContract source:\n{contract.source_code}"
        )
        review = self._complete(self.cfg.prompts["a3e"], review_user).text

        calib_user = (
            f"Preliminary finding:\n{review}\n\nContract source:\n{contract.source_code}"
        )
        if self.cfg.use_rag and self.kb_index is not None and len(self.kb_index) > 0:
            query = formulate_query(task, review, k=self.cfg.retrieval_k)
            retrieved = self.kb_index.retrieve(query)
            if retrieved:
                refs = "\n\n".join(
                    f"[{chunk.source_type}] {chunk.title}: {chunk.content}" for chunk, _ in retrieved
                )
                calib_user += f"\n\nRetrieved references:\n{refs}"
        calib = self._complete(self.cfg.prompts["a3v"], calib_user).text

        try:
            finding = parse_finding(calib, contract, task)
        except FindingParseError:
            retry_user = calib_user + "\n\nYour previous answer had no valid finding block; reformat your answer."
            calib = self._complete(self.cfg.prompts["a3v"], retry_user).text
            finding = parse_finding(calib, contract, task)

        kept = finding is not None and finding.confidence >= self.cfg.threshold_confidence
        self._record(
            "A3",
            _digest(str(task.index), task.concern, contract.source_code),
            {
                "subtask": task.index,
                "review": review,
                "calibration": calib,
                "kept": kept,
                "confidence": finding.confidence if finding else None,
            },
            self.llm_steps - steps_before,
            started,
        )
        return finding if kept else None

    # -- A4 -----------------------------------------------------------------
    def stage_a4(self, findings: list[Finding]) -> tuple[str, list[Finding]]:
        started = time.monotonic()
        steps_before = self.llm_steps
        if not findings:
            synthesis = "No validated findings above the confidence threshold."
            self._record("A4", _digest(""), {"synthesis": synthesis}, 0, started)
            return synthesis, []
        listing = render_block("findings", [f.to_dict() for f in findings])
        synthesis = self._complete(self.cfg.prompts["a4"], listing).text
        revised = apply_severity_overrides(findings, synthesis)
        merged = merge_duplicates(revised)
        ranked = rank_findings(merged)
        self._record(
            "A4",
            _digest(listing),
            {"synthesis": synthesis, "findings": [f.to_dict() for f in ranked]},
            self.llm_steps - steps_before,
            started,
        )
        return synthesis, ranked

    # -- full run -----------------------------------------------------------
    def run_audit(
        self,
        contract: ContractInput,
        hints: Optional[str] = None,
        out_dir: Optional[str | Path] = None,
    ) -> AuditReport:
        run_dir: Optional[Path] = None
        if out_dir is not None:
            stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
            run_dir = Path(out_dir) / "runs" / contract.contract_id / stamp
            run_dir.mkdir(parents=True, exist_ok=True)
        started_at = datetime.now(timezone.utc).isoformat()
        try:
            s1 = self.stage_a1(contract, hints)
            _, tasks = self.stage_a2(s1, contract)
            findings: list[Finding] = []
            for task in tasks:
                result = self.execute_subtask(task, contract, s1)
                if result is not None:
                    findings.append(result)
            synthesis, ranked = self.stage_a4(findings)
        except Exception:
            if run_dir is not None:
                self._save_stages(run_dir)
            raise
        report = AuditReport(
            contract_id=contract.contract_id,
            initial_analysis=s1,
            plan=tasks,
            findings=ranked,
            summary=synthesis,
            run_metadata={
                "model_id": self.cfg.model_id,
                "started_at": started_at,
                "finished_at": datetime.now(timezone.utc).isoformat(),
                "step_count": self.llm_steps,
                "config_hash": self.cfg.config_hash(),
            },
        )
        self._record("A5", _digest(contract.contract_id), {"report": report.to_dict()}, 0, time.monotonic())
        if run_dir is not None:
            self._save_stages(run_dir)
            (run_dir / "report.json").write_text(report.to_json())
            (run_dir / "report.md").write_text(render_report(report))
        return report

    def _save_stages(self, run_dir: Path) -> None:
        with (run_dir / "stages.jsonl").open("w") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_dict()) + "\n")


def extract_subtasks(plan_text: str) -> list[SubTask]:
    """Parse the fenced `subtasks` block into SubTasks, sorted by priority then
    original index and renumbered contiguously from 1.

    Entries missing required fields are dropped; it is an error only when the
    block is absent, indexes collide, or every entry is malformed.
    """
    payload = parse_block(plan_text, "subtasks")
    if not isinstance(payload, list):
        raise PlanParseError("no subtasks block found")
    entries: list[SubTask] = []
    for raw in payload:
        if not isinstance(raw, dict):
            continue
        try:
            entries.append(SubTask.from_dict(raw))
        except (KeyError, TypeError, ValueError):
            continue
    if not entries:
        raise PlanParseError("subtasks block has no valid entries")
    indexes = [t.index for t in entries]
    if len(set(indexes)) != len(indexes):
        raise PlanParseError("duplicate sub-task indexes")
    ordered = sorted(entries, key=lambda t: (t.priority, t.index))
    return [
        SubTask(index=i, title=t.title, target=t.target, concern=t.concern, priority=t.priority)
        for i, t in enumerate(ordered, start=1)
    ]


def parse_finding(text: str, contract: ContractInput, task: SubTask) -> Optional[Finding]:
    """Parse the fenced `finding` block of a calibration response.

    Returns None for an explicit `no_finding` verdict; raises FindingParseError
    when the block is absent or malformed.  Confidence is taken verbatim and
    clamped to [0, 1].
    """
    payload = parse_block(text, "finding")
    if not isinstance(payload, dict):
        raise FindingParseError("no finding block found")
    if payload.get("no_finding"):
        return None
    try:
        loc = payload.get("location") or {}
        location = CodeLocation(
            file=str(loc.get("file", contract.contract_id)),
            start_line=int(loc.get("start_line", 1)),
            end_line=int(loc.get("end_line", loc.get("start_line", 1))),
            function_name=loc.get("function_name"),
        )
        confidence = max(0.0, min(1.0, float(payload["confidence"])))
        return Finding(
            finding_id=str(payload.get("finding_id", f"{contract.contract_id}-t{task.index}")),
            vuln_type=str(payload["vuln_type"]),
            description=str(payload["description"]),
            location=location,
            severity=Severity(payload["severity"]),
            confidence=confidence,
            evidence=[str(e) for e in payload.get("evidence") or []],
            origin_subtask=task.index,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FindingParseError(f"malformed finding block: {exc}") from exc


def apply_severity_overrides(findings: list[Finding], synthesis: str) -> list[Finding]:
    payload = parse_block(synthesis, "severity_overrides")
    if payload is None:
        return list(findings)
    if not isinstance(payload, dict):
        raise SynthesisParseError("severity_overrides block is not a mapping")
    try:
        overrides = {str(k): Severity(v) for k, v in payload.items()}
    except ValueError as exc:
        raise SynthesisParseError(f"bad severity in overrides: {exc}") from exc
    out = []
    for f in findings:
        if f.finding_id in overrides:
            f = Finding(**{**f.__dict__, "severity": overrides[f.finding_id]})
        out.append(f)
    return out


def merge_duplicates(findings: list[Finding]) -> list[Finding]:
    """Merge findings sharing a vuln_type whose locations overlap: the span
    widens to the union, evidence concatenates, severity/confidence take the
    maximum."""
    merged: list[Finding] = []
    for f in findings:
        target = None
        for m in merged:
            if m.vuln_type == f.vuln_type and m.location.overlaps(f.location):
                target = m
                break
        if target is None:
            merged.append(f)
            continue
        merged.remove(target)
        keep, other = (target, f) if target.finding_id <= f.finding_id else (f, target)
        merged.append(
            Finding(
                finding_id=keep.finding_id,
                vuln_type=keep.vuln_type,
                description=keep.description,
                location=CodeLocation(
                    file=keep.location.file,
                    start_line=min(target.location.start_line, f.location.start_line),
                    end_line=max(target.location.end_line, f.location.end_line),
                    function_name=keep.location.function_name,
                ),
                severity=max(target.severity, f.severity, key=lambda s: s.rank),
                confidence=max(target.confidence, f.confidence),
                evidence=target.evidence + f.evidence,
                origin_subtask=keep.origin_subtask,
            )
        )
    return merged
