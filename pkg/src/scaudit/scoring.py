"""Multi-criteria scoring of instruction candidates.

Combines an output-alignment score (component coverage F1 + judge-rubric
detail accuracy) with a mean token log-likelihood term.  Also houses the
instruction complexity measure used by the selection objective.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from .blocks import parse_block, render_block
from .gateway import Completion, CompletionRequest, Gateway, cosine

COMPONENT_KINDS = ("functions", "variables", "modifiers", "events")

DEFAULT_COMPONENT_WEIGHTS = {
    "functions": 0.4,
    "variables": 0.25,
    "modifiers": 0.2,
    "events": 0.15,
}


class MissingLogprobs(RuntimeError):
    pass


class JudgeParseError(RuntimeError):
    pass


@dataclass
class TaskSample:
    """One (contract, expert analysis) training pair for prompt optimization."""

    contract: str
    expected: str  # analysis text carrying a fenced `components` block

    def __post_init__(self) -> None:
        sets = extract_components(self.expected)
        if not any(getattr(sets, kind) for kind in COMPONENT_KINDS + ("questions",)):
            raise ValueError("expected analysis has no non-empty component set")


@dataclass
class ComponentSets:
    functions: set[str] = field(default_factory=set)
    variables: set[str] = field(default_factory=set)
    modifiers: set[str] = field(default_factory=set)
    events: set[str] = field(default_factory=set)
    questions: set[str] = field(default_factory=set)
    descriptions: dict[str, str] = field(default_factory=dict)

    def kind(self, name: str) -> set[str]:
        return getattr(self, name)


@dataclass
class ScoringConfig:
    w_exec: float = 0.7
    w_log: float = 0.3
    w_cov: float = 0.6
    w_det: float = 0.4
    component_weights: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_COMPONENT_WEIGHTS)
    )
    # Table-compatibility mode scales f_exec to 0-100; normalized mode uses 1.0.
    exec_scale: float = 100.0
    judge_model: str = "judge"
    logprob_fallback: float = 0.0


@dataclass
class ScoreBreakdown:
    f_exec: float
    f_log: float
    f_coverage: float
    f_detail: float
    combined: float
    w_exec: float
    w_log: float
    w_cov: float
    w_det: float
    logprobs_missing: bool = False

    def to_dict(self) -> dict:
        return {
            "f_exec": self.f_exec,
            "f_log": self.f_log,
            "f_coverage": self.f_coverage,
            "f_detail": self.f_detail,
            "combined": self.combined,
            "weights": {
                "w_exec": self.w_exec,
                "w_log": self.w_log,
                "w_cov": self.w_cov,
                "w_det": self.w_det,
            },
            "logprobs_missing": self.logprobs_missing,
        }


def complexity(text: str) -> float:
    """0.7 * token count + 0.3 * sentence count (whitespace tokens; . ! ? ends)."""
    tokens = text.split()
    if not tokens:
        return 0.0
    sentences = [s for s in re.split(r"[.!?]+", text) if s.strip()]
    return 0.7 * len(tokens) + 0.3 * max(1, len(sentences))


def f_log_score(completion: Completion) -> float:
    """Mean token log-likelihood of the model's own output (always <= 0)."""
    if completion.token_logprobs is None:
        raise MissingLogprobs("completion carries no token logprobs")
    lps = completion.token_logprobs
    if not lps:
        return 0.0
    return sum(lps) / len(lps)


def combine(f_exec: float, f_log: float, w_exec: float = 0.7, w_log: float = 0.3) -> float:
    return w_exec * f_exec + w_log * f_log


def _normalize_key(kind: str, entry: dict) -> Optional[str]:
    name = str(entry.get("name", "")).strip().lower()
    if not name:
        return None
    if kind == "functions":
        params = entry.get("params") or []
        return f"{name}/{len(params)}"
    return name


def extract_components(analysis: str) -> ComponentSets:
    """Parse the fenced `components` block of an analysis into normalized sets.

    Function keys are name + arity; everything else keys on the lowercased
    name.  Missing sections yield empty sets; duplicates collapse.
    """
    sets = ComponentSets()
    payload = parse_block(analysis, "components")
    if not isinstance(payload, dict):
        return sets
    for kind in COMPONENT_KINDS:
        for entry in payload.get(kind) or []:
            if not isinstance(entry, dict):
                continue
            key = _normalize_key(kind, entry)
            if key is None:
                continue
            sets.kind(kind).add(key)
            desc = str(entry.get("description", "")).strip()
            if desc:
                sets.descriptions[f"{kind}:{key}"] = desc
    for entry in payload.get("questions") or []:
        text = entry.get("text") if isinstance(entry, dict) else entry
        if text:
            sets.questions.add(str(text).strip().lower())
    return sets


def coverage_f1(
    out: ComponentSets,
    gold: ComponentSets,
    weights: Optional[dict[str, float]] = None,
) -> float:
    """Weighted F1 over component kinds; kinds with empty gold sets are skipped
    and the remaining weights renormalized."""
    weights = weights or DEFAULT_COMPONENT_WEIGHTS
    scored: list[tuple[float, float]] = []  # (weight, f1)
    for kind, w in weights.items():
        gold_set = gold.kind(kind)
        if not gold_set:
            continue
        out_set = out.kind(kind)
        inter = len(out_set & gold_set)
        p = inter / len(out_set) if out_set else 0.0
        r = inter / len(gold_set)
        f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
        scored.append((w, f1))
    total_w = sum(w for w, _ in scored)
    if total_w == 0:
        return 0.0
    return sum(w * f1 for w, f1 in scored) / total_w


_JUDGE_SYSTEM = (
    "You are a strict audit-quality judge. Compare the candidate description "
    "of a contract component against the expert description. Reply with a "
    "fenced `verdict` block containing factual_correctness, completeness and "
    "relevance, each an integer from 1 to 5."
)


def _judge_prompt(out_desc: str, gold_desc: str) -> str:
    example = render_block(
        "verdict", {"factual_correctness": 5, "completeness": 5, "relevance": 5}
    )
    return (
        f"Candidate description:\n{out_desc}\n\n"
        f"Expert description:\n{gold_desc}\n\n"
        f"Respond exactly in this form:\n{example}"
    )


def _parse_verdict(text: str) -> Optional[tuple[int, int, int]]:
    payload = parse_block(text, "verdict")
    if not isinstance(payload, dict):
        return None
    try:
        scores = (
            int(payload["factual_correctness"]),
            int(payload["completeness"]),
            int(payload["relevance"]),
        )
    except (KeyError, TypeError, ValueError):
        return None
    if all(1 <= s <= 5 for s in scores):
        return scores
    return None


def detail_score(
    out_desc: str,
    gold_desc: str,
    gateway: Gateway,
    cfg: Optional[ScoringConfig] = None,
) -> float:
    """Judge-rubric score: mean of three 1-5 axes, normalized to [0, 1]."""
    if not out_desc or not gold_desc:
        raise ValueError("both descriptions must be non-empty")
    cfg = cfg or ScoringConfig()
    req = CompletionRequest(
        model_id=cfg.judge_model,
        system_prompt=_JUDGE_SYSTEM,
        user_prompt=_judge_prompt(out_desc, gold_desc),
    )
    verdict = _parse_verdict(gateway.cached_complete(req).text)
    if verdict is None:
        retry = CompletionRequest(
            model_id=cfg.judge_model,
            system_prompt=_JUDGE_SYSTEM,
            user_prompt=_judge_prompt(out_desc, gold_desc)
            + "\n\nYour previous answer was malformed; emit only the verdict block.",
        )
        verdict = _parse_verdict(gateway.cached_complete(retry).text)
    if verdict is None:
        raise JudgeParseError("judge verdict unparseable after retry")
    return sum(verdict) / 15.0


def similarity(a: str, b: str, gateway: Gateway) -> float:
    """Cosine similarity of the two texts' embeddings, clamped to [-1, 1]."""
    if a == b:
        return 1.0
    va, vb = gateway.embed([a, b])
    return cosine(va, vb)


def combined_score(
    instruction: str,
    sample: TaskSample,
    gateway: Gateway,
    cfg: Optional[ScoringConfig] = None,
    model_id: str = "primary",
) -> ScoreBreakdown:
    """Score one instruction on one sample: run the model, then measure
    coverage, detail accuracy (over matched components) and log-likelihood."""
    cfg = cfg or ScoringConfig()
    req = CompletionRequest(
        model_id=model_id,
        system_prompt=instruction,
        user_prompt=sample.contract,
        want_logprobs=True,
    )
    completion = gateway.cached_complete(req)
    out_sets = extract_components(completion.text)
    gold_sets = extract_components(sample.expected)

    f_cov = coverage_f1(out_sets, gold_sets, cfg.component_weights)

    matched_keys = []
    for kind in COMPONENT_KINDS:
        for key in out_sets.kind(kind) & gold_sets.kind(kind):
            full = f"{kind}:{key}"
            if full in out_sets.descriptions and full in gold_sets.descriptions:
                matched_keys.append(full)
    if matched_keys:
        f_det = sum(
            detail_score(out_sets.descriptions[k], gold_sets.descriptions[k], gateway, cfg)
            for k in sorted(matched_keys)
        ) / len(matched_keys)
    else:
        f_det = 0.0

    # Sub-scores carry the exec scale so f_exec == w_cov*f_coverage + w_det*f_detail
    # holds in both Table-compat (0-100) and normalized (0-1) modes.
    f_cov_scaled = f_cov * cfg.exec_scale
    f_det_scaled = f_det * cfg.exec_scale
    f_exec = cfg.w_cov * f_cov_scaled + cfg.w_det * f_det_scaled

    logprobs_missing = completion.token_logprobs is None
    f_log = cfg.logprob_fallback if logprobs_missing else f_log_score(completion)

    return ScoreBreakdown(
        f_exec=f_exec,
        f_log=f_log,
        f_coverage=f_cov_scaled,
        f_detail=f_det_scaled,
        combined=combine(f_exec, f_log, cfg.w_exec, cfg.w_log),
        w_exec=cfg.w_exec,
        w_log=cfg.w_log,
        w_cov=cfg.w_cov,
        w_det=cfg.w_det,
        logprobs_missing=logprobs_missing,
    )
