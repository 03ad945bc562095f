"""Evaluation of produced audit findings against expert ground truth.

A judge scores candidate (produced, gold) pairs on three rubric dimensions;
pairs are claimed greedily in rank order, then ranking metrics (top-N, MRR,
MAP) are computed over the match lists.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Sequence

from .blocks import parse_block, render_block
from .gateway import CompletionRequest, Gateway
from .model import Finding, GroundTruthFinding


class MatchCategory(str, Enum):
    EXACT = "Exact"
    PARTIAL = "Partial"
    INCORRECT = "Incorrect"
    MISSED = "Missed"
    SPURIOUS = "Spurious"


class LocationLevel(str, Enum):
    EXACT_LINE = "exact_line"
    FUNCTION = "function"
    OVERLAP = "overlap"
    NONE = "none"


class EmptyQuerySet(ValueError):
    pass


class JudgeParseError(RuntimeError):
    pass


@dataclass(frozen=True)
class MatchDimensions:
    type_match: bool
    description_similarity: float  # in [0, 1]
    location_level: LocationLevel


@dataclass
class MatchResult:
    produced_id: Optional[str]
    gold_id: Optional[str]
    category: MatchCategory
    dimensions: Optional[MatchDimensions] = None
    rationale: str = ""
    produced_rank: Optional[int] = None  # 1-based rank of the produced finding

    def to_dict(self) -> dict:
        return {
            "produced_id": self.produced_id,
            "gold_id": self.gold_id,
            "category": self.category.value,
            "dimensions": (
                {
                    "type_match": self.dimensions.type_match,
                    "description_similarity": self.dimensions.description_similarity,
                    "location_level": self.dimensions.location_level.value,
                }
                if self.dimensions
                else None
            ),
            "rationale": self.rationale,
            "produced_rank": self.produced_rank,
        }


class Judge(Protocol):
    def assess(self, produced: Finding, gold: GroundTruthFinding) -> MatchDimensions: ...


def location_level(produced: Finding, gold: GroundTruthFinding) -> LocationLevel:
    p, g = produced.location, gold.location
    if p.file != g.file:
        return LocationLevel.NONE
    if p.start_line == g.start_line and p.end_line == g.end_line:
        return LocationLevel.EXACT_LINE
    if p.function_name and g.function_name and p.function_name == g.function_name:
        return LocationLevel.FUNCTION
    if p.overlaps(g):
        return LocationLevel.OVERLAP
    return LocationLevel.NONE


class SimpleJudge:
    """Deterministic offline judge: normalized type equality, token-Jaccard
    description similarity, and geometric location comparison."""

    def assess(self, produced: Finding, gold: GroundTruthFinding) -> MatchDimensions:
        type_match = produced.vuln_type.strip().lower() == gold.vuln_type.strip().lower()
        a = set(produced.description.lower().split())
        b = set(gold.description.lower().split())
        if not a and not b:
            sim = 1.0
        elif not a or not b:
            sim = 0.0
        else:
            sim = len(a & b) / len(a | b)
        return MatchDimensions(type_match, sim, location_level(produced, gold))


class LLMJudge:
    """LLM-backed rubric assessment; location precision is computed
    geometrically, the model scores type equivalence and description
    similarity."""

    def __init__(self, gateway: Gateway, model_id: str = "judge") -> None:
        self.gateway = gateway
        self.model_id = model_id

    def assess(self, produced: Finding, gold: GroundTruthFinding) -> MatchDimensions:
        example = render_block("assessment", {"type_match": True, "description_similarity": 0.9})
        prompt = (
            "Compare the two vulnerability findings below. Do they describe the "
            "same vulnerability class, and how similar are the descriptions?\n\n"
            f"Candidate finding:\n{json.dumps(produced.to_dict(), indent=2)}\n\n"
            f"Reference finding:\n{json.dumps(gold.to_dict(), indent=2)}\n\n"
            f"Answer exactly in this form:\n{example}"
        )
        req = CompletionRequest(
            model_id=self.model_id,
            system_prompt="You are a meticulous security-audit evaluator.",
            user_prompt=prompt,
        )
        payload = parse_block(self.gateway.cached_complete(req).text, "assessment")
        if not isinstance(payload, dict):
            retry = CompletionRequest(
                model_id=self.model_id,
                system_prompt="You are a meticulous security-audit evaluator.",
                user_prompt=prompt + "\n\nYour previous answer was malformed; emit only the block.",
            )
            payload = parse_block(self.gateway.cached_complete(retry).text, "assessment")
        if not isinstance(payload, dict):
            raise JudgeParseError("assessment block unparseable after retry")
        try:
            type_match = bool(payload["type_match"])
            sim = max(0.0, min(1.0, float(payload["description_similarity"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise JudgeParseError(f"bad assessment payload: {exc}") from exc
        return MatchDimensions(type_match, sim, location_level(produced, gold))


def categorize(dim: MatchDimensions) -> MatchCategory:
    """Rubric thresholds: Exact needs aligned type, strong description
    similarity and at least function-level location; Partial tolerates one
    weaker dimension."""
    if (
        dim.type_match
        and dim.description_similarity >= 0.8
        and dim.location_level in (LocationLevel.EXACT_LINE, LocationLevel.FUNCTION)
    ):
        return MatchCategory.EXACT
    if dim.type_match and dim.description_similarity >= 0.5 and dim.location_level != LocationLevel.NONE:
        return MatchCategory.PARTIAL
    if (
        not dim.type_match
        and dim.description_similarity >= 0.8
        and dim.location_level == LocationLevel.EXACT_LINE
    ):
        return MatchCategory.PARTIAL
    return MatchCategory.INCORRECT


_CATEGORY_PRIORITY = {MatchCategory.EXACT: 0, MatchCategory.PARTIAL: 1}


def pair_findings(
    produced: Sequence[Finding],
    gold: Sequence[GroundTruthFinding],
    judge: Judge,
) -> list[MatchResult]:
    """Greedy one-to-one assignment in rank order of the produced findings.

    Each produced finding claims its best-scoring unmatched gold candidate
    (Exact before Partial, then higher description similarity); unclaimed
    produced findings are Spurious, unclaimed gold findings are Missed.
    """
    results: list[MatchResult] = []
    unmatched = {g.finding_id: g for g in gold}
    for rank, p in enumerate(produced, start=1):
        best: Optional[tuple[int, float, str, MatchDimensions, MatchCategory]] = None
        for gid, g in unmatched.items():
            dims = judge.assess(p, g)
            category = categorize(dims)
            if category not in _CATEGORY_PRIORITY:
                continue
            key = (_CATEGORY_PRIORITY[category], -dims.description_similarity, gid)
            if best is None or key < (best[0], -best[1], best[2]):
                best = (_CATEGORY_PRIORITY[category], dims.description_similarity, gid, dims, category)
        if best is None:
            results.append(
                MatchResult(
                    produced_id=p.finding_id,
                    gold_id=None,
                    category=MatchCategory.SPURIOUS,
                    rationale="no gold candidate above the match floor",
                    produced_rank=rank,
                )
            )
        else:
            _, _, gid, dims, category = best
            del unmatched[gid]
            results.append(
                MatchResult(
                    produced_id=p.finding_id,
                    gold_id=gid,
                    category=category,
                    dimensions=dims,
                    rationale=f"matched at rank {rank}",
                    produced_rank=rank,
                )
            )
    for gid in sorted(unmatched):
        results.append(
            MatchResult(
                produced_id=None,
                gold_id=gid,
                category=MatchCategory.MISSED,
                rationale="no produced finding claimed this entry",
            )
        )
    return results


def mrr(first_tp_ranks: Sequence[Optional[int]]) -> float:
    """Mean reciprocal rank of the first true positive per query; queries with
    no TP contribute 0."""
    if not first_tp_ranks:
        raise EmptyQuerySet("no queries")
    total = 0.0
    for rank in first_tp_ranks:
        if rank is not None:
            if rank < 1:
                raise ValueError("ranks must be >= 1")
            total += 1.0 / rank
    return total / len(first_tp_ranks)


def average_precision(rels: Sequence[int], normalize_by_relevant: bool = False) -> float:
    """AP over a 0/1 relevance list.

    Default normalizer is the list length (the convention used throughout this
    project's reporting); `normalize_by_relevant` switches to the textbook
    definition (divide by the number of relevant items).
    """
    if not rels:
        raise ValueError("relevance list must be non-empty")
    hits = 0
    total = 0.0
    for n, rel in enumerate(rels, start=1):
        if rel:
            hits += 1
            total += hits / n
    if normalize_by_relevant:
        return total / hits if hits else 0.0
    return total / len(rels)


@dataclass
class ContractMatches:
    contract_id: str
    matches: list[MatchResult]
    gold_count: int
    produced_count: int


def _tp_categories(strict: bool) -> set[MatchCategory]:
    return {MatchCategory.EXACT} if strict else {MatchCategory.EXACT, MatchCategory.PARTIAL}


def top_n_accuracy(contracts: Sequence[ContractMatches], n: Optional[int], strict: bool = False) -> float:
    """Micro-averaged fraction of gold findings matched at rank <= n
    (n=None means any rank)."""
    if n is not None and n < 1:
        raise ValueError("n must be >= 1")
    tp_cats = _tp_categories(strict)
    detected = 0
    total_gold = 0
    for c in contracts:
        total_gold += c.gold_count
        for m in c.matches:
            if m.category in tp_cats and m.gold_id is not None:
                if n is None or (m.produced_rank is not None and m.produced_rank <= n):
                    detected += 1
    return detected / total_gold if total_gold else 0.0


@dataclass
class EvalSummary:
    contracts: list[ContractMatches]
    top_n: dict[str, float] = field(default_factory=dict)
    mrr: float = 0.0
    map: float = 0.0
    tp: int = 0
    fp: int = 0
    missed: int = 0

    def to_dict(self) -> dict:
        return {
            "contracts": [
                {
                    "contract_id": c.contract_id,
                    "gold_count": c.gold_count,
                    "produced_count": c.produced_count,
                    "matches": [m.to_dict() for m in c.matches],
                }
                for c in self.contracts
            ],
            "top_n": self.top_n,
            "mrr": self.mrr,
            "map": self.map,
            "counts": {"tp": self.tp, "fp": self.fp, "missed": self.missed},
        }


def summarize(
    contracts: Sequence[ContractMatches],
    top_ns: Sequence[int] = (1, 5),
    strict: bool = False,
) -> EvalSummary:
    """Aggregate match lists into the ranking metrics table."""
    if not contracts:
        raise EmptyQuerySet("no contracts to summarize")
    tp_cats = _tp_categories(strict)
    first_ranks: list[Optional[int]] = []
    aps: list[float] = []
    tp = fp = missed = 0
    for c in contracts:
        ranked = sorted(
            (m for m in c.matches if m.produced_rank is not None),
            key=lambda m: m.produced_rank or 0,
        )
        rels = [1 if m.category in tp_cats else 0 for m in ranked]
        first_ranks.append(rels.index(1) + 1 if 1 in rels else None)
        if rels:
            aps.append(average_precision(rels))
        else:
            aps.append(0.0)
        for m in c.matches:
            if m.category in tp_cats:
                tp += 1
            elif m.category == MatchCategory.MISSED:
                missed += 1
            elif m.produced_rank is not None:
                fp += 1
    top_n = {str(n): top_n_accuracy(contracts, n, strict) for n in top_ns}
    top_n["max"] = top_n_accuracy(contracts, None, strict)
    return EvalSummary(
        contracts=list(contracts),
        top_n=top_n,
        mrr=mrr(first_ranks),
        map=sum(aps) / len(aps),
        tp=tp,
        fp=fp,
        missed=missed,
    )
