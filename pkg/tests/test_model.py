from __future__ import annotations

import itertools
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from helpers import make_finding

from scaudit.model import (
    AuditReport,
    CodeLocation,
    ContractInput,
    Finding,
    Severity,
    SubTask,
    rank_findings,
    validate_finding,
)


def test_rank_empty():
    assert rank_findings([]) == []


def test_rank_severity_beats_confidence():
    low = make_finding("b", sev=Severity.LOW, conf=0.9)
    high = make_finding("a", sev=Severity.HIGH, conf=0.5)
    assert [f.finding_id for f in rank_findings([low, high])] == ["a", "b"]


def test_rank_tie_break_by_id():
    z = make_finding("z", sev=Severity.MEDIUM, conf=0.5)
    a = make_finding("a", sev=Severity.MEDIUM, conf=0.5)
    assert [f.finding_id for f in rank_findings([z, a])] == ["a", "z"]


severities = st.sampled_from(list(Severity))
findings_lists = st.lists(
    st.builds(
        make_finding,
        fid=st.text(alphabet="abcdef", min_size=1, max_size=4),
        sev=severities,
        conf=st.floats(0, 1),
    ),
    max_size=20,
)


@given(findings_lists)
def test_rank_idempotent(fs):
    once = rank_findings(fs)
    assert rank_findings(once) == once


@given(findings_lists)
def test_rank_is_permutation(fs):
    ranked = rank_findings(fs)
    assert Counter(id(f) for f in ranked) == Counter(id(f) for f in fs)


def test_severity_total_order():
    ranks = [s.rank for s in Severity]
    assert len(set(ranks)) == 5
    for a, b, c in itertools.product(Severity, repeat=3):
        if a.rank > b.rank:
            assert not b.rank > a.rank  # antisymmetric
        if a.rank > b.rank and b.rank > c.rank:
            assert a.rank > c.rank  # transitive
    assert (
        Severity.CRITICAL.rank
        > Severity.HIGH.rank
        > Severity.MEDIUM.rank
        > Severity.LOW.rank
        > Severity.INFORMATIONAL.rank
    )


SOURCE_100 = "\n".join(f"line {i}" for i in range(1, 101))


def test_validate_confidence_out_of_range():
    f = make_finding(conf=1.2)
    assert validate_finding(f, SOURCE_100) == ["confidence out of range"]


def test_validate_line_order():
    f = make_finding(start=5, end=3)
    # bypass frozen dataclass validation through direct construction
    assert "start_line > end_line" in validate_finding(f, SOURCE_100)


def test_validate_well_formed():
    f = make_finding(start=5, end=10)
    assert validate_finding(f, SOURCE_100) == []


def test_validate_beyond_source():
    f = make_finding(start=90, end=150)
    assert validate_finding(f, SOURCE_100) == ["location beyond end of source"]


def test_contract_input_requires_source():
    with pytest.raises(ValueError):
        ContractInput(contract_id="c", source_code="")


def test_subtask_invariants():
    with pytest.raises(ValueError):
        SubTask(index=0, title="t", target="x", concern="c", priority=1)
    with pytest.raises(ValueError):
        SubTask(index=1, title="t", target="x", concern="c", priority=0)


def test_report_json_round_trip():
    report = AuditReport(
        contract_id="c1",
        initial_analysis="s1",
        plan=[SubTask(index=1, title="t", target="x", concern="reentrancy", priority=1)],
        findings=[make_finding()],
        summary="done",
        run_metadata={"model_id": "mock"},
    )
    again = AuditReport.from_json(report.to_json())
    assert again == report


def test_location_overlap():
    a = CodeLocation("f.sol", 10, 20)
    assert a.overlaps(CodeLocation("f.sol", 15, 25))
    assert not a.overlaps(CodeLocation("f.sol", 21, 30))
    assert not a.overlaps(CodeLocation("g.sol", 10, 20))


def test_finding_schema_field_names():
    d = make_finding().to_dict()
    assert set(d) == {
        "finding_id",
        "vuln_type",
        "description",
        "location",
        "severity",
        "confidence",
        "evidence",
        "origin_subtask",
    }
    assert set(d["location"]) == {"file", "start_line", "end_line", "function_name"}
