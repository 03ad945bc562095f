"""Shared fixture builders for the test suite."""
from __future__ import annotations

from scaudit.gateway import MockRule
from scaudit.model import CodeLocation, Finding, Severity

CONTRACT_SOURCE = "\n".join(f"// line {i}" for i in range(1, 101))

PLAN_RESPONSE = """Audit plan follows.

```subtasks
- index: 1
  title: Reentrancy in withdraw
  target: withdraw
  concern: reentrancy
  priority: 1
- index: 2
  title: Access control on mint
  target: mint
  concern: access-control
  priority: 2
- index: 3
  title: Overflow in accounting
  target: balances
  concern: integer-overflow
  priority: 3
```
"""


def finding_response(n: int, confidence: float, severity: str = "High") -> str:
    return f"""Calibrated verdict for task {n}.

```finding
vuln_type: concern-{n}
description: issue found by task {n}
location:
  file: token.sol
  start_line: {10 * n}
  end_line: {10 * n + 5}
  function_name: fn{n}
severity: {severity}
confidence: {confidence}
evidence:
  - snippet-{n}
```
"""


def make_audit_rules(conf=(0.9, 0.5, 0.7)) -> list[MockRule]:
    """Scripted responses for a full three-sub-task audit run."""
    rules = [
        MockRule(pattern=r"audit planner", response=PLAN_RESPONSE),
        MockRule(pattern=r"findings synthesizer", response="Synthesized overview of findings."),
    ]
    for n in (1, 2, 3):
        rules.append(
            MockRule(
                pattern=rf"calibration reviewer(?s:.*)REVIEW-T{n}\b",
                response=finding_response(n, conf[n - 1]),
            )
        )
        rules.append(
            MockRule(
                pattern=rf"focused security reviewer(?s:.*)Sub-task {n}:",
                response=f"REVIEW-T{n} suspicious pattern in target",
            )
        )
    rules.append(MockRule(pattern=r"security analyst", response="analysis-X"))
    return rules


def make_finding(
    fid: str = "f1",
    vuln: str = "reentrancy",
    sev: Severity = Severity.HIGH,
    conf: float = 0.9,
    start: int = 10,
    end: int = 20,
    file: str = "token.sol",
    fn: str | None = "withdraw",
    desc: str = "external call before state update",
) -> Finding:
    return Finding(
        finding_id=fid,
        vuln_type=vuln,
        description=desc,
        location=CodeLocation(file=file, start_line=start, end_line=end, function_name=fn),
        severity=sev,
        confidence=conf,
        origin_subtask=1,
    )


def components_analysis(
    functions=(),
    variables=(),
    modifiers=(),
    events=(),
    questions=(),
) -> str:
    """Build an analysis text carrying a fenced components block."""
    lines = ["Contract analysis.", "", "```components"]

    def emit(kind, entries, with_params):
        if not entries:
            return
        lines.append(f"{kind}:")
        for e in entries:
            if isinstance(e, str):
                e = {"name": e}
            lines.append(f"- name: {e['name']}")
            if with_params:
                params = e.get("params", [])
                lines.append(f"  params: [{', '.join(params)}]")
            if e.get("description"):
                lines.append(f"  description: {e['description']}")

    emit("functions", functions, True)
    emit("variables", variables, False)
    emit("modifiers", modifiers, False)
    emit("events", events, True)
    if questions:
        lines.append("questions:")
        for q in questions:
            lines.append(f"- {q}")
    lines.append("```")
    return "\n".join(lines)
