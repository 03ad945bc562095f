from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_audit_rules  # noqa: E402

from scaudit.gateway import Gateway, MockProvider


@pytest.fixture
def mock_gateway(tmp_path):
    return Gateway(MockProvider(), cache_dir=tmp_path / "cache")


@pytest.fixture
def audit_provider():
    return MockProvider(rules=make_audit_rules())


@pytest.fixture
def audit_gateway(audit_provider):
    return Gateway(audit_provider)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for num, title, status in sorted(RESULTS):
            terminalreporter.write_line(f"criterion {num:02d} [{status}] {title}")
