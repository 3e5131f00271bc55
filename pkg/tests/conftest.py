from __future__ import annotations

import json
from pathlib import Path

import pytest

from grilink.mockgri import FixtureWorld, serve

FIXTURES = Path(__file__).with_name("fixtures")
_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line[1])


@pytest.fixture
def acceptance_log(request):
    """Append ``(criterion, line)`` to have it printed in the terminal summary."""
    return request.config.stash[_ACCEPTANCE_KEY]


@pytest.fixture(scope="session")
def repair_rows():
    data = json.loads((FIXTURES / "doi_repair_cases.json").read_text(encoding="utf-8"))
    return data["figure_rows"], data["additional_rows"]


@pytest.fixture(scope="session")
def reference_world():
    return FixtureWorld.builtin("reference_tables")


@pytest.fixture(scope="session")
def reference_server(reference_world):
    handle = serve(reference_world)
    yield handle
    handle.shutdown()
