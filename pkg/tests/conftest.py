import sys

import pytest

from sweptnav.scenarios import SCENARIOS, plan_scenario


@pytest.fixture(scope="session")
def scenario_plans():
    """Planned reports for every builtin scenario at default settings."""
    return {name: plan_scenario(name) for name in SCENARIOS}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
