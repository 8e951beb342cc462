import pytest

from gohcert.registry import registry_get, registry_names
from gohcert.report import known_multiplier


@pytest.fixture(scope="session")
def registry():
    """name -> (entry, multiplier) for every builtin at the default grid."""
    out = {}
    for name in registry_names():
        e = registry_get(name)
        out[name] = (e, known_multiplier(e.spec, e.traj, e.seed))
    return out


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
