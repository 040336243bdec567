import pytest

from neuronshap.neuron_game import build_fixture


@pytest.fixture(scope="session")
def fixture0():
    """The default neuron-game fixture at seed 0 (trained once per session)."""
    return build_fixture(0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
