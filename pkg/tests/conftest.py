import pytest

from ckim.synthgen import generate, preset

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_data():
    """Well-separated 3-class scenes: 4,000 training and 500 test images."""
    return (generate(preset("default", rng_seed=0), 4000),
            generate(preset("default", rng_seed=1000), 500))


@pytest.fixture(scope="session")
def small_default():
    return generate(preset("default", rng_seed=3), 300)
