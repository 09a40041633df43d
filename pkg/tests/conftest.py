import numpy as np
import pytest

from tiltcouple.harness.config import ExperimentConfig
from tiltcouple.harness.suite import SuiteContext

AC_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("cache"))


@pytest.fixture(scope="session")
def config(cache_dir):
    return ExperimentConfig(cache_dir=cache_dir)


@pytest.fixture(scope="session")
def ctx(config):
    """Shared eigenpairs, geometries and chain tables for the whole session."""
    return SuiteContext(config, seed=config.seed)


@pytest.fixture(scope="session")
def tables8(ctx):
    return ctx.tables(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


@pytest.fixture
def report(request):
    """Record one acceptance line; all lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(AC_LINES, [])

    def emit(label: str, passed: bool, detail: str) -> None:
        line = f"{label} {'pass' if passed else 'fail'}: {detail}"
        print(line)
        lines.append(line)
    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(AC_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
