import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dodrom.snapshots import BenchmarkConfig, generate_snapshots

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_config():
    return BenchmarkConfig(nx=12, ny=12, T=1.2, n_t=6, n_s1=3, n_s2=3, seed=5)


@pytest.fixture(scope="session")
def small_snaps(small_config):
    return generate_snapshots(small_config)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


class Verdict:
    def __init__(self, store, number, title):
        self.store, self.number, self.title = store, number, title
        self.done = False

    def __call__(self, ok: bool, detail: str = "") -> bool:
        line = f"criterion {self.number} [{'PASS' if ok else 'FAIL'}] {self.title}: {detail}"
        self.store.append((self.number, line))
        print(line)
        self.done = True
        return ok


@pytest.fixture
def criterion(request):
    """Records one pass/fail line per acceptance criterion for the terminal summary."""
    store = request.config.stash[ACCEPTANCE]
    made = []

    def make(number, title):
        made.append(Verdict(store, number, title))
        return made[-1]

    yield make
    for v in made:
        if not v.done:
            v(False, "aborted before a verdict (see traceback)")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
