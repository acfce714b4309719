import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from freqsem import _backend  # noqa: E402

BACKENDS = sorted(_backend.BACKENDS)


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = _backend.use(request.param)
    yield request.param
    _backend.use(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.notes = []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, kind, exc, tb):
        status = "PASS" if kind is None else "FAIL"
        notes = "; ".join(self.notes + ([f"{kind.__name__}: {exc}".splitlines()[0]] if kind else []))
        self.lines.append(f"criterion {self.number:>2} {status}  {self.title}  "
                          f"[{time.perf_counter() - self.t0:.1f}s] {notes}")
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c:`` records one PASS/FAIL line for the summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
