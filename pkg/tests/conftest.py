import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_walk(rng, n, h, dim=1):
    steps = rng.choice([-1.0, 1.0], size=(n, dim)) * np.sqrt(h)
    return np.concatenate([np.zeros((1, dim)), np.cumsum(steps, axis=0)])


# acceptance criteria report ------------------------------------------------

_CRITERIA: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 11


@pytest.fixture
def criterion():
    """Record one acceptance line and assert it."""

    def record(num: int, ok: bool, detail: str):
        _CRITERIA[num] = (bool(ok), detail)
        print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {num} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in r.nodeid
              for key in ("passed", "failed") for r in terminalreporter.stats.get(key, []))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, N_CRITERIA + 1):
        ok, detail = _CRITERIA.get(num, (False, "did not complete"))
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
