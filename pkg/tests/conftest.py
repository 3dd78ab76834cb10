import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dicert.quantum import born_behavior, chsh_strategy, ghz_strategy  # noqa: E402


@pytest.fixture(scope="session")
def ideal_chsh():
    return born_behavior(chsh_strategy())


@pytest.fixture(scope="session")
def ghz():
    return born_behavior(ghz_strategy())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results):
        ok, title, detail = results[cid]
        terminalreporter.write_line(f"criterion {cid:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
