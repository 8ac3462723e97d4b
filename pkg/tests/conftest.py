import os

import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_numba_env(monkeypatch):
    # config tests read GCB_* variables; keep the process environment out of them
    for key in list(os.environ):
        if key.startswith("GCB_") and key != "GCB_DISABLE_NUMBA":
            monkeypatch.delenv(key)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one summary line per acceptance criterion; printed at the end of the run."""

    def record(number: int, title: str, ok: bool, detail: str = "", binding: bool = True):
        status = ("PASS" if ok else "FAIL") if binding else ("REPORT-" + ("PASS" if ok else "FAIL"))
        line = f"[acceptance {number:>2}] {status:<11} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
