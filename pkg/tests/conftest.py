import json
import time
from pathlib import Path

import numpy as np
import pytest

from iragent.core import Label, SpectralDataset, Spectrum, TaskType

DATA = Path(__file__).resolve().parents[1] / "src" / "iragent" / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"


def make_spectrum(y, wl=None, sid="s"):
    y = np.asarray(y, dtype=float)
    if wl is None:
        wl = np.arange(y.size, dtype=float)
    return Spectrum(np.asarray(wl, float), y, sid)


def make_dataset(X, classes, wl=None, material="test"):
    X = np.asarray(X, dtype=float)
    wl = np.arange(X.shape[1], dtype=float) if wl is None else wl
    ids = [f"s{i:03d}" for i in range(X.shape[0])]
    labels = [Label(cls=str(c)) for c in classes]
    return SpectralDataset.from_matrix(wl, X, ids, labels, material, TaskType.CLASSIFICATION)


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def golden_dir():
    return GOLDEN


def load_json(path):
    return json.loads(Path(path).read_text())


SUITE_BUDGET_S = 120.0
_started = {}


def pytest_sessionstart(session):
    _started["t"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus):
    """Whole-suite wall time against the two-minute budget."""
    if "t" not in _started:
        return
    elapsed = time.perf_counter() - _started["t"]
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(
        f"acceptance 7 [suite runtime]: {verdict} ({elapsed:.1f} s < {SUITE_BUDGET_S:.0f} s)"
    )
