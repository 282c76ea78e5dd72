import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def load_json(name):
    return json.loads((DATA / name).read_text())


def make_template(signer="t", n_components=2, rate=200.0):
    """Template signature whose components carry known stroke parameters."""
    from sigrank.lognormal import ComponentParams, LognormalStroke, reconstruct_component
    from sigrank.signature import Signature

    base = [
        [LognormalStroke(10, 0.02, -1.6, 0.25, 0.2, 0.9), LognormalStroke(7, 0.25, -1.5, 0.3, 2.2, 1.5),
         LognormalStroke(9, 0.5, -1.7, 0.22, -0.8, -0.1)],
        [LognormalStroke(6, 0.03, -1.4, 0.3, -2.0, -1.2), LognormalStroke(8, 0.3, -1.6, 0.2, 1.0, 1.9)],
        [LognormalStroke(5, 0.05, -1.5, 0.25, 0.5, 0.1)],
    ]
    comps = []
    for k in range(n_components):
        n = int(1.1 * rate) + 1
        p = ComponentParams(base[k % 3], np.full(n, 30.0 * k), np.zeros(n), rate)
        c = reconstruct_component(p)
        c.params = p
        comps.append(c)
    return Signature(signer, comps, rate)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
