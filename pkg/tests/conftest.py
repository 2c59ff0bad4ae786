from __future__ import annotations

import numpy as np
import pytest

from rpclay import dataset, inverse, mlp, solver
from rpclay.constitutive import MaterialParams


@pytest.fixture(scope="session")
def defaults() -> MaterialParams:
    return MaterialParams()


@pytest.fixture(scope="session")
def factorial_set(defaults) -> dataset.SampleSet:
    mats = dataset.gen_factorial_design(defaults)
    rows = solver.simulate_batch(solver.DEFAULT_CASES, mats)
    return dataset.from_depths(mats, solver.batch_depths(rows, 3), "generated_factorial")


@pytest.fixture(scope="session")
def surrogates(factorial_set) -> list[mlp.MlpModel]:
    """Per-case 50x50 networks trained once for the whole session."""
    return inverse.fit_surrogates(factorial_set, (50, 50), mlp.TrainConfig(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
