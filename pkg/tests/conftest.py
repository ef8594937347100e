"""Shared fixtures. Trained stacks are session-scoped so the full suite trains each one once."""

import warnings
from dataclasses import dataclass

import numpy as np
import pytest

from stereogaze import geometry as g
from stereogaze import pipeline as P
from stereogaze import synth
from stereogaze.errors import ConvergenceWarning

# Cohort used by the end-to-end runs: subjects 0-24 train, 25-29 test.
COHORT_SEED = 7
N_SUBJECTS = 30
N_TRAIN = 25


@dataclass
class Run:
    dataset: synth.Dataset
    stack: P.TrainedStack
    profiles: dict
    report: P.EvalReport
    train_seconds: float


def _run(sigma: float, n_subjects: int = N_SUBJECTS, n_train: int = N_TRAIN, **cfg) -> Run:
    import time
    subjects = synth.make_subjects(n_subjects, COHORT_SEED)
    ds = synth.generate_cohort([g.calibration_grid(), g.scene1_spec()], subjects,
                               synth.NoiseSpec(sigma, 0.0, COHORT_SEED))
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        stack = P.train(ds.select(range(n_train)), P.PipelineConfig(seed=COHORT_SEED, **cfg))
    elapsed = time.perf_counter() - t0
    test = ds.select(range(n_train, n_subjects))
    profiles = P.calibrate_all(stack, test.select(scene_id="calibration"))
    report = P.evaluate(stack, profiles, test.select(scene_id="scene1"))
    return Run(ds, stack, profiles, report, elapsed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_run() -> Run:
    """Six noiseless subjects (five train); cheap enough for unit-level pipeline tests."""
    return _run(0.0, n_subjects=6, n_train=5, svr_max_samples=400, cv_folds=3)


@pytest.fixture(scope="session")
def noiseless_run() -> Run:
    return _run(0.0)


@pytest.fixture(scope="session")
def noisy_run() -> Run:
    return _run(0.5)


# --------------------------------------------------------------------------
# Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary.

ACCEPTANCE_CRITERIA = {
    1: "geometry oracle",
    2: "PSOM exactness, roundtrip, gradient",
    3: "polynomial calibration",
    4: "SVR identity, fit, dual",
    5: "five-model depth ranking",
    6: "end-to-end depth and 3D error",
    7: "feature correlation and importance",
    8: "CLI determinism",
    9: "suite runtime",
}
_ACCEPTANCE: dict = {}
SESSION_START = [0.0]


def pytest_sessionstart(session):
    import time
    SESSION_START[0] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # the runtime criterion must run after everything else
    last = [it for it in items if it.name == "test_criterion_9_suite_runtime"]
    items[:] = [it for it in items if it not in last] + last


@pytest.fixture
def acceptance():
    def record(criterion: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, title in ACCEPTANCE_CRITERIA.items():
        checks = _ACCEPTANCE.get(k)
        if not checks:
            tr.write_line(f"criterion {k} ({title}): FAIL  not evaluated")
            continue
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        tr.write_line(f"criterion {k} ({title}): {status}  " + "; ".join(d for _, d in checks))
