"""Seeded k-fold cross-validation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import TooFewSamples
from .metrics import mae, mse, r2


@dataclass(frozen=True)
class FoldScore:
    fold: int
    n_train: int
    n_valid: int
    mae: float
    mse: float
    r2: float


@dataclass(frozen=True)
class CvReport:
    model_kind: str
    folds: tuple[FoldScore, ...]
    seed: int
    assignment: np.ndarray  # fold index for every sample

    @property
    def mean_mae(self) -> float:
        return float(np.mean([f.mae for f in self.folds]))

    @property
    def mean_mse(self) -> float:
        return float(np.mean([f.mse for f in self.folds]))

    @property
    def mean_r2(self) -> float:
        return float(np.mean([f.r2 for f in self.folds]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "fold", "n_train", "n_valid", "mae", "mse", "r2"])
        for f in self.folds:
            w.writerow([self.model_kind, f.fold, f.n_train, f.n_valid, repr(f.mae), repr(f.mse), repr(f.r2)])
        w.writerow([self.model_kind, "mean", "", "", repr(self.mean_mae), repr(self.mean_mse), repr(self.mean_r2)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "model": self.model_kind,
            "seed": self.seed,
            "folds": [f.__dict__ for f in self.folds],
            "mean": {"mae": self.mean_mae, "mse": self.mean_mse, "r2": self.mean_r2},
        }


def kfold_assignment(n: int, k: int, seed: int) -> np.ndarray:
    """Fold label per sample: a seeded permutation cut into k nearly equal parts."""
    if k < 2:
        raise TooFewSamples("k must be at least 2")
    if n < k:
        raise TooFewSamples(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=int)
    for fold, part in enumerate(np.array_split(perm, k)):
        assignment[part] = fold
    return assignment


def cross_validate(model_factory: Callable, X, y, k: int = 5, seed: int = 0,
                   model_kind: str = "model", assignment: Optional[np.ndarray] = None) -> CvReport:
    """``model_factory(X_train, y_train)`` must return an object with ``predict``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if assignment is None:
        assignment = kfold_assignment(len(y), k, seed)
    folds = []
    for fold in range(int(assignment.max()) + 1):
        valid = assignment == fold
        model = model_factory(X[~valid], y[~valid])
        pred = model.predict(X[valid])
        folds.append(FoldScore(fold, int((~valid).sum()), int(valid.sum()),
                               mae(y[valid], pred), mse(y[valid], pred), r2(y[valid], pred)))
    return CvReport(model_kind, tuple(folds), seed, assignment)
