"""Gaze-depth features, correlation and impurity-importance analysis, depth model selection.

A depth row holds seven features from one binocular frame pair:

========== ==========================================================
v_xl, v_xr x-components of the left and right unit gaze directions
alpha      vergence angle between the two gaze rays, degrees
delta_x    horizontal separation of the two 2D gaze points, cm
ipd_obs    observed pupil separation in the shared rig image, px
pupil_mean mean of the two pupil radii, px
disparity  stimulus parallax sampled at the 2D gaze midpoint, cm
========== ==========================================================
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import MissingPupil, TooFewRows
from .eyefeatures import LandmarkSet
from .geometry import (
    BinocularConfig,
    CameraRig,
    GazePlane,
    GazeRay,
    disparity_from_depth,
    vergence_angle_batch,
)
from .regressors import MODEL_KINDS, CvReport, cross_validate, fit_model, model_factory
from .regressors.trees import ForestConfig, fit_forest

DEPTH_COLUMNS = ("v_xl", "v_xr", "alpha", "delta_x", "ipd_obs", "pupil_mean", "disparity")
N_DEPTH_FEATURES = len(DEPTH_COLUMNS)
PUPIL_COLUMNS = ("ipd_obs", "pupil_mean")

DisparityMap = Callable[[float, float], float]


# --------------------------------------------------------------------------
# Disparity sources


@dataclass(frozen=True)
class MarkerDisparity:
    """Parallax of a displayed scene: one fixation marker over a flat background.

    The marker is drawn at the cyclopean projection of ``target`` onto the
    gaze plane and carries the parallax of the target depth; everything else
    carries the parallax of ``background_depth``.
    """

    target: np.ndarray
    background_depth: float
    binocular: BinocularConfig = BinocularConfig()
    plane_distance: float = 35.0
    marker_radius: float = 2.0  # cm on the gaze plane

    @property
    def marker_center(self) -> np.ndarray:
        t = np.asarray(self.target, dtype=float)
        return t[:2] * self.plane_distance / t[2]

    def __call__(self, x: float, y: float) -> float:
        c = self.marker_center
        if (x - c[0]) ** 2 + (y - c[1]) ** 2 <= self.marker_radius ** 2:
            return disparity_from_depth(self.target, self.binocular)
        return disparity_from_depth((0.0, 0.0, self.background_depth), self.binocular)


def marker_disparity_batch(targets: np.ndarray, mid: np.ndarray, background_depth: float,
                           binocular: BinocularConfig = BinocularConfig(), plane_distance: float = 35.0,
                           marker_radius: float = 2.0) -> np.ndarray:
    """Vectorized :class:`MarkerDisparity` for per-row targets and gaze midpoints."""
    targets = np.atleast_2d(targets)
    center = targets[:, :2] * plane_distance / targets[:, 2:3]
    hit = np.sum((np.atleast_2d(mid) - center) ** 2, axis=1) <= marker_radius ** 2
    ipd, z0 = binocular.interpupillary_distance, binocular.zero_parallax_depth
    p_target = ipd * (targets[:, 2] - z0) / targets[:, 2]
    p_bg = ipd * (background_depth - z0) / background_depth
    return np.where(hit, p_target, p_bg)


@dataclass(frozen=True)
class GridDisparityMap:
    """Disparity samples on a regular grid, row-major from the top row, cm values.

    ``origin`` is the plane position (x, y) of sample ``[0, 0]``; rows step
    down in y by ``spacing[1]`` and columns step right in x by ``spacing[0]``.
    Lookups are bilinear and clamp to the grid edge.
    """

    values: np.ndarray
    origin: tuple[float, float]
    spacing: tuple[float, float]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or min(v.shape) < 2:
            raise ValueError("disparity grid must be 2D with at least 2x2 samples")
        if not (self.spacing[0] > 0 and self.spacing[1] > 0):
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_plane(cls, values, plane: GazePlane) -> "GridDisparityMap":
        """Grid covering the full gaze plane, corner samples on its edges."""
        v = np.asarray(values, dtype=float)
        rows, cols = v.shape
        return cls(v, (-plane.width / 2, plane.height / 2),
                   (plane.width / (cols - 1), plane.height / (rows - 1)))

    def __call__(self, x: float, y: float) -> float:
        rows, cols = self.values.shape
        c = np.clip((x - self.origin[0]) / self.spacing[0], 0.0, cols - 1.0)
        r = np.clip((self.origin[1] - y) / self.spacing[1], 0.0, rows - 1.0)
        c0 = min(int(np.floor(c)), cols - 2)
        r0 = min(int(np.floor(r)), rows - 2)
        fc, fr = c - c0, r - r0
        v = self.values
        top = (1 - fc) * v[r0, c0] + fc * v[r0, c0 + 1]
        bottom = (1 - fc) * v[r0 + 1, c0] + fc * v[r0 + 1, c0 + 1]
        return float((1 - fr) * top + fr * bottom)


# --------------------------------------------------------------------------
# Feature rows


@dataclass(frozen=True)
class DepthFeatureRow:
    v_xl: float
    v_xr: float
    alpha: float
    delta_x: float
    ipd_obs: float
    pupil_mean: float
    disparity: float
    z: Optional[float] = None

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in DEPTH_COLUMNS])

    def __len__(self) -> int:
        return N_DEPTH_FEATURES


def depth_feature_matrix(dir_l: np.ndarray, dir_r: np.ndarray, p1: np.ndarray, p2: np.ndarray,
                         pupil_x_l: np.ndarray, pupil_x_r: np.ndarray,
                         radius_l: np.ndarray, radius_r: np.ndarray,
                         disparity: np.ndarray, baseline_px: float) -> np.ndarray:
    """Stack the seven depth features for ``n`` frame pairs into ``(n, 7)``.

    ``pupil_x_*`` are pupil-center image x coordinates in each eye camera;
    the right camera sits ``baseline_px`` to the right of the left one in the
    shared rig image.
    """
    dir_l = np.atleast_2d(dir_l)
    dir_r = np.atleast_2d(dir_r)
    radius_l = np.asarray(radius_l, dtype=float)
    radius_r = np.asarray(radius_r, dtype=float)
    if np.any(~np.isfinite(radius_l)) or np.any(~np.isfinite(radius_r)):
        raise MissingPupil("pupil radius is missing for at least one eye")
    alpha = vergence_angle_batch(dir_l, dir_r)
    delta_x = np.abs(np.atleast_2d(p1)[:, 0] - np.atleast_2d(p2)[:, 0])
    ipd_obs = np.abs(baseline_px + np.asarray(pupil_x_r) - np.asarray(pupil_x_l))
    pupil_mean = 0.5 * (radius_l + radius_r)
    return np.column_stack([dir_l[:, 0], dir_r[:, 0], alpha, delta_x, ipd_obs, pupil_mean,
                            np.asarray(disparity, dtype=float)])


def build_depth_features(left_ray: GazeRay, right_ray: GazeRay, p1, p2,
                         lm_left: LandmarkSet, lm_right: LandmarkSet,
                         disparity_map: DisparityMap, rig: CameraRig = CameraRig(),
                         z: Optional[float] = None) -> DepthFeatureRow:
    """One depth row; the disparity map is sampled at the midpoint of ``p1`` and ``p2``."""
    for lm in (lm_left, lm_right):
        if lm.pupil_radius is None or not np.isfinite(lm.pupil_radius):
            raise MissingPupil("landmark set has no pupil radius")
    p1 = np.asarray(p1, dtype=float)[:2]
    p2 = np.asarray(p2, dtype=float)[:2]
    mid = 0.5 * (p1 + p2)
    disp = float(disparity_map(float(mid[0]), float(mid[1])))
    row = depth_feature_matrix(left_ray.direction, right_ray.direction, p1, p2,
                               [lm_left.o[0]], [lm_right.o[0]],
                               [lm_left.pupil_radius], [lm_right.pupil_radius], [disp], rig.baseline_px)[0]
    return DepthFeatureRow(*map(float, row), z=None if z is None else float(z))


# --------------------------------------------------------------------------
# Depth tables


@dataclass
class DepthTable:
    """Feature matrix ``(n, 7)``, depth labels, and the unit the labels are in."""

    X: np.ndarray
    z: np.ndarray
    unit: str = "cm"
    point_id: Optional[np.ndarray] = None
    subject_id: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.z)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("subject_id", "point_id") + DEPTH_COLUMNS + (f"z_{self.unit}",))
        for i in range(len(self.z)):
            sid = "" if self.subject_id is None else int(self.subject_id[i])
            pid = "" if self.point_id is None else int(self.point_id[i])
            w.writerow([sid, pid] + [repr(float(v)) for v in self.X[i]] + [repr(float(self.z[i]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DepthTable":
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if tuple(header[2:9]) != DEPTH_COLUMNS or not header[9].startswith("z_"):
            raise ValueError("depth CSV header does not match the fixed layout")
        body = rows[1:]
        X = np.array([[float(v) for v in r[2:9]] for r in body]).reshape(-1, N_DEPTH_FEATURES)
        z = np.array([float(r[9]) for r in body])
        sid = np.array([int(r[0]) for r in body]) if body and body[0][0] != "" else None
        pid = np.array([int(r[1]) for r in body]) if body and body[0][1] != "" else None
        return cls(X, z, header[9][2:], pid, sid)


# --------------------------------------------------------------------------
# Correlation and importance


@dataclass(frozen=True)
class CorrelationReport:
    names: tuple[str, ...]
    r: np.ndarray  # Pearson r of each feature with depth; NaN where undefined
    matrix: np.ndarray  # full (d+1, d+1) matrix over features then depth
    defined: np.ndarray  # False for zero-variance columns

    def ranking(self) -> list[str]:
        """Features by decreasing |r|; undefined columns last."""
        key = np.where(self.defined, -np.abs(np.nan_to_num(self.r)), np.inf)
        return [self.names[i] for i in np.argsort(key, kind="stable")]

    def __getitem__(self, name: str) -> float:
        return float(self.r[self.names.index(name)])

    def to_csv(self) -> str:
        labels = self.names + ("z",)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("feature",) + labels)
        for i, name in enumerate(labels):
            w.writerow([name] + ["" if np.isnan(v) else repr(float(v)) for v in self.matrix[i]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"r_with_depth": {n: (None if not d else float(v)) for n, v, d in zip(self.names, self.r, self.defined)},
                "ranking": self.ranking()}


def pearson_corr(X, z, names: Sequence[str] = DEPTH_COLUMNS) -> CorrelationReport:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(z, dtype=float)
    if X.shape[0] < 3:
        raise TooFewRows("correlation needs at least 3 rows")
    if len(names) != X.shape[1]:
        raise ValueError("one name per feature column is required")
    data = np.column_stack([X, z])
    centered = data - data.mean(axis=0)
    ss = np.sqrt(np.sum(centered ** 2, axis=0))
    # zero-variance columns get NaN instead of a division error
    scale = float(np.max(np.abs(data))) if data.size else 1.0
    defined_all = ss > 1e-12 * max(scale, 1.0) * np.sqrt(data.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        M = (centered.T @ centered) / np.outer(ss, ss)
    M = np.clip(M, -1.0, 1.0)
    M[~defined_all, :] = np.nan
    M[:, ~defined_all] = np.nan
    defined = defined_all[:-1] & defined_all[-1]
    return CorrelationReport(tuple(names), M[:-1, -1].copy(), M, defined)


@dataclass(frozen=True)
class ImportanceReport:
    names: tuple[str, ...]
    importance: np.ndarray  # nonnegative, sums to 1
    seed: int

    def ranking(self) -> list[str]:
        return [self.names[i] for i in np.argsort(-self.importance, kind="stable")]

    def __getitem__(self, name: str) -> float:
        return float(self.importance[self.names.index(name)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("feature", "importance", "rank"))
        order = self.ranking()
        for name in order:
            w.writerow([name, repr(self[name]), order.index(name) + 1])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"seed": self.seed, "importance": {n: float(v) for n, v in zip(self.names, self.importance)},
                "ranking": self.ranking()}


GINI_MIN_ROWS = 20


def gini_importance(X, z, seed: int = 0, names: Sequence[str] = DEPTH_COLUMNS,
                    cfg: ForestConfig = ForestConfig()) -> ImportanceReport:
    """Mean impurity decrease per feature over a seeded bagged tree ensemble."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < GINI_MIN_ROWS:
        raise TooFewRows(f"importance analysis needs at least {GINI_MIN_ROWS} rows, got {X.shape[0]}")
    if len(names) != X.shape[1]:
        raise ValueError("one name per feature column is required")
    forest = fit_forest(X, z, cfg, seed)
    return ImportanceReport(tuple(names), forest.feature_importances(), seed)


# --------------------------------------------------------------------------
# Depth model training and selection


def train_depth_model(X, z, model_kind: str, cv_k: int = 5, seed: int = 0, config=None):
    """Cross-validate ``model_kind`` and refit it on all rows; returns (model, report)."""
    report = cross_validate(model_factory(model_kind, config), X, z, cv_k, seed, model_kind)
    return fit_model(model_kind, X, z, config), report


def select_best(reports: Mapping[str, CvReport]) -> str:
    """Highest mean R², then lowest mean MSE, then the fixed kind order."""
    order = {k: i for i, k in enumerate(MODEL_KINDS)}
    kinds = sorted(reports, key=lambda k: (-reports[k].mean_r2, reports[k].mean_mse, order.get(k, len(order))))
    if not kinds:
        raise ValueError("no reports to select from")
    return kinds[0]


def comparison_csv(reports: Mapping[str, CvReport], errors: Optional[Mapping[str, float]] = None,
                   unit: str = "cm") -> str:
    """One row per model: mean MAE, MSE, R² and (optionally) the averaged-prediction error."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "mae", "mse", "r2", f"error_{unit}"))
    order = [k for k in MODEL_KINDS if k in reports] + sorted(set(reports) - set(MODEL_KINDS))
    for k in order:
        rep = reports[k]
        err = "" if errors is None or k not in errors else repr(float(errors[k]))
        w.writerow([k, repr(rep.mean_mae), repr(rep.mean_mse), repr(rep.mean_r2), err])
    return buf.getvalue()


def reports_json(reports: Mapping[str, CvReport]) -> str:
    return json.dumps({k: reports[k].to_dict() for k in sorted(reports)}, indent=2, sort_keys=True) + "\n"
