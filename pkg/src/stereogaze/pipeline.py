"""End-to-end 3D point-of-gaze stack: training, per-subject calibration, inference, evaluation.

Data flow for one binocular frame pair:

1. landmarks -> 23 per-eye features -> SVR -> (yaw, pitch) per eye
2. rays from the nominal eye positions -> raw 2D points on the gaze plane
3. per-eye quadratic calibration -> calibrated 2D points and calibrated rays
4. PSOM inversion of the four calibrated coordinates -> plane position (X', Y')
5. seven depth features -> depth regressor -> Z
6. (X', Y') is the cyclopean projection on the gaze plane, so the 3D point is
   ``(X' Z / D, Y' Z / D, Z)`` with ``D`` the plane distance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .calibration import PolyMap2, apply as apply_poly, fit_poly_calibration
from .depth import (
    DEPTH_COLUMNS,
    DepthTable,
    comparison_csv,
    depth_feature_matrix,
    marker_disparity_batch,
    select_best,
    train_depth_model,
)
from .errors import (
    IncompleteCalibration,
    InsufficientDepthVariation,
    MissingInput,
    SubjectOverlap,
)
from .eyefeatures import features_from_flat
from .geometry import (
    BinocularConfig,
    CameraRig,
    GazePlane,
    SceneSpec,
    directions_from_angles,
    gaze_angles_batch,
    intersect_plane_batch,
)
from .psom import InversionConfig, PsomNet, psom_calibrate, psom_invert
from .regressors import (
    MODEL_KINDS,
    BrConfig,
    CvReport,
    EnetConfig,
    LinConfig,
    MultiOutputSvr,
    SvrConfig,
    fit_svr_multi,
    mae,
    model_from_dict,
    mse,
    r2,
)
from .regressors.cv import FoldScore
from .regressors.trees import GbrConfig
from .synth import SIDES, Dataset, EyeFrame

log = logging.getLogger(__name__)

CALIBRATION_SCENE = "calibration"


# --------------------------------------------------------------------------
# Configuration


def _default_depth_configs() -> dict:
    return {
        "lr": LinConfig(),
        "br": BrConfig(),
        "enet": EnetConfig(),
        "svr": SvrConfig(C=10.0, epsilon_tube=0.1),
        "gbr": GbrConfig(),
    }


_DEPTH_CONFIG_TYPES = {"lr": LinConfig, "br": BrConfig, "enet": EnetConfig, "svr": SvrConfig, "gbr": GbrConfig}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    plane: GazePlane = GazePlane()
    binocular: BinocularConfig = BinocularConfig()
    rig: CameraRig = CameraRig()
    gaze_svr: SvrConfig = SvrConfig(C=100.0, epsilon_tube=0.02, tol=0.01)
    svr_max_samples: Optional[int] = 1500  # distinct rows per eye; None keeps all
    depth_model: str = "auto"  # a model kind, or "auto" to cross-validate all five
    depth_configs: dict = field(default_factory=_default_depth_configs)
    cv_folds: int = 5
    inversion: InversionConfig = InversionConfig()
    marker_radius: float = 2.0  # cm, fixation-marker disc on the gaze plane
    angular_distance_cm: float = 59.0  # viewing distance for cm -> degree conversion

    def __post_init__(self):
        if self.depth_model != "auto" and self.depth_model not in MODEL_KINDS:
            raise ValueError(f"depth_model must be 'auto' or one of {MODEL_KINDS}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.svr_max_samples is not None and self.svr_max_samples < 10:
            raise ValueError("svr_max_samples must be >= 10")
        if not self.angular_distance_cm > 0:
            raise ValueError("angular_distance_cm must be positive")
        merged = {**_default_depth_configs(), **dict(self.depth_configs)}
        object.__setattr__(self, "depth_configs", merged)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "plane": _asdict(self.plane),
            "binocular": _asdict(self.binocular),
            "rig": _asdict(self.rig),
            "gaze_svr": _asdict(self.gaze_svr),
            "svr_max_samples": self.svr_max_samples,
            "depth_model": self.depth_model,
            "depth_configs": {k: _asdict(self.depth_configs[k]) for k in sorted(self.depth_configs)},
            "cv_folds": self.cv_folds,
            "inversion": _asdict(self.inversion),
            "marker_radius": self.marker_radius,
            "angular_distance_cm": self.angular_distance_cm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        kw = {}
        for name, typ in (("plane", GazePlane), ("binocular", BinocularConfig), ("rig", CameraRig),
                          ("gaze_svr", SvrConfig), ("inversion", InversionConfig)):
            if name in d:
                kw[name] = typ(**_tuplify(d.pop(name)))
        if "depth_configs" in d:
            kw["depth_configs"] = {k: _DEPTH_CONFIG_TYPES[k](**_tuplify(v)) for k, v in d.pop("depth_configs").items()}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**kw, **d)

    def config_hash(self) -> str:
        return hashlib.sha256(_dumps(self.to_dict()).encode()).hexdigest()


def _asdict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def _tuplify(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# Frame-pair arrays


@dataclass
class PairArrays:
    """Column-wise view of ``n`` left/right frame pairs."""

    flat_l: np.ndarray  # (n, 26) landmark scalars
    flat_r: np.ndarray
    radius_l: np.ndarray
    radius_r: np.ndarray
    true_dir_l: np.ndarray  # (n, 3)
    true_dir_r: np.ndarray
    true_origin_l: np.ndarray
    true_origin_r: np.ndarray
    target: np.ndarray  # (n, 3) cm
    subject_id: np.ndarray
    point_id: np.ndarray
    scene_id: np.ndarray

    def __len__(self) -> int:
        return len(self.target)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[EyeFrame, EyeFrame]]) -> "PairArrays":
        if not pairs:
            raise ValueError("no frame pairs")

        def col(fn, idx):
            return np.array([fn(p[idx]) for p in pairs])

        return cls(
            col(lambda f: f.landmarks.as_flat(), 0),
            col(lambda f: f.landmarks.as_flat(), 1),
            col(lambda f: np.nan if f.landmarks.pupil_radius is None else f.landmarks.pupil_radius, 0),
            col(lambda f: np.nan if f.landmarks.pupil_radius is None else f.landmarks.pupil_radius, 1),
            col(lambda f: f.true_gaze.direction, 0),
            col(lambda f: f.true_gaze.direction, 1),
            col(lambda f: f.true_gaze.origin, 0),
            col(lambda f: f.true_gaze.origin, 1),
            col(lambda f: f.true_target, 0),
            col(lambda f: f.subject_id, 0),
            col(lambda f: f.point_id, 0),
            col(lambda f: f.scene_id, 0),
        )

    def subset(self, mask: np.ndarray) -> "PairArrays":
        return PairArrays(*(getattr(self, f.name)[mask] for f in dataclasses.fields(self)))

    def flat(self, side: str) -> np.ndarray:
        return self.flat_l if side == "left" else self.flat_r


# --------------------------------------------------------------------------
# Trained stack and subject profiles


@dataclass
class DepthEntry:
    """Depth regressor for one scene together with its selection evidence."""

    kind: str
    model: object
    unit: str
    reports: dict  # kind -> CvReport
    background_depth: float


@dataclass
class TrainedStack:
    config: PipelineConfig
    gaze: dict  # side -> MultiOutputSvr predicting (yaw, pitch) in degrees
    depth: dict  # scene name -> DepthEntry
    train_subjects: tuple[int, ...]
    depth_tables: dict = field(default_factory=dict)  # scene name -> DepthTable of training rows
    scenes: dict = field(default_factory=dict)  # scene name -> SceneSpec


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: int
    poly_left: PolyMap2
    poly_right: PolyMap2
    psom: PsomNet
    calib_error_pre: float = 0.0  # mean 2D error on the calibration frames, cm
    calib_error_post: float = 0.0

    def poly(self, side: str) -> PolyMap2:
        return self.poly_left if side == "left" else self.poly_right

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "poly_left": self.poly_left.to_dict(),
            "poly_right": self.poly_right.to_dict(),
            "psom": self.psom.to_dict(),
            "calib_error_pre": self.calib_error_pre,
            "calib_error_post": self.calib_error_post,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubjectProfile":
        return cls(int(d["subject_id"]), PolyMap2.from_dict(d["poly_left"]), PolyMap2.from_dict(d["poly_right"]),
                   PsomNet.from_dict(d["psom"]), float(d.get("calib_error_pre", 0.0)),
                   float(d.get("calib_error_post", 0.0)))


# --------------------------------------------------------------------------
# Gaze stage


def predict_directions(stack: TrainedStack, side: str, flat: np.ndarray) -> np.ndarray:
    angles = stack.gaze[side].predict(features_from_flat(flat))
    return directions_from_angles(angles)


def raw_plane_points(cfg: PipelineConfig, side: str, directions: np.ndarray) -> np.ndarray:
    """Intersect rays cast from the nominal eye position with the gaze plane."""
    center = cfg.binocular.eye(side)
    origins = center + cfg.binocular.eyeball_radius * directions
    return intersect_plane_batch(origins, directions, cfg.plane.distance)


def rays_through(cfg: PipelineConfig, side: str, points: np.ndarray) -> np.ndarray:
    """Unit directions from the nominal eye position through plane points."""
    p3 = np.column_stack([points, np.full(len(points), cfg.plane.distance)])
    d = p3 - cfg.binocular.eye(side)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def true_plane_points(arr: PairArrays, side: str, plane: GazePlane) -> np.ndarray:
    if side == "left":
        return intersect_plane_batch(arr.true_origin_l, arr.true_dir_l, plane.distance)
    return intersect_plane_batch(arr.true_origin_r, arr.true_dir_r, plane.distance)


def _subsample(n: int, cap: Optional[int], seed: int, salt: int) -> np.ndarray:
    if cap is None or n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, salt]))
    return np.sort(rng.choice(n, size=cap, replace=False))


def _merge_duplicates(X: np.ndarray, Y: np.ndarray):
    """Collapse identical (features, target) rows into one row weighted by its count."""
    XY = np.column_stack([X, Y])
    uniq, counts = np.unique(XY, axis=0, return_counts=True)
    return uniq[:, :X.shape[1]], uniq[:, X.shape[1]:], counts.astype(float)


def train_gaze_models(arr: PairArrays, cfg: PipelineConfig) -> dict:
    """One two-output SVR per eye mapping landmark features to (yaw, pitch).

    Repeated frames (exact duplicates, as in noise-free sessions) become a
    single sample whose box bound is scaled by the repeat count, which leaves
    the optimization problem unchanged.
    """
    models = {}
    for k, side in enumerate(SIDES):
        X = features_from_flat(arr.flat(side))
        dirs = arr.true_dir_l if side == "left" else arr.true_dir_r
        X, Y, w = _merge_duplicates(X, gaze_angles_batch(dirs))
        idx = _subsample(len(X), cfg.svr_max_samples, cfg.seed, 101 + k)
        models[side] = fit_svr_multi(X[idx], Y[idx], cfg.gaze_svr, sample_weight=w[idx])
    return models


# --------------------------------------------------------------------------
# Calibration


def _check_pairs_complete(frames: Sequence[EyeFrame], pairs) -> None:
    n_left = sum(f.eye == "left" for f in frames)
    n_right = sum(f.eye == "right" for f in frames)
    if n_left == 0 or n_right == 0:
        missing = "left" if n_left == 0 else "right"
        raise IncompleteCalibration(f"calibration session has no {missing}-eye frames")
    if len(pairs) != n_left or len(pairs) != n_right:
        raise IncompleteCalibration("calibration frames do not pair up left/right")


def calibrate_subject(stack: TrainedStack, calib: Dataset, subject_id: Optional[int] = None) -> SubjectProfile:
    """Fit one quadratic map per eye and the PSOM from a 9-point calibration session.

    The calibration markers lie on the gaze plane, so each marker's (x, y)
    is the true 2D gaze point for both eyes.
    """
    cfg = stack.config
    frames = [f for f in calib.frames if f.scene_id == CALIBRATION_SCENE
              and (subject_id is None or f.subject_id == subject_id)]
    ids = sorted({f.subject_id for f in frames})
    if not frames:
        raise IncompleteCalibration("no calibration frames for this subject")
    if len(ids) != 1:
        raise IncompleteCalibration(f"calibration frames mix subjects {ids}; pass subject_id")
    ds = Dataset(frames, calib.subjects, calib.noise, calib.scenes, calib.frames_per_point)
    pairs = ds.pairs()
    _check_pairs_complete(frames, pairs)
    arr = PairArrays.from_pairs(pairs)
    if len(np.unique(arr.point_id)) < 9:
        raise IncompleteCalibration(f"need 9 calibration points, got {len(np.unique(arr.point_id))}")
    if np.any(np.abs(arr.target[:, 2] - cfg.plane.distance) > 1e-6):
        raise IncompleteCalibration("calibration markers must lie on the gaze plane")
    truth = arr.target[:, :2]
    raw, cal, polys = {}, {}, {}
    for side in SIDES:
        raw[side] = raw_plane_points(cfg, side, predict_directions(stack, side, arr.flat(side)))
        polys[side] = fit_poly_calibration(raw[side], truth)
        cal[side] = apply_poly(polys[side], raw[side])
    pre = float(np.mean([np.linalg.norm(raw[s] - truth, axis=1).mean() for s in SIDES]))
    post = float(np.mean([np.linalg.norm(cal[s] - truth, axis=1).mean() for s in SIDES]))
    coords, refs = [], []
    for pid in np.unique(arr.point_id):
        m = arr.point_id == pid
        coords.append(truth[m][0])
        refs.append(np.concatenate([cal["left"][m].mean(axis=0), cal["right"][m].mean(axis=0)]))
    net = psom_calibrate(np.array(coords), np.array(refs))
    return SubjectProfile(ids[0], polys["left"], polys["right"], net, pre, post)


def calibration_errors(stack: TrainedStack, profile: SubjectProfile, arr: PairArrays) -> tuple[float, float]:
    """Mean 2D error before and after calibration against the true plane hits, cm."""
    pre, post = [], []
    for side in SIDES:
        truth = true_plane_points(arr, side, stack.config.plane)
        raw = raw_plane_points(stack.config, side, predict_directions(stack, side, arr.flat(side)))
        pre.append(np.linalg.norm(raw - truth, axis=1))
        post.append(np.linalg.norm(apply_poly(profile.poly(side), raw) - truth, axis=1))
    return float(np.mean(pre)), float(np.mean(post))


# --------------------------------------------------------------------------
# Inference


@dataclass
class InferenceBatch:
    """Estimates and every intermediate for ``n`` frame pairs."""

    dir_raw: dict  # side -> (n, 3)
    p_raw: dict  # side -> (n, 2)
    p_cal: dict
    dir_cal: dict
    depth_features: np.ndarray  # (n, 7)
    plane_xy: np.ndarray  # PSOM output (X', Y') on the gaze plane
    psom_converged: np.ndarray
    psom_inside: np.ndarray
    z: np.ndarray  # depth in the scene's unit
    xyz_cm: np.ndarray  # (n, 3) 3D point of gaze, cm

    def __len__(self) -> int:
        return len(self.z)


@dataclass(frozen=True)
class PogEstimate:
    xyz: np.ndarray  # cm
    z_scene_unit: float
    rays: dict  # side -> calibrated direction
    points_2d: dict  # side -> calibrated 2D point
    depth_row: dict  # column name -> value
    psom_converged: bool


def depth_features_for(stack: TrainedStack, profile: SubjectProfile, arr: PairArrays,
                       background_depth: float, disparity_map: Optional[Callable] = None,
                       _gaze: Optional[dict] = None) -> tuple[np.ndarray, dict]:
    """Depth rows for frame pairs of one subject, plus the gaze intermediates."""
    cfg = stack.config
    dir_raw, p_raw, p_cal, dir_cal = {}, {}, {}, {}
    for side in SIDES:
        dir_raw[side] = predict_directions(stack, side, arr.flat(side))
        p_raw[side] = raw_plane_points(cfg, side, dir_raw[side])
        p_cal[side] = apply_poly(profile.poly(side), p_raw[side])
        dir_cal[side] = rays_through(cfg, side, p_cal[side])
    mid = 0.5 * (p_cal["left"] + p_cal["right"])
    if disparity_map is None:
        disp = marker_disparity_batch(arr.target, mid, background_depth, cfg.binocular,
                                      cfg.plane.distance, cfg.marker_radius)
    else:
        disp = np.array([disparity_map(float(x), float(y)) for x, y in mid])
    X = depth_feature_matrix(dir_cal["left"], dir_cal["right"], p_cal["left"], p_cal["right"],
                             arr.flat_l[:, 0], arr.flat_r[:, 0], arr.radius_l, arr.radius_r,
                             disp, cfg.rig.baseline_px)
    return X, {"dir_raw": dir_raw, "p_raw": p_raw, "p_cal": p_cal, "dir_cal": dir_cal}


def infer_batch(stack: TrainedStack, profile: SubjectProfile, arr: PairArrays, scene: str,
                disparity_map: Optional[Callable] = None) -> InferenceBatch:
    cfg = stack.config
    entry = stack.depth[scene]
    X, g = depth_features_for(stack, profile, arr, entry.background_depth, disparity_map)
    z = np.asarray(entry.model.predict(X), dtype=float)
    unit_scale = 0.01 if entry.unit == "m" else 1.0
    z_cm = z / unit_scale
    f_et = np.column_stack([g["p_cal"]["left"], g["p_cal"]["right"]])
    inv = [psom_invert(profile.psom, f, cfg.inversion) for f in f_et]
    plane_xy = np.array([r.s for r in inv])
    xyz = np.column_stack([plane_xy * (z_cm / cfg.plane.distance)[:, None], z_cm])
    return InferenceBatch(g["dir_raw"], g["p_raw"], g["p_cal"], g["dir_cal"], X, plane_xy,
                          np.array([r.converged for r in inv]), np.array([r.inside_hull for r in inv]), z, xyz)


def infer(stack: TrainedStack, profile: SubjectProfile, pair: tuple[EyeFrame, EyeFrame],
          scene: Optional[str] = None, disparity_map: Optional[Callable] = None) -> PogEstimate:
    """3D point of gaze for one frame pair, with its intermediates."""
    scene = scene or pair[0].scene_id
    b = infer_batch(stack, profile, PairArrays.from_pairs([pair]), scene, disparity_map)
    return PogEstimate(
        b.xyz_cm[0].copy(),
        float(b.z[0]),
        {s: b.dir_cal[s][0].copy() for s in SIDES},
        {s: b.p_cal[s][0].copy() for s in SIDES},
        dict(zip(DEPTH_COLUMNS, map(float, b.depth_features[0]))),
        bool(b.psom_converged[0]),
    )


# --------------------------------------------------------------------------
# Training


def _scene_pairs(ds: Dataset) -> dict:
    out: dict = {}
    for pair in ds.pairs():
        out.setdefault(pair[0].scene_id, []).append(pair)
    return out


def train(dataset: Dataset, config: PipelineConfig = PipelineConfig()) -> TrainedStack:
    """Train the gaze SVRs on every frame, then a depth regressor per scene.

    Depth rows come from each training subject's own calibrated gaze, so the
    depth model sees the same feature distribution it will see at test time.
    """
    by_scene = _scene_pairs(dataset)
    scenes = sorted(s for s in by_scene if s != CALIBRATION_SCENE)
    if not scenes:
        raise InsufficientDepthVariation("dataset has no test-scene frames to learn depth from")
    for s in scenes:
        depths = np.unique(np.round([p[0].true_target[2] for p in by_scene[s]], 9))
        if len(depths) < 2:
            raise InsufficientDepthVariation(f"scene {s!r} covers a single depth ({depths[0]} cm)")
    subjects = tuple(dataset.subject_ids)
    log.info("training on subjects %s", list(subjects))
    all_pairs = [p for s in sorted(by_scene) for p in by_scene[s]]
    gaze = train_gaze_models(PairArrays.from_pairs(all_pairs), config)
    stack = TrainedStack(config, gaze, {}, subjects, scenes={k: dataset.scenes[k] for k in sorted(dataset.scenes)})

    profiles = {sid: calibrate_subject(stack, dataset, sid) for sid in subjects}
    for s in scenes:
        spec: SceneSpec = dataset.scenes[s]
        arr = PairArrays.from_pairs(by_scene[s])
        rows, labels = [], []
        for sid in subjects:
            m = arr.subject_id == sid
            if not m.any():
                continue
            X, _ = depth_features_for(stack, profiles[sid], arr.subset(m), spec.background_depth)
            rows.append(X)
        X = np.vstack(rows)
        keep = np.concatenate([np.flatnonzero(arr.subject_id == sid) for sid in subjects])
        z = arr.target[keep, 2] * spec.unit_scale
        table = DepthTable(X, z, spec.depth_unit, arr.point_id[keep], arr.subject_id[keep])
        stack.depth_tables[s] = table
        stack.depth[s] = fit_depth_entry(table, config, spec.background_depth)
    return stack


def fit_depth_entry(table: DepthTable, config: PipelineConfig, background_depth: float) -> DepthEntry:
    kinds = MODEL_KINDS if config.depth_model == "auto" else (config.depth_model,)
    fitted, reports = {}, {}
    for kind in kinds:
        model, rep = train_depth_model(table.X, table.z, kind, config.cv_folds, config.seed,
                                       config.depth_configs[kind])
        fitted[kind], reports[kind] = model, rep
    best = select_best(reports)
    log.info("depth model %s selected (mean CV R2 %.4f)", best, reports[best].mean_r2)
    return DepthEntry(best, fitted[best], table.unit, reports, background_depth)


# --------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalReport:
    scene: str
    unit: str  # depth unit; X/Y errors are always cm
    subjects: tuple[int, ...]
    n_pairs: int
    error_2d_pre_cm: float
    error_2d_post_cm: float
    error_2d_pre_deg: float
    error_2d_post_deg: float
    per_plane: list  # dicts: plane, n, x_err, x_std, y_err, y_std (cm)
    per_point: list  # dicts: subject_id, point_id, x_err, y_err (cm), z_err (unit)
    x_mae_cm: float
    y_mae_cm: float
    depth_mae: float
    depth_mse: float
    depth_r2: float
    depth_error: float  # mean |average predicted depth per point - truth|
    euclid_x: float  # component MAEs in the depth unit
    euclid_y: float
    euclid_z: float
    euclidean_3d: float
    psom_nonconverged: int = 0
    depth_model: str = ""

    def recompute_euclidean(self) -> float:
        return math.sqrt(self.euclid_x ** 2 + self.euclid_y ** 2 + self.euclid_z ** 2)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v, tuple) else v)
                for f in dataclasses.fields(self) for v in [getattr(self, f.name)]}

    def to_json(self) -> str:
        return _dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["subjects"] = tuple(d["subjects"])
        return cls(**d)

    def plane_table_csv(self) -> str:
        lines = ["plane,n,x_err_cm,x_std_cm,y_err_cm,y_std_cm"]
        for p in self.per_plane:
            lines.append(f"{p['plane']},{p['n']},{p['x_err']!r},{p['x_std']!r},{p['y_err']!r},{p['y_std']!r}")
        return "\n".join(lines) + "\n"

    def point_table_csv(self) -> str:
        lines = [f"subject_id,point_id,x_err_cm,y_err_cm,z_err_{self.unit}"]
        for p in self.per_point:
            lines.append(f"{p['subject_id']},{p['point_id']},{p['x_err']!r},{p['y_err']!r},{p['z_err']!r}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        keys = ["error_2d_pre_cm", "error_2d_post_cm", "error_2d_pre_deg", "error_2d_post_deg", "x_mae_cm",
                "y_mae_cm", "depth_mae", "depth_mse", "depth_r2", "depth_error", "euclid_x", "euclid_y",
                "euclid_z", "euclidean_3d", "psom_nonconverged"]
        lines = ["metric,value"] + [f"{k},{getattr(self, k)!r}" for k in keys]
        return "\n".join(lines) + "\n"


def pog_metrics(est_xyz_cm, true_xyz_cm, z_est, z_true, point_id, subject_id, plane_index, unit: str) -> dict:
    """Error breakdowns for 3D estimates against ground truth.

    X and Y errors are in cm; depth errors are in ``unit``. The Euclidean
    total combines the three component mean absolute errors after expressing
    X and Y in ``unit`` as well.
    """
    est = np.atleast_2d(est_xyz_cm)
    true = np.atleast_2d(true_xyz_cm)
    z_est = np.asarray(z_est, dtype=float)
    z_true = np.asarray(z_true, dtype=float)
    ex = np.abs(est[:, 0] - true[:, 0])
    ey = np.abs(est[:, 1] - true[:, 1])
    ez = np.abs(z_est - z_true)
    scale = 0.01 if unit == "m" else 1.0

    per_plane = []
    for plane in sorted(set(int(v) for v in plane_index)):
        m = plane_index == plane
        subj_x = [ex[m & (subject_id == s)].mean() for s in sorted(set(subject_id[m]))]
        subj_y = [ey[m & (subject_id == s)].mean() for s in sorted(set(subject_id[m]))]
        per_plane.append({"plane": plane, "n": int(m.sum()),
                          "x_err": float(ex[m].mean()), "x_std": float(np.std(subj_x)),
                          "y_err": float(ey[m].mean()), "y_std": float(np.std(subj_y))})
    per_point = []
    depth_err = []
    for s in sorted(set(int(v) for v in subject_id)):
        for p in sorted(set(int(v) for v in point_id[subject_id == s])):
            m = (subject_id == s) & (point_id == p)
            avg_err = abs(float(z_est[m].mean()) - float(z_true[m].mean()))
            depth_err.append(avg_err)
            per_point.append({"subject_id": s, "point_id": p, "x_err": float(ex[m].mean()),
                              "y_err": float(ey[m].mean()), "z_err": avg_err})
    x_mae, y_mae, z_mae = float(ex.mean()), float(ey.mean()), float(ez.mean())
    cx, cy, cz = x_mae * scale, y_mae * scale, z_mae
    return {
        "per_plane": per_plane,
        "per_point": per_point,
        "x_mae_cm": x_mae,
        "y_mae_cm": y_mae,
        "depth_mae": mae(z_true, z_est),
        "depth_mse": mse(z_true, z_est),
        "depth_r2": r2(z_true, z_est),
        "depth_error": float(np.mean(depth_err)),
        "euclid_x": cx,
        "euclid_y": cy,
        "euclid_z": cz,
        "euclidean_3d": math.sqrt(cx * cx + cy * cy + cz * cz),
    }


def evaluate(stack: TrainedStack, profiles: Mapping[int, SubjectProfile], test_dataset: Dataset,
             scene: Optional[str] = None) -> EvalReport:
    test_ids = set(test_dataset.subject_ids)
    overlap = sorted(test_ids & set(stack.train_subjects))
    if overlap:
        raise SubjectOverlap(f"subjects {overlap} were used for training")
    by_scene = _scene_pairs(test_dataset)
    scenes = [s for s in sorted(by_scene) if s != CALIBRATION_SCENE]
    if scene is None:
        if len(scenes) != 1:
            raise ValueError(f"test dataset holds scenes {scenes}; pass scene=")
        scene = scenes[0]
    if scene not in stack.depth:
        raise ValueError(f"no depth model trained for scene {scene!r}")
    log.info("evaluating subjects %s on %s", sorted(test_ids), scene)
    spec = test_dataset.scenes[scene]
    arr = PairArrays.from_pairs(by_scene[scene])
    est = np.empty((len(arr), 3))
    z_est = np.empty(len(arr))
    pre, post, nonconv = [], [], 0
    for sid in sorted(set(int(v) for v in arr.subject_id)):
        if sid not in profiles:
            raise IncompleteCalibration(f"no calibration profile for subject {sid}")
        m = arr.subject_id == sid
        sub = arr.subset(m)
        b = infer_batch(stack, profiles[sid], sub, scene)
        est[m] = b.xyz_cm
        z_est[m] = b.z
        nonconv += int((~b.psom_converged).sum())
        for side in SIDES:
            truth = true_plane_points(sub, side, stack.config.plane)
            pre.append(np.linalg.norm(b.p_raw[side] - truth, axis=1))
            post.append(np.linalg.norm(b.p_cal[side] - truth, axis=1))
    plane_of = {tp.id: tp.plane_index for tp in spec.test_points}
    planes = np.array([plane_of[int(p)] for p in arr.point_id])
    met = pog_metrics(est, arr.target, z_est, arr.target[:, 2] * spec.unit_scale,
                      arr.point_id, arr.subject_id, planes, spec.depth_unit)
    pre_cm = float(np.mean(np.concatenate(pre)))
    post_cm = float(np.mean(np.concatenate(post)))
    to_deg = lambda cm: math.degrees(math.atan(cm / stack.config.angular_distance_cm))
    return EvalReport(scene, spec.depth_unit, tuple(sorted(test_ids)), len(arr), pre_cm, post_cm,
                      to_deg(pre_cm), to_deg(post_cm), psom_nonconverged=nonconv,
                      depth_model=stack.depth[scene].kind, **met)


def calibrate_all(stack: TrainedStack, calib: Dataset) -> dict:
    return {sid: calibrate_subject(stack, calib, sid) for sid in calib.subject_ids}


# --------------------------------------------------------------------------
# Bundles


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _cv_from_dict(d: dict) -> CvReport:
    folds = tuple(FoldScore(**f) for f in d["folds"])
    return CvReport(d["model"], folds, int(d["seed"]), np.array(d.get("assignment", []), dtype=int))


def save_bundle(stack: TrainedStack, directory: str) -> dict:
    """Write the stack as JSON per component plus a manifest of content hashes."""
    os.makedirs(directory, exist_ok=True)
    files = {
        "config.json": _dumps(stack.config.to_dict()),
        "gaze_left.json": _dumps(stack.gaze["left"].to_dict()),
        "gaze_right.json": _dumps(stack.gaze["right"].to_dict()),
        "scenes.json": _dumps({k: v.to_dict() for k, v in sorted(stack.scenes.items())}),
    }
    for s, entry in sorted(stack.depth.items()):
        files[f"depth_{s}.json"] = _dumps({
            "kind": entry.kind, "unit": entry.unit, "background_depth": entry.background_depth,
            "model": entry.model.to_dict(),
            "reports": {k: {**r.to_dict(), "assignment": r.assignment.tolist()} for k, r in sorted(entry.reports.items())},
        })
        files[f"depth_{s}_cv.csv"] = comparison_csv(entry.reports, unit=entry.unit)
        if s in stack.depth_tables:
            files[f"depth_{s}_rows.csv"] = stack.depth_tables[s].to_csv()
    for name, text in files.items():
        _write(os.path.join(directory, name), text)
    manifest = {
        "config_hash": stack.config.config_hash(),
        "train_subjects": list(stack.train_subjects),
        "scenes": sorted(stack.depth),
        "files": {name: _sha256(os.path.join(directory, name)) for name in sorted(files)},
    }
    _write(os.path.join(directory, "manifest.json"), _dumps(manifest))
    return manifest


def load_bundle(directory: str) -> TrainedStack:
    mpath = os.path.join(directory, "manifest.json")
    if not os.path.exists(mpath):
        raise MissingInput(f"no model bundle at {directory} (missing manifest.json)")
    with open(mpath) as fh:
        manifest = json.load(fh)
    for name, digest in manifest["files"].items():
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise MissingInput(f"bundle file {path} is missing")
        if _sha256(path) != digest:
            raise MissingInput(f"bundle file {path} does not match its manifest hash")

    def read(name):
        with open(os.path.join(directory, name)) as fh:
            return fh.read()

    config = PipelineConfig.from_dict(json.loads(read("config.json")))
    gaze = {side: MultiOutputSvr.from_dict(json.loads(read(f"gaze_{side}.json"))) for side in SIDES}
    scenes = {k: SceneSpec.from_dict(v) for k, v in json.loads(read("scenes.json")).items()}
    depth, tables = {}, {}
    for s in manifest["scenes"]:
        d = json.loads(read(f"depth_{s}.json"))
        reports = {k: _cv_from_dict(v) for k, v in d["reports"].items()}
        depth[s] = DepthEntry(d["kind"], model_from_dict(d["model"]), d["unit"], reports, float(d["background_depth"]))
        if f"depth_{s}_rows.csv" in manifest["files"]:
            tables[s] = DepthTable.from_csv(read(f"depth_{s}_rows.csv"))
    return TrainedStack(config, gaze, depth, tuple(manifest["train_subjects"]), tables, scenes)


def save_profiles(profiles: Mapping[int, SubjectProfile], path: str) -> None:
    _write(path, _dumps({str(k): profiles[k].to_dict() for k in sorted(profiles)}))


def load_profiles(path: str) -> dict:
    if not os.path.exists(path):
        raise MissingInput(f"no subject profiles at {path}")
    with open(path) as fh:
        d = json.load(fh)
    return {int(k): SubjectProfile.from_dict(v) for k, v in d.items()}
