"""Deterministic binocular eye-landmark simulator.

The eye camera is modelled as a linear map from eye rotation to pupil-center
displacement in the image (``camera_scale`` pixels per degree). Eyelid points
sit at fixed subject-specific offsets from the eye-image center, and corneal
reflections follow the pupil at a tenth of its displacement.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import TargetBehindEyes
from .eyefeatures import LandmarkSet
from .geometry import (
    CameraRig,
    GazeRay,
    SceneSpec,
    eye_ray,
    gaze_angles,
    vec3,
)

SIDES = ("left", "right")
REFLECTION_GAIN = 0.1
PUPIL_REFERENCE_DEPTH = 15.0  # cm
PUPIL_RADIUS_MM = (1.0, 3.0)  # 2-6 mm diameter band

# Left-eye eyelid outline (pixels from the eye-image center, image y down):
# a inner corner, then clockwise. The right eye is the mirror image.
CANONICAL_EYELID = np.array([
    [600.0, 0.0],
    [300.0, 220.0],
    [0.0, 260.0],
    [-300.0, 200.0],
    [-600.0, 0.0],
    [-300.0, -280.0],
    [0.0, -330.0],
    [300.0, -290.0],
])
# m, n (lower), p, q (upper)
CANONICAL_REFLECTIONS = np.array([
    [-200.0, 150.0],
    [200.0, 150.0],
    [-200.0, -150.0],
    [200.0, -150.0],
])

DEFAULT_RIG = CameraRig()


@dataclass(frozen=True)
class SubjectParams:
    subject_id: int
    ipd: float = 6.0
    eyeball_radius: float = 1.2
    pupil_radius_base: float = 2.4  # mm at 15 cm fixation
    pupil_depth_gain: float = 0.35  # mm per natural-log unit of depth
    eyelid_shape: np.ndarray = field(default_factory=lambda: CANONICAL_EYELID.copy())
    reflection_offsets: np.ndarray = field(default_factory=lambda: CANONICAL_REFLECTIONS.copy())
    camera_scale: float = 6.0  # px / degree
    eye_px_per_cm: float = 400.0

    def __post_init__(self):
        object.__setattr__(self, "eyelid_shape", np.asarray(self.eyelid_shape, dtype=float).reshape(8, 2))
        object.__setattr__(self, "reflection_offsets", np.asarray(self.reflection_offsets, dtype=float).reshape(4, 2))
        if not (self.ipd > 0 and self.eyeball_radius > 0 and self.camera_scale > 0):
            raise ValueError("ipd, eyeball_radius and camera_scale must be positive")

    def eye_center(self, side: str) -> np.ndarray:
        sign = -1.0 if side == "left" else 1.0
        return vec3(sign * self.ipd / 2.0, 0.0, 0.0)

    def image_center(self, side: str, rig: CameraRig = DEFAULT_RIG) -> np.ndarray:
        cam_x = rig.camera_x[0] if side == "left" else rig.camera_x[1]
        offset = (self.eye_center(side)[0] - cam_x) * self.eye_px_per_cm
        return rig.image_center + np.array([offset, 0.0])

    def pupil_radius_mm(self, depth: float) -> float:
        r = self.pupil_radius_base - self.pupil_depth_gain * math.log(depth / PUPIL_REFERENCE_DEPTH)
        return min(max(r, PUPIL_RADIUS_MM[0]), PUPIL_RADIUS_MM[1])

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "ipd": self.ipd,
            "eyeball_radius": self.eyeball_radius,
            "pupil_radius_base": self.pupil_radius_base,
            "pupil_depth_gain": self.pupil_depth_gain,
            "eyelid_shape": self.eyelid_shape.tolist(),
            "reflection_offsets": self.reflection_offsets.tolist(),
            "camera_scale": self.camera_scale,
            "eye_px_per_cm": self.eye_px_per_cm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubjectParams":
        return cls(**{**d, "eyelid_shape": np.array(d["eyelid_shape"]),
                      "reflection_offsets": np.array(d["reflection_offsets"])})


@dataclass(frozen=True)
class NoiseSpec:
    landmark_sigma: float = 0.0
    reflection_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.landmark_sigma < 0:
            raise ValueError("landmark_sigma must be >= 0")
        if not 0.0 <= self.reflection_dropout <= 1.0:
            raise ValueError("reflection_dropout must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"landmark_sigma": self.landmark_sigma, "reflection_dropout": self.reflection_dropout,
                "seed": self.seed}


@dataclass(frozen=True)
class EyeFrame:
    subject_id: int
    scene_id: str
    point_id: int
    eye: str
    landmarks: LandmarkSet
    true_gaze: GazeRay
    true_target: np.ndarray
    timestamp_index: int


def make_subject(subject_id: int, seed: int) -> SubjectParams:
    """Draw one subject's anatomy and camera jitter from ``(seed, subject_id)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B1EC7, subject_id]))
    return SubjectParams(
        subject_id=subject_id,
        ipd=float(np.clip(rng.normal(6.0, 0.25), 5.4, 6.8)),
        eyeball_radius=float(np.clip(rng.normal(1.2, 0.04), 1.05, 1.35)),
        pupil_radius_base=float(np.clip(rng.normal(2.4, 0.2), 1.9, 2.9)),
        pupil_depth_gain=float(np.clip(rng.normal(0.35, 0.05), 0.2, 0.5)),
        eyelid_shape=CANONICAL_EYELID + rng.normal(0.0, 12.0, size=(8, 2)),
        reflection_offsets=CANONICAL_REFLECTIONS + rng.normal(0.0, 6.0, size=(4, 2)),
        camera_scale=float(6.0 * (1.0 + rng.normal(0.0, 0.04))),
        eye_px_per_cm=float(400.0 * (1.0 + rng.normal(0.0, 0.02))),
    )


def make_subjects(n: int, seed: int) -> list[SubjectParams]:
    return [make_subject(i, seed) for i in range(n)]


def render_landmarks(subject: SubjectParams, eye: str, target, reflection_dropout: float = 0.0,
                     rng: Optional[np.random.Generator] = None, rig: CameraRig = DEFAULT_RIG) -> LandmarkSet:
    """Noise-free landmarks for ``eye`` fixating ``target``.

    On downward gaze the upper reflections ``p``/``q`` are hidden with
    probability ``reflection_dropout`` (always when it is 1).
    """
    if eye not in SIDES:
        raise ValueError(f"eye must be 'left' or 'right', got {eye!r}")
    target = np.asarray(target, dtype=float)
    center3 = subject.eye_center(eye)
    if target[2] <= center3[2]:
        raise TargetBehindEyes(f"target {target} is not in front of the eyes")
    yaw, pitch = gaze_angles(target - center3)
    disp = subject.camera_scale * np.array([yaw, -pitch])
    c = subject.image_center(eye, rig)
    mirror = np.array([1.0, 1.0]) if eye == "left" else np.array([-1.0, 1.0])
    eyelid = c + subject.eyelid_shape * mirror
    refl = c + subject.reflection_offsets + REFLECTION_GAIN * disp
    hidden = False
    if pitch < 0 and reflection_dropout > 0:
        hidden = reflection_dropout >= 1.0 or (rng is not None and rng.random() < reflection_dropout)
    radius_px = subject.pupil_radius_mm(target[2]) / 10.0 * subject.eye_px_per_cm
    return LandmarkSet(
        o=c + disp,
        eyelid=eyelid,
        m=refl[0],
        n=refl[1],
        p=None if hidden else refl[2],
        q=None if hidden else refl[3],
        pupil_radius=radius_px,
    )


def invert_pupil_displacement(subject: SubjectParams, eye: str, lm: LandmarkSet,
                              rig: CameraRig = DEFAULT_RIG) -> tuple[float, float]:
    """Recover (yaw, pitch) from a noise-free pupil center; inverse of the camera model."""
    d = (lm.o - subject.image_center(eye, rig)) / subject.camera_scale
    return float(d[0]), float(-d[1])


def _add_noise(lm: LandmarkSet, sigma: float, rng: np.random.Generator) -> LandmarkSet:
    if sigma == 0:
        return lm
    noisy = lambda v: None if v is None else v + rng.normal(0.0, sigma, size=2)
    return LandmarkSet(
        o=lm.o + rng.normal(0.0, sigma, size=2),
        eyelid=lm.eyelid + rng.normal(0.0, sigma, size=(8, 2)),
        m=noisy(lm.m),
        n=noisy(lm.n),
        p=noisy(lm.p),
        q=noisy(lm.q),
        pupil_radius=max(lm.pupil_radius + rng.normal(0.0, sigma), 1e-3),
    )


def frame_rng(seed: int, subject_id: int, scene_id: str, point_id: int, frame_index: int) -> np.random.Generator:
    scene_key = sum((i + 1) * ord(ch) for i, ch in enumerate(scene_id))
    return np.random.default_rng(np.random.SeedSequence([seed, subject_id, scene_key, point_id, frame_index]))


# --------------------------------------------------------------------------
# Datasets

LANDMARK_COLUMNS = tuple(
    f"{name}_{axis}" for name in ("o", "a", "b", "c", "d", "e", "f", "g", "h", "m", "n", "p", "q")
    for axis in ("x", "y")
)
CSV_COLUMNS = (
    ("subject_id", "scene_id", "point_id", "eye", "timestamp_index")
    + LANDMARK_COLUMNS
    + ("p_visible", "q_visible", "pupil_radius", "gaze_dx", "gaze_dy", "gaze_dz",
       "target_x", "target_y", "target_z")
)


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class Dataset:
    """Labeled eye frames plus the subjects, noise and scenes that produced them."""

    frames: list[EyeFrame]
    subjects: dict[int, SubjectParams]
    noise: NoiseSpec
    scenes: dict[str, SceneSpec]
    frames_per_point: int = 4

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def subject_ids(self) -> list[int]:
        return sorted({f.subject_id for f in self.frames})

    def select(self, subject_ids: Optional[Iterable[int]] = None, scene_id: Optional[str] = None) -> "Dataset":
        keep = None if subject_ids is None else set(subject_ids)
        frames = [f for f in self.frames
                  if (keep is None or f.subject_id in keep) and (scene_id is None or f.scene_id == scene_id)]
        subjects = {k: v for k, v in self.subjects.items() if keep is None or k in keep}
        return Dataset(frames, subjects, self.noise, dict(self.scenes), self.frames_per_point)

    def pairs(self) -> list[tuple[EyeFrame, EyeFrame]]:
        """Left/right frame pairs in generation order."""
        left = {}
        out = []
        for f in self.frames:
            key = (f.subject_id, f.scene_id, f.point_id, f.timestamp_index)
            if f.eye == "left":
                left[key] = f
        for f in self.frames:
            if f.eye == "right":
                key = (f.subject_id, f.scene_id, f.point_id, f.timestamp_index)
                if key in left:
                    out.append((left[key], f))
        return out

    def merge(self, other: "Dataset") -> "Dataset":
        subjects = {**self.subjects, **other.subjects}
        scenes = {**self.scenes, **other.scenes}
        return Dataset(self.frames + other.frames, subjects, self.noise, scenes, self.frames_per_point)

    # -- serialization ----------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for f in self.frames:
            lm = f.landmarks
            flat = lm.as_flat()
            cells = ["" if math.isnan(v) else _fmt(v) for v in flat]
            w.writerow(
                [f.subject_id, f.scene_id, f.point_id, f.eye, f.timestamp_index]
                + cells
                + [int(lm.p is not None), int(lm.q is not None), _fmt(lm.pupil_radius)]
                + [_fmt(v) for v in f.true_gaze.direction]
                + [_fmt(v) for v in f.true_target]
            )
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "frames_per_point": self.frames_per_point,
            "noise": self.noise.to_dict(),
            "subjects": [self.subjects[k].to_dict() for k in sorted(self.subjects)],
            "scenes": {k: self.scenes[k].to_dict() for k in sorted(self.scenes)},
            "units": {"landmarks": "px", "target": "cm",
                      "depth_label": {k: self.scenes[k].depth_unit for k in sorted(self.scenes)}},
        }

    def save(self, csv_path, json_path) -> None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.to_csv())
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, csv_path, json_path) -> "Dataset":
        with open(json_path) as fh:
            meta = json.load(fh)
        subjects = {d["subject_id"]: SubjectParams.from_dict(d) for d in meta["subjects"]}
        scenes = {k: SceneSpec.from_dict(v) for k, v in meta["scenes"].items()}
        noise = NoiseSpec(**meta["noise"])
        frames = []
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"{csv_path}: unexpected dataset header")
            for row in reader:
                sid, scene_id, pid, eye, ts = int(row[0]), row[1], int(row[2]), row[3], int(row[4])
                flat = np.array([float(v) if v != "" else np.nan for v in row[5:31]])
                radius = float(row[33])
                lm = LandmarkSet.from_flat(flat, radius)
                direction = np.array([float(v) for v in row[34:37]])
                target = np.array([float(v) for v in row[37:40]])
                subj = subjects[sid]
                origin = subj.eye_center(eye) + subj.eyeball_radius * direction
                ray = GazeRay(origin, direction)
                object.__setattr__(ray, "direction", direction)  # already unit; keep the stored bits
                frames.append(EyeFrame(sid, scene_id, pid, eye, lm, ray, target, ts))
        return cls(frames, subjects, noise, scenes, int(meta["frames_per_point"]))


def generate_session(scene: SceneSpec, subject: SubjectParams, noise: NoiseSpec,
                     frames_per_point: int = 4, rig: CameraRig = DEFAULT_RIG) -> Dataset:
    """Render ``frames_per_point`` noisy left/right frame pairs for every test point.

    Each frame pair draws from its own RNG stream keyed on
    ``(seed, subject, scene, point, frame)``, so output does not depend on the
    order in which points are generated.
    """
    if frames_per_point < 1:
        raise ValueError("frames_per_point must be >= 1")
    frames = []
    ts = 0
    for tp in scene.test_points:
        target = tp.position
        for k in range(frames_per_point):
            rng = frame_rng(noise.seed, subject.subject_id, scene.name, tp.id, k)
            for side in SIDES:
                clean = render_landmarks(subject, side, target, noise.reflection_dropout, rng, rig)
                lm = _add_noise(clean, noise.landmark_sigma, rng)
                ray = eye_ray(subject.eye_center(side), target, subject.eyeball_radius)
                frames.append(EyeFrame(subject.subject_id, scene.name, tp.id, side, lm, ray, target.copy(), ts))
            ts += 1
    return Dataset(frames, {subject.subject_id: subject}, noise, {scene.name: scene}, frames_per_point)


def generate_cohort(scenes: Sequence[SceneSpec], subjects: Sequence[SubjectParams], noise: NoiseSpec,
                    frames_per_point: int = 4) -> Dataset:
    """Sessions for every subject and scene, concatenated subject-major."""
    out: Optional[Dataset] = None
    for subject in subjects:
        for scene in scenes:
            ds = generate_session(scene, subject, noise, frames_per_point)
            out = ds if out is None else out.merge(ds)
    if out is None:
        raise ValueError("need at least one subject and one scene")
    return out


def iter_pair_arrays(pairs: Sequence[tuple[EyeFrame, EyeFrame]]) -> Iterator[tuple[str, np.ndarray]]:
    for side, idx in (("left", 0), ("right", 1)):
        yield side, np.vstack([p[idx].landmarks.as_flat() for p in pairs])
