"""Per-eye gaze features built from eye-region landmarks.

Landmark naming: ``o`` is the pupil center, ``a``..``h`` the eight eyelid points
(``a`` the inner corner, then clockwise in the image), ``m``/``n`` the two lower
corneal reflections and ``p``/``q`` the two upper ones, which the upper eyelid
may hide on downward gaze. ``p`` and ``q`` never enter the feature set.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import DegenerateLandmarks

EYELID_NAMES = ("a", "b", "c", "d", "e", "f", "g", "h")
REFLECTION_NAMES = ("m", "n", "p", "q")
LANDMARK_NAMES = ("o",) + EYELID_NAMES + REFLECTION_NAMES

FEATURE_NAMES = tuple(f"v_o{k}" for k in EYELID_NAMES + ("m", "n")) + ("theta1", "theta2", "theta3")
FEATURE_COLUMNS = tuple(
    f"{name}_{axis}" for name in FEATURE_NAMES[:10] for axis in ("x", "y")
) + FEATURE_NAMES[10:]

_COINCIDE_EPS = 1e-9


@dataclass(frozen=True)
class LandmarkSet:
    o: np.ndarray
    eyelid: np.ndarray  # (8, 2) in a..h order
    m: np.ndarray
    n: np.ndarray
    p: Optional[np.ndarray]
    q: Optional[np.ndarray]
    pupil_radius: Optional[float]

    def __post_init__(self):
        object.__setattr__(self, "o", np.asarray(self.o, dtype=float).reshape(2))
        object.__setattr__(self, "eyelid", np.asarray(self.eyelid, dtype=float).reshape(8, 2))
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float).reshape(2))
        object.__setattr__(self, "n", np.asarray(self.n, dtype=float).reshape(2))
        for name in ("p", "q"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).reshape(2))

    def __getitem__(self, name: str) -> Optional[np.ndarray]:
        if name in EYELID_NAMES:
            return self.eyelid[EYELID_NAMES.index(name)]
        return getattr(self, name)

    @property
    def reflections_visible(self) -> bool:
        return self.p is not None and self.q is not None

    def translated(self, offset) -> "LandmarkSet":
        offset = np.asarray(offset, dtype=float)
        return LandmarkSet(
            self.o + offset,
            self.eyelid + offset,
            self.m + offset,
            self.n + offset,
            None if self.p is None else self.p + offset,
            None if self.q is None else self.q + offset,
            self.pupil_radius,
        )

    def as_flat(self) -> np.ndarray:
        """26 landmark scalars in ``LANDMARK_NAMES`` order; hidden points are NaN."""
        nan2 = np.full(2, np.nan)
        parts = [self.o, self.eyelid.ravel(), self.m, self.n,
                 nan2 if self.p is None else self.p, nan2 if self.q is None else self.q]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, values, pupil_radius: Optional[float]) -> "LandmarkSet":
        v = np.asarray(values, dtype=float)
        p = None if np.isnan(v[22:24]).any() else v[22:24]
        q = None if np.isnan(v[24:26]).any() else v[24:26]
        return cls(v[0:2], v[2:18].reshape(8, 2), v[18:20], v[20:22], p, q, pupil_radius)


@dataclass(frozen=True)
class FeatureVector13:
    displacements: np.ndarray  # (10, 2): v_oa..v_oh, v_om, v_on
    theta1: float
    theta2: float
    theta3: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.displacements.ravel(), [self.theta1, self.theta2, self.theta3]])

    def __len__(self) -> int:
        return len(FEATURE_NAMES)

    def named(self) -> dict:
        out = {name: self.displacements[i].copy() for i, name in enumerate(FEATURE_NAMES[:10])}
        out.update(theta1=self.theta1, theta2=self.theta2, theta3=self.theta3)
        return out


def _angle_deg(u: np.ndarray, v: np.ndarray) -> float:
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.degrees(math.acos(max(-1.0, min(1.0, float(c)))))


def extract_features(lm: LandmarkSet) -> FeatureVector13:
    """Pupil-relative displacement vectors plus the three landmark angles.

    theta1 is the inner-corner angle at ``a`` between ``a->b`` and ``a->h``,
    theta2 the outer-corner angle at ``e`` between ``e->d`` and ``e->f``, and
    theta3 the angle between ``o->m`` and ``o->n``.
    """
    points = np.vstack([lm.eyelid, lm.m, lm.n])
    disp = points - lm.o
    dist = np.linalg.norm(disp, axis=1)
    if np.any(dist < _COINCIDE_EPS):
        bad = [(EYELID_NAMES + ("m", "n"))[i] for i in np.flatnonzero(dist < _COINCIDE_EPS)]
        raise DegenerateLandmarks(f"landmarks coincide with the pupil center: {bad}")
    if not np.all(np.isfinite(disp)):
        raise DegenerateLandmarks("non-finite landmark coordinates")
    a, b, d, e, f, h = (lm.eyelid[i] for i in (0, 1, 3, 4, 5, 7))
    for vertex, arm in ((a, b), (a, h), (e, d), (e, f)):
        if np.linalg.norm(arm - vertex) < _COINCIDE_EPS:
            raise DegenerateLandmarks("eyelid corner coincides with a neighbouring eyelid point")
    theta1 = _angle_deg(b - a, h - a)
    theta2 = _angle_deg(d - e, f - e)
    theta3 = _angle_deg(disp[8], disp[9])
    return FeatureVector13(disp, theta1, theta2, theta3)


def feature_matrix(landmarks: Iterable[LandmarkSet]) -> np.ndarray:
    rows = [extract_features(lm).as_array() for lm in landmarks]
    if not rows:
        return np.empty((0, len(FEATURE_COLUMNS)))
    return np.vstack(rows)


def features_from_flat(flat: np.ndarray) -> np.ndarray:
    """Vectorized :func:`extract_features` over an ``(n, 26)`` landmark array."""
    flat = np.atleast_2d(np.asarray(flat, dtype=float))
    o = flat[:, 0:2]
    pts = flat[:, 2:22].reshape(-1, 10, 2)
    disp = pts - o[:, None, :]
    if np.any(np.linalg.norm(disp, axis=2) < _COINCIDE_EPS):
        raise DegenerateLandmarks("landmarks coincide with the pupil center")

    def angle(u, v):
        c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))

    lid = pts[:, :8, :]
    theta1 = angle(lid[:, 1] - lid[:, 0], lid[:, 7] - lid[:, 0])
    theta2 = angle(lid[:, 3] - lid[:, 4], lid[:, 5] - lid[:, 4])
    theta3 = angle(disp[:, 8], disp[:, 9])
    return np.column_stack([disp.reshape(-1, 20), theta1, theta2, theta3])


def write_feature_csv(features: np.ndarray, fh=None) -> str:
    """Write an ``(n, 23)`` feature matrix with the fixed header; returns the text."""
    features = np.atleast_2d(features)
    if features.shape[1] != len(FEATURE_COLUMNS):
        raise ValueError(f"expected {len(FEATURE_COLUMNS)} columns, got {features.shape[1]}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_COLUMNS)
    for row in features:
        w.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_feature_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != FEATURE_COLUMNS:
        raise ValueError("feature CSV header does not match the fixed 23-column layout")
    return np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(FEATURE_COLUMNS))
