"""Binocular viewing geometry.

World frame: origin at the midpoint between the two eyeball rotation centers,
+x toward the viewer's right, +y up, +z toward the display. All lengths are
centimeters and all angles are degrees unless a name says otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    NonPositiveDepth,
    PlaneBehindRay,
    RayParallelToPlane,
    RaysParallel,
)

DEFAULT_IPD = 6.0
DEFAULT_PLANE_DISTANCE = 35.0
DEFAULT_EYEBALL_RADIUS = 1.2

_PARALLEL_EPS = 1e-12


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=float)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError(f"cannot normalize vector {v!r}")
    return v / n


@dataclass(frozen=True)
class GazeRay:
    """A ray starting at a pupil center with a unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        direction = normalize(np.asarray(self.direction, dtype=float).reshape(3))
        if not np.all(np.isfinite(origin)):
            raise ValueError("ray origin must be finite")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction

    @classmethod
    def through(cls, origin, point) -> "GazeRay":
        return cls(np.asarray(origin, dtype=float), np.asarray(point, dtype=float) - origin)


@dataclass(frozen=True)
class GazePlane:
    """Virtual display plane ``z = distance`` on which 2D gaze is measured.

    Pixel coordinates have their origin at the top-left corner of the plane,
    with ``u`` growing to the right and ``v`` growing downward.
    """

    distance: float = DEFAULT_PLANE_DISTANCE
    width: float = 48.0
    height: float = 27.0
    pixel_resolution: tuple[int, int] = (1920, 1080)
    pixels_per_cm: float = 40.0

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("plane distance must be positive")
        if not self.pixels_per_cm > 0:
            raise ValueError("pixels_per_cm must be positive")

    def to_pixels(self, x_cm, y_cm):
        u = (np.asarray(x_cm) + self.width / 2.0) * self.pixels_per_cm
        v = (self.height / 2.0 - np.asarray(y_cm)) * self.pixels_per_cm
        return u, v

    def to_cm(self, u, v):
        x = np.asarray(u) / self.pixels_per_cm - self.width / 2.0
        y = self.height / 2.0 - np.asarray(v) / self.pixels_per_cm
        return x, y

    def to_dict(self) -> dict:
        return {
            "distance": self.distance,
            "width": self.width,
            "height": self.height,
            "pixel_resolution": list(self.pixel_resolution),
            "pixels_per_cm": self.pixels_per_cm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GazePlane":
        return cls(
            distance=float(d["distance"]),
            width=float(d["width"]),
            height=float(d["height"]),
            pixel_resolution=tuple(int(v) for v in d["pixel_resolution"]),
            pixels_per_cm=float(d["pixels_per_cm"]),
        )


@dataclass(frozen=True)
class BinocularConfig:
    """Eye placement: rotation centers at ``(-ipd/2, 0, 0)`` and ``(+ipd/2, 0, 0)``."""

    interpupillary_distance: float = DEFAULT_IPD
    zero_parallax_depth: float = DEFAULT_PLANE_DISTANCE
    eyeball_radius: float = DEFAULT_EYEBALL_RADIUS

    def __post_init__(self):
        if not self.interpupillary_distance > 0:
            raise ValueError("interpupillary distance must be positive")
        if not self.zero_parallax_depth > 0:
            raise ValueError("zero-parallax depth must be positive")

    @property
    def eye_left(self) -> np.ndarray:
        return vec3(-self.interpupillary_distance / 2.0, 0.0, 0.0)

    @property
    def eye_right(self) -> np.ndarray:
        return vec3(self.interpupillary_distance / 2.0, 0.0, 0.0)

    def eye(self, side: str) -> np.ndarray:
        if side == "left":
            return self.eye_left
        if side == "right":
            return self.eye_right
        raise ValueError(f"unknown eye side {side!r}")


@dataclass(frozen=True)
class CameraRig:
    """Fixed eye-camera placement shared by the simulator and the depth features.

    Each eye has its own camera looking straight at it; ``camera_x`` holds the
    horizontal camera positions (cm) and ``pixels_per_cm`` is the nominal
    magnification at the pupil plane.
    """

    camera_x: tuple[float, float] = (-3.0, 3.0)
    image_size: tuple[int, int] = (1920, 1080)
    pixels_per_cm: float = 400.0

    @property
    def baseline_px(self) -> float:
        return (self.camera_x[1] - self.camera_x[0]) * self.pixels_per_cm

    @property
    def image_center(self) -> np.ndarray:
        return np.array([self.image_size[0] / 2.0, self.image_size[1] / 2.0])


class PlanePoint(NamedTuple):
    x: float
    y: float
    u: float
    v: float

    @property
    def cm(self) -> np.ndarray:
        return np.array([self.x, self.y])


def ray_plane_intersect(ray: GazeRay, plane: GazePlane) -> PlanePoint:
    dz = ray.direction[2]
    if abs(dz) < _PARALLEL_EPS:
        raise RayParallelToPlane(f"ray direction {ray.direction} is parallel to z={plane.distance}")
    t = (plane.distance - ray.origin[2]) / dz
    if t < 0:
        raise PlaneBehindRay(f"plane z={plane.distance} lies behind the ray origin")
    p = ray.point_at(t)
    u, v = plane.to_pixels(p[0], p[1])
    return PlanePoint(float(p[0]), float(p[1]), float(u), float(v))


def intersect_plane_batch(origins: np.ndarray, directions: np.ndarray, distance: float) -> np.ndarray:
    """Vectorized plane intersection returning ``(n, 2)`` plane coordinates in cm."""
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    dz = directions[:, 2]
    if np.any(np.abs(dz) < _PARALLEL_EPS):
        raise RayParallelToPlane("at least one ray is parallel to the plane")
    t = (distance - origins[:, 2]) / dz
    if np.any(t < 0):
        raise PlaneBehindRay("plane lies behind at least one ray origin")
    return origins[:, :2] + t[:, None] * directions[:, :2]


def vergence_angle(left: GazeRay, right: GazeRay) -> float:
    c = float(np.clip(np.dot(left.direction, right.direction), -1.0, 1.0))
    return math.degrees(math.acos(c))


def vergence_angle_batch(dl: np.ndarray, dr: np.ndarray) -> np.ndarray:
    dl = dl / np.linalg.norm(dl, axis=1, keepdims=True)
    dr = dr / np.linalg.norm(dr, axis=1, keepdims=True)
    c = np.clip(np.einsum("ij,ij->i", dl, dr), -1.0, 1.0)
    return np.degrees(np.arccos(c))


def ray_intersection_depth(left: GazeRay, right: GazeRay) -> np.ndarray:
    """Midpoint of the common perpendicular between the two gaze lines."""
    d1, d2 = left.direction, right.direction
    cross = np.cross(d1, d2)
    if np.linalg.norm(cross) < _PARALLEL_EPS:
        raise RaysParallel("gaze rays are parallel; no finite fixation point")
    w0 = left.origin - right.origin
    b = np.dot(d1, d2)
    d = np.dot(d1, w0)
    e = np.dot(d2, w0)
    denom = 1.0 - b * b
    t1 = (b * e - d) / denom
    t2 = (e - b * d) / denom
    return 0.5 * (left.point_at(t1) + right.point_at(t2))


def ray_intersection_depth_batch(o1: np.ndarray, d1: np.ndarray, o2: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Vectorized ``ray_intersection_depth`` over ``(n, 3)`` origins and unit directions."""
    o1, d1, o2, d2 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (o1, d1, o2, d2))
    if np.any(np.linalg.norm(np.cross(d1, d2), axis=1) < _PARALLEL_EPS):
        raise RaysParallel("at least one pair of gaze rays is parallel")
    w0 = o1 - o2
    b = np.einsum("ij,ij->i", d1, d2)
    d = np.einsum("ij,ij->i", d1, w0)
    e = np.einsum("ij,ij->i", d2, w0)
    denom = 1.0 - b * b
    t1 = (b * e - d) / denom
    t2 = (e - b * d) / denom
    return 0.5 * (o1 + t1[:, None] * d1 + o2 + t2[:, None] * d2)


def eye_rays_batch(eye_center, targets: np.ndarray, eyeball_radius: float = DEFAULT_EYEBALL_RADIUS):
    """Vectorized ``eye_ray``: ``(origins, directions)``, each ``(n, 3)``."""
    eye_center = np.asarray(eye_center, dtype=float)
    v = np.atleast_2d(np.asarray(targets, dtype=float)) - eye_center
    directions = v / np.linalg.norm(v, axis=1, keepdims=True)
    return eye_center + eyeball_radius * directions, directions


def disparity_from_depth(target, cfg: BinocularConfig) -> float:
    """Screen parallax (cm) of a point at depth ``target.z``.

    Zero at the zero-parallax plane, positive (uncrossed) behind it and
    approaching the interpupillary distance as depth goes to infinity.
    """
    z = float(np.asarray(target, dtype=float)[2])
    if not z > 0:
        raise NonPositiveDepth(f"target depth must be positive, got {z}")
    ipd = cfg.interpupillary_distance
    return ipd * (z - cfg.zero_parallax_depth) / z


def disparity_pixels(target, cfg: BinocularConfig, plane: GazePlane) -> float:
    return disparity_from_depth(target, cfg) * plane.pixels_per_cm


def gaze_angles(direction) -> tuple[float, float]:
    """Horizontal (yaw) and vertical (pitch) rotation of a direction, degrees.

    yaw is measured in the x-z plane from +z toward +x; pitch is the elevation
    above the x-z plane.
    """
    d = np.asarray(direction, dtype=float)
    yaw = math.degrees(math.atan2(d[0], d[2]))
    pitch = math.degrees(math.atan2(d[1], math.hypot(d[0], d[2])))
    return yaw, pitch


def gaze_angles_batch(directions: np.ndarray) -> np.ndarray:
    d = np.atleast_2d(directions)
    yaw = np.degrees(np.arctan2(d[:, 0], d[:, 2]))
    pitch = np.degrees(np.arctan2(d[:, 1], np.hypot(d[:, 0], d[:, 2])))
    return np.column_stack([yaw, pitch])


def direction_from_angles(yaw: float, pitch: float) -> np.ndarray:
    y, p = math.radians(yaw), math.radians(pitch)
    return vec3(math.cos(p) * math.sin(y), math.sin(p), math.cos(p) * math.cos(y))


def directions_from_angles(angles: np.ndarray) -> np.ndarray:
    a = np.radians(np.atleast_2d(angles))
    y, p = a[:, 0], a[:, 1]
    return np.column_stack([np.cos(p) * np.sin(y), np.sin(p), np.cos(p) * np.cos(y)])


def eye_ray(eye_center, target, eyeball_radius: float = DEFAULT_EYEBALL_RADIUS) -> GazeRay:
    """Visual line from an eyeball rotation center toward ``target``.

    The returned ray starts at the pupil center, which sits ``eyeball_radius``
    in front of the rotation center along the line of sight, so that the ray
    still passes through the target.
    """
    eye_center = np.asarray(eye_center, dtype=float)
    direction = normalize(np.asarray(target, dtype=float) - eye_center)
    return GazeRay(eye_center + eyeball_radius * direction, direction)


# --------------------------------------------------------------------------
# Scenes


@dataclass(frozen=True)
class TestPoint:
    __test__ = False  # not a pytest class

    id: int
    position: np.ndarray
    plane_index: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True)
class SceneSpec:
    name: str
    test_points: tuple[TestPoint, ...]
    workspace: tuple[float, float, float]
    depth_unit: str = "cm"
    background_depth: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "test_points", tuple(self.test_points))
        if self.depth_unit not in ("cm", "m"):
            raise ValueError(f"depth_unit must be 'cm' or 'm', got {self.depth_unit!r}")
        w, h, d = self.workspace
        for tp in self.test_points:
            x, y, z = tp.position
            if abs(x) > w / 2 + 1e-9 or abs(y) > h / 2 + 1e-9 or not (0 < z <= d + 1e-9):
                raise ValueError(f"test point {tp.id} at {tp.position} is outside the workspace")

    @property
    def unit_scale(self) -> float:
        """Multiply centimeters by this to express depth in the scene's unit."""
        return 0.01 if self.depth_unit == "m" else 1.0

    def point(self, point_id: int) -> TestPoint:
        for tp in self.test_points:
            if tp.id == point_id:
                return tp
        raise KeyError(point_id)

    def positions(self) -> np.ndarray:
        return np.array([tp.position for tp in self.test_points])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "workspace": list(self.workspace),
            "depth_unit": self.depth_unit,
            "background_depth": self.background_depth,
            "test_points": [
                {"id": tp.id, "xyz": [float(v) for v in tp.position], "plane": tp.plane_index}
                for tp in self.test_points
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            name=d["name"],
            test_points=tuple(
                TestPoint(int(p["id"]), np.array(p["xyz"], dtype=float), int(p["plane"]))
                for p in d["test_points"]
            ),
            workspace=tuple(float(v) for v in d["workspace"]),
            depth_unit=d.get("depth_unit", "cm"),
            background_depth=float(d.get("background_depth", 100.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))


SCENE1_DEPTHS = (15.0, 35.0, 55.0, 75.0)


def scene1_spec() -> SceneSpec:
    """Close-range virtual scene: a 3x3 grid on each of four depth planes.

    The grid is laid out in visual angle, so each plane's grid is the far
    plane's 40 x 24 cm grid scaled by ``z / 75``.
    """
    points = []
    pid = 1
    far = SCENE1_DEPTHS[-1]
    for plane_index, z in enumerate(SCENE1_DEPTHS, start=1):
        for row in range(3):
            for col in range(3):
                x = (col - 1) * 20.0 * z / far
                y = (1 - row) * 12.0 * z / far
                points.append(TestPoint(pid, vec3(x, y, z), plane_index))
                pid += 1
    return SceneSpec("scene1", tuple(points), (50.0, 30.0, 75.0), depth_unit="cm", background_depth=90.0)


def scene2_spec() -> SceneSpec:
    """Far-range indoor scene: nine points at evenly spaced depths 0.8 to 7.9 m."""
    depths = np.linspace(80.0, 790.0, 9)
    points = []
    for k, z in enumerate(depths):
        col, row = k % 3, k // 3
        x = (col - 1) * 0.15 * z
        y = (1 - row) * 0.2 * z
        points.append(TestPoint(k + 1, vec3(x, y, z), k + 1))
    return SceneSpec("scene2", tuple(points), (240.0, 400.0, 790.0), depth_unit="m", background_depth=900.0)


def calibration_grid(plane: GazePlane | None = None, half_width: float = 14.0, half_height: float = 8.0) -> SceneSpec:
    """Nine calibration markers on the gaze plane, row-major from top-left."""
    plane = plane or GazePlane()
    points = []
    pid = 1
    for row in range(3):
        for col in range(3):
            x = (col - 1) * half_width
            y = (1 - row) * half_height
            points.append(TestPoint(pid, vec3(x, y, plane.distance), 1))
            pid += 1
    return SceneSpec(
        "calibration",
        tuple(points),
        (2 * half_width, 2 * half_height, plane.distance),
        depth_unit="cm",
        background_depth=plane.distance,
    )


def scene_by_name(name: str) -> SceneSpec:
    try:
        return {"scene1": scene1_spec, "scene2": scene2_spec, "calibration": calibration_grid}[name]()
    except KeyError:
        raise ValueError(f"unknown scene {name!r}") from None


def depth_planes(scene: SceneSpec) -> Sequence[int]:
    return sorted({tp.plane_index for tp in scene.test_points})
