"""Rigid poses, pinhole projection, cuboid geometry and visibility.

Conventions used throughout the package:

* World frame is gravity-aligned, +z up, ground plane at z = 0.
* Camera poses are camera-to-world; camera frame is the usual computer
  vision one (x right, y down, z along the optical axis).
* Object rotations are yaw-only (about world +z); object shape is a
  yaw-rotated cuboid with extents ``dims = (w, h, l)`` along the local
  x, y and z axes.

All functions here are pure; values are treated as immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .kernels import ray_cuboid_entry, rect_intersection_area

DEPTH_EPS = 1e-6
OCCLUSION_GRID = 5
OCCLUSION_THRESHOLD = 0.7
MIN_VISIBLE_PIXELS = 64.0


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return -((-theta + math.pi) % (2.0 * math.pi) - math.pi)


def angular_distance(a: float, b: float) -> float:
    """Absolute angular separation in [0, pi]."""
    return abs(wrap_angle(a - b))


# ---------------------------------------------------------------------------
# quaternions (scalar-first)

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-9:
        raise ValueError("degenerate quaternion")
    return q / n


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis / n])


def quat_from_matrix(rot: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a scalar-first unit quaternion."""
    m = np.asarray(rot, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


# ---------------------------------------------------------------------------
# core value types

@dataclass(frozen=True)
class RigidPose:
    """Camera-to-world rigid transform: scalar-first unit quaternion + translation."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must have unit norm")
        object.__setattr__(self, "q", quat_normalize(q))
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(rot: np.ndarray, t) -> "RigidPose":
        return RigidPose(quat_from_matrix(rot), np.asarray(t, dtype=np.float64))

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, x) -> np.ndarray:
        return self.rotation() @ np.asarray(x, dtype=np.float64) + self.t

    def compose(self, other: "RigidPose") -> "RigidPose":
        return RigidPose(quat_mul(self.q, other.q), self.rotation() @ other.t + self.t)

    def inverse(self) -> "RigidPose":
        rot_inv = self.rotation().T
        return RigidPose(quat_conj(self.q), -(rot_inv @ self.t))


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class Cuboid:
    """Gravity-aligned cuboid: center (m), yaw about +z, extents (w, h, l)."""

    center: np.ndarray
    yaw: float
    dims: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        dims = np.asarray(self.dims, dtype=np.float64).reshape(3)
        if np.any(dims <= 0):
            raise ValueError("cuboid extents must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(self, "dims", dims)

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    def z_interval(self) -> tuple:
        half = 0.5 * self.dims[2]
        return (self.center[2] - half, self.center[2] + half)


# Corner sign pattern in sign-bit order: (-,-,-), (-,-,+), (-,+,-), ...
_CORNER_SIGNS = np.array([
    [-1, -1, -1], [-1, -1, 1], [-1, 1, -1], [-1, 1, 1],
    [1, -1, -1], [1, -1, 1], [1, 1, -1], [1, 1, 1],
], dtype=np.float64)


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def cuboid_corners(c: Cuboid) -> np.ndarray:
    """All 8 corners (8, 3), world frame, deterministic sign-bit order."""
    offsets = _CORNER_SIGNS * (0.5 * c.dims)
    return c.center + offsets @ rot_z(c.yaw).T


@dataclass(frozen=True)
class PixelBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError("degenerate pixel box")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)])

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def as_vector(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.xmax, self.ymax])

    def intersect(self, other: "PixelBox") -> Optional["PixelBox"]:
        x0 = max(self.xmin, other.xmin)
        y0 = max(self.ymin, other.ymin)
        x1 = min(self.xmax, other.xmax)
        y1 = min(self.ymax, other.ymax)
        if x0 >= x1 or y0 >= y1:
            return None
        return PixelBox(x0, y0, x1, y1)

    def contains(self, u: float, v: float) -> bool:
        return self.xmin <= u <= self.xmax and self.ymin <= v <= self.ymax


def image_box(k: Intrinsics) -> PixelBox:
    return PixelBox(0.0, 0.0, float(k.width), float(k.height))


def pixel_box_iou(a: PixelBox, b: PixelBox) -> float:
    inter = a.intersect(b)
    if inter is None:
        return 0.0
    union = a.area + b.area - inter.area
    return inter.area / union if union > 0 else 0.0


class VisKind(Enum):
    VISIBLE = "visible"
    OCCLUDED = "occluded"
    OUT_OF_VIEW = "out_of_view"


@dataclass(frozen=True)
class Visibility:
    kind: VisKind
    blocked_fraction: float = 0.0

    @property
    def visible(self) -> bool:
        return self.kind is VisKind.VISIBLE


VISIBLE = Visibility(VisKind.VISIBLE)
OUT_OF_VIEW = Visibility(VisKind.OUT_OF_VIEW)


# ---------------------------------------------------------------------------
# projection

def project_point(k: Intrinsics, g: RigidPose, x) -> Optional[np.ndarray]:
    """Pinhole projection of a world point; None when at or behind the camera."""
    rot = g.rotation()
    xc = rot.T @ (np.asarray(x, dtype=np.float64) - g.t)
    if xc[2] <= DEPTH_EPS:
        return None
    return np.array([k.fx * xc[0] / xc[2] + k.cx, k.fy * xc[1] / xc[2] + k.cy])


def project_points(k: Intrinsics, g: RigidPose, pts: np.ndarray):
    """Batch pinhole projection: (uv (N, 2), valid (N,) bool)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    rot = g.rotation()
    xc = (pts - g.t) @ rot
    valid = xc[:, 2] > DEPTH_EPS
    z = np.where(valid, xc[:, 2], 1.0)
    uv = np.empty((len(pts), 2))
    uv[:, 0] = k.fx * xc[:, 0] / z + k.cx
    uv[:, 1] = k.fy * xc[:, 1] / z + k.cy
    return uv, valid


def project_cuboid(k: Intrinsics, g: RigidPose, c: Cuboid) -> Optional[PixelBox]:
    """Axis-aligned hull of the projected corners; None if any corner is behind."""
    uv, valid = project_points(k, g, cuboid_corners(c))
    if not valid.all():
        return None
    return PixelBox(uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())


# ---------------------------------------------------------------------------
# 3D overlap

def oriented_overlap_3d(a: Cuboid, b: Cuboid) -> float:
    """Volume IoU of two gravity-aligned cuboids.

    Intersection = (oriented footprint-rectangle overlap) x (vertical overlap).
    """
    az0, az1 = a.z_interval()
    bz0, bz1 = b.z_interval()
    dz = min(az1, bz1) - max(az0, bz0)
    if dz <= 0.0:
        return 0.0
    area = rect_intersection_area(
        a.center[0], a.center[1], a.dims[0], a.dims[1], a.yaw,
        b.center[0], b.center[1], b.dims[0], b.dims[1], b.yaw,
    )
    inter = area * dz
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


# ---------------------------------------------------------------------------
# visibility

def pixel_rays(k: Intrinsics, g: RigidPose, uv: np.ndarray) -> np.ndarray:
    """World-frame ray directions through pixels, scaled so that the ray
    parameter equals camera-frame depth."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    d_cam = np.stack([
        (uv[:, 0] - k.cx) / k.fx,
        (uv[:, 1] - k.cy) / k.fy,
        np.ones(len(uv)),
    ], axis=1)
    return d_cam @ g.rotation().T


def visibility_status(target: Cuboid, others: Sequence[Cuboid], k: Intrinsics,
                      g: RigidPose, grid: int = OCCLUSION_GRID,
                      threshold: float = OCCLUSION_THRESHOLD,
                      min_pixels: float = MIN_VISIBLE_PIXELS) -> Visibility:
    """Classify a cuboid as visible, occluded or out of view.

    Probe rays are cast through a ``grid x grid`` lattice of sample points
    inside the projected box clipped to the image; a sample is blocked when
    some other cuboid intersects its ray strictly closer than the target.
    """
    box = project_cuboid(k, g, target)
    if box is None:
        return OUT_OF_VIEW
    visible_box = box.intersect(image_box(k))
    if visible_box is None or visible_box.area < min_pixels:
        return OUT_OF_VIEW

    frac = np.arange(grid) + 0.5
    us = visible_box.xmin + visible_box.width * frac / grid
    vs = visible_box.ymin + visible_box.height * frac / grid
    uu, vv = np.meshgrid(us, vs)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    dirs = pixel_rays(k, g, uv)

    t_target = ray_cuboid_entry(g.t, dirs, target.center, target.yaw, target.dims)
    blocked = np.zeros(len(uv), dtype=bool)
    hits = np.isfinite(t_target)
    for other in others:
        t_other = ray_cuboid_entry(g.t, dirs, other.center, other.yaw, other.dims)
        blocked |= hits & (t_other < t_target)

    fraction = float(blocked.sum()) / float(len(uv))
    if fraction >= threshold:
        return Visibility(VisKind.OCCLUDED, fraction)
    return Visibility(VisKind.VISIBLE, fraction)
