"""Synthetic static worlds with noisy pose, point and detection streams.

The simulator is the desk-scale stand-in for a SLAM front-end and a 2D
detector: it emits camera poses (optionally perturbed), sparse points on
visible cuboid faces plus ground clutter, and per-frame detections whose
score vectors are Dirichlet-style draws centered on a confusion-matrix row.
Everything is a pure function of (world, frame index) under a fixed seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .association import Detection, heading_yaw
from .filter import CategoryModel
from .geometry import (
    Cuboid,
    Intrinsics,
    PixelBox,
    RigidPose,
    Visibility,
    image_box,
    oriented_overlap_3d,
    project_cuboid,
    quat_from_axis_angle,
    quat_mul,
    rot_z,
    visibility_status,
    wrap_angle,
)
from .providers import (
    FrameInput,
    GroundTruthObject,
    write_categories,
    write_detections,
    write_ground_truth,
    write_points,
    write_poses,
    write_visibility,
)

DEFAULT_INTRINSICS = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


# ---------------------------------------------------------------------------
# trajectories

def _look_rotation(forward: np.ndarray, pitch: float = 0.0) -> np.ndarray:
    """Camera-to-world rotation with optical axis along ``forward``.

    The image x axis stays horizontal (gravity-referenced) and ``pitch``
    tilts the optical axis down by that many radians.
    """
    up = np.array([0.0, 0.0, 1.0])
    f = np.asarray(forward, dtype=np.float64)
    fh = f - up * (f @ up)
    n = np.linalg.norm(fh)
    if n < 1e-9:
        raise ValueError("camera forward direction must not be vertical")
    fh = fh / n
    z_cam = fh * math.cos(pitch) - up * math.sin(pitch)
    x_cam = np.cross(z_cam, -up)
    x_cam = x_cam / np.linalg.norm(x_cam)
    y_cam = np.cross(z_cam, x_cam)
    return np.column_stack([x_cam, y_cam, z_cam])


@dataclass(frozen=True)
class Circle:
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 5.0
    height: float = 1.2
    angular_speed: float = 0.3      # rad/s, positive = counter-clockwise
    phase: float = 0.0
    look_at: Optional[Tuple[float, float, float]] = None
    pitch: float = 0.0

    def pose(self, t: float) -> RigidPose:
        phi = self.phase + self.angular_speed * t
        pos = np.array([self.center[0] + self.radius * math.cos(phi),
                        self.center[1] + self.radius * math.sin(phi),
                        self.height])
        if self.look_at is not None:
            forward = np.asarray(self.look_at) - pos
        else:
            s = 1.0 if self.angular_speed >= 0 else -1.0
            forward = np.array([-math.sin(phi) * s, math.cos(phi) * s, 0.0])
        return RigidPose.from_matrix(_look_rotation(forward, self.pitch), pos)


@dataclass(frozen=True)
class Line:
    start: Tuple[float, float, float]
    end: Tuple[float, float, float]
    speed: float = 0.5              # m/s, clamps at the endpoint
    look_at: Optional[Tuple[float, float, float]] = None
    pitch: float = 0.0

    def pose(self, t: float) -> RigidPose:
        a = np.asarray(self.start, dtype=np.float64)
        b = np.asarray(self.end, dtype=np.float64)
        span = b - a
        length = np.linalg.norm(span)
        s = min(self.speed * t, length)
        pos = a + span * (s / length if length > 0 else 0.0)
        forward = np.asarray(self.look_at) - pos if self.look_at is not None else span
        return RigidPose.from_matrix(_look_rotation(forward, self.pitch), pos)


@dataclass(frozen=True)
class Waypoints:
    points: Tuple[Tuple[float, float, float], ...]
    speed: float = 0.5
    look_at: Optional[Tuple[float, float, float]] = None
    pitch: float = 0.0

    def pose(self, t: float) -> RigidPose:
        pts = np.asarray(self.points, dtype=np.float64)
        if len(pts) < 2:
            raise ValueError("waypoint trajectory needs at least two points")
        seg = np.diff(pts, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        s = min(self.speed * t, cum[-1])
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        frac = (s - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
        pos = pts[i] + seg[i] * frac
        forward = np.asarray(self.look_at) - pos if self.look_at is not None else seg[i]
        return RigidPose.from_matrix(_look_rotation(forward, self.pitch), pos)


Trajectory = Union[Circle, Line, Waypoints]


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class NoiseConfig:
    sigma_px: float = 0.0             # detection corner jitter
    p_detect: float = 1.0             # per visible object per frame
    lambda_fa: float = 0.0            # expected false alarms per frame
    confusion: Optional[np.ndarray] = None   # KxK row-stochastic; None = identity
    score_concentration: float = 100.0
    sigma_pose_t: float = 0.0         # m
    sigma_pose_r: float = 0.0         # rad
    sigma_azimuth: float = 0.0        # rad
    points_per_face: int = 12
    sigma_point: float = 0.03         # in-face jitter, m
    ground_points: int = 20


@dataclass(frozen=True)
class ObjectSampling:
    """Randomized placement: per-category counts inside a ground region."""

    counts: Dict[str, int]
    region: Tuple[float, float, float, float]      # xmin, xmax, ymin, ymax
    max_rejections: int = 10_000


@dataclass(frozen=True)
class SceneConfig:
    seed: int
    trajectory: Trajectory
    n_frames: int
    objects: Union[Sequence[Tuple[str, Cuboid]], ObjectSampling] = ()
    frame_rate: float = 10.0
    intrinsics: Intrinsics = DEFAULT_INTRINSICS
    noise: NoiseConfig = NoiseConfig()


@dataclass
class World:
    config: SceneConfig
    categories: Dict[int, CategoryModel]
    objects: List[GroundTruthObject]

    def category_id(self, name: str) -> int:
        for cid, cat in self.categories.items():
            if cat.name == name:
                return cid
        raise KeyError(f"unknown category {name!r}")


def confusion_identity(k: int, diag: float = 1.0) -> np.ndarray:
    off = (1.0 - diag) / (k - 1) if k > 1 else 0.0
    mat = np.full((k, k), off)
    np.fill_diagonal(mat, diag)
    return mat


# ---------------------------------------------------------------------------
# scene construction

def build_scene(cfg: SceneConfig, categories: Dict[int, CategoryModel]) -> World:
    """Deterministic world from the seed; objects never overlap in 3D."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0xE0,)))
    objects: List[GroundTruthObject] = []

    def try_add(name: str, cuboid: Cuboid) -> bool:
        for prev in objects:
            if oriented_overlap_3d(prev.cuboid, cuboid) > 0.0:
                return False
        objects.append(GroundTruthObject(len(objects), name, cuboid))
        return True

    if isinstance(cfg.objects, ObjectSampling):
        spec = cfg.objects
        xmin, xmax, ymin, ymax = spec.region
        rejections = 0
        for name in sorted(spec.counts):
            cid = next(c for c, cat in categories.items() if cat.name == name)
            cat = categories[cid]
            placed = 0
            while placed < spec.counts[name]:
                dims = np.exp(rng.multivariate_normal(cat.dim_prior_mean, cat.dim_prior_cov))
                center = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax),
                                   0.5 * dims[2]])
                yaw = rng.uniform(-math.pi, math.pi)
                if try_add(name, Cuboid(center, yaw, dims)):
                    placed += 1
                else:
                    rejections += 1
                    if rejections > spec.max_rejections:
                        raise RuntimeError(
                            "object placement failed: region too small for requested counts")
    else:
        for name, cuboid in cfg.objects:
            if not try_add(name, cuboid):
                raise ValueError("explicit scene objects must not overlap")
    return World(cfg, categories, objects)


# ---------------------------------------------------------------------------
# rendering

# Face definition in the cuboid frame: (normal axis, sign, in-plane axes)
_FACES = [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0)]


def _sample_face_points(rng: np.random.Generator, cuboid: Cuboid, cam_pos: np.ndarray,
                        per_face: int, sigma: float) -> np.ndarray:
    """Uniform + in-plane jittered samples on the camera-facing faces.

    Points lie exactly on the cuboid surface by construction.
    """
    rz = rot_z(cuboid.yaw)
    half = 0.5 * cuboid.dims
    out = []
    for axis, sign in _FACES:
        normal_local = np.zeros(3)
        normal_local[axis] = sign
        normal_world = rz @ normal_local
        face_center = cuboid.center + rz @ (normal_local * half)
        if normal_world @ (face_center - cam_pos) >= 0.0:
            continue
        axes = [a for a in range(3) if a != axis]
        local = np.zeros((per_face, 3))
        local[:, axis] = sign * half[axis]
        for a in axes:
            coords = rng.uniform(-half[a], half[a], size=per_face)
            coords = np.clip(coords + rng.normal(0.0, sigma, size=per_face),
                             -half[a], half[a])
            local[:, a] = coords
        out.append(cuboid.center + local @ rz.T)
    if not out:
        return np.zeros((0, 3))
    return np.concatenate(out, axis=0)


def _scene_extent(world: World) -> Tuple[float, float, float, float]:
    if not world.objects:
        return (-5.0, 5.0, -5.0, 5.0)
    centers = np.array([o.cuboid.center[:2] for o in world.objects])
    lo = centers.min(axis=0) - 2.0
    hi = centers.max(axis=0) + 2.0
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def true_visibility(world: World, pose: RigidPose) -> Dict[int, Visibility]:
    out = {}
    for obj in world.objects:
        others = [o.cuboid for o in world.objects if o.gt_id != obj.gt_id]
        out[obj.gt_id] = visibility_status(obj.cuboid, others, world.config.intrinsics, pose)
    return out


def _jittered_box(rng: np.random.Generator, box: PixelBox, sigma: float,
                  frame_box: PixelBox) -> Optional[PixelBox]:
    vals = box.as_vector() + rng.normal(0.0, sigma, size=4) if sigma > 0 else box.as_vector()
    x0, x1 = sorted((vals[0], vals[2]))
    y0, y1 = sorted((vals[1], vals[3]))
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return None
    return PixelBox(x0, y0, x1, y1).intersect(frame_box)


def _score_draw(rng: np.random.Generator, row: np.ndarray, concentration: float) -> np.ndarray:
    alpha = np.maximum(row * concentration, 1e-3)
    draw = rng.gamma(alpha)
    total = draw.sum()
    if total <= 0:
        return row.copy()
    return draw / total


def render_frame(world: World, frame: int) -> Tuple[FrameInput, Dict[int, Visibility]]:
    """Render one frame: noisy pose/points/detections + true visibility."""
    cfg = world.config
    noise = cfg.noise
    k = cfg.intrinsics
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(frame,)))
    t = frame / cfg.frame_rate
    pose_true = cfg.trajectory.pose(t)
    visibility = true_visibility(world, pose_true)

    # SLAM output: a world-frame perturbation applied consistently to the
    # reported pose and the reported points.
    if noise.sigma_pose_r > 0 or noise.sigma_pose_t > 0:
        axis = rng.normal(size=3)
        dq = quat_from_axis_angle(axis, rng.normal(0.0, noise.sigma_pose_r))
        dt = rng.normal(0.0, noise.sigma_pose_t, size=3)
        delta = RigidPose(dq, dt)
        pose = delta.compose(pose_true)
    else:
        delta = None
        pose = pose_true

    point_sets = []
    for obj in world.objects:
        if visibility[obj.gt_id].visible:
            point_sets.append(_sample_face_points(rng, obj.cuboid, pose_true.t,
                                                  noise.points_per_face, noise.sigma_point))
    if noise.ground_points > 0:
        xmin, xmax, ymin, ymax = _scene_extent(world)
        ground = np.zeros((noise.ground_points, 3))
        ground[:, 0] = rng.uniform(xmin, xmax, size=noise.ground_points)
        ground[:, 1] = rng.uniform(ymin, ymax, size=noise.ground_points)
        point_sets.append(ground)
    points = np.concatenate(point_sets, axis=0) if point_sets else np.zeros((0, 3))
    if delta is not None and len(points):
        points = points @ delta.rotation().T + delta.t

    n_cats = len(world.categories)
    confusion = noise.confusion if noise.confusion is not None else confusion_identity(n_cats)
    frame_rect = image_box(k)
    detections: List[Detection] = []
    for obj in world.objects:
        if not visibility[obj.gt_id].visible:
            continue
        if rng.random() >= noise.p_detect:
            continue
        true_box = project_cuboid(k, pose_true, obj.cuboid)
        if true_box is None:
            continue
        box = _jittered_box(rng, true_box, noise.sigma_px, frame_rect)
        if box is None:
            continue
        cid = world.category_id(obj.category)
        scores = _score_draw(rng, np.asarray(confusion[cid], dtype=np.float64),
                             noise.score_concentration)
        azimuth = wrap_angle(obj.cuboid.yaw - heading_yaw(pose_true)
                             + (rng.normal(0.0, noise.sigma_azimuth)
                                if noise.sigma_azimuth > 0 else 0.0))
        detections.append(Detection(box, scores, azimuth))

    for _ in range(int(rng.poisson(noise.lambda_fa)) if noise.lambda_fa > 0 else 0):
        cx = rng.uniform(0, k.width)
        cy = rng.uniform(0, k.height)
        w = rng.uniform(20.0, 160.0)
        h = rng.uniform(20.0, 160.0)
        fa_box = PixelBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2).intersect(frame_rect)
        if fa_box is None or fa_box.area < 4.0:
            continue
        row = np.asarray(confusion[int(rng.integers(n_cats))], dtype=np.float64)
        detections.append(Detection(fa_box, _score_draw(rng, row, noise.score_concentration)))

    frame_input = FrameInput(frame=frame, time=t, pose=pose, intrinsics=k,
                             points=points, detections=detections)
    return frame_input, visibility


def simulate_to_dir(world: World, out_dir: str) -> Dict[str, int]:
    """Render the whole sequence and write the six stream files."""
    os.makedirs(out_dir, exist_ok=True)
    poses, points, dets, vis_records = [], [], [], []
    for frame in range(world.config.n_frames):
        fi, vis = render_frame(world, frame)
        poses.append((fi.frame, fi.time, fi.pose, fi.intrinsics))
        points.append((fi.frame, fi.points))
        dets.append((fi.frame, fi.detections))
        for gt_id in sorted(vis):
            vis_records.append((fi.frame, gt_id, vis[gt_id]))
    write_poses(poses, os.path.join(out_dir, "poses.jsonl"))
    write_points(points, os.path.join(out_dir, "points.jsonl"))
    write_detections(dets, os.path.join(out_dir, "detections.jsonl"))
    write_ground_truth(world.objects, os.path.join(out_dir, "gt.jsonl"))
    write_visibility(vis_records, os.path.join(out_dir, "visibility.jsonl"))
    write_categories(world.categories, os.path.join(out_dir, "categories.toml"))
    counts: Dict[str, int] = {}
    for obj in world.objects:
        counts[obj.category] = counts.get(obj.category, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# scenario library

def default_categories() -> Dict[int, CategoryModel]:
    from .providers import load_categories

    path = os.path.join(os.path.dirname(__file__), "data", "categories.toml")
    return load_categories(path)


def scenario_library(seed: int = 7) -> Dict[str, SceneConfig]:
    """Named scenes exercising convergence, scale gating, occlusion and merging."""
    cats = default_categories()
    k = len(cats)

    toycar = SceneConfig(
        seed=seed,
        trajectory=Line(start=(-5.0, -9.0, 1.4), end=(5.0, -9.0, 1.4), speed=0.5,
                        look_at=(0.0, 0.0, 0.8)),
        n_frames=200,
        objects=(
            ("car", Cuboid((1.5, 1.0, 0.75), 0.4, (4.2, 1.8, 1.5))),
            ("car", Cuboid((-1.2, -5.5, 0.075), -0.3, (0.42, 0.18, 0.15))),
        ),
        noise=NoiseConfig(sigma_px=2.0, p_detect=0.95, lambda_fa=0.0,
                          confusion=confusion_identity(k, 0.9),
                          sigma_azimuth=0.05),
    )

    occlusion = SceneConfig(
        seed=seed,
        trajectory=Line(start=(-2.0, -3.0, 1.0), end=(2.0, -3.0, 1.0), speed=0.2,
                        look_at=(0.0, 1.0, 0.5)),
        n_frames=200,
        objects=(
            ("chair", Cuboid((0.0, 1.0, 0.45), 0.2, (0.55, 0.55, 0.9))),
            ("monitor", Cuboid((0.0, -0.8, 0.6), 0.0, (0.9, 0.15, 0.7))),
        ),
        noise=NoiseConfig(sigma_px=2.0, p_detect=0.95, lambda_fa=0.1,
                          confusion=confusion_identity(k, 0.9),
                          sigma_azimuth=0.05),
    )

    # Roadside-style ring: objects in a band just outside the camera circle,
    # so each one enters and leaves the view on every pass.
    ring = []
    dims_by_cat = {"car": (4.2, 1.8, 1.5), "chair": (0.55, 0.55, 0.9),
                   "table": (1.4, 0.8, 0.75), "person": (0.74, 0.75, 1.8)}
    placements = [
        ("car", 7.6, 0.0), ("person", 6.4, 0.8), ("chair", 6.8, 1.6),
        ("table", 6.5, 2.4), ("person", 7.0, 3.2), ("chair", 6.4, 4.0),
        ("table", 6.9, 4.8), ("person", 6.6, 5.6),
    ]
    for name, rho, theta in placements:
        dims = dims_by_cat[name]
        center = (rho * math.cos(theta), rho * math.sin(theta), dims[2] / 2)
        ring.append((name, Cuboid(center, theta + 1.3, dims)))
    loop = SceneConfig(
        seed=seed,
        trajectory=Circle(center=(0.0, 0.0), radius=5.0, height=1.3,
                          angular_speed=2.0 * math.pi * 2.25 / 30.0, pitch=0.10),
        n_frames=300,
        objects=tuple(ring),
        noise=NoiseConfig(sigma_px=5.0, p_detect=0.9, lambda_fa=0.5,
                          confusion=confusion_identity(k, 0.8),
                          score_concentration=80.0, sigma_azimuth=0.1),
    )

    crowd = SceneConfig(
        seed=seed,
        trajectory=Circle(center=(0.0, 0.0), radius=4.0, height=1.4,
                          angular_speed=2.0 * math.pi / 15.0,
                          look_at=(0.0, 0.0, 0.5)),
        n_frames=150,
        objects=(
            ("chair", Cuboid((0.8, 0.8, 0.45), 0.4, (0.55, 0.55, 0.9))),
            ("chair", Cuboid((-0.8, 0.8, 0.45), -0.9, (0.55, 0.55, 0.9))),
            ("chair", Cuboid((0.8, -0.8, 0.45), 2.2, (0.55, 0.55, 0.9))),
            ("chair", Cuboid((-0.8, -0.8, 0.45), 1.1, (0.55, 0.55, 0.9))),
        ),
        noise=NoiseConfig(sigma_px=6.0, p_detect=0.9, lambda_fa=0.3,
                          confusion=confusion_identity(k, 0.85),
                          sigma_azimuth=0.15),
    )

    return {"toycar": toycar, "occlusion": occlusion, "loop": loop, "crowd": crowd}
