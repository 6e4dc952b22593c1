"""Heuristic detection-to-object association and bottom-up initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .filter import (
    CategoryModel,
    EkfState,
    FilterConfig,
    ObjectHypothesis,
    box_measurement,
    box_noise,
    point_estimate,
)
from .geometry import (
    Intrinsics,
    PixelBox,
    RigidPose,
    VisKind,
    project_points,
    wrap_angle,
)


@dataclass(frozen=True)
class Detection:
    """One 2D detection: pixel box + per-category likelihood scores.

    ``azimuth`` is the object heading relative to the camera's
    gravity-referenced heading (the yaw component of the camera-to-world
    rotation), in radians; detectors that do not estimate orientation
    leave it None.
    """

    box: PixelBox
    scores: np.ndarray
    azimuth: Optional[float] = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if np.any(scores < 0):
            raise ValueError("detection scores must be nonnegative")
        object.__setattr__(self, "scores", scores)


@dataclass
class PredictedBox:
    box: PixelBox
    mean: np.ndarray   # 4-vector
    cov: np.ndarray    # 4x4


@dataclass
class Assignment:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)  # (object id, det index, weight)
    unassigned_detections: List[int] = field(default_factory=list)
    skipped_occluded: List[int] = field(default_factory=list)


def heading_yaw(g: RigidPose) -> float:
    """Yaw component (about world +z) of the camera-to-world rotation."""
    rot = g.rotation()
    return math.atan2(rot[1, 0], rot[0, 0])


def predict_boxes(objects: Sequence[ObjectHypothesis], k: Intrinsics, g: RigidPose,
                  cfg: FilterConfig) -> Tuple[Dict[int, PredictedBox], List[int]]:
    """Project each in-view short-term object to a sloppy 4D box Gaussian.

    Occluded objects are excluded from association and returned separately;
    out-of-view objects are simply absent.
    """
    predicted: Dict[int, PredictedBox] = {}
    skipped: List[int] = []
    for obj in objects:
        if obj.status.kind is VisKind.OCCLUDED:
            skipped.append(obj.id)
            continue
        if obj.status.kind is VisKind.OUT_OF_VIEW:
            continue
        state = obj.bank[obj.map_category()]
        meas = box_measurement(k, g, state)
        if meas is None:
            continue
        h, jac = meas
        box = PixelBox(h[0], h[1], h[2], h[3])
        cov = jac @ state.cov @ jac.T + box_noise(box, cfg)
        predicted[obj.id] = PredictedBox(box, h, 0.5 * (cov + cov.T))
    return predicted, skipped


def _log_gaussian(diff: np.ndarray, cov: np.ndarray) -> Tuple[float, float]:
    """(log density, Mahalanobis^2) of ``diff`` under N(0, cov)."""
    chol = np.linalg.cholesky(cov)
    alpha = np.linalg.solve(chol, diff)
    maha = float(alpha @ alpha)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return -0.5 * (maha + logdet + len(diff) * math.log(2.0 * math.pi)), maha


def gate_and_assign(predicted: Dict[int, PredictedBox],
                    detections: Sequence[Detection],
                    objects: Dict[int, ObjectHypothesis],
                    categories: Dict[int, CategoryModel],
                    cfg: FilterConfig,
                    skipped_occluded: Optional[List[int]] = None) -> Assignment:
    """Greedy one-to-one matching of detections to predicted boxes.

    A pair is scored by the Gaussian density of the detection box under the
    predicted 4D box distribution times the detection's score for the
    object's MAP category; pairs failing the chi-square gate or the
    category score gate are discarded.
    """
    scored = []
    for oid, pred in predicted.items():
        map_k = objects[oid].map_category()
        gate = categories[map_k].score_gate
        for j, det in enumerate(detections):
            s_cat = float(det.scores[map_k])
            if s_cat < gate:
                continue
            diff = det.box.as_vector() - pred.mean
            log_density, maha = _log_gaussian(diff, pred.cov)
            if maha > cfg.chi2_gate:
                continue
            score = log_density + math.log(max(s_cat, 1e-12))
            scored.append((-score, j, oid, s_cat))

    scored.sort()
    assignment = Assignment(skipped_occluded=list(skipped_occluded or []))
    used_obj = set()
    used_det = set()
    for _, j, oid, s_cat in scored:
        if oid in used_obj or j in used_det:
            continue
        used_obj.add(oid)
        used_det.add(j)
        assignment.pairs.append((oid, j, min(max(s_cat, 0.0), 1.0)))
    assignment.unassigned_detections = [j for j in range(len(detections)) if j not in used_det]
    return assignment


def weighted_centroid(points: np.ndarray, box: PixelBox, k: Intrinsics,
                      g: RigidPose, sigma_c: float,
                      min_points: int = 3) -> Optional[np.ndarray]:
    """Exponentially weighted centroid of the sparse points projecting in-box.

    Weights decay with pixel distance from the box center; returns None when
    fewer than ``min_points`` points qualify.
    """
    if sigma_c <= 0:
        raise ValueError("sigma_c must be positive")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return None
    uv, valid = project_points(k, g, points)
    inside = (valid
              & (uv[:, 0] >= box.xmin) & (uv[:, 0] <= box.xmax)
              & (uv[:, 1] >= box.ymin) & (uv[:, 1] <= box.ymax))
    if int(inside.sum()) < min_points:
        return None
    sel = points[inside]
    dist = np.linalg.norm(uv[inside] - box.center, axis=1)
    w = np.exp(-dist / sigma_c)
    return (w[:, None] * sel).sum(axis=0) / w.sum()


def init_orientation(azimuth: float, g: RigidPose) -> float:
    """World yaw from a camera-relative azimuth.

    Composes the azimuth rotation with the camera-to-world rotation and
    extracts the rotation component about world +z.
    """
    return wrap_angle(azimuth + heading_yaw(g))


def facing_camera_yaw(position: np.ndarray, g: RigidPose) -> float:
    """Deterministic fallback when a detection carries no azimuth."""
    d = g.t - np.asarray(position)
    return math.atan2(d[1], d[0])


def fit_scale(position: np.ndarray, yaw: float, box: PixelBox, k: Intrinsics,
              g: RigidPose, prior_mean: np.ndarray, prior_cov: np.ndarray,
              max_iter: int = 15) -> Tuple[np.ndarray, bool]:
    """Log-extents minimizing reprojection error under a Gaussian prior.

    Gauss-Newton from the prior mean on the residual stack
    [predicted box - box, whitened prior residual]. Returns the best iterate
    and a flag that is True when the iteration diverged (cost rose twice in
    a row), in which case the prior mean is returned.
    """
    prior_mean = np.asarray(prior_mean, dtype=np.float64).reshape(3)
    prior_info = np.linalg.inv(prior_cov)
    whitener = np.linalg.cholesky(prior_info).T
    target = box.as_vector()

    def residual_jac(d: np.ndarray):
        state = EkfState(np.concatenate([position, [yaw], d]), np.eye(7))
        # Unclipped projection: the optimizer needs gradients even while the
        # current iterate projects outside the image.
        meas = box_measurement(k, g, state, clip_to_image=False)
        if meas is None:
            return None
        h, jac_full = meas
        res = np.concatenate([h - target, whitener @ (d - prior_mean)])
        jac = np.vstack([jac_full[:, 4:7], whitener])
        return res, jac

    d = prior_mean.copy()
    out = residual_jac(d)
    if out is None:
        return prior_mean.copy(), True
    res, jac = out
    cost = float(res @ res)
    best_d, best_cost = d.copy(), cost
    rises = 0
    for _ in range(max_iter):
        step = np.linalg.solve(jac.T @ jac + 1e-12 * np.eye(3), -(jac.T @ res))
        d = d + step
        out = residual_jac(d)
        if out is None:
            return prior_mean.copy(), True
        res, jac = out
        new_cost = float(res @ res)
        if new_cost < best_cost:
            best_d, best_cost = d.copy(), new_cost
        rises = rises + 1 if new_cost > cost else 0
        if rises >= 2:
            return prior_mean.copy(), True
        if abs(cost - new_cost) < 1e-12 * max(cost, 1.0):
            cost = new_cost
            break
        cost = new_cost
    return best_d, False


def initialize_object(detection: Detection, points: np.ndarray, k: Intrinsics,
                      g: RigidPose, categories: Dict[int, CategoryModel],
                      cfg: FilterConfig, new_id: int,
                      frame: int) -> Optional[ObjectHypothesis]:
    """Bottom-up object hypothesis from an unassociated detection.

    Position from the weighted point centroid, yaw from the detection
    azimuth (or facing the camera), one EKF per category whose score clears
    its gate, extents fitted per category prior. Returns None when too few
    points fall inside the box (deferred) or no category clears its gate.
    """
    eligible = [kk for kk, cat in categories.items() if detection.scores[kk] >= cat.score_gate]
    if not eligible:
        return None
    sigma_c = cfg.centroid_sigma_scale * detection.box.diagonal
    position = weighted_centroid(points, detection.box, k, g, sigma_c,
                                 cfg.min_centroid_points)
    if position is None:
        return None
    if detection.azimuth is not None:
        yaw = init_orientation(detection.azimuth, g)
    else:
        yaw = facing_camera_yaw(position, g)

    bank = {}
    for kk in sorted(eligible):
        cat = categories[kk]
        dims_log, _ = fit_scale(position, yaw, detection.box, k, g,
                                cat.dim_prior_mean, cat.dim_prior_cov)
        mean = np.concatenate([position, [yaw], dims_log])
        bank[kk] = EkfState(mean, cat.init_cov.copy())

    pmf = np.zeros(len(detection.scores))
    for kk in eligible:
        pmf[kk] = detection.scores[kk]
    pmf = pmf / pmf.sum()
    return ObjectHypothesis(id=new_id, pmf=pmf, bank=bank, hits=1,
                            last_seen=frame, born=frame)
