"""Per-object posterior: category probability mass x bank of category-conditional EKFs.

The object state is a 7-vector [px, py, pz, yaw, log w, log h, log l]; the
log parameterization keeps extents positive without constrained filtering.
The measurement is the axis-aligned pixel box of the projected cuboid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import (
    _CORNER_SIGNS,
    Cuboid,
    Intrinsics,
    MIN_VISIBLE_PIXELS,
    PixelBox,
    RigidPose,
    VisKind,
    Visibility,
    VISIBLE,
    cuboid_corners,
    image_box,
    oriented_overlap_3d,
    project_cuboid,
    project_points,
    rot_z,
    wrap_angle,
)

STATE_DIM = 7
BOX_DIM = 4

# chi^2 inverse CDF at 0.99 for 4 dof
CHI2_GATE_4DOF_99 = 13.28


class UpdateOutcome(Enum):
    UPDATED = "updated"
    GATED_OUT = "gated_out"
    NOT_PROJECTABLE = "not_projectable"


class Memory(Enum):
    SHORT_TERM = "short"
    LONG_TERM = "long"


@dataclass
class EkfState:
    """Gaussian over [position, yaw, log-dims] for one category hypothesis."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(STATE_DIM)
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(STATE_DIM, STATE_DIM)

    def cuboid(self) -> Cuboid:
        return Cuboid(self.mean[:3].copy(), float(self.mean[3]), np.exp(self.mean[4:7]))

    def copy(self) -> "EkfState":
        return EkfState(self.mean.copy(), self.cov.copy())


@dataclass
class CategoryModel:
    """Per-category priors and gates."""

    id: int
    name: str
    dim_prior_mean: np.ndarray      # log-extents
    dim_prior_cov: np.ndarray       # 3x3, log-space
    process_noise: np.ndarray       # 7x7 diffusion per frame
    init_cov: np.ndarray            # 7x7 covariance for new hypotheses
    score_gate: float = 0.3

    def __post_init__(self):
        self.dim_prior_mean = np.asarray(self.dim_prior_mean, dtype=np.float64).reshape(3)
        self.dim_prior_cov = np.asarray(self.dim_prior_cov, dtype=np.float64).reshape(3, 3)
        self.process_noise = np.asarray(self.process_noise, dtype=np.float64).reshape(STATE_DIM, STATE_DIM)
        self.init_cov = np.asarray(self.init_cov, dtype=np.float64).reshape(STATE_DIM, STATE_DIM)


@dataclass
class FilterConfig:
    tau_dom: float = 0.95           # category dominance threshold
    tau_merge: float = 0.3          # 3D IoU merge threshold
    confirm_hits: int = 3           # associated updates before an object is reported
    coast_frames: int = 5           # visible-but-unassociated frames before deletion
    longterm_frames: int = 30       # frames out of view before long-term memory
    pixel_noise_base: float = 4.0   # px
    pixel_noise_rel: float = 0.05   # px per px of box extent
    chi2_gate: float = CHI2_GATE_4DOF_99
    score_floor: float = 1e-3
    weight_floor: float = 1e-3
    scale_prior_every: int = 10     # frames between scale-prior pseudo-measurements
    min_centroid_points: int = 3
    centroid_sigma_scale: float = 0.25  # sigma = scale * box diagonal
    spawn_cover_veto: float = 0.5   # suppress births whose box is mostly covered by an existing prediction


@dataclass
class ObjectHypothesis:
    """One tracked object: category PMF + per-category EKF bank + lifecycle."""

    id: int
    pmf: np.ndarray
    bank: Dict[int, EkfState]
    status: Visibility = VISIBLE
    memory: Memory = Memory.SHORT_TERM
    hits: int = 1
    last_seen: int = 0
    born: int = 0
    miss_streak: int = 0    # consecutive visible-but-unassociated frames
    hidden_streak: int = 0  # consecutive occluded/out-of-view frames

    def __post_init__(self):
        self.pmf = np.asarray(self.pmf, dtype=np.float64).reshape(-1)

    def map_category(self) -> int:
        return int(np.argmax(self.pmf))

    def confirmed(self, cfg: FilterConfig) -> bool:
        return self.hits >= cfg.confirm_hits


def point_estimate(obj: ObjectHypothesis) -> Tuple[int, Cuboid, float]:
    """MAP category, its EKF-mean cuboid and the category confidence.

    Ties on the PMF go to the lowest category id.
    """
    k = obj.map_category()
    return k, obj.bank[k].cuboid(), float(obj.pmf[k])


# ---------------------------------------------------------------------------
# measurement model

def box_measurement(k: Intrinsics, g: RigidPose, state: EkfState,
                    clip_to_image: bool = True):
    """Predicted pixel box and its Jacobian wrt the 7D state.

    Returns (box 4-vector [xmin, ymin, xmax, ymax], 4x7 Jacobian), or None
    when any cuboid corner falls behind the camera.

    The box extremes are min/max over projected corners; the Jacobian is
    taken holding the extremal corner of each coordinate fixed, which is
    exact wherever the active corner set is locally stable. Detectors only
    ever report boxes inside the image, so by default the prediction is
    clipped to the image rectangle and clipped coordinates get a zero
    Jacobian row (they carry no information about the state).
    """
    mean = state.mean
    yaw = float(mean[3])
    dims = np.exp(mean[4:7])
    cub = Cuboid(mean[:3].copy(), yaw, dims)
    corners = cuboid_corners(cub)
    uv, valid = project_points(k, g, corners)
    if not valid.all():
        return None

    rot_wc = g.rotation()
    rz = rot_z(yaw)
    c, s = math.cos(yaw), math.sin(yaw)
    drz = np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])
    offsets = _CORNER_SIGNS * (0.5 * dims)

    def corner_jacobians(i: int) -> Tuple[np.ndarray, np.ndarray]:
        # d(pixel)/d(state) rows for corner i
        xw = corners[i]
        xc = rot_wc.T @ (xw - g.t)
        z = xc[2]
        du_dxc = np.array([k.fx / z, 0.0, -k.fx * xc[0] / z ** 2])
        dv_dxc = np.array([0.0, k.fy / z, -k.fy * xc[1] / z ** 2])
        dxc_dxw = rot_wc.T
        dxw = np.zeros((3, STATE_DIM))
        dxw[:, 0:3] = np.eye(3)
        dxw[:, 3] = drz @ offsets[i]
        for j in range(3):
            dxw[:, 4 + j] = rz[:, j] * offsets[i][j]
        du = du_dxc @ dxc_dxw @ dxw
        dv = dv_dxc @ dxc_dxw @ dxw
        return du, dv

    i_xmin = int(np.argmin(uv[:, 0]))
    i_ymin = int(np.argmin(uv[:, 1]))
    i_xmax = int(np.argmax(uv[:, 0]))
    i_ymax = int(np.argmax(uv[:, 1]))

    h = np.array([uv[i_xmin, 0], uv[i_ymin, 1], uv[i_xmax, 0], uv[i_ymax, 1]])
    jac = np.zeros((BOX_DIM, STATE_DIM))
    jac[0] = corner_jacobians(i_xmin)[0]
    jac[1] = corner_jacobians(i_ymin)[1]
    jac[2] = corner_jacobians(i_xmax)[0]
    jac[3] = corner_jacobians(i_ymax)[1]
    if clip_to_image:
        bounds = ((0.0, float(k.width)), (0.0, float(k.height)),
                  (0.0, float(k.width)), (0.0, float(k.height)))
        for i, (lo, hi) in enumerate(bounds):
            if h[i] < lo:
                h[i] = lo
                jac[i, :] = 0.0
            elif h[i] > hi:
                h[i] = hi
                jac[i, :] = 0.0
    return h, jac


def box_noise(box: PixelBox, cfg: FilterConfig, weight: float = 1.0) -> np.ndarray:
    """Measurement covariance: base + size-proportional noise, inflated by 1/weight."""
    sx = cfg.pixel_noise_base + cfg.pixel_noise_rel * box.width
    sy = cfg.pixel_noise_base + cfg.pixel_noise_rel * box.height
    r = np.diag([sx * sx, sy * sy, sx * sx, sy * sy])
    return r / max(weight, cfg.weight_floor)


def _joseph_update(state: EkfState, innovation: np.ndarray, jac: np.ndarray,
                   noise: np.ndarray) -> None:
    s_mat = jac @ state.cov @ jac.T + noise
    gain = np.linalg.solve(s_mat, jac @ state.cov).T
    state.mean = state.mean + gain @ innovation
    state.mean[3] = wrap_angle(state.mean[3])
    i_kh = np.eye(STATE_DIM) - gain @ jac
    cov = i_kh @ state.cov @ i_kh.T + gain @ noise @ gain.T
    state.cov = 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# filter operations

def predict(obj: ObjectHypothesis, categories: Dict[int, CategoryModel]) -> ObjectHypothesis:
    """Diffusion step: objects are static, so only process noise is added."""
    for k, state in obj.bank.items():
        state.cov = state.cov + categories[k].process_noise
    return obj


def measurement_update(obj: ObjectHypothesis, category: int, box: PixelBox,
                       weight: float, k: Intrinsics, g: RigidPose,
                       cfg: FilterConfig) -> UpdateOutcome:
    """EKF update of one bank entry with a detected pixel box."""
    state = obj.bank[category]
    meas = box_measurement(k, g, state)
    if meas is None:
        return UpdateOutcome.NOT_PROJECTABLE
    h, jac = meas
    noise = box_noise(box, cfg, weight)
    innovation = box.as_vector() - h
    s_mat = jac @ state.cov @ jac.T + noise
    d2 = float(innovation @ np.linalg.solve(s_mat, innovation))
    if d2 > cfg.chi2_gate:
        return UpdateOutcome.GATED_OUT
    _joseph_update(state, innovation, jac, noise)
    return UpdateOutcome.UPDATED


def pmf_update(obj: ObjectHypothesis, scores: Optional[np.ndarray],
               cfg: FilterConfig) -> bool:
    """Multiply the category PMF by floored detection scores and renormalize.

    ``scores=None`` means the object was not visible; the PMF is left
    untouched. Returns False when the product degenerates to zero (prior
    kept).
    """
    if scores is None:
        return True
    scores = np.asarray(scores, dtype=np.float64).reshape(obj.pmf.shape)
    post = obj.pmf * np.maximum(scores, cfg.score_floor)
    total = post.sum()
    if total <= 0.0 or not np.isfinite(total):
        return False
    obj.pmf = post / total
    return True


def gaussian_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    diff = np.asarray(x) - np.asarray(mean)
    chol = np.linalg.cholesky(cov)
    alpha = np.linalg.solve(chol, diff)
    maha = float(alpha @ alpha)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    d = len(diff)
    return math.exp(-0.5 * (maha + logdet + d * math.log(2.0 * math.pi)))


_DIM_OBS = np.zeros((3, STATE_DIM))
_DIM_OBS[:, 4:7] = np.eye(3)


def apply_scale_prior(obj: ObjectHypothesis,
                      categories: Dict[int, CategoryModel]) -> ObjectHypothesis:
    """Category scale prior as pseudo-measurement and PMF reweighting.

    Each bank entry is pulled toward its category's log-extent prior, and
    the PMF is multiplied by the marginal likelihood of the current
    log-extents under that prior. Hypotheses whose metric size is far from
    the category prior (a toy car, say) lose essentially all their mass.
    """
    factors = np.zeros_like(obj.pmf)
    for k, state in obj.bank.items():
        cat = categories[k]
        dims_mean = state.mean[4:7]
        dims_cov = state.cov[4:7, 4:7]
        factors[k] = gaussian_density(dims_mean, cat.dim_prior_mean,
                                      cat.dim_prior_cov + dims_cov)
        innovation = cat.dim_prior_mean - dims_mean
        _joseph_update(state, innovation, _DIM_OBS, cat.dim_prior_cov)

    post = obj.pmf * factors
    total = post.sum()
    if total > 0.0 and np.isfinite(total):
        obj.pmf = post / total
    return obj


def maybe_terminate_bank(obj: ObjectHypothesis, cfg: FilterConfig) -> ObjectHypothesis:
    """Collapse the bank to the dominant category once it exceeds tau_dom."""
    k = obj.map_category()
    if obj.pmf[k] >= cfg.tau_dom:
        obj.bank = {k: obj.bank[k]}
        obj.pmf = np.zeros_like(obj.pmf)
        obj.pmf[k] = 1.0
    return obj


def _fuse_states(a: EkfState, b: EkfState) -> EkfState:
    """Inverse-covariance-weighted fusion of two Gaussians over the same state."""
    mean_b = b.mean.copy()
    mean_b[3] = a.mean[3] + wrap_angle(b.mean[3] - a.mean[3])
    info_a = np.linalg.inv(a.cov)
    info_b = np.linalg.inv(b.cov)
    cov = np.linalg.inv(info_a + info_b)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (info_a @ a.mean + info_b @ mean_b)
    mean[3] = wrap_angle(mean[3])
    return EkfState(mean, cov)


def _merge_pair(keep: ObjectHypothesis, drop: ObjectHypothesis) -> ObjectHypothesis:
    pmf = keep.pmf * drop.pmf
    shared = sorted(set(keep.bank) & set(drop.bank))
    bank = {k: _fuse_states(keep.bank[k], drop.bank[k]) for k in shared}
    mask = np.zeros_like(pmf, dtype=bool)
    mask[shared] = True
    pmf = np.where(mask, pmf, 0.0)
    total = pmf.sum()
    if total <= 0.0:  # cannot happen for same-MAP merges; guard anyway
        pmf = np.zeros_like(keep.pmf)
        pmf[keep.map_category()] = 1.0
        bank = {keep.map_category(): keep.bank[keep.map_category()]}
    else:
        pmf = pmf / total
    return ObjectHypothesis(
        id=keep.id,
        pmf=pmf,
        bank=bank,
        status=keep.status,
        memory=keep.memory,
        hits=keep.hits + drop.hits,
        last_seen=max(keep.last_seen, drop.last_seen),
        born=min(keep.born, drop.born),
        miss_streak=min(keep.miss_streak, drop.miss_streak),
        hidden_streak=min(keep.hidden_streak, drop.hidden_streak),
    )


def merge_pass(objects: List[ObjectHypothesis], cfg: FilterConfig) -> List[ObjectHypothesis]:
    """Fuse same-category hypotheses whose cuboids overlap in space.

    Pairs are processed in descending IoU order and the pass repeats until
    no pair qualifies, so the survivor set does not depend on input order.
    The older hypothesis keeps its id.
    """
    objs = {o.id: o for o in objects}
    while True:
        best = None
        ids = sorted(objs)
        for i, ida in enumerate(ids):
            a = objs[ida]
            ka, cub_a, _ = point_estimate(a)
            for idb in ids[i + 1:]:
                b = objs[idb]
                kb, cub_b, _ = point_estimate(b)
                if ka != kb:
                    continue
                iou = oriented_overlap_3d(cub_a, cub_b)
                if iou < cfg.tau_merge:
                    continue
                key = (-iou, ida, idb)
                if best is None or key < best[0]:
                    best = (key, ida, idb)
        if best is None:
            break
        _, ida, idb = best
        a, b = objs[ida], objs[idb]
        keep, drop = (a, b) if (a.born, a.id) <= (b.born, b.id) else (b, a)
        merged = _merge_pair(keep, drop)
        del objs[drop.id]
        objs[keep.id] = merged
    return [objs[i] for i in sorted(objs)]


def lifecycle_pass(objects: List[ObjectHypothesis], frame: int, cfg: FilterConfig,
                   k: Optional[Intrinsics] = None,
                   g: Optional[RigidPose] = None) -> List[ObjectHypothesis]:
    """Birth/death bookkeeping and the short-term / long-term memory swap.

    * Unconfirmed hypotheses that were visible yet unassociated for
      ``coast_frames`` consecutive frames are dropped. Occluded objects never
      accumulate misses.
    * Objects out of view or occluded for ``longterm_frames`` are demoted to
      long-term memory; they re-enter short-term memory (active from the
      next frame) as soon as their cuboid projects back into the image.
    """
    survivors: List[ObjectHypothesis] = []
    for obj in objects:
        if obj.memory is Memory.LONG_TERM:
            if k is not None and g is not None:
                _, cub, _ = point_estimate(obj)
                box = project_cuboid(k, g, cub)
                if box is not None:
                    clipped = box.intersect(image_box(k))
                    if clipped is not None and clipped.area >= MIN_VISIBLE_PIXELS:
                        obj.memory = Memory.SHORT_TERM
                        obj.hidden_streak = 0
            survivors.append(obj)
            continue

        associated = obj.last_seen == frame
        if obj.status.kind is VisKind.VISIBLE:
            obj.hidden_streak = 0
            obj.miss_streak = 0 if associated else obj.miss_streak + 1
        else:
            obj.hidden_streak += 1

        if not obj.confirmed(cfg) and obj.miss_streak >= cfg.coast_frames:
            continue
        if obj.hidden_streak >= cfg.longterm_frames:
            obj.memory = Memory.LONG_TERM
        survivors.append(obj)
    return survivors
