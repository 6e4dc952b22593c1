"""File formats and stream readers/writers.

Everything is line-delimited JSON with one convention: rotations are
scalar-first unit quaternions, angles are radians, lengths are meters.
Floats are serialized with Python's shortest round-trip representation, so
write -> read is exact and repeated runs are byte-identical.

Files in a sequence directory:

* ``poses.jsonl``      {frame, time, q: [w,x,y,z], p: [x,y,z], fx, fy, cx, cy, width, height}
* ``points.jsonl``     {frame, points: [[x,y,z], ...]}
* ``detections.jsonl`` {frame, dets: [{box: [xmin,ymin,xmax,ymax], scores: [...], azimuth?}, ...]}
* ``gt.jsonl``         {id, category, center: [x,y,z], yaw, dims: [w,h,l], static}
* ``visibility.jsonl`` {frame, id, status, fraction}
* ``categories.toml``  per-category priors and gates
* ``stateslog.jsonl``  {frame, objects: [{id, category, confidence, center, yaw, dims, status, memory}, ...]}

Pose records may carry an extra ``cov`` field (pose covariance); it is
accepted and ignored, the filter conditions on the pose estimate itself.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict,Iterator, List, Optional, Sequence, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .association import Detection
from .filter import CategoryModel
from .geometry import Cuboid, Intrinsics, PixelBox, RigidPose, VisKind, Visibility


class StreamFormatError(ValueError):
    """Malformed stream content, annotated with file and line."""


def _reject_constant(name: str):
    raise StreamFormatError(f"non-finite number {name!r} not allowed")


def _iter_jsonl(path: str) -> Iterator[Tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line, parse_constant=_reject_constant)
            except json.JSONDecodeError as exc:
                raise StreamFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            except StreamFormatError as exc:
                raise StreamFormatError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(record, dict):
                raise StreamFormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


def _finite(values, path: str, lineno: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise StreamFormatError(f"{path}:{lineno}: non-finite {what}")
    return arr


def _dump_line(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# domain bundles

@dataclass
class FrameInput:
    frame: int
    time: float
    pose: RigidPose
    intrinsics: Intrinsics
    points: np.ndarray                      # (N, 3) world points
    detections: List[Detection] = field(default_factory=list)


@dataclass
class GroundTruthObject:
    gt_id: int
    category: str
    cuboid: Cuboid
    static: bool = True


# ---------------------------------------------------------------------------
# categories

def load_categories(path: str) -> Dict[int, CategoryModel]:
    """Read category models from a TOML file.

    Extent priors are given in meters (``dims_mean``) with log-space
    standard deviations (``log_dim_sigma``); process/init noise may be
    overridden per category via diagonal sigma lists.
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    defaults = data.get("defaults", {})
    out: Dict[int, CategoryModel] = {}
    for entry in data.get("category", []):
        cid = int(entry["id"])
        dims_mean = np.asarray(entry["dims_mean"], dtype=np.float64)
        if np.any(dims_mean <= 0):
            raise StreamFormatError(f"{path}: category {cid}: dims_mean must be positive")
        log_sigma = np.asarray(entry.get("log_dim_sigma", defaults.get("log_dim_sigma", [0.2, 0.2, 0.2])),
                               dtype=np.float64)
        process_sigma = np.asarray(entry.get("process_sigma", defaults.get(
            "process_sigma", [0.01, 0.01, 0.01, 0.01, 0.005, 0.005, 0.005])), dtype=np.float64)
        init_sigma = np.asarray(entry.get("init_sigma", defaults.get(
            "init_sigma", [0.5, 0.5, 0.3, 0.5, 0.25, 0.25, 0.25])), dtype=np.float64)
        out[cid] = CategoryModel(
            id=cid,
            name=str(entry["name"]),
            dim_prior_mean=np.log(dims_mean),
            dim_prior_cov=np.diag(log_sigma ** 2),
            process_noise=np.diag(process_sigma ** 2),
            init_cov=np.diag(init_sigma ** 2),
            score_gate=float(entry.get("score_gate", defaults.get("score_gate", 0.3))),
        )
    if not out:
        raise StreamFormatError(f"{path}: no categories defined")
    if sorted(out) != list(range(len(out))):
        raise StreamFormatError(f"{path}: category ids must be 0..K-1")
    return out


def write_categories(categories: Dict[int, CategoryModel], path: str) -> None:
    lines = []
    for cid in sorted(categories):
        cat = categories[cid]
        dims = np.exp(cat.dim_prior_mean)
        log_sigma = np.sqrt(np.diag(cat.dim_prior_cov))
        process_sigma = np.sqrt(np.diag(cat.process_noise))
        init_sigma = np.sqrt(np.diag(cat.init_cov))
        lines.append("[[category]]")
        lines.append(f"id = {cid}")
        lines.append(f'name = "{cat.name}"')
        lines.append(f"dims_mean = [{', '.join(repr(float(v)) for v in dims)}]")
        lines.append(f"log_dim_sigma = [{', '.join(repr(float(v)) for v in log_sigma)}]")
        lines.append(f"process_sigma = [{', '.join(repr(float(v)) for v in process_sigma)}]")
        lines.append(f"init_sigma = [{', '.join(repr(float(v)) for v in init_sigma)}]")
        lines.append(f"score_gate = {cat.score_gate!r}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def category_names(categories: Dict[int, CategoryModel]) -> Dict[int, str]:
    return {cid: cat.name for cid, cat in categories.items()}


# ---------------------------------------------------------------------------
# pose / point / detection streams

def write_poses(frames: Sequence[Tuple[int, float, RigidPose, Intrinsics]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame, time, pose, intr in frames:
            record = {
                "frame": int(frame),
                "time": float(time),
                "q": [float(v) for v in pose.q],
                "p": [float(v) for v in pose.t],
                "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                "width": intr.width, "height": intr.height,
            }
            fh.write(_dump_line(record) + "\n")


def write_points(frames: Sequence[Tuple[int, np.ndarray]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame, pts in frames:
            record = {"frame": int(frame),
                      "points": [[float(v) for v in p] for p in np.asarray(pts).reshape(-1, 3)]}
            fh.write(_dump_line(record) + "\n")


def write_detections(frames: Sequence[Tuple[int, Sequence[Detection]]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame, dets in frames:
            encoded = []
            for det in dets:
                entry = {"box": [float(v) for v in det.box.as_vector()],
                         "scores": [float(v) for v in det.scores]}
                if det.azimuth is not None:
                    entry["azimuth"] = float(det.azimuth)
                encoded.append(entry)
            fh.write(_dump_line({"frame": int(frame), "dets": encoded}) + "\n")


def read_pose_stream(path: str) -> List[Tuple[int, float, RigidPose, Intrinsics]]:
    """Read a pose stream on its own (trajectory plotting, diagnostics)."""
    out = []
    for lineno, rec in _iter_jsonl(path):
        q = _finite(rec["q"], path, lineno, "quaternion")
        p = _finite(rec["p"], path, lineno, "translation")
        intr = Intrinsics(float(rec["fx"]), float(rec["fy"]), float(rec["cx"]),
                          float(rec["cy"]), int(rec["width"]), int(rec["height"]))
        out.append((int(rec["frame"]), float(rec.get("time", 0.0)), RigidPose(q, p), intr))
    return out


def _read_indexed(path: str) -> Dict[int, Tuple[int, dict]]:
    """Read a jsonl stream keyed by frame, checking monotonicity."""
    out: Dict[int, Tuple[int, dict]] = {}
    last = None
    for lineno, record in _iter_jsonl(path):
        if "frame" not in record:
            raise StreamFormatError(f"{path}:{lineno}: missing 'frame'")
        frame = int(record["frame"])
        if last is not None and frame <= last:
            raise StreamFormatError(f"{path}:{lineno}: frame index regression at frame {frame}")
        last = frame
        out[frame] = (lineno, record)
    return out


def read_sequence(directory: str) -> List[FrameInput]:
    """Load and join the pose / point / detection streams of a sequence.

    Pose frames must be consecutive; a gap is an error naming the missing
    frame. Frames without detections or points get empty lists.
    """
    poses_path = os.path.join(directory, "poses.jsonl")
    points_path = os.path.join(directory, "points.jsonl")
    dets_path = os.path.join(directory, "detections.jsonl")

    poses = _read_indexed(poses_path)
    if not poses:
        raise StreamFormatError(f"{poses_path}: empty pose stream")
    frames = sorted(poses)
    expected = list(range(frames[0], frames[0] + len(frames)))
    if frames != expected:
        missing = sorted(set(expected) - set(frames))[0]
        raise StreamFormatError(f"{poses_path}: missing pose for frame {missing}")

    points = _read_indexed(points_path) if os.path.exists(points_path) else {}
    dets = _read_indexed(dets_path) if os.path.exists(dets_path) else {}
    for name, stream, path in (("points", points, points_path), ("detections", dets, dets_path)):
        orphan = sorted(set(stream) - set(poses))
        if orphan:
            raise StreamFormatError(f"{path}: missing pose for frame {orphan[0]}")

    K = None
    out: List[FrameInput] = []
    for frame in frames:
        lineno, rec = poses[frame]
        q = _finite(rec["q"], poses_path, lineno, "quaternion")
        p = _finite(rec["p"], poses_path, lineno, "translation")
        try:
            pose = RigidPose(q, p)
        except ValueError as exc:
            raise StreamFormatError(f"{poses_path}:{lineno}: {exc}") from exc
        intr = Intrinsics(float(rec["fx"]), float(rec["fy"]), float(rec["cx"]),
                          float(rec["cy"]), int(rec["width"]), int(rec["height"]))

        pts = np.zeros((0, 3))
        if frame in points:
            plineno, prec = points[frame]
            raw = prec.get("points", [])
            if raw:
                pts = _finite(raw, points_path, plineno, "points").reshape(-1, 3)

        detections: List[Detection] = []
        if frame in dets:
            dlineno, drec = dets[frame]
            for entry in drec.get("dets", []):
                box_vals = _finite(entry["box"], dets_path, dlineno, "box")
                scores = _finite(entry["scores"], dets_path, dlineno, "scores")
                if K is None:
                    K = len(scores)
                elif len(scores) != K:
                    raise StreamFormatError(
                        f"{dets_path}:{dlineno}: score vector length {len(scores)} != {K}")
                azimuth = entry.get("azimuth")
                if azimuth is not None:
                    azimuth = float(_finite([azimuth], dets_path, dlineno, "azimuth")[0])
                try:
                    box = PixelBox(*[float(v) for v in box_vals])
                except (TypeError, ValueError) as exc:
                    raise StreamFormatError(f"{dets_path}:{dlineno}: {exc}") from exc
                detections.append(Detection(box, scores, azimuth))

        out.append(FrameInput(frame=frame, time=float(rec.get("time", frame)),
                              pose=pose, intrinsics=intr, points=pts,
                              detections=detections))
    return out


# ---------------------------------------------------------------------------
# ground truth and visibility oracle

def write_ground_truth(objects: Sequence[GroundTruthObject], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            record = {
                "id": int(obj.gt_id),
                "category": obj.category,
                "center": [float(v) for v in obj.cuboid.center],
                "yaw": float(obj.cuboid.yaw),
                "dims": [float(v) for v in obj.cuboid.dims],
                "static": bool(obj.static),
            }
            fh.write(_dump_line(record) + "\n")


def read_ground_truth(path: str) -> List[GroundTruthObject]:
    out = []
    for lineno, rec in _iter_jsonl(path):
        center = _finite(rec["center"], path, lineno, "center")
        dims = _finite(rec["dims"], path, lineno, "dims")
        yaw = float(_finite([rec["yaw"]], path, lineno, "yaw")[0])
        out.append(GroundTruthObject(
            gt_id=int(rec["id"]),
            category=str(rec["category"]),
            cuboid=Cuboid(center, yaw, dims),
            static=bool(rec.get("static", True)),
        ))
    return out


def write_visibility(records: Sequence[Tuple[int, int, Visibility]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame, gt_id, vis in records:
            fh.write(_dump_line({
                "frame": int(frame),
                "id": int(gt_id),
                "status": vis.kind.value,
                "fraction": float(vis.blocked_fraction),
            }) + "\n")


def read_visibility(path: str) -> Dict[int, Dict[int, Visibility]]:
    """frame -> gt id -> visibility."""
    out: Dict[int, Dict[int, Visibility]] = {}
    for lineno, rec in _iter_jsonl(path):
        vis = Visibility(VisKind(rec["status"]), float(rec.get("fraction", 0.0)))
        out.setdefault(int(rec["frame"]), {})[int(rec["id"])] = vis
    return out


# ---------------------------------------------------------------------------
# filter state log

def snapshot_record(frame: int, objects: Sequence[dict]) -> dict:
    return {"frame": int(frame), "objects": list(objects)}


def write_state_log(snapshots: Sequence[dict], path: str) -> None:
    """One line per frame: {frame, objects: [...]}, deterministic field order."""
    with open(path, "w", encoding="utf-8") as fh:
        for snap in snapshots:
            fh.write(format_state_line(snap) + "\n")


def format_state_line(snapshot: dict) -> str:
    objects = []
    for obj in snapshot["objects"]:
        objects.append({
            "id": int(obj["id"]),
            "category": obj["category"],
            "confidence": float(obj["confidence"]),
            "center": [float(v) for v in obj["center"]],
            "yaw": float(obj["yaw"]),
            "dims": [float(v) for v in obj["dims"]],
            "status": obj["status"],
            "memory": obj["memory"],
        })
    return _dump_line({"frame": int(snapshot["frame"]), "objects": objects})


def read_state_log(path: str) -> List[dict]:
    out = []
    for lineno, rec in _iter_jsonl(path):
        if "frame" not in rec or "objects" not in rec:
            raise StreamFormatError(f"{path}:{lineno}: missing frame/objects")
        for obj in rec["objects"]:
            _finite(obj["center"], path, lineno, "center")
            _finite(obj["dims"], path, lineno, "dims")
            _finite([obj["yaw"], obj["confidence"]], path, lineno, "yaw/confidence")
        out.append(rec)
    return out
