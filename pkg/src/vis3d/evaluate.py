"""3D detection scoring: per-frame matching and threshold-grid aggregation.

A true positive is the nearest same-category estimate of a ground-truth
object within a position threshold (and an orientation threshold when one
is set); unmatched ground truth counts as a miss, unmatched estimates as
false alarms. Ground truth is restricted per frame to objects the
visibility oracle marks visible. Two reporting modes exist: ``inst`` uses
the causal per-frame point estimate, ``fnl`` substitutes each object's
state at its last sighting over all frames it was visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Cuboid, angular_distance
from .providers import GroundTruthObject


@dataclass(frozen=True)
class EvalThresholds:
    position: Tuple[float, ...] = (0.5, 1.0, 1.5)                   # meters
    orientation: Tuple[Optional[float], ...] = (math.radians(30.0),
                                                math.radians(45.0),
                                                None)               # radians; None = ignored

    def __post_init__(self):
        pos = tuple(float(p) for p in self.position)
        if any(p <= 0 for p in pos) or list(pos) != sorted(pos):
            raise ValueError("position thresholds must be positive and ascending")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", tuple(self.orientation))


@dataclass
class CellCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) > 0 else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) > 0 else 0.0

    @property
    def precision_defined(self) -> bool:
        return (self.tp + self.fp) > 0


@dataclass
class EvalRecord:
    """Counts per (position threshold, orientation threshold) cell."""

    thresholds: EvalThresholds = field(default_factory=EvalThresholds)
    cells: Dict[Tuple[float, Optional[float]], CellCounts] = field(default_factory=dict)

    def __post_init__(self):
        for pos in self.thresholds.position:
            for ang in self.thresholds.orientation:
                self.cells.setdefault((pos, ang), CellCounts())

    def cell(self, pos: float, ang: Optional[float]) -> CellCounts:
        return self.cells[(pos, ang)]

    def add(self, pos: float, ang: Optional[float], tp: int, fp: int, fn: int) -> None:
        c = self.cell(pos, ang)
        c.tp += tp
        c.fp += fp
        c.fn += fn

    @staticmethod
    def from_totals(tp: int, detections: int, gt_instances: int,
                    pos: float = 1.5, ang: Optional[float] = None) -> "EvalRecord":
        """Build a single-cell record from aggregate counts."""
        rec = EvalRecord(EvalThresholds(position=(pos,), orientation=(ang,)))
        rec.add(pos, ang, tp, detections - tp, gt_instances - tp)
        return rec


Estimate = Tuple[str, Cuboid, float]  # category name, cuboid, confidence


def match_frame(estimates: Sequence[Estimate], gt: Sequence[GroundTruthObject],
                pos_thr: float, ang_thr: Optional[float]
                ) -> Tuple[int, int, int, List[Tuple[int, int]]]:
    """Nearest-first greedy matching of estimates to visible ground truth.

    Returns (tp, fp, fn, matched (gt index, estimate index) pairs). Ties in
    distance break toward the lowest ground-truth id, then the lowest
    estimate index.
    """
    candidates = []
    for gi, gt_obj in enumerate(gt):
        for ei, (cat, cuboid, _conf) in enumerate(estimates):
            if cat != gt_obj.category:
                continue
            dist = float(np.linalg.norm(cuboid.center - gt_obj.cuboid.center))
            if dist > pos_thr:
                continue
            if ang_thr is not None and angular_distance(cuboid.yaw, gt_obj.cuboid.yaw) > ang_thr:
                continue
            candidates.append((dist, gt_obj.gt_id, ei, gi))
    candidates.sort()
    used_gt = set()
    used_est = set()
    pairs: List[Tuple[int, int]] = []
    for _dist, _gid, ei, gi in candidates:
        if gi in used_gt or ei in used_est:
            continue
        used_gt.add(gi)
        used_est.add(ei)
        pairs.append((gi, ei))
    tp = len(pairs)
    fp = len(estimates) - tp
    fn = len(gt) - tp
    return tp, fp, fn, pairs


def evaluate_frames(frames: Iterable[Tuple[Sequence[Estimate], Sequence[GroundTruthObject]]],
                    thresholds: Optional[EvalThresholds] = None) -> EvalRecord:
    """Aggregate matching counts over (estimates, visible gt) pairs."""
    record = EvalRecord(thresholds or EvalThresholds())
    for estimates, gt in frames:
        for pos in record.thresholds.position:
            for ang in record.thresholds.orientation:
                tp, fp, fn, _ = match_frame(estimates, gt, pos, ang)
                record.add(pos, ang, tp, fp, fn)
    return record


# ---------------------------------------------------------------------------
# state-log readers for the two reporting modes

def _record_estimate(obj: dict) -> Estimate:
    return (obj["category"],
            Cuboid(np.asarray(obj["center"], dtype=np.float64), float(obj["yaw"]),
                   np.asarray(obj["dims"], dtype=np.float64)),
            float(obj["confidence"]))


def inst_estimates(state_log: Sequence[dict], frame: int) -> List[Estimate]:
    """Causal point estimates of the objects visible at ``frame``."""
    for rec in state_log:
        if rec["frame"] == frame:
            return [_record_estimate(o) for o in rec["objects"]
                    if o["status"] == "visible"]
    raise KeyError(f"frame {frame} not present in state log")


def fnl_estimates(state_log: Sequence[dict]) -> Dict[int, List[Estimate]]:
    """Final-state substitution: per frame, each visible object reported
    with its state at its last visible frame."""
    sightings: Dict[int, List[int]] = {}
    final_state: Dict[int, Estimate] = {}
    for rec in state_log:
        for obj in rec["objects"]:
            if obj["status"] != "visible":
                continue
            oid = int(obj["id"])
            sightings.setdefault(oid, []).append(rec["frame"])
            final_state[oid] = _record_estimate(obj)  # last write wins
    out: Dict[int, List[Estimate]] = {rec["frame"]: [] for rec in state_log}
    for oid, frames in sightings.items():
        for frame in frames:
            out[frame].append(final_state[oid])
    return out


def evaluate_run(state_log: Sequence[dict], gt: Sequence[GroundTruthObject],
                 visibility: Dict[int, Dict[int, "object"]], mode: str,
                 thresholds: Optional[EvalThresholds] = None) -> EvalRecord:
    """Score a whole run against ground truth restricted to visible objects."""
    if mode not in ("inst", "fnl"):
        raise ValueError("mode must be 'inst' or 'fnl'")
    gt_by_id = {o.gt_id: o for o in gt}
    fnl = fnl_estimates(state_log) if mode == "fnl" else None

    def frames():
        for rec in state_log:
            frame = rec["frame"]
            vis = visibility.get(frame, {})
            visible_gt = [gt_by_id[i] for i in sorted(vis)
                          if vis[i].visible and i in gt_by_id]
            if mode == "inst":
                est = [_record_estimate(o) for o in rec["objects"]
                       if o["status"] == "visible"]
            else:
                est = fnl[frame]
            yield est, visible_gt

    return evaluate_frames(frames(), thresholds)


# ---------------------------------------------------------------------------
# reports

def _fmt_ang(ang: Optional[float]) -> str:
    return "-" if ang is None else f"<{round(math.degrees(ang))}deg"


def render_table(record: EvalRecord, label: str = "run") -> str:
    """Threshold-grid table: one row per orientation threshold."""
    pos_list = record.thresholds.position
    header = ["orient", "method"]
    for pos in pos_list:
        header += [f"TP(<{pos}m)", "Prec", "Rec"]
    rows = [header]
    for ang in record.thresholds.orientation:
        row = [_fmt_ang(ang), label]
        for pos in pos_list:
            c = record.cell(pos, ang)
            row += [str(c.tp), f"{c.precision:.2f}", f"{c.recall:.2f}"]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines)


def write_csv(record: EvalRecord, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ang_deg,pos_m,tp,fp,fn,precision,recall\n")
        for ang in record.thresholds.orientation:
            ang_label = "" if ang is None else f"{math.degrees(ang):.0f}"
            for pos in record.thresholds.position:
                c = record.cell(pos, ang)
                fh.write(f"{ang_label},{pos},{c.tp},{c.fp},{c.fn},"
                         f"{c.precision:.6f},{c.recall:.6f}\n")
