"""Causal per-frame update loop over the object map.

Frame step order:

1. long-term objects are checked for predicted re-entry (lifecycle),
2. visibility of every short-term object is classified against the
   current map,
3. visible objects diffuse (predict) and project to sloppy box Gaussians,
4. detections are gated and greedily assigned,
5. assigned objects get an EKF box update per bank entry (weighted by the
   per-category detection score) and a PMF update,
6. unassigned detections spawn new hypotheses,
7. scale priors fire at birth and on a fixed cadence,
8. dominant categories collapse their bank, overlapping same-category
   hypotheses merge, lifecycle prunes and demotes.

Occluded and out-of-view objects are left bitwise-unchanged except for
their status/memory fields, and are excluded from association; their
update resumes when they come back into view.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .association import gate_and_assign, initialize_object, predict_boxes
from .filter import (
    CategoryModel,
    FilterConfig,
    Memory,
    ObjectHypothesis,
    UpdateOutcome,
    apply_scale_prior,
    lifecycle_pass,
    maybe_terminate_bank,
    measurement_update,
    merge_pass,
    pmf_update,
    point_estimate,
    predict,
)
from .geometry import (
    VisKind,
    oriented_overlap_3d,
    project_cuboid,
    visibility_status,
)
from .providers import FrameInput


@dataclass
class ObjectMapper:
    """Owns the object map for one sequence; strictly sequential."""

    categories: Dict[int, CategoryModel]
    cfg: FilterConfig = field(default_factory=FilterConfig)
    objects: List[ObjectHypothesis] = field(default_factory=list)
    _next_id: int = 0

    def step(self, frame: FrameInput) -> List[dict]:
        """Process one frame and return the per-object snapshot records."""
        k, g = frame.intrinsics, frame.pose
        cfg = self.cfg

        active = [o for o in self.objects if o.memory is Memory.SHORT_TERM]
        cuboids = {o.id: point_estimate(o)[1] for o in self.objects}
        for obj in active:
            target = cuboids[obj.id]
            # Hypotheses overlapping the target in 3D are duplicates of the
            # same physical object (objects cannot share space), not occluders.
            others = [cuboids[i] for i in cuboids
                      if i != obj.id and oriented_overlap_3d(target, cuboids[i]) == 0.0]
            obj.status = visibility_status(target, others, k, g)

        visible = [o for o in active if o.status.kind is VisKind.VISIBLE]
        for obj in visible:
            predict(obj, self.categories)

        predicted, skipped = predict_boxes(visible, k, g, cfg)
        by_id = {o.id: o for o in visible}
        assignment = gate_and_assign(predicted, frame.detections, by_id,
                                     self.categories, cfg, skipped)

        updated_ids = set()
        for oid, det_idx, _weight in assignment.pairs:
            obj = by_id[oid]
            det = frame.detections[det_idx]
            any_updated = False
            for cat_id in sorted(obj.bank):
                w = float(min(max(det.scores[cat_id], 0.0), 1.0))
                outcome = measurement_update(obj, cat_id, det.box, w, k, g, cfg)
                any_updated = any_updated or outcome is UpdateOutcome.UPDATED
            if any_updated:
                pmf_update(obj, det.scores, cfg)
                obj.hits += 1
                obj.last_seen = frame.frame
                updated_ids.add(oid)

        # Births: unassigned detections, unless the box is mostly covered by
        # an existing prediction (a duplicate hypothesis would only have to
        # merge later). Occluded objects still occupy image space, so their
        # projected boxes veto births too.
        veto_boxes = [p.box for p in predicted.values()]
        for obj in active:
            if obj.status.kind is VisKind.OCCLUDED:
                box = project_cuboid(k, g, cuboids[obj.id])
                if box is not None:
                    veto_boxes.append(box)

        def covered(det_box) -> float:
            best = 0.0
            for b in veto_boxes:
                inter = det_box.intersect(b)
                if inter is not None:
                    best = max(best, inter.area / det_box.area)
            return best

        for det_idx in assignment.unassigned_detections:
            det = frame.detections[det_idx]
            if covered(det.box) >= cfg.spawn_cover_veto:
                continue
            obj = initialize_object(det, frame.points, k, g, self.categories,
                                    cfg, self._next_id, frame.frame)
            if obj is None:
                continue
            self._next_id += 1
            apply_scale_prior(obj, self.categories)
            maybe_terminate_bank(obj, cfg)
            visible.append(obj)
            self.objects.append(obj)
            veto_boxes.append(det.box)

        for obj in visible:
            age = frame.frame - obj.born
            if age > 0 and cfg.scale_prior_every > 0 and age % cfg.scale_prior_every == 0:
                apply_scale_prior(obj, self.categories)
            if obj.id in updated_ids:
                maybe_terminate_bank(obj, cfg)

        merged = merge_pass(visible, cfg)
        rest = [o for o in self.objects
                if not (o.memory is Memory.SHORT_TERM and o.status.kind is VisKind.VISIBLE)]
        self.objects = lifecycle_pass(sorted(rest + merged, key=lambda o: o.id),
                                      frame.frame, cfg, k, g)
        return self.snapshot()

    def snapshot(self) -> List[dict]:
        """Reportable (confirmed) objects as serializable records."""
        records = []
        for obj in self.objects:
            if not obj.confirmed(self.cfg):
                continue
            cat_id, cuboid, confidence = point_estimate(obj)
            records.append({
                "id": obj.id,
                "category": self.categories[cat_id].name,
                "confidence": confidence,
                "center": [float(v) for v in cuboid.center],
                "yaw": float(cuboid.yaw),
                "dims": [float(v) for v in cuboid.dims],
                "status": obj.status.kind.value,
                "memory": obj.memory.value,
            })
        return records


def run_sequence(frames: Iterable[FrameInput], categories: Dict[int, CategoryModel],
                 cfg: Optional[FilterConfig] = None,
                 timings: Optional[List[float]] = None) -> Iterator[dict]:
    """Stream frames through the mapper, yielding one state-log record per frame."""
    mapper = ObjectMapper(categories, cfg or FilterConfig())
    for frame in frames:
        t0 = _time.perf_counter()
        records = mapper.step(frame)
        if timings is not None:
            timings.append(_time.perf_counter() - t0)
        yield {"frame": frame.frame, "objects": records}
