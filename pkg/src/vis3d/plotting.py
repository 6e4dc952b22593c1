"""Deterministic SVG top views of estimated vs ground-truth footprints.

Hand-rolled SVG keeps the output byte-stable across runs and platforms;
coordinates are formatted with fixed precision.
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Cuboid
from .kernels import rect_corners
from .providers import GroundTruthObject

_GT_STYLE = 'fill="none" stroke="#2060c0" stroke-width="2"'
_EST_STYLE = 'fill="none" stroke="#20a040" stroke-width="2" stroke-dasharray="6,3"'
_TRAJ_STYLE = 'fill="none" stroke="#c0a020" stroke-width="1.5"'


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class TopView:
    """Accumulates footprints and a trajectory, then renders one SVG."""

    def __init__(self, size: int = 800, margin: float = 40.0):
        self.size = size
        self.margin = margin
        self.gt: List[Cuboid] = []
        self.estimates: List[Cuboid] = []
        self.trajectory: List[Tuple[float, float]] = []

    def add_ground_truth(self, objects: Sequence[GroundTruthObject]) -> None:
        self.gt.extend(o.cuboid for o in objects)

    def add_estimates(self, cuboids: Sequence[Cuboid]) -> None:
        self.estimates.extend(cuboids)

    def add_trajectory(self, xy: Sequence[Tuple[float, float]]) -> None:
        self.trajectory.extend((float(x), float(y)) for x, y in xy)

    def _bounds(self) -> Tuple[float, float, float, float]:
        xs, ys = [], []
        for cub in self.gt + self.estimates:
            for x, y in rect_corners(cub.center[0], cub.center[1],
                                     cub.dims[0], cub.dims[1], cub.yaw):
                xs.append(x)
                ys.append(y)
        for x, y in self.trajectory:
            xs.append(x)
            ys.append(y)
        if not xs:
            xs, ys = [-1.0, 1.0], [-1.0, 1.0]
        pad = 0.5
        return (min(xs) - pad, max(xs) + pad, min(ys) - pad, max(ys) + pad)

    def render(self) -> str:
        xmin, xmax, ymin, ymax = self._bounds()
        span = max(xmax - xmin, ymax - ymin, 1e-6)
        scale = (self.size - 2 * self.margin) / span

        def to_px(x: float, y: float) -> Tuple[float, float]:
            # +x right, +y up (flip the SVG y axis)
            return (self.margin + (x - xmin) * scale,
                    self.size - self.margin - (y - ymin) * scale)

        def polygon(cub: Cuboid, style: str) -> str:
            pts = " ".join(
                ",".join(map(_fmt, to_px(x, y)))
                for x, y in rect_corners(cub.center[0], cub.center[1],
                                         cub.dims[0], cub.dims[1], cub.yaw))
            return f'<polygon points="{pts}" {style}/>'

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" '
            f'height="{self.size}" viewBox="0 0 {self.size} {self.size}">',
            f'<rect width="{self.size}" height="{self.size}" fill="white"/>',
        ]
        if self.trajectory:
            pts = " ".join(",".join(map(_fmt, to_px(x, y))) for x, y in self.trajectory)
            parts.append(f'<polyline points="{pts}" {_TRAJ_STYLE}/>')
        for cub in self.gt:
            parts.append(polygon(cub, _GT_STYLE))
        for cub in self.estimates:
            parts.append(polygon(cub, _EST_STYLE))

        legend_y = self.margin / 2
        parts.append(f'<text x="{_fmt(self.margin)}" y="{_fmt(legend_y)}" '
                     f'font-family="sans-serif" font-size="14">'
                     f'ground truth (blue) / estimates (green, dashed) / '
                     f'trajectory (yellow); 1 m = {_fmt(scale)} px</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
