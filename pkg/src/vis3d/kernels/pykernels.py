"""NumPy reference implementations of the geometry hot kernels.

Same contract as the compiled twin in ``_ckernels.pyx``; selected at import
time by :mod:`vis3d.kernels` when the extension is unavailable or when
``VIS3D_PURE_PYTHON`` is set.
"""

import math

import numpy as np

BACKEND = "python"

_PARALLEL_EPS = 1e-12


def rect_corners(cx, cy, w, h, yaw):
    """Counter-clockwise corners of a yaw-rotated rectangle in the plane."""
    c, s = math.cos(yaw), math.sin(yaw)
    hw, hh = 0.5 * w, 0.5 * h
    out = []
    for ox, oy in ((hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh)):
        out.append((cx + c * ox - s * oy, cy + s * ox + c * oy))
    return out


def _polygon_area(poly):
    area = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return 0.5 * abs(area)


def rect_intersection_area(cx0, cy0, w0, h0, yaw0, cx1, cy1, w1, h1, yaw1):
    """Overlap area of two oriented rectangles (Sutherland-Hodgman clip)."""
    subject = rect_corners(cx0, cy0, w0, h0, yaw0)
    clip = rect_corners(cx1, cy1, w1, h1, yaw1)

    output = subject
    for i in range(4):
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % 4]
        ex, ey = bx - ax, by - ay
        input_list = output
        output = []
        if not input_list:
            return 0.0
        sx, sy = input_list[-1]
        s_in = ex * (sy - ay) - ey * (sx - ax) >= 0.0
        for px, py in input_list:
            p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
            if p_in != s_in:
                dx, dy = px - sx, py - sy
                denom = ex * dy - ey * dx
                if abs(denom) > _PARALLEL_EPS:
                    t = (ex * (ay - sy) - ey * (ax - sx)) / denom
                    output.append((sx + t * dx, sy + t * dy))
            if p_in:
                output.append((px, py))
            sx, sy, s_in = px, py, p_in
    if len(output) < 3:
        return 0.0
    return _polygon_area(output)


def ray_cuboid_entry(origin, dirs, center, yaw, dims):
    """Ray parameter at which each ray first enters a yaw-rotated cuboid.

    Parameters
    ----------
    origin : (3,) ray origin, world frame.
    dirs : (N, 3) ray directions, need not be unit length.
    center, yaw, dims : cuboid center (3,), rotation about +z, extents (3,).

    Returns
    -------
    (N,) float64, ``inf`` where the ray misses. The parameter is clamped to
    zero when the origin lies inside the cuboid.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    o = rot @ (np.asarray(origin, dtype=np.float64) - np.asarray(center, dtype=np.float64))
    d = dirs @ rot.T
    half = 0.5 * np.asarray(dims, dtype=np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (-half - o) / d
        t_hi = (half - o) / d
    near = np.minimum(t_lo, t_hi)
    far = np.maximum(t_lo, t_hi)

    parallel = np.abs(d) < _PARALLEL_EPS
    inside = np.abs(o) <= half
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)

    t_min = near.max(axis=1)
    t_max = far.min(axis=1)
    hit = (t_min <= t_max) & (t_max > 0.0)
    return np.where(hit, np.maximum(t_min, 0.0), np.inf)
