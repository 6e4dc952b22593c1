# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry hot kernels. Contract documented in pykernels.py."""

from libc.math cimport cos, sin, fabs, INFINITY

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

cdef double _PARALLEL_EPS = 1e-12


cdef void _corners(double cx, double cy, double w, double h, double yaw,
                   double* xs, double* ys) noexcept nogil:
    cdef double c = cos(yaw)
    cdef double s = sin(yaw)
    cdef double hw = 0.5 * w
    cdef double hh = 0.5 * h
    xs[0] = cx + c * hw - s * hh;  ys[0] = cy + s * hw + c * hh
    xs[1] = cx - c * hw - s * hh;  ys[1] = cy - s * hw + c * hh
    xs[2] = cx - c * hw + s * hh;  ys[2] = cy - s * hw - c * hh
    xs[3] = cx + c * hw + s * hh;  ys[3] = cy + s * hw - c * hh


def rect_corners(double cx, double cy, double w, double h, double yaw):
    """Counter-clockwise corners of a yaw-rotated rectangle in the plane."""
    cdef double xs[4]
    cdef double ys[4]
    _corners(cx, cy, w, h, yaw, xs, ys)
    return [(xs[0], ys[0]), (xs[1], ys[1]), (xs[2], ys[2]), (xs[3], ys[3])]


def rect_intersection_area(double cx0, double cy0, double w0, double h0, double yaw0,
                           double cx1, double cy1, double w1, double h1, double yaw1):
    """Overlap area of two oriented rectangles (Sutherland-Hodgman clip)."""
    # Clipping a convex 4-gon by a convex 4-gon yields at most 8 vertices.
    cdef double px[16]
    cdef double py[16]
    cdef double qx[16]
    cdef double qy[16]
    cdef double clx[4]
    cdef double cly[4]
    cdef int n, m, i, j, jn
    cdef double ax, ay, bx, by, ex, ey
    cdef double sx, sy, vx, vy, dx, dy, denom, t, cross_s, cross_v
    cdef bint s_in, v_in
    cdef double area

    _corners(cx0, cy0, w0, h0, yaw0, px, py)
    _corners(cx1, cy1, w1, h1, yaw1, clx, cly)
    n = 4

    for i in range(4):
        ax = clx[i]; ay = cly[i]
        bx = clx[(i + 1) & 3]; by = cly[(i + 1) & 3]
        ex = bx - ax; ey = by - ay
        m = 0
        if n == 0:
            return 0.0
        sx = px[n - 1]; sy = py[n - 1]
        cross_s = ex * (sy - ay) - ey * (sx - ax)
        s_in = cross_s >= 0.0
        for j in range(n):
            vx = px[j]; vy = py[j]
            cross_v = ex * (vy - ay) - ey * (vx - ax)
            v_in = cross_v >= 0.0
            if v_in != s_in:
                dx = vx - sx; dy = vy - sy
                denom = ex * dy - ey * dx
                if fabs(denom) > _PARALLEL_EPS:
                    t = (ex * (ay - sy) - ey * (ax - sx)) / denom
                    qx[m] = sx + t * dx; qy[m] = sy + t * dy
                    m += 1
            if v_in:
                qx[m] = vx; qy[m] = vy
                m += 1
            sx = vx; sy = vy; s_in = v_in
        n = m
        for j in range(n):
            px[j] = qx[j]; py[j] = qy[j]

    if n < 3:
        return 0.0
    area = 0.0
    for j in range(n):
        jn = j + 1
        if jn == n:
            jn = 0
        area += px[j] * py[jn] - px[jn] * py[j]
    return 0.5 * fabs(area)


def ray_cuboid_entry(origin, dirs, center, double yaw, dims):
    """Ray parameter at which each ray first enters a yaw-rotated cuboid.

    Same contract as the NumPy fallback: (N,) float64, inf on miss, clamped
    to zero when the origin is inside.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] o_arr = np.ascontiguousarray(origin, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] d_arr = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c_arr = np.ascontiguousarray(center, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dim_arr = np.ascontiguousarray(dims, dtype=np.float64)
    cdef Py_ssize_t n_rays = d_arr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n_rays, dtype=np.float64)

    cdef double cy = cos(yaw)
    cdef double sy = sin(yaw)
    cdef double ox = o_arr[0] - c_arr[0]
    cdef double oy = o_arr[1] - c_arr[1]
    cdef double oz = o_arr[2] - c_arr[2]
    # Local cuboid frame: rotate by -yaw about z.
    cdef double lox = cy * ox + sy * oy
    cdef double loy = -sy * ox + cy * oy
    cdef double loz = oz
    cdef double hx = 0.5 * dim_arr[0]
    cdef double hy = 0.5 * dim_arr[1]
    cdef double hz = 0.5 * dim_arr[2]

    cdef Py_ssize_t i
    cdef int k
    cdef double dx, dy, dz, t_min, t_max, t1, t2, d_k, o_k, h_k, tmp
    cdef bint miss

    for i in range(n_rays):
        dx = cy * d_arr[i, 0] + sy * d_arr[i, 1]
        dy = -sy * d_arr[i, 0] + cy * d_arr[i, 1]
        dz = d_arr[i, 2]
        t_min = -INFINITY
        t_max = INFINITY
        miss = False
        for k in range(3):
            if k == 0:
                d_k = dx; o_k = lox; h_k = hx
            elif k == 1:
                d_k = dy; o_k = loy; h_k = hy
            else:
                d_k = dz; o_k = loz; h_k = hz
            if fabs(d_k) < _PARALLEL_EPS:
                if fabs(o_k) > h_k:
                    miss = True
                    break
                continue
            t1 = (-h_k - o_k) / d_k
            t2 = (h_k - o_k) / d_k
            if t1 > t2:
                tmp = t1; t1 = t2; t2 = tmp
            if t1 > t_min:
                t_min = t1
            if t2 < t_max:
                t_max = t2
        if miss or t_min > t_max or t_max <= 0.0:
            out[i] = INFINITY
        else:
            out[i] = t_min if t_min > 0.0 else 0.0
    return out
