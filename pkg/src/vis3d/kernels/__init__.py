"""Geometry hot kernels with a compiled core and a NumPy fallback.

The compiled extension (``_ckernels``, Cython) is used when importable;
setting ``VIS3D_PURE_PYTHON=1`` forces the NumPy implementation. Both
backends share one contract and are cross-checked in the test suite.
"""

import os

if os.environ.get("VIS3D_PURE_PYTHON"):
    from . import pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import pykernels as _impl

BACKEND = _impl.BACKEND
rect_corners = _impl.rect_corners
rect_intersection_area = _impl.rect_intersection_area
ray_cuboid_entry = _impl.ray_cuboid_entry

__all__ = ["BACKEND", "rect_corners", "rect_intersection_area", "ray_cuboid_entry"]
