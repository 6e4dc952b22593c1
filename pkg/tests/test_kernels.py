"""Backend parity and correctness of the geometry hot kernels."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vis3d.kernels import BACKEND, pykernels

try:
    from vis3d.kernels import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = [pykernels] + ([_ckernels] if _ckernels is not None else [])


def test_compiled_backend_available():
    # The build ships the extension; the fallback is for pure environments.
    assert _ckernels is not None
    assert BACKEND in ("cython", "python")


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
class TestRectIntersection:
    def test_identical(self, impl):
        assert impl.rect_intersection_area(0, 0, 2, 3, 0.3, 0, 0, 2, 3, 0.3) == pytest.approx(6.0)

    def test_disjoint(self, impl):
        assert impl.rect_intersection_area(0, 0, 1, 1, 0, 10, 0, 1, 1, 0) == 0.0

    def test_half_offset(self, impl):
        assert impl.rect_intersection_area(0, 0, 1, 1, 0, 0.5, 0, 1, 1, 0) == pytest.approx(0.5)

    def test_rotated_45_inside(self, impl):
        # unit square rotated 45 deg inside a 2x2 square: fully contained
        area = impl.rect_intersection_area(0, 0, 2, 2, 0, 0, 0, 1, 1, math.pi / 4)
        assert area == pytest.approx(1.0, abs=1e-9)

    def test_cross_rotation_symmetric(self, impl):
        a = impl.rect_intersection_area(0, 0, 2, 1, 0.4, 0.3, -0.2, 1.5, 1.2, -0.9)
        b = impl.rect_intersection_area(0.3, -0.2, 1.5, 1.2, -0.9, 0, 0, 2, 1, 0.4)
        assert a == pytest.approx(b, rel=1e-9)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
class TestRayCuboid:
    def test_axis_hit(self, impl):
        t = impl.ray_cuboid_entry([0, 0, 0], np.array([[0.0, 0.0, 1.0]]), [0, 0, 5], 0.0, [2, 2, 2])
        assert t[0] == pytest.approx(4.0)

    def test_miss(self, impl):
        t = impl.ray_cuboid_entry([0, 0, 0], np.array([[1.0, 0.0, 0.0]]), [0, 0, 5], 0.0, [2, 2, 2])
        assert np.isinf(t[0])

    def test_origin_inside_clamps_to_zero(self, impl):
        t = impl.ray_cuboid_entry([0, 0, 5], np.array([[0.0, 0.0, 1.0]]), [0, 0, 5], 0.0, [2, 2, 2])
        assert t[0] == 0.0

    def test_behind_is_miss(self, impl):
        t = impl.ray_cuboid_entry([0, 0, 10], np.array([[0.0, 0.0, 1.0]]), [0, 0, 5], 0.0, [2, 2, 2])
        assert np.isinf(t[0])

    def test_yawed_cuboid(self, impl):
        # ray along +x towards a cuboid rotated 45 deg: entry at corner distance
        t = impl.ray_cuboid_entry([-5, 0, 0], np.array([[1.0, 0.0, 0.0]]),
                                  [0, 0, 0], math.pi / 4, [2, 2, 2])
        assert t[0] == pytest.approx(5 - math.sqrt(2), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_backend_parity_random(seed):
    if _ckernels is None:
        pytest.skip("compiled backend unavailable")
    rng = np.random.default_rng(seed)
    args = [
        rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.2, 4), rng.uniform(0.2, 4),
        rng.uniform(-math.pi, math.pi),
        rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.2, 4), rng.uniform(0.2, 4),
        rng.uniform(-math.pi, math.pi),
    ]
    a_py = pykernels.rect_intersection_area(*args)
    a_c = _ckernels.rect_intersection_area(*args)
    assert a_c == pytest.approx(a_py, abs=1e-9)

    origin = rng.uniform(-5, 5, 3)
    dirs = rng.normal(size=(32, 3))
    center = rng.uniform(-5, 5, 3)
    yaw = rng.uniform(-math.pi, math.pi)
    dims = rng.uniform(0.2, 3, 3)
    t_py = pykernels.ray_cuboid_entry(origin, dirs, center, yaw, dims)
    t_c = _ckernels.ray_cuboid_entry(origin, dirs, center, yaw, dims)
    assert np.array_equal(np.isinf(t_py), np.isinf(t_c))
    finite = np.isfinite(t_py)
    assert np.allclose(t_py[finite], t_c[finite], atol=1e-9)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_ray_entry_against_dense_sampling(impl):
    """March along random rays and compare first-inside sample to the kernel."""
    rng = np.random.default_rng(11)
    center = np.array([1.0, -2.0, 3.0])
    yaw = 0.7
    dims = np.array([2.0, 1.0, 1.5])
    c, s = math.cos(-yaw), math.sin(-yaw)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

    def inside(p):
        q = rot @ (p - center)
        return np.all(np.abs(q) <= dims / 2 + 1e-12)

    origin = np.array([-4.0, 2.0, 1.0])
    dirs = rng.normal(size=(40, 3))
    t = impl.ray_cuboid_entry(origin, dirs, center, yaw, dims)
    ts = np.linspace(0, 20, 20001)
    for i, d in enumerate(dirs):
        samples = origin + ts[:, None] * d / np.linalg.norm(d)
        q = (samples - center) @ rot.T
        hit = np.all(np.abs(q) <= dims / 2, axis=1)
        if not hit.any():
            assert np.isinf(t[i]) or t[i] * np.linalg.norm(d) > 20
        else:
            first = ts[hit.argmax()]
            assert t[i] * np.linalg.norm(d) == pytest.approx(first, abs=2e-3)
