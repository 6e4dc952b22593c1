"""EKF bank, PMF, scale prior, merge and lifecycle."""

import math

import numpy as np
import pytest

from vis3d.filter import (
    CategoryModel,
    EkfState,
    FilterConfig,
    Memory,
    ObjectHypothesis,
    UpdateOutcome,
    apply_scale_prior,
    box_measurement,
    gaussian_density,
    lifecycle_pass,
    maybe_terminate_bank,
    measurement_update,
    merge_pass,
    pmf_update,
    point_estimate,
    predict,
)
from vis3d.geometry import (
    Cuboid,
    Intrinsics,
    PixelBox,
    RigidPose,
    VisKind,
    Visibility,
    project_cuboid,
)
from vis3d.simulate import Circle, default_categories

K = Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
CFG = FilterConfig()


def forward_camera(t=(0.0, 0.0, 1.2)) -> RigidPose:
    return Circle(center=(0.0, 0.0), radius=0.0, height=t[2],
                  look_at=None).pose(0.0).__class__.from_matrix(
        _looking_plus_x(), np.asarray(t))


def _looking_plus_x():
    # camera z along +x, x along -y, y down
    return np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


CAM = RigidPose.from_matrix(_looking_plus_x(), np.array([0.0, 0.0, 1.2]))


def make_state(x=6.0, y=0.3, z=0.6, yaw=0.4, dims=(1.2, 0.8, 1.1),
               sigma=0.3) -> EkfState:
    mean = np.concatenate([[x, y, z, yaw], np.log(dims)])
    return EkfState(mean, np.eye(7) * sigma ** 2)


def simple_categories(k=3):
    cats = {}
    for i in range(k):
        cats[i] = CategoryModel(
            id=i, name=f"cat{i}",
            dim_prior_mean=np.log([1.0 + 0.3 * i, 0.8, 1.1]),
            dim_prior_cov=np.eye(3) * 0.04,
            process_noise=np.diag([1e-4] * 4 + [2.5e-5] * 3),
            init_cov=np.diag([0.25, 0.25, 0.09, 0.25, 0.0625, 0.0625, 0.0625]),
            score_gate=0.3)
    return cats


def make_object(oid=0, k=3, cat=0, **kwargs) -> ObjectHypothesis:
    pmf = np.full(k, 0.1 / (k - 1)) if k > 1 else np.ones(1)
    pmf[cat] = 0.9
    pmf /= pmf.sum()
    bank = {i: make_state(dims=(1.0 + 0.3 * i, 0.8, 1.1)) for i in range(k)}
    return ObjectHypothesis(id=oid, pmf=pmf, bank=bank, **kwargs)


def cholesky_ok(cov) -> bool:
    try:
        np.linalg.cholesky(cov)
        return True
    except np.linalg.LinAlgError:
        return False


class TestPredict:
    def test_zero_noise_is_identity(self):
        cats = simple_categories()
        for c in cats.values():
            c.process_noise = np.zeros((7, 7))
        obj = make_object()
        before = {k: (s.mean.copy(), s.cov.copy()) for k, s in obj.bank.items()}
        predict(obj, cats)
        for k, s in obj.bank.items():
            assert np.array_equal(s.mean, before[k][0])
            assert np.array_equal(s.cov, before[k][1])

    def test_diagonal_noise_adds_exactly(self):
        cats = simple_categories()
        obj = make_object()
        before = obj.bank[0].cov.copy()
        predict(obj, cats)
        assert np.allclose(obj.bank[0].cov, before + cats[0].process_noise)

    def test_repeated_predict_accumulates_linearly(self):
        cats = simple_categories()
        obj = make_object()
        p0 = obj.bank[1].cov.copy()
        n = 7
        for _ in range(n):
            predict(obj, cats)
        assert np.allclose(obj.bank[1].cov, p0 + n * cats[1].process_noise)


class TestMeasurementUpdate:
    def test_zero_innovation_keeps_mean_shrinks_cov(self):
        obj = make_object(k=1, cat=0)
        st = obj.bank[0]
        h, _ = box_measurement(K, CAM, st)
        box = PixelBox(*h)
        mean_before = st.mean.copy()
        trace_before = np.trace(st.cov)
        out = measurement_update(obj, 0, box, 1.0, K, CAM, CFG)
        assert out is UpdateOutcome.UPDATED
        assert np.allclose(st.mean, mean_before, atol=1e-9)
        assert np.trace(st.cov) < trace_before

    def test_tiny_weight_is_a_noop(self):
        cfg = FilterConfig(weight_floor=1e-12, chi2_gate=1e9)
        box = PixelBox(300, 200, 420, 330)
        obj_full = make_object(k=1)
        obj_tiny = make_object(k=1)
        measurement_update(obj_full, 0, box, 1.0, K, CAM, cfg)
        measurement_update(obj_tiny, 0, box, 1e-12, K, CAM, cfg)
        full_shift = np.linalg.norm(obj_full.bank[0].mean - make_state().mean)
        tiny_shift = np.linalg.norm(obj_tiny.bank[0].mean - make_state().mean)
        assert tiny_shift < 1e-6 * full_shift

    def test_gating_rejects_distant_box(self):
        obj = make_object(k=1)
        st_before = obj.bank[0].mean.copy()
        out = measurement_update(obj, 0, PixelBox(0, 0, 10, 10), 1.0, K, CAM, CFG)
        assert out is UpdateOutcome.GATED_OUT
        assert np.array_equal(obj.bank[0].mean, st_before)

    def test_behind_camera_not_projectable(self):
        obj = make_object(k=1)
        obj.bank[0].mean[0] = -5.0  # behind the +x-looking camera
        out = measurement_update(obj, 0, PixelBox(0, 0, 10, 10), 1.0, K, CAM, CFG)
        assert out is UpdateOutcome.NOT_PROJECTABLE

    def test_covariance_contraction_psd_order(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            obj = make_object(k=1)
            st = obj.bank[0]
            st.mean = np.concatenate([
                [rng.uniform(4, 9), rng.uniform(-1.5, 1.5), rng.uniform(0.3, 1.2),
                 rng.uniform(-math.pi, math.pi)], rng.uniform(-0.4, 0.4, 3)])
            a = rng.normal(size=(7, 7)) * 0.1
            st.cov = a @ a.T + np.eye(7) * 0.05
            p_before = st.cov.copy()
            meas = box_measurement(K, CAM, st)
            if meas is None:
                continue
            jitter = rng.normal(0, 3, 4)
            vals = meas[0] + jitter
            box = PixelBox(min(vals[0], vals[2]), min(vals[1], vals[3]),
                           max(vals[0], vals[2]), max(vals[1], vals[3]))
            out = measurement_update(obj, 0, box, rng.uniform(0.2, 1.0), K, CAM,
                                     FilterConfig(chi2_gate=1e9))
            assert out is UpdateOutcome.UPDATED
            assert cholesky_ok(st.cov)
            eigs = np.linalg.eigvalsh(p_before - st.cov)
            assert eigs.min() > -1e-9


class TestJacobian:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(4)
        checked = 0
        worst = 0.0
        attempts = 0
        while checked < 100 and attempts < 2000:
            attempts += 1
            mean = np.concatenate([
                [rng.uniform(4, 9), rng.uniform(-1.5, 1.5), rng.uniform(0.3, 1.2),
                 rng.uniform(-math.pi, math.pi)], rng.uniform(-0.5, 0.5, 3)])
            st = EkfState(mean, np.eye(7))
            out = box_measurement(K, CAM, st, clip_to_image=False)
            if out is None:
                continue
            h0, jac = out
            step = 1e-5
            fd = np.zeros((4, 7))
            ok = True
            for j in range(7):
                mp, mm = mean.copy(), mean.copy()
                mp[j] += step
                mm[j] -= step
                op = box_measurement(K, CAM, EkfState(mp, np.eye(7)), clip_to_image=False)
                om = box_measurement(K, CAM, EkfState(mm, np.eye(7)), clip_to_image=False)
                if op is None or om is None:
                    ok = False
                    break
                fd[:, j] = (op[0] - om[0]) / (2 * step)
            if not ok:
                continue
            rel = np.abs(jac - fd) / np.maximum(np.abs(fd), 1e-3)
            if rel.max() > 1e-4:
                # active corner set changed under the perturbation; skip
                continue
            worst = max(worst, rel.max())
            checked += 1
        assert checked >= 100
        assert worst < 1e-4

    def test_clipped_rows_are_zeroed(self):
        st = make_state(x=2.0, dims=(3.5, 3.5, 1.0))  # huge box, clips
        h, jac = box_measurement(K, CAM, st)
        assert h[0] == 0.0 and h[2] == float(K.width)
        assert np.all(jac[0] == 0.0)
        assert np.all(jac[2] == 0.0)


class TestPmfUpdate:
    def test_uniform_prior_takes_scores(self):
        obj = make_object(k=3)
        obj.pmf = np.array([1 / 3, 1 / 3, 1 / 3])
        pmf_update(obj, np.array([0.6, 0.3, 0.1]), CFG)
        assert np.allclose(obj.pmf, [0.6, 0.3, 0.1])

    def test_not_visible_keeps_pmf(self):
        obj = make_object(k=3)
        before = obj.pmf.copy()
        pmf_update(obj, None, CFG)
        assert np.array_equal(obj.pmf, before)

    def test_uninformative_scores_keep_pmf(self):
        obj = make_object(k=2)
        obj.pmf = np.array([0.8, 0.2])
        pmf_update(obj, np.array([0.5, 0.5]), CFG)
        assert np.allclose(obj.pmf, [0.8, 0.2])

    def test_normalization_after_random_sequences(self):
        rng = np.random.default_rng(8)
        obj = make_object(k=4)
        obj.pmf = rng.dirichlet(np.ones(4))
        for _ in range(1000):
            pmf_update(obj, rng.uniform(0, 1, 4), CFG)
            assert abs(obj.pmf.sum() - 1.0) < 1e-9

    def test_permutation_equivariance_with_termination(self):
        scores = np.array([0.7, 0.2, 0.6])
        perm = np.array([2, 0, 1])
        a = make_object(k=3)
        a.pmf = np.array([0.5, 0.1, 0.4])
        b = make_object(k=3)
        b.pmf = a.pmf[perm]
        b.bank = {int(np.where(perm == k)[0][0]): s.copy() for k, s in a.bank.items()}
        pmf_update(a, scores, CFG)
        maybe_terminate_bank(a, CFG)
        pmf_update(b, scores[perm], CFG)
        maybe_terminate_bank(b, CFG)
        assert np.allclose(b.pmf, a.pmf[perm])


class TestScalePrior:
    def test_state_at_prior_mean_unchanged_dims(self):
        cats = simple_categories(k=1)
        obj = make_object(k=1)
        obj.bank[0].mean[4:7] = cats[0].dim_prior_mean
        before = obj.bank[0].mean[4:7].copy()
        apply_scale_prior(obj, cats)
        assert np.allclose(obj.bank[0].mean[4:7], before, atol=1e-12)

    def test_huge_prior_cov_is_noop(self):
        cats = simple_categories(k=1)
        cats[0].dim_prior_cov = np.eye(3) * 1e12
        obj = make_object(k=1)
        mean_before = obj.bank[0].mean.copy()
        apply_scale_prior(obj, cats)
        assert np.allclose(obj.bank[0].mean, mean_before, atol=1e-9)

    def test_toy_scale_factor_ratio(self):
        # Category likelihood of 0.1x-scale log-dims vs prior-scale log-dims,
        # computed from the shipped car prior: the ratio must be microscopic.
        cats = default_categories()
        car = cats[0]
        state_dim_cov = np.eye(3) * 0.0625  # default init sigma 0.25
        total = car.dim_prior_cov + state_dim_cov
        at_prior = gaussian_density(car.dim_prior_mean, car.dim_prior_mean, total)
        toy = car.dim_prior_mean + math.log(0.1)
        at_toy = gaussian_density(toy, car.dim_prior_mean, total)
        assert at_toy / at_prior < 1e-6

    def test_reweights_pmf_toward_consistent_category(self):
        cats = simple_categories(k=2)
        cats[1].dim_prior_mean = np.log([3.0, 3.0, 3.0])
        obj = make_object(k=2)
        obj.pmf = np.array([0.5, 0.5])
        for k in (0, 1):
            obj.bank[k].mean[4:7] = cats[0].dim_prior_mean
        apply_scale_prior(obj, cats)
        assert obj.pmf[0] > 0.9


class TestTerminateBank:
    def test_dominant_collapses(self):
        obj = make_object(k=3)
        obj.pmf = np.array([0.97, 0.02, 0.01])
        maybe_terminate_bank(obj, CFG)
        assert list(obj.bank) == [0]
        assert np.allclose(obj.pmf, [1, 0, 0])

    def test_below_threshold_unchanged(self):
        obj = make_object(k=2)
        obj.pmf = np.array([0.6, 0.4])
        bank_before = set(obj.bank)
        maybe_terminate_bank(obj, CFG)
        assert set(obj.bank) == bank_before

    def test_idempotent_on_one_hot(self):
        obj = make_object(k=3)
        obj.pmf = np.array([0.97, 0.02, 0.01])
        maybe_terminate_bank(obj, CFG)
        pmf1, bank1 = obj.pmf.copy(), dict(obj.bank)
        maybe_terminate_bank(obj, CFG)
        assert np.array_equal(obj.pmf, pmf1)
        assert obj.bank == bank1


def one_cat_object(oid, center, yaw=0.0, dims=(1.0, 1.0, 1.0), sigma=0.4,
                   hits=1, born=0):
    mean = np.concatenate([center, [yaw], np.log(dims)])
    return ObjectHypothesis(id=oid, pmf=np.array([1.0]),
                            bank={0: EkfState(mean, np.eye(7) * sigma ** 2)},
                            hits=hits, born=born)


class TestMergePass:
    def test_identical_objects_fuse_and_halve_covariance(self):
        a = one_cat_object(0, [0, 0, 0.5])
        b = one_cat_object(1, [0, 0, 0.5])
        merged = merge_pass([a, b], CFG)
        assert len(merged) == 1
        assert merged[0].id == 0
        assert merged[0].hits == 2
        assert np.allclose(merged[0].bank[0].cov, np.eye(7) * 0.4 ** 2 / 2)

    def test_different_map_categories_never_merge(self):
        a = ObjectHypothesis(id=0, pmf=np.array([0.9, 0.1]),
                             bank={0: make_state(), 1: make_state()})
        b = ObjectHypothesis(id=1, pmf=np.array([0.1, 0.9]),
                             bank={0: make_state(), 1: make_state()})
        merged = merge_pass([a, b], CFG)
        assert len(merged) == 2

    def test_three_way_merge_order_independent(self):
        import itertools
        survivors = set()
        for order in itertools.permutations(range(3)):
            objs = []
            centers = [[0, 0, 0.5], [0.3, 0, 0.5], [0.15, 0.2, 0.5]]
            for oid in order:
                objs.append(one_cat_object(oid, centers[oid], born=oid))
            merged = merge_pass(objs, CFG)
            assert len(merged) == 1
            survivors.add(merged[0].id)
        assert survivors == {0}

    def test_never_increases_count_and_partitions_ids(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            objs = [one_cat_object(i, [rng.uniform(-1, 1), rng.uniform(-1, 1), 0.5],
                                   born=i)
                    for i in range(6)]
            in_ids = {o.id for o in objs}
            merged = merge_pass(objs, CFG)
            assert len(merged) <= len(objs)
            assert {o.id for o in merged} <= in_ids

    def test_pmf_product_and_renormalize(self):
        a = ObjectHypothesis(id=0, pmf=np.array([0.8, 0.2]),
                             bank={0: make_state(sigma=0.3), 1: make_state(sigma=0.3)})
        b = ObjectHypothesis(id=1, pmf=np.array([0.6, 0.4]),
                             bank={0: make_state(sigma=0.3), 1: make_state(sigma=0.3)})
        merged = merge_pass([a, b], CFG)
        assert len(merged) == 1
        expected = np.array([0.48, 0.08])
        assert np.allclose(merged[0].pmf, expected / expected.sum())


class TestLifecycle:
    def test_unconfirmed_visible_unassociated_dies(self):
        cfg = FilterConfig(confirm_hits=3, coast_frames=5)
        obj = one_cat_object(0, [5, 0, 0.5], hits=1)
        objs = [obj]
        for f in range(1, 6):
            obj.status = Visibility(VisKind.VISIBLE)
            objs = lifecycle_pass(objs, f, cfg)
        assert objs == []

    def test_occluded_never_dies(self):
        cfg = FilterConfig(confirm_hits=3, coast_frames=5, longterm_frames=1000)
        obj = one_cat_object(0, [5, 0, 0.5], hits=1)
        objs = [obj]
        for f in range(1, 101):
            obj.status = Visibility(VisKind.OCCLUDED, 1.0)
            objs = lifecycle_pass(objs, f, cfg)
        assert len(objs) == 1
        assert objs[0].memory is Memory.SHORT_TERM  # longterm_frames not reached

    def test_hidden_object_goes_long_term(self):
        cfg = FilterConfig(longterm_frames=30)
        obj = one_cat_object(0, [5, 0, 0.5], hits=10)
        objs = [obj]
        for f in range(1, 31):
            obj.status = Visibility(VisKind.OUT_OF_VIEW)
            objs = lifecycle_pass(objs, f, cfg)
        assert objs[0].memory is Memory.LONG_TERM

    def test_long_term_reactivates_on_reentry(self):
        cfg = FilterConfig()
        obj = one_cat_object(0, [6, 0, 0.8], dims=(1, 1, 1), hits=10)
        obj.memory = Memory.LONG_TERM
        out = lifecycle_pass([obj], 50, cfg, K, CAM)
        assert out[0].memory is Memory.SHORT_TERM

    def test_long_term_stays_when_out_of_frustum(self):
        cfg = FilterConfig()
        obj = one_cat_object(0, [-6, 0, 0.8], dims=(1, 1, 1), hits=10)
        obj.memory = Memory.LONG_TERM
        out = lifecycle_pass([obj], 50, cfg, K, CAM)
        assert out[0].memory is Memory.LONG_TERM


class TestPointEstimate:
    def test_one_hot_returns_that_entry(self):
        obj = make_object(k=3, cat=2)
        obj.pmf = np.array([0.0, 0.0, 1.0])
        k, cub, conf = point_estimate(obj)
        assert k == 2
        assert conf == 1.0

    def test_zero_log_dims_give_unit_extents(self):
        obj = make_object(k=1)
        obj.bank[0].mean[4:7] = 0.0
        _, cub, _ = point_estimate(obj)
        assert np.allclose(cub.dims, 1.0)

    def test_tie_breaks_to_lowest_id(self):
        obj = make_object(k=2)
        obj.pmf = np.array([0.5, 0.5])
        k, _, conf = point_estimate(obj)
        assert k == 0
        assert conf == 0.5
