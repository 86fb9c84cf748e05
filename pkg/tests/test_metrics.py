import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from pcjscc.geometry import GeometryError, PointCloud
from pcjscc.metrics import (CSV_FIELDS, chamfer_distance, d1_error, d2_error, evaluate,
                            ortho_metric, psnr)

ORIGIN = [[0.0, 0.0, 0.0]]


def brute_d1(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.mean([min(np.sum((p - q) ** 2) for q in b) for p in a]))


class TestD1:
    def test_identity(self):
        pts = np.random.default_rng(0).normal(size=(20, 3))
        assert d1_error(pts, pts) == 0.0

    def test_hand_values(self):
        assert d1_error(ORIGIN, [[1, 0, 0]]) == 1.0
        b = [[0, 0, 0], [2, 0, 0]]
        assert d1_error(ORIGIN, b) == 0.0
        assert d1_error(b, ORIGIN) == 2.0

    def test_matches_brute(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(30, 3)), rng.normal(size=(17, 3))
        assert d1_error(a, b) == pytest.approx(brute_d1(a, b), rel=1e-12)

    def test_empty(self):
        with pytest.raises(GeometryError):
            d1_error(np.empty((0, 3)), ORIGIN)


class TestD2:
    def test_tangent_displacement_is_free(self):
        a = PointCloud([[0.3, -0.2, 0.0]], [[0.0, 0.0, 1.0]])
        assert d2_error(a, ORIGIN) == 0.0

    @pytest.mark.parametrize("t", [0.5, -0.25, 2.0])
    def test_normal_displacement(self, t):
        n = np.array([1.0, 2.0, 2.0]) / 3.0
        b = np.array([[0.1, 0.2, 0.3]])
        a = PointCloud(b + t * n, n[None])
        assert d2_error(a, b) == pytest.approx(t * t, rel=1e-12)

    def test_identity_with_exact_normals(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(64, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        assert d2_error(PointCloud(v, v), v) == 0.0

    def test_needs_enough_points_for_normals(self):
        with pytest.raises(GeometryError):
            d2_error(np.random.rand(10, 3), np.random.rand(10, 3))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_never_exceeds_d1(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(rng.integers(16, 80), 3))
        b = rng.normal(size=(rng.integers(1, 80), 3))
        assert d2_error(a, b) <= d1_error(a, b) + 1e-15


class TestPSNR:
    def test_hand_values(self):
        assert psnr(3, 3, 1) == 0.0
        assert psnr(0.003, 0.003, 1) == pytest.approx(30.0, abs=1e-12)
        assert psnr(1, 2, 1) == pytest.approx(10 * math.log10(1.5), abs=1e-9)

    def test_zero_error_sentinel(self):
        assert psnr(0.0, 0.0) == math.inf

    def test_peak_scaling(self):
        assert psnr(0.1, 0.1, 2.0) - psnr(0.1, 0.1, 1.0) == pytest.approx(20 * math.log10(2))

    def test_bad_peak(self):
        with pytest.raises(ValueError):
            psnr(1, 1, 0)

    @given(st.floats(1e-9, 1e3), st.floats(1e-9, 1e3))
    def test_strictly_decreasing(self, e, f):
        lo, hi = sorted((e, f))
        if lo < hi:
            assert psnr(lo, 0, 1) > psnr(hi, 0, 1)


class TestChamfer:
    def test_hand(self):
        assert chamfer_distance(ORIGIN, [[1, 0, 0]]) == 2.0
        pts = np.random.default_rng(3).normal(size=(9, 3))
        assert chamfer_distance(pts, pts) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a = rng.normal(size=(rng.integers(1, 60), 3))
            b = rng.normal(size=(rng.integers(1, 60), 3))
            assert abs(chamfer_distance(a, b) - chamfer_distance(b, a)) <= 1e-12


class TestOrthoMetric:
    def test_orthonormal_rows(self):
        q, _ = np.linalg.qr(np.random.default_rng(5).normal(size=(12, 5)))
        assert ortho_metric(q.T) == pytest.approx(0.0, abs=1e-12)

    def test_hand_values(self):
        e1 = np.array([1.0, 0.0, 0.0])
        assert ortho_metric(np.stack([e1, e1])) == pytest.approx(math.sqrt(2), abs=1e-12)
        assert ortho_metric((2 * e1)[None]) == pytest.approx(3.0, abs=1e-12)

    def test_rank_lower_bound(self):
        rng = np.random.default_rng(6)
        n, d = 10, 4
        for _ in range(50):
            assert ortho_metric(rng.normal(size=(n, d))) >= math.sqrt(n - d) - 1e-12
        q, _ = np.linalg.qr(rng.normal(size=(n, d)))     # orthonormal columns: bound is tight
        assert ortho_metric(q) == pytest.approx(math.sqrt(n - d), abs=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ortho_metric(np.zeros((0, 3)))


class TestEvaluate:
    def test_perfect(self):
        v = np.random.default_rng(7).normal(size=(40, 3))
        rep = evaluate(v, v)
        assert rep.cd == 0.0 and rep.psnr_d1 == math.inf and rep.ortho_metric is None

    def test_composition(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=(50, 3)), rng.normal(size=(60, 3))
        pool = rng.normal(size=(4, 6))
        rep = evaluate(a, b, pool)
        assert rep.d1_ab == d1_error(a, b) and rep.d1_ba == d1_error(b, a)
        assert rep.cd == rep.d1_ab + rep.d1_ba
        assert rep.d2_ab == d2_error(a, b) and rep.d2_ba == d2_error(b, a)
        assert rep.psnr_d1 == psnr(rep.d1_ab, rep.d1_ba)
        assert rep.ortho_metric == ortho_metric(pool)

    def test_truth_normals_used_when_present(self):
        rng = np.random.default_rng(9)
        v = rng.normal(size=(30, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        truth = PointCloud(v, v)
        recon = v * 1.1
        rep = evaluate(recon, truth)
        assert rep.d2_ba == d2_error(truth, recon)

    def test_rigid_invariance(self):
        rng = np.random.default_rng(10)
        a, b = rng.normal(size=(80, 3)), rng.normal(size=(70, 3))
        base = evaluate(a, b)
        rot = Rotation.random(random_state=3).as_matrix()
        shift = rng.normal(size=3)
        moved = evaluate(a @ rot.T + shift, b @ rot.T + shift)
        for name in ("d1_ab", "d1_ba", "d2_ab", "d2_ba", "psnr_d1", "psnr_d2", "cd"):
            assert getattr(moved, name) == pytest.approx(getattr(base, name), rel=1e-6, abs=1e-12)

    def test_csv_row(self):
        rep = evaluate([[0, 0, 0]] * 16, [[1, 0, 0]] * 16)
        row = rep.to_row(3, 10.0, 16)
        assert tuple(row) == CSV_FIELDS
        assert row["cd"] == 2.0 and row["ortho_metric"] == ""
