import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from pcjscc.geometry import (GeometryError, PointCloud, estimate_normals, fps_downsample,
                             fps_indices, make_grid, nn_sq_distances, normalize_to_range)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
clouds = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=finite)


def naive_fps(points, k, seed):
    """Literal greedy rule: maximize min distance to the chosen set, lowest index on ties."""
    chosen = [seed]
    while len(chosen) < k:
        best, best_d = None, -1.0
        for i, p in enumerate(points):
            if i in chosen:
                continue
            d = min(float(np.sum((p - points[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


class TestNormalize:
    def test_box_endpoints(self):
        pts = np.array(list(itertools.product([0.0, 2.0], repeat=3)))
        out = normalize_to_range(PointCloud(pts), -1, 1).points
        assert np.array_equal(out, pts - 1.0)

    def test_identity_when_already_in_range(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (50, 3))
        pts[0] = -1.0
        pts[1] = 1.0
        out = normalize_to_range(PointCloud(pts)).points
        np.testing.assert_allclose(out, pts, atol=1e-15)

    def test_degenerate_axis_maps_to_midpoint(self):
        rng = np.random.default_rng(1)
        pts = np.column_stack([rng.normal(size=(20, 2)), np.full(20, 5.0)])
        out = normalize_to_range(PointCloud(pts), -1, 1).points
        assert np.all(out[:, 2] == 0.0)

    def test_errors(self):
        with pytest.raises(GeometryError):
            normalize_to_range(np.empty((0, 3)))
        with pytest.raises(GeometryError):
            normalize_to_range(PointCloud(np.zeros((2, 3))), 1.0, 1.0)

    @given(clouds)
    def test_range_attained(self, pts):
        out = normalize_to_range(PointCloud(pts), -1, 1).points
        assert np.all(out >= -1) and np.all(out <= 1)
        for axis in range(3):
            if np.ptp(pts[:, axis]) > 0:
                assert out[:, axis].min() == -1.0 and out[:, axis].max() == 1.0

    def test_normals_follow_anisotropic_scaling(self):
        # per-axis rescaling of a tilted plane; normals must stay orthogonal to it
        rng = np.random.default_rng(2)
        uv = rng.normal(size=(30, 2))
        pts = np.column_stack([uv[:, 0], uv[:, 1], -uv.sum(1)])
        n = np.tile(np.ones(3) / np.sqrt(3), (30, 1))
        out = normalize_to_range(PointCloud(pts, n))
        tangent = out.points[1:] - out.points[0]
        np.testing.assert_allclose(tangent @ out.normals[0], 0, atol=1e-12)


class TestFPS:
    def test_square_corners(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.5, 0]], float)
        idx = fps_indices(pts, 4, seed_index=0)
        assert list(idx) == naive_fps(pts, 4, 0)
        assert set(idx) == {0, 1, 2, 3}

    def test_full_and_single(self):
        pts = np.random.default_rng(0).normal(size=(17, 3))
        assert sorted(fps_indices(pts, 17, 3)) == list(range(17))
        out = fps_downsample(PointCloud(pts), 1, seed_index=5)
        assert np.array_equal(out.points, pts[5:6])

    @pytest.mark.parametrize("k", [0, 18])
    def test_bad_k(self, k):
        with pytest.raises(GeometryError):
            fps_indices(np.zeros((17, 3)), k)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 25))
    def test_matches_naive_and_no_duplicates(self, seed, m):
        rng = np.random.default_rng(seed)
        # coarse lattice values make ties common
        pts = rng.integers(0, 3, (m, 3)).astype(float)
        k = int(rng.integers(1, m + 1))
        idx = fps_indices(pts, k, 0)
        assert len(set(idx.tolist())) == k
        assert list(idx) == naive_fps(pts, k, 0)


def fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


class TestNormals:
    def test_plane(self):
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(-1, 1, (60, 2)), np.zeros(60)])
        nrm = estimate_normals(PointCloud(pts), 10).normals
        np.testing.assert_allclose(np.abs(nrm[:, 2]), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(nrm, axis=1), 1.0, atol=1e-12)

    def test_sphere_radial(self):
        pts = fibonacci_sphere(500)
        nrm = estimate_normals(PointCloud(pts), 16).normals
        cosang = np.einsum("ij,ij->i", nrm, pts)
        assert np.mean(cosang >= np.cos(np.deg2rad(5))) >= 0.99

    def test_sphere_radial_random_samples(self):
        # i.i.d. samples give lopsided neighborhoods; the PCA normal is still close
        v = np.random.default_rng(3).normal(size=(500, 3))
        pts = v / np.linalg.norm(v, axis=1, keepdims=True)
        nrm = estimate_normals(PointCloud(pts), 16).normals
        cosang = np.einsum("ij,ij->i", nrm, pts)
        assert np.mean(cosang >= np.cos(np.deg2rad(5))) >= 0.9
        assert np.all(cosang >= np.cos(np.deg2rad(15)))

    def test_global_fit_when_k_equals_m(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(12, 3)) * [3, 2, 0.1]
        nrm = estimate_normals(PointCloud(pts), 12).normals
        _, vecs = np.linalg.eigh(np.cov(pts.T, bias=True))
        np.testing.assert_allclose(np.abs(nrm @ vecs[:, 0]), 1.0, atol=1e-12)

    def test_too_few_points(self):
        with pytest.raises(GeometryError):
            estimate_normals(PointCloud(np.zeros((5, 3))), 6)
        with pytest.raises(GeometryError):
            estimate_normals(PointCloud(np.random.rand(10, 3)), 2)

    def test_rotation_covariance(self):
        pts = fibonacci_sphere(400) * [1.0, 0.8, 0.6]
        base = estimate_normals(PointCloud(pts), 16).normals
        for seed in range(5):
            rot = Rotation.random(random_state=seed).as_matrix()
            rotated = estimate_normals(PointCloud(pts @ rot.T), 16).normals
            np.testing.assert_allclose(rotated, base @ rot.T, atol=1e-5)


class TestNearestNeighbor:
    def test_self_is_zero(self):
        pts = np.random.default_rng(0).normal(size=(30, 3))
        assert np.all(nn_sq_distances(pts, pts) == 0)

    def test_hand_value(self):
        d = nn_sq_distances([[0, 0, 0]], [[1, 0, 0], [0, 2, 0]])
        assert d.tolist() == [1.0]

    def test_accelerated_matches_brute(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = rng.normal(size=(rng.integers(1, 257), 3))
            b = rng.normal(size=(rng.integers(1, 257), 3))
            fast = nn_sq_distances(a, b, "accelerated")
            slow = nn_sq_distances(a, b, "brute")
            np.testing.assert_allclose(fast, slow, rtol=1e-9, atol=0)

    def test_permutations(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=(40, 3)), rng.normal(size=(55, 3))
        base = nn_sq_distances(a, b)
        pa, pb = rng.permutation(40), rng.permutation(55)
        np.testing.assert_array_equal(nn_sq_distances(a, b[pb]), base)
        np.testing.assert_array_equal(nn_sq_distances(a[pa], b), base[pa])

    def test_empty_and_bad_mode(self):
        with pytest.raises(GeometryError):
            nn_sq_distances(np.empty((0, 3)), np.zeros((2, 3)))
        with pytest.raises(GeometryError):
            nn_sq_distances(np.zeros((1, 3)), np.zeros((2, 3)), mode="octree")


class TestGrid:
    def test_two(self):
        assert make_grid(2).tolist() == [[-1, -1], [-1, 1], [1, -1], [1, 1]]

    def test_four(self):
        g = make_grid(4)
        assert g.shape == (16, 2)
        np.testing.assert_allclose(np.diff(np.unique(g[:, 0])), 2 / 3)

    def test_one(self):
        assert make_grid(1).tolist() == [[0.0, 0.0]]

    @pytest.mark.parametrize("g", [0, -2, 2.5])
    def test_bad(self, g):
        with pytest.raises(GeometryError):
            make_grid(g)

    @pytest.mark.parametrize("g", [1, 2, 3, 4, 7])
    def test_symmetries(self, g):
        grid = make_grid(g)
        as_set = lambda a: set(map(tuple, np.round(a, 12)))
        assert as_set(grid) == as_set(grid[:, ::-1])
        assert as_set(grid) == as_set(grid * [-1, 1]) == as_set(grid * [1, -1])
        assert [tuple(r) for r in grid] == sorted(tuple(r) for r in grid)
