"""Point-set geometry kernels.

Everything here is a pure numpy/scipy function over immutable inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points with optional unit normals."""

    points: np.ndarray
    normals: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"points must have shape (M, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise GeometryError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise GeometryError(
                    f"normals shape {nrm.shape} does not match points {pts.shape}")
            if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
                raise GeometryError("normals must be unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def take(self, indices) -> "PointCloud":
        idx = np.asarray(indices)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals)


def as_points(cloud) -> np.ndarray:
    """Coordinates of a PointCloud or a raw (M, 3) array."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"expected an (M, 3) array, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise GeometryError("point cloud is empty")
    return pts


def normalize_to_range(cloud: PointCloud, lo: float = -1.0, hi: float = 1.0) -> PointCloud:
    """Map the bounding box of ``cloud`` onto ``[lo, hi]`` independently per axis.

    Axes with zero extent collapse to the midpoint of the target range.
    Normals are mapped by the inverse-transpose of the per-axis scaling and
    renormalized; they are dropped when an axis is degenerate.
    """
    if not hi > lo:
        raise GeometryError(f"need hi > lo, got lo={lo}, hi={hi}")
    pts = as_points(cloud)
    mins = pts.min(axis=0)
    extent = pts.max(axis=0) - mins
    mid = 0.5 * (lo + hi)
    out = np.empty_like(pts)
    for axis in range(3):
        if extent[axis] > 0:
            out[:, axis] = (pts[:, axis] - mins[axis]) / extent[axis] * (hi - lo) + lo
        else:
            out[:, axis] = mid
    out = np.clip(out, lo, hi)
    normals = cloud.normals if isinstance(cloud, PointCloud) else None
    if normals is not None:
        if np.all(extent > 0):
            normals = normals * (extent / (hi - lo))
            normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        else:
            normals = None
    return PointCloud(out, normals)


def fps_indices(points: np.ndarray, k: int, seed_index: int = 0) -> np.ndarray:
    """Indices chosen by greedy farthest point sampling.

    Ties go to the lowest index (``np.argmax`` returns the first maximum).
    """
    pts = as_points(points)
    m = pts.shape[0]
    if not 1 <= k <= m:
        raise GeometryError(f"k must lie in [1, {m}], got {k}")
    if not 0 <= seed_index < m:
        raise GeometryError(f"seed_index {seed_index} out of range for {m} points")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = seed_index
    min_d2 = np.sum((pts - pts[seed_index]) ** 2, axis=1)
    min_d2[seed_index] = -1.0
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        d2 = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[chosen[: i + 1]] = -1.0
    return chosen


def fps_downsample(cloud: PointCloud, k: int, seed_index: int = 0) -> PointCloud:
    return cloud.take(fps_indices(cloud.points, k, seed_index))


def estimate_normals(cloud: PointCloud, k_neighbors: int = 16) -> PointCloud:
    """Fill in normals by local PCA over the ``k_neighbors`` nearest points.

    Each normal is the eigenvector of the smallest eigenvalue of the
    neighborhood covariance, flipped so it does not point towards the cloud
    centroid.
    """
    pts = as_points(cloud)
    m = pts.shape[0]
    if k_neighbors < 3:
        raise GeometryError(f"k_neighbors must be >= 3, got {k_neighbors}")
    if m < k_neighbors:
        raise GeometryError(
            f"cannot estimate normals with k={k_neighbors} on {m} points")
    if k_neighbors == m:
        nbr = np.broadcast_to(np.arange(m), (m, m))
    else:
        _, nbr = cKDTree(pts).query(pts, k=k_neighbors)
    local = pts[nbr]                                   # (M, k, 3)
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", local, local) / k_neighbors
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    outward = pts - pts.mean(axis=0)
    flip = np.einsum("mi,mi->m", normals, outward) < 0
    normals[flip] *= -1.0
    return PointCloud(pts, normals)


def nn_sq_distances(a, b, mode: str = "accelerated", return_index: bool = False):
    """Squared distance from every point of ``a`` to its nearest neighbor in ``b``.

    ``mode="brute"`` evaluates the full |a| x |b| distance table and serves as
    the reference for the kd-tree path. Both modes compute the final value
    as the squared norm of the actual coordinate difference, so they agree
    exactly whenever they select the same neighbor.
    """
    pa, pb = as_points(a), as_points(b)
    if mode == "accelerated":
        _, idx = cKDTree(pb).query(pa, k=1)
    elif mode == "brute":
        idx = _brute_nn_index(pa, pb)
    else:
        raise GeometryError(f"unknown mode {mode!r}")
    diff = pa - pb[idx]
    d2 = np.einsum("ij,ij->i", diff, diff)
    if return_index:
        return d2, idx
    return d2


def _brute_nn_index(pa: np.ndarray, pb: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty(pa.shape[0], dtype=np.int64)
    for start in range(0, pa.shape[0], chunk):
        block = pa[start:start + chunk]
        d2 = np.sum((block[:, None, :] - pb[None, :, :]) ** 2, axis=2)
        out[start:start + chunk] = np.argmin(d2, axis=1)
    return out


def make_grid(g: int) -> np.ndarray:
    """``g*g`` points evenly spaced on ``[-1, 1]^2``, endpoints included.

    Rows are sorted lexicographically; ``g=1`` gives the single point (0, 0).
    """
    if int(g) != g or g < 1:
        raise GeometryError(f"grid size must be a positive integer, got {g}")
    g = int(g)
    axis = np.array([0.0]) if g == 1 else np.linspace(-1.0, 1.0, g)
    u, v = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=1)
