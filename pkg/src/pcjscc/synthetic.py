"""Analytically sampled surface families used as a small stand-in dataset.

Every family samples points uniformly by area on its canonical surface;
each instance then gets a random rotation, isotropic scale and
translation.  ``surface_residual`` measures the distance of canonical
points to the exact surface, which makes membership testable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

FAMILIES = ("sphere", "box", "cylinder", "torus", "cone", "plane_with_holes",
            "two_sphere_union", "capsule")


class UnknownFamily(ValueError):
    pass


@dataclass
class SyntheticInstance:
    family: str
    canonical: np.ndarray       # (M, 3) points before pose
    shape: dict                 # family parameters
    rotation: np.ndarray        # (3, 3)
    scale: float
    translation: np.ndarray     # (3,)

    @property
    def points(self) -> np.ndarray:
        return self.scale * self.canonical @ self.rotation.T + self.translation


def _unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _split(rng, n, areas):
    """Multinomial allocation of ``n`` samples proportional to ``areas``."""
    areas = np.asarray(areas, dtype=np.float64)
    return rng.multinomial(n, areas / areas.sum())


def _disk(rng, n, radius, z):
    r = radius * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t), np.full(n, z)], axis=1)


def _tube(rng, n, radius, z0, z1):
    t = rng.uniform(0, 2 * np.pi, n)
    return np.stack([radius * np.cos(t), radius * np.sin(t), rng.uniform(z0, z1, n)], axis=1)


def sample_sphere(rng, n):
    r = rng.uniform(0.5, 1.0)
    return r * _unit_vectors(rng, n), {"radius": r}


def sample_box(rng, n):
    half = rng.uniform(0.3, 1.0, 3)
    # faces come in pairs normal to x, y, z
    areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]] * 2
    counts = _split(rng, n, areas)
    parts = []
    for face, k in enumerate(counts):
        axis, sign = face % 3, (1.0 if face < 3 else -1.0)
        p = rng.uniform(-half, half, (k, 3))
        p[:, axis] = sign * half[axis]
        parts.append(p)
    return np.concatenate(parts), {"half_extents": half}


def sample_cylinder(rng, n):
    r, h = rng.uniform(0.3, 0.8), rng.uniform(0.5, 1.0)
    k_side, k_top, k_bot = _split(rng, n, [2 * np.pi * r * 2 * h, np.pi * r * r, np.pi * r * r])
    pts = np.concatenate([_tube(rng, k_side, r, -h, h), _disk(rng, k_top, r, h),
                          _disk(rng, k_bot, r, -h)])
    return pts, {"radius": r, "half_height": h}


def sample_torus(rng, n):
    big, small = rng.uniform(0.6, 0.9), rng.uniform(0.15, 0.35)
    out = np.empty((0, 3))
    # rejection on the area element (R + r cos v)
    while len(out) < n:
        u = rng.uniform(0, 2 * np.pi, 2 * n)
        v = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.uniform(0, big + small, 2 * n) < big + small * np.cos(v)
        u, v = u[keep], v[keep]
        ring = big + small * np.cos(v)
        out = np.concatenate([out, np.stack([ring * np.cos(u), ring * np.sin(u),
                                             small * np.sin(v)], axis=1)])
    return out[:n], {"major": big, "minor": small}


def sample_cone(rng, n):
    r, h = rng.uniform(0.4, 0.9), rng.uniform(0.8, 1.6)
    slant = np.hypot(r, h)
    k_side, k_base = _split(rng, n, [np.pi * r * slant, np.pi * r * r])
    # lateral area grows linearly with distance from the apex
    s = np.sqrt(rng.uniform(size=k_side))
    t = rng.uniform(0, 2 * np.pi, k_side)
    side = np.stack([s * r * np.cos(t), s * r * np.sin(t), h / 2 - s * h], axis=1)
    base = _disk(rng, k_base, r, -h / 2)
    return np.concatenate([side, base]), {"radius": r, "height": h}


def sample_plane_with_holes(rng, n):
    half = rng.uniform(0.6, 1.0)
    k = int(rng.integers(1, 4))
    centers = rng.uniform(-half / 2, half / 2, (k, 2))
    radii = rng.uniform(0.1, 0.25, k) * half
    out = np.empty((0, 2))
    while len(out) < n:
        p = rng.uniform(-half, half, (2 * n, 2))
        inside = np.any(np.linalg.norm(p[:, None, :] - centers[None], axis=2) < radii, axis=1)
        out = np.concatenate([out, p[~inside]])
    out = out[:n]
    return (np.column_stack([out, np.zeros(n)]),
            {"half_width": half, "hole_centers": centers, "hole_radii": radii})


def sample_two_sphere_union(rng, n):
    r1, r2 = rng.uniform(0.4, 0.7), rng.uniform(0.3, 0.6)
    gap = rng.uniform(0.5, 0.9) * (r1 + r2)
    c1, c2 = np.array([-gap / 2, 0, 0]), np.array([gap / 2, 0, 0])
    out = np.empty((0, 3))
    while len(out) < n:
        k1, k2 = _split(rng, 2 * n, [r1 * r1, r2 * r2])
        a = c1 + r1 * _unit_vectors(rng, k1)
        b = c2 + r2 * _unit_vectors(rng, k2)
        a = a[np.linalg.norm(a - c2, axis=1) >= r2]
        b = b[np.linalg.norm(b - c1, axis=1) >= r1]
        out = np.concatenate([out, a, b])
    out = out[rng.permutation(len(out))[:n]]
    return out, {"centers": np.stack([c1, c2]), "radii": np.array([r1, r2])}


def sample_capsule(rng, n):
    r, h = rng.uniform(0.25, 0.5), rng.uniform(0.3, 0.8)
    k_side, k_top, k_bot = _split(rng, n, [2 * np.pi * r * 2 * h, 2 * np.pi * r * r,
                                           2 * np.pi * r * r])
    side = _tube(rng, k_side, r, -h, h)
    top = r * _unit_vectors(rng, k_top)
    top[:, 2] = np.abs(top[:, 2])
    bot = r * _unit_vectors(rng, k_bot)
    bot[:, 2] = -np.abs(bot[:, 2])
    return (np.concatenate([side, top + [0, 0, h], bot - [0, 0, h]]),
            {"radius": r, "half_height": h})


SAMPLERS = {
    "sphere": sample_sphere,
    "box": sample_box,
    "cylinder": sample_cylinder,
    "torus": sample_torus,
    "cone": sample_cone,
    "plane_with_holes": sample_plane_with_holes,
    "two_sphere_union": sample_two_sphere_union,
    "capsule": sample_capsule,
}


def surface_residual(family: str, points: np.ndarray, shape: dict) -> np.ndarray:
    """Distance from canonical ``points`` to the exact ``family`` surface."""
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    rho = np.hypot(x, y)
    if family == "sphere":
        return np.abs(np.linalg.norm(p, axis=1) - shape["radius"])
    if family == "box":
        q = np.abs(p) - shape["half_extents"]
        # on the surface: inside or on the box, and touching at least one face
        outside = np.linalg.norm(np.maximum(q, 0), axis=1)
        return outside + np.abs(np.minimum(np.max(q, axis=1), 0))
    if family == "cylinder":
        r, h = shape["radius"], shape["half_height"]
        side = np.abs(rho - r) + np.maximum(np.abs(z) - h, 0)
        cap = np.abs(np.abs(z) - h) + np.maximum(rho - r, 0)
        return np.minimum(side, cap)
    if family == "torus":
        return np.abs(np.hypot(rho - shape["major"], z) - shape["minor"])
    if family == "cone":
        r, h = shape["radius"], shape["height"]
        s = (h / 2 - z) / h                      # 0 at apex, 1 at base
        side = np.abs(rho - s * r) + np.maximum(-s, 0) + np.maximum(s - 1, 0)
        base = np.abs(z + h / 2) + np.maximum(rho - r, 0)
        return np.minimum(side, base)
    if family == "plane_with_holes":
        half = shape["half_width"]
        d = np.linalg.norm(p[:, None, :2] - shape["hole_centers"][None], axis=2)
        in_hole = np.any(d < shape["hole_radii"], axis=1)
        off = np.abs(z) + np.maximum(np.max(np.abs(p[:, :2]), axis=1) - half, 0)
        return np.where(in_hole, np.inf, off)
    if family == "two_sphere_union":
        c, r = shape["centers"], shape["radii"]
        d = np.linalg.norm(p[:, None, :] - c[None], axis=2) - r
        on = np.min(np.abs(d), axis=1)
        # a point strictly inside either sphere is not on the union's boundary
        return np.where(np.any(d < -1e-9, axis=1), np.inf, on)
    if family == "capsule":
        r, h = shape["radius"], shape["half_height"]
        zc = np.clip(z, -h, h)
        return np.abs(np.hypot(rho, z - zc) - r)
    raise UnknownFamily(family)


def random_pose(rng, scale_range=(0.7, 1.3), shift: float = 0.3):
    rot = Rotation.random(random_state=rng).as_matrix()
    return rot, float(rng.uniform(*scale_range)), rng.uniform(-shift, shift, 3)


def generate_synthetic(recipe, seed: int = 0, num_points: int = 2048):
    """Sample instances for ``recipe``, a mapping ``family -> instance count``
    (or a sequence of family names, one instance each).

    Families are generated in recipe order from one seeded stream, so the
    same recipe and seed always give the same collection.
    """
    if not hasattr(recipe, "items"):
        counts = {}
        for fam in recipe:
            counts[fam] = counts.get(fam, 0) + 1
        recipe = counts
    unknown = [f for f in recipe if f not in SAMPLERS]
    if unknown:
        raise UnknownFamily(f"unknown shape families: {unknown}")
    rng = np.random.default_rng(seed)
    out = []
    for family, count in recipe.items():
        for _ in range(int(count)):
            pts, shape = SAMPLERS[family](rng, num_points)
            rot, scale, shift = random_pose(rng)
            out.append(SyntheticInstance(family, pts, shape, rot, scale, shift))
    return out


def default_recipe(instances_per_family: int = 64) -> dict:
    return {f: instances_per_family for f in FAMILIES}
