"""Readers and writers for XYZ text and ASCII PLY point clouds."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud


class PointCloudFormatError(ValueError):
    pass


def read_xyz(path) -> PointCloud:
    """Whitespace-delimited text, 3 columns (x y z) or 6 (x y z nx ny nz)."""
    path = Path(path)
    if not path.read_text().strip():
        raise PointCloudFormatError(f"{path}: no points")
    try:
        data = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    except ValueError as exc:
        raise PointCloudFormatError(f"{path}: malformed record ({exc})") from exc
    if data.size == 0:
        raise PointCloudFormatError(f"{path}: no points")
    if data.shape[1] == 3:
        return PointCloud(data)
    if data.shape[1] == 6:
        normals = data[:, 3:]
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        return PointCloud(data[:, :3], normals)
    raise PointCloudFormatError(
        f"{path}: expected 3 or 6 columns, found {data.shape[1]}")


def write_xyz(path, cloud: PointCloud) -> None:
    data = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    np.savetxt(path, data, fmt="%.9g")


def read_ply(path) -> PointCloud:
    """ASCII PLY with a ``vertex`` element carrying x/y/z (and optional nx/ny/nz)."""
    path = Path(path)
    with open(path, "r", encoding="ascii", errors="strict") as fh:
        if fh.readline().strip() != "ply":
            raise PointCloudFormatError(f"{path}: missing 'ply' magic")
        fmt = None
        elements = []           # [(name, count, [props])]
        while True:
            line = fh.readline()
            if not line:
                raise PointCloudFormatError(f"{path}: header not terminated")
            tok = line.split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if not elements:
                    raise PointCloudFormatError(f"{path}: property before element")
                if tok[1] == "list":
                    elements[-1][2].append(("list", tok[-1]))
                else:
                    elements[-1][2].append((tok[1], tok[2]))
            elif tok[0] == "end_header":
                break
        if fmt != "ascii":
            raise PointCloudFormatError(f"{path}: only ascii PLY is supported, got {fmt}")
        body = fh.readlines()

    cursor = 0
    for name, count, props in elements:
        if name != "vertex":
            cursor += count
            continue
        names = [p[1] for p in props]
        if any(p[0] == "list" for p in props):
            raise PointCloudFormatError(f"{path}: list properties on vertex unsupported")
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise PointCloudFormatError(f"{path}: vertex lacks property {axis}")
        rows = body[cursor:cursor + count]
        if len(rows) != count:
            raise PointCloudFormatError(f"{path}: expected {count} vertices, found {len(rows)}")
        try:
            table = np.array([[float(v) for v in r.split()] for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise PointCloudFormatError(f"{path}: malformed vertex record ({exc})") from exc
        if table.ndim != 2 or table.shape[1] != len(names):
            raise PointCloudFormatError(f"{path}: vertex rows do not match header")
        col = {n: i for i, n in enumerate(names)}
        pts = table[:, [col["x"], col["y"], col["z"]]]
        normals = None
        if all(n in col for n in ("nx", "ny", "nz")):
            normals = table[:, [col["nx"], col["ny"], col["nz"]]]
            normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        return PointCloud(pts, normals)
    raise PointCloudFormatError(f"{path}: no vertex element")


def write_ply(path, cloud: PointCloud) -> None:
    props = ["x", "y", "z"]
    data = cloud.points
    if cloud.normals is not None:
        props += ["nx", "ny", "nz"]
        data = np.hstack([cloud.points, cloud.normals])
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    header += [f"property double {p}" for p in props]
    header.append("end_header")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(header) + "\n")
        np.savetxt(fh, data, fmt="%.17g")


def read_point_cloud(path) -> PointCloud:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix in (".xyz", ".txt", ".pts"):
        return read_xyz(path)
    raise PointCloudFormatError(f"{path}: unrecognized extension {suffix!r}")


def write_point_cloud(path, cloud: PointCloud) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)
