"""Pointcloud construction, rigid motion, voxel downsampling, and merging.

Voxel indices use floor((p - origin) / voxel_size) per axis, so a point
exactly on a cell boundary belongs to the higher cell.  The representative
of a cell is the centroid of its points, not the cell center.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InputDataError
from .geometry import CameraIntrinsics, DepthMap, RigidTransform, backproject_grid


@dataclass
class PointCloud:
    """(N, 3) float64 points, optionally tagged with a source camera id."""

    points: np.ndarray
    camera_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.isfinite(pts).all():
            raise DomainError("point cloud contains non-finite coordinates")
        self.points = pts
        if self.camera_ids is not None:
            ids = np.asarray(self.camera_ids, dtype=np.int32).reshape(-1)
            if ids.shape[0] != pts.shape[0]:
                raise DomainError("camera_ids length does not match point count")
            self.camera_ids = ids

    def __len__(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.empty((0, 3), dtype=np.float64))


@dataclass
class VoxelGrid:
    """Sparse accumulation grid: integer cell index -> (coordinate sum, count)."""

    voxel_size: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cells: dict[tuple[int, int, int], tuple[np.ndarray, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.voxel_size <= 0:
            raise DomainError(f"voxel_size must be positive, got {self.voxel_size}")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)

    def insert(self, points: np.ndarray) -> None:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            return
        idx = np.floor((pts - self.origin) / self.voxel_size).astype(np.int64)
        uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
        sums = np.zeros((uniq.shape[0], 3), dtype=np.float64)
        np.add.at(sums, inverse, pts)
        counts = np.bincount(inverse, minlength=uniq.shape[0])
        for row, s, n in zip(uniq, sums, counts):
            key = (int(row[0]), int(row[1]), int(row[2]))
            if key in self.cells:
                old_s, old_n = self.cells[key]
                self.cells[key] = (old_s + s, old_n + int(n))
            else:
                self.cells[key] = (s, int(n))

    def centroids(self) -> PointCloud:
        """One centroid per occupied cell, ordered by cell index."""
        if not self.cells:
            return PointCloud.empty()
        keys = sorted(self.cells)
        pts = np.array([self.cells[k][0] / self.cells[k][1] for k in keys])
        return PointCloud(pts)

    def occupied(self) -> int:
        return len(self.cells)


def cloud_from_depth(depth_map: DepthMap, k: CameraIntrinsics, pose: RigidTransform,
                     stride: int = 1, camera_id: int | None = None) -> PointCloud:
    """Back-project every stride-th valid pixel and map it through the pose."""
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    if depth_map.width != k.width or depth_map.height != k.height:
        raise DomainError("depth map dimensions do not match the camera")
    us = np.arange(0, k.width, stride)
    vs = np.arange(0, k.height, stride)
    grid_u, grid_v = np.meshgrid(us, vs)
    depths = depth_map.values[grid_v, grid_u]
    valid = np.isfinite(depths) & (depths > 0) & \
        (depths >= k.depth_min) & (depths <= k.depth_max)
    if not valid.any():
        return PointCloud.empty()
    pts = backproject_grid(grid_u[valid], grid_v[valid], depths[valid], k)
    world = pose.apply(pts)
    ids = None
    if camera_id is not None:
        ids = np.full(world.shape[0], camera_id, dtype=np.int32)
    return PointCloud(world, ids)


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    if len(cloud) == 0:
        return PointCloud.empty()
    return PointCloud(t.apply(cloud.points), cloud.camera_ids)


def voxel_downsample(cloud: PointCloud, voxel_size: float,
                     origin: Sequence[float] = (0.0, 0.0, 0.0)) -> PointCloud:
    """One output point per occupied voxel: the centroid of the voxel's points."""
    grid = VoxelGrid(voxel_size, np.asarray(origin, dtype=np.float64))
    grid.insert(cloud.points)
    return grid.centroids()


def merge_clouds(clouds: Iterable[PointCloud]) -> PointCloud:
    """Concatenate clouds already expressed in a shared frame."""
    clouds = list(clouds)
    non_empty = [c for c in clouds if len(c) > 0]
    if not non_empty:
        return PointCloud.empty()
    pts = np.concatenate([c.points for c in non_empty])
    if any(c.camera_ids is not None for c in non_empty):
        ids = np.concatenate([
            c.camera_ids if c.camera_ids is not None
            else np.full(len(c), -1, dtype=np.int32)
            for c in non_empty
        ])
        return PointCloud(pts, ids)
    return PointCloud(pts)


def save_ply(cloud: PointCloud, path: str | Path) -> None:
    """Write ASCII PLY with float x/y/z properties, element order preserved."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    for p in cloud.points:
        lines.append(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_ply(path: str | Path) -> PointCloud:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise InputDataError(f"{path}: not a PLY file")
    count = None
    body_at = None
    for i, line in enumerate(text):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        if line.strip() == "end_header":
            body_at = i + 1
            break
    if count is None or body_at is None:
        raise InputDataError(f"{path}: malformed PLY header")
    rows = text[body_at:body_at + count]
    if len(rows) < count:
        raise InputDataError(
            f"{path}: expected {count} vertex rows, found {len(rows)}"
        )
    if count == 0:
        return PointCloud.empty()
    pts = np.array([[float(x) for x in r.split()[:3]] for r in rows])
    return PointCloud(pts)
