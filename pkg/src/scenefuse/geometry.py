"""Pinhole camera geometry: pixels + depth to 3D points and back.

Coordinate conventions (right-handed, standard computer vision):

  camera frame: +x right, +y down, +z along the optical axis into the scene
  image frame:  u right (column), v down (row), continuous pixel units
  world frame:  arbitrary fixed frame; a camera pose maps camera -> world

Back-projection of pixel (u, v) at depth Z:

    X = (u - cx) * Z / fx
    Y = (v - cy) * Z / fy

with (fx, fy) the focal lengths and (cx, cy) the principal point, all in
pixel units.  Forward projection is the exact inverse for z > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    BehindCameraError,
    DomainError,
    InvalidDepthError,
    NoDepthError,
)

# Large boxes are sampled on a subgrid no denser than this per axis to
# bound per-detection cost.
MAX_BBOX_SAMPLES_PER_AXIS = 64

DEFAULT_DEPTH_MIN = 0.2
DEFAULT_DEPTH_MAX = 20.0


class Pixel(NamedTuple):
    u: float
    v: float


class Point3(NamedTuple):
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(a: np.ndarray) -> "Point3":
        return Point3(float(a[0]), float(a[1]), float(a[2]))


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model parameters in pixel units plus the valid depth range."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_min: float = DEFAULT_DEPTH_MIN
    depth_max: float = DEFAULT_DEPTH_MAX

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )
        if not (0 < self.depth_min < self.depth_max):
            raise DomainError(
                f"need 0 < depth_min < depth_max, got [{self.depth_min}, {self.depth_max}]"
            )

    def contains_pixel(self, u: float, v: float) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: p -> rotation @ p + translation.

    rotation must be orthonormal with determinant +1 (checked to 1e-9).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise DomainError("rigid transform has non-finite entries")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise DomainError("rotation is not orthonormal (R^T R != I within 1e-9)")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise DomainError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def apply_point(self, p: Point3) -> Point3:
        return Point3.from_array(self.rotation @ p.as_array() + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: (A @ B)(p) == A(B(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class DepthMap:
    """Row-major grid of depths in meters; non-finite or <= 0 marks invalid."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float32)
        if v.shape != (self.height, self.width):
            raise DomainError(
                f"depth grid shape {v.shape} does not match "
                f"{self.height}x{self.width}"
            )
        self.values = v

    @staticmethod
    def full(width: int, height: int, depth: float) -> "DepthMap":
        return DepthMap(width, height, np.full((height, width), depth, dtype=np.float32))

    @staticmethod
    def empty(width: int, height: int) -> "DepthMap":
        return DepthMap(width, height, np.zeros((height, width), dtype=np.float32))

    def valid_mask(self, k: CameraIntrinsics | None = None) -> np.ndarray:
        """Finite positive depths, clipped to the camera range when given."""
        m = np.isfinite(self.values) & (self.values > 0)
        if k is not None:
            m &= (self.values >= k.depth_min) & (self.values <= k.depth_max)
        return m


@dataclass(frozen=True)
class Detection2D:
    """One detector output box on a single camera frame."""

    bbox: tuple[float, float, float, float]  # (x, y, w, h) pixels
    class_id: int
    confidence: float
    camera_id: int
    frame_index: int
    timestamp: float

    def __post_init__(self) -> None:
        x, y, w, h = self.bbox
        if not _finite(x, y, w, h) or w <= 0 or h <= 0:
            raise DomainError(f"invalid bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def center(self) -> Pixel:
        x, y, w, h = self.bbox
        return Pixel(x + w / 2.0, y + h / 2.0)


@dataclass(frozen=True)
class Object3D:
    """A detection lifted into 3D: world centroid plus an axis-aligned box."""

    centroid: Point3
    aabb_min: Point3
    aabb_max: Point3
    class_id: int
    confidence: float
    camera_id: int
    timestamp: float

    def __post_init__(self) -> None:
        lo = self.aabb_min.as_array()
        hi = self.aabb_max.as_array()
        c = self.centroid.as_array()
        eps = 1e-9 * (1.0 + np.abs(c).max())
        if np.any(lo > hi + eps):
            raise DomainError("aabb min exceeds max")
        if np.any(c < lo - eps) or np.any(c > hi + eps):
            raise DomainError("centroid outside aabb")


def backproject_pixel(p: Pixel, depth: float, k: CameraIntrinsics) -> Point3:
    """Lift pixel (u, v) at the given depth to a camera-frame 3D point."""
    if not _finite(p.u, p.v, depth):
        raise DomainError(f"non-finite back-projection input ({p.u}, {p.v}, {depth})")
    if not k.depth_min <= depth <= k.depth_max:
        raise InvalidDepthError(
            f"depth {depth} outside valid range [{k.depth_min}, {k.depth_max}]"
        )
    x = (p.u - k.cx) * depth / k.fx
    y = (p.v - k.cy) * depth / k.fy
    return Point3(x, y, depth)


def project_point(p: Point3, k: CameraIntrinsics) -> tuple[Pixel, float]:
    """Project a camera-frame point to (pixel, depth); requires z > 0."""
    if not _finite(p.x, p.y, p.z):
        raise DomainError(f"non-finite projection input {p}")
    if p.z <= 0:
        raise BehindCameraError(f"point with z={p.z} is behind the camera")
    u = k.fx * p.x / p.z + k.cx
    v = k.fy * p.y / p.z + k.cy
    return Pixel(u, v), p.z


def backproject_grid(us: np.ndarray, vs: np.ndarray, zs: np.ndarray,
                     k: CameraIntrinsics) -> np.ndarray:
    """Vectorized back-projection of matched (u, v, Z) arrays to (N, 3)."""
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    out = np.empty((us.size, 3), dtype=np.float64)
    out[:, 0] = (us - k.cx) * zs / k.fx
    out[:, 1] = (vs - k.cy) * zs / k.fy
    out[:, 2] = zs
    return out


def _sample_axis(lo: int, hi: int) -> np.ndarray:
    """Integer sample positions in [lo, hi]; subsampled above the cap."""
    count = hi - lo + 1
    if count <= MAX_BBOX_SAMPLES_PER_AXIS:
        return np.arange(lo, hi + 1)
    return np.unique(np.round(np.linspace(lo, hi, MAX_BBOX_SAMPLES_PER_AXIS)).astype(int))


def bbox_depth_samples(d: Detection2D, depth_map: DepthMap,
                       k: CameraIntrinsics) -> np.ndarray:
    """Valid depths sampled inside the detection box, clipped to the image."""
    x, y, w, h = d.bbox
    u_lo = max(0, int(math.floor(x)))
    u_hi = min(k.width - 1, int(math.floor(x + w)))
    v_lo = max(0, int(math.floor(y)))
    v_hi = min(k.height - 1, int(math.floor(y + h)))
    if u_lo > u_hi or v_lo > v_hi:
        raise DomainError(f"bbox {d.bbox} does not intersect the image")
    us = _sample_axis(u_lo, u_hi)
    vs = _sample_axis(v_lo, v_hi)
    patch = depth_map.values[np.ix_(vs, us)]
    valid = np.isfinite(patch) & (patch > 0) & \
        (patch >= k.depth_min) & (patch <= k.depth_max)
    return patch[valid].astype(np.float64)


def bbox_to_object3d(d: Detection2D, depth_map: DepthMap, k: CameraIntrinsics,
                     pose: RigidTransform) -> Object3D:
    """Lift a 2D detection into a world-frame Object3D.

    The representative depth is the median of the valid depth samples inside
    the box; the 3D extent back-projects the four box corners at that single
    depth and takes the axis-aligned bounds after the pose.
    """
    if depth_map.width != k.width or depth_map.height != k.height:
        raise DomainError(
            f"depth map {depth_map.width}x{depth_map.height} does not match "
            f"camera {k.width}x{k.height}"
        )
    samples = bbox_depth_samples(d, depth_map, k)
    if samples.size == 0:
        raise NoDepthError(f"no valid depth inside bbox {d.bbox}")
    z_rep = float(np.median(samples))

    x, y, w, h = d.bbox
    center = backproject_pixel(d.center, z_rep, k)
    corners_uv = np.array([[x, y], [x + w, y], [x, y + h], [x + w, y + h]])
    corners = backproject_grid(corners_uv[:, 0], corners_uv[:, 1],
                               np.full(4, z_rep), k)
    world_corners = pose.apply(corners)
    centroid = pose.apply_point(center)
    return Object3D(
        centroid=centroid,
        aabb_min=Point3.from_array(world_corners.min(axis=0)),
        aabb_max=Point3.from_array(world_corners.max(axis=0)),
        class_id=d.class_id,
        confidence=d.confidence,
        camera_id=d.camera_id,
        timestamp=d.timestamp,
    )
