"""Rigid alignment between cameras.

estimate_rigid solves the closed-form least-squares rigid fit (SVD of the
centered cross-covariance with a determinant correction so the result is a
proper rotation).  icp_refine alternates nearest-neighbor pairing, gated by
a hard distance threshold, with that closed-form fit.

Nearest neighbors come from a uniform hash grid whose cell size equals the
pairing gate, so a query only ever inspects the 27 surrounding cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud, voxel_downsample
from .errors import DegenerateInputError, DomainError, InputDataError, NoOverlapError
from .geometry import RigidTransform


@dataclass
class CorrespondenceSet:
    """Paired source/target points, (N, 3) each, N >= 3 and non-collinear."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.source, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.target, dtype=np.float64).reshape(-1, 3)
        if s.shape != t.shape:
            raise DomainError("source and target counts differ")
        self.source = s
        self.target = t

    def __len__(self) -> int:
        return self.source.shape[0]

    @staticmethod
    def from_pairs(pairs) -> "CorrespondenceSet":
        src = np.array([p[0] for p in pairs], dtype=np.float64)
        tgt = np.array([p[1] for p in pairs], dtype=np.float64)
        return CorrespondenceSet(src, tgt)

    @staticmethod
    def load_jsonl(path: str | Path) -> "CorrespondenceSet":
        """Read one {"source": [x,y,z], "target": [x,y,z]} object per line."""
        src, tgt = [], []
        for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                src.append([float(v) for v in rec["source"]])
                tgt.append([float(v) for v in rec["target"]])
            except (KeyError, ValueError, TypeError) as exc:
                raise InputDataError(f"{path}:{n}: bad correspondence line: {exc}") from exc
        return CorrespondenceSet(np.array(src).reshape(-1, 3),
                                 np.array(tgt).reshape(-1, 3))


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    convergence_eps: float = 1e-6  # mean-residual delta, meters
    max_pair_distance: float = 1.0
    downsample_voxel: float = 0.05  # 0 disables downsampling

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.convergence_eps <= 0 or self.max_pair_distance <= 0:
            raise DomainError("convergence_eps and max_pair_distance must be positive")
        if self.downsample_voxel < 0:
            raise DomainError("downsample_voxel must be >= 0")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    rms_residual: float
    iterations: int
    converged: bool
    residual_history: list[float] = field(default_factory=list)


def estimate_rigid(c: CorrespondenceSet) -> RigidTransform:
    """Least-squares rigid transform mapping source points onto targets."""
    if len(c) < 3:
        raise DegenerateInputError(f"need >= 3 correspondences, got {len(c)}")
    src_c = c.source.mean(axis=0)
    tgt_c = c.target.mean(axis=0)
    src0 = c.source - src_c
    tgt0 = c.target - tgt_c

    # Collinear (or coincident) sources leave the rotation under-determined.
    sv = np.linalg.svd(src0, compute_uv=False)
    if sv[0] <= 0 or sv[1] / sv[0] < 1e-9:
        raise DegenerateInputError("source points are collinear or coincident")

    h = src0.T @ tgt0
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = tgt_c - rot @ src_c
    return RigidTransform(rot, trans)


class _HashGrid:
    """Uniform grid over target points; lookups scan the 27 adjacent cells."""

    def __init__(self, points: np.ndarray, cell: float) -> None:
        self.points = points
        self.cell = cell
        self.table: dict[tuple[int, int, int], list[int]] = {}
        keys = np.floor(points / cell).astype(np.int64)
        for i, k in enumerate(keys):
            self.table.setdefault((int(k[0]), int(k[1]), int(k[2])), []).append(i)
        self._offsets = [
            (a, b, c)
            for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)
        ]

    def nearest(self, q: np.ndarray) -> tuple[int, float]:
        """Index and distance of the nearest target, or (-1, inf)."""
        idx, dist = self.nearest_batch(q.reshape(1, 3))
        return int(idx[0]), float(dist[0])

    def nearest_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest target per query; index -1 / inf where no candidate exists.

        Queries sharing a grid cell are answered together against the
        union of their 27 neighbor cells.
        """
        n = queries.shape[0]
        out_idx = np.full(n, -1, dtype=int)
        out_dist = np.full(n, math.inf)
        keys = np.floor(queries / self.cell).astype(np.int64)
        groups: dict[tuple[int, int, int], list[int]] = {}
        for i, k in enumerate(keys):
            groups.setdefault((int(k[0]), int(k[1]), int(k[2])), []).append(i)
        for base, q_idx in groups.items():
            candidates: list[int] = []
            for off in self._offsets:
                hit = self.table.get((base[0] + off[0], base[1] + off[1], base[2] + off[2]))
                if hit:
                    candidates.extend(hit)
            if not candidates:
                continue
            cand = np.asarray(candidates)
            qs = queries[q_idx]
            d = np.linalg.norm(qs[:, None, :] - self.points[cand][None, :, :], axis=2)
            best = np.argmin(d, axis=1)
            rows = np.asarray(q_idx)
            out_idx[rows] = cand[best]
            out_dist[rows] = d[np.arange(len(q_idx)), best]
        return out_idx, out_dist


def _pair(src_pts: np.ndarray, transform: RigidTransform, grid: _HashGrid,
          gate: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Match transformed sources to targets; returns (src idx, tgt idx, dists)."""
    moved = transform.apply(src_pts)
    idx, dist = grid.nearest_batch(moved)
    accepted = (idx >= 0) & (dist <= gate)
    si = np.nonzero(accepted)[0]
    return si, idx[accepted], dist[accepted]


def icp_refine(source: PointCloud, target: PointCloud, init: RigidTransform,
               p: IcpParams) -> RegistrationResult:
    """Iterative closest point from the given initial transform.

    The residual history records the RMS pair distance at each pairing pass
    (index 0 is under the initial transform); convergence triggers when the
    mean pair distance changes by less than convergence_eps.
    """
    src = source
    tgt = target
    if p.downsample_voxel > 0:
        src = voxel_downsample(source, p.downsample_voxel)
        tgt = voxel_downsample(target, p.downsample_voxel)
    if len(src) == 0 or len(tgt) == 0:
        raise DegenerateInputError("empty cloud after voxel downsampling")

    grid = _HashGrid(tgt.points, p.max_pair_distance)
    transform = init

    si, ti, dist = _pair(src.points, transform, grid, p.max_pair_distance)
    if si.size == 0:
        raise NoOverlapError(
            f"no point pairs within {p.max_pair_distance} m under the initial transform"
        )
    history = [float(np.sqrt(np.mean(dist ** 2)))]
    prev_mean = float(dist.mean())

    iterations = 0
    converged = False
    for _ in range(p.max_iterations):
        iterations += 1
        moved = transform.apply(src.points[si])
        delta = estimate_rigid(CorrespondenceSet(moved, tgt.points[ti]))
        transform = delta @ transform

        si, ti, dist = _pair(src.points, transform, grid, p.max_pair_distance)
        if si.size == 0:
            raise NoOverlapError("pairing gate rejected all pairs mid-refinement")
        history.append(float(np.sqrt(np.mean(dist ** 2))))
        mean = float(dist.mean())
        if abs(prev_mean - mean) < p.convergence_eps:
            converged = True
            break
        prev_mean = mean

    return RegistrationResult(
        transform=transform,
        rms_residual=history[-1],
        iterations=iterations,
        converged=converged,
        residual_history=history,
    )
