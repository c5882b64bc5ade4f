"""Multi-object tracking over fused 3D centroids.

Tracking-by-detection: each track carries a 6-state constant-velocity
Kalman filter (position + velocity per axis, white-acceleration process
noise).  Detections are assigned to predicted tracks with an optimal
one-to-one (Hungarian) assignment on 3D centroid distance; pairs farther
apart than the gate, or with mismatched classes, are forbidden.

Lifecycle: new tracks are Tentative, promote to Confirmed after
confirm_hits updates, and are Deleted once misses exceed max_misses.
Track ids increase strictly and are never reused.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainError, LifecycleError, OrderingError
from .geometry import Object3D, Point3

# Fresh tracks know nothing about velocity; start it wide.
INITIAL_VELOCITY_STD = 2.0  # m/s

_FORBIDDEN_COST = 1e12


class TrackStatus(str, Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"


@dataclass(frozen=True)
class TrackerParams:
    gate_distance: float = 1.0        # meters
    confirm_hits: int = 3
    max_misses: int = 5
    process_noise_accel: float = 1.0  # m/s^2 std
    measurement_noise: float = 0.1    # meters std

    def __post_init__(self) -> None:
        if self.gate_distance <= 0 or self.process_noise_accel <= 0 \
                or self.measurement_noise <= 0:
            raise DomainError("tracker noise and gate parameters must be positive")
        if self.confirm_hits < 1 or self.max_misses < 1:
            raise DomainError("confirm_hits and max_misses must be >= 1")


@dataclass(frozen=True)
class Track:
    id: int
    state: np.ndarray        # (6,) position then velocity
    covariance: np.ndarray   # (6, 6)
    class_id: int
    hits: int
    misses: int
    status: TrackStatus
    last_timestamp: float

    @property
    def position(self) -> Point3:
        return Point3(float(self.state[0]), float(self.state[1]), float(self.state[2]))

    @property
    def velocity(self) -> Point3:
        return Point3(float(self.state[3]), float(self.state[4]), float(self.state[5]))


def _transition(dt: float) -> tuple[np.ndarray, np.ndarray]:
    f = np.eye(6)
    f[0:3, 3:6] = dt * np.eye(3)
    # Discretized white-acceleration noise per axis.
    q11 = dt ** 4 / 4.0
    q12 = dt ** 3 / 2.0
    q22 = dt ** 2
    q = np.zeros((6, 6))
    q[0:3, 0:3] = q11 * np.eye(3)
    q[0:3, 3:6] = q12 * np.eye(3)
    q[3:6, 0:3] = q12 * np.eye(3)
    q[3:6, 3:6] = q22 * np.eye(3)
    return f, q


def predict(track: Track, dt: float, params: TrackerParams) -> Track:
    """Constant-velocity propagation of state and covariance."""
    if dt < 0:
        raise DomainError(f"negative dt {dt}")
    f, q = _transition(dt)
    q *= params.process_noise_accel ** 2
    state = f @ track.state
    cov = f @ track.covariance @ f.T + q
    cov = (cov + cov.T) / 2.0
    return replace(track, state=state, covariance=cov)


def update(track: Track, obs: Object3D, params: TrackerParams) -> Track:
    """Kalman position-measurement correction; advances the hit counters."""
    if track.status is TrackStatus.DELETED:
        raise LifecycleError(f"track {track.id} is deleted")
    h = np.zeros((3, 6))
    h[0:3, 0:3] = np.eye(3)
    r = params.measurement_noise ** 2 * np.eye(3)

    z = obs.centroid.as_array()
    innovation = z - h @ track.state
    s = h @ track.covariance @ h.T + r
    gain = track.covariance @ h.T @ np.linalg.inv(s)
    state = track.state + gain @ innovation
    ikh = np.eye(6) - gain @ h
    # Joseph form keeps the covariance symmetric PSD.
    cov = ikh @ track.covariance @ ikh.T + gain @ r @ gain.T
    cov = (cov + cov.T) / 2.0

    hits = track.hits + 1
    status = track.status
    if status is TrackStatus.TENTATIVE and hits >= params.confirm_hits:
        status = TrackStatus.CONFIRMED
    return replace(track, state=state, covariance=cov, hits=hits, misses=0,
                   status=status, last_timestamp=obs.timestamp)


def kalman_gain(track: Track, params: TrackerParams) -> np.ndarray:
    """Current position-measurement gain, for diagnostics and tests."""
    h = np.zeros((3, 6))
    h[0:3, 0:3] = np.eye(3)
    r = params.measurement_noise ** 2 * np.eye(3)
    s = h @ track.covariance @ h.T + r
    return track.covariance @ h.T @ np.linalg.inv(s)


def associate(tracks: list[Track], objects: list[Object3D],
              gate: float) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Minimum-total-distance one-to-one assignment on centroid distance.

    Pairs farther than the gate or with mismatched class ids are forbidden.
    Returns (matches as (track_idx, object_idx), unmatched track indices,
    unmatched object indices).
    """
    if not tracks or not objects:
        return [], list(range(len(tracks))), list(range(len(objects)))

    t_pos = np.array([t.position for t in tracks])
    o_pos = np.array([o.centroid for o in objects])
    cost = np.linalg.norm(t_pos[:, None, :] - o_pos[None, :, :], axis=2)
    t_cls = np.array([t.class_id for t in tracks])
    o_cls = np.array([o.class_id for o in objects])
    forbidden = (cost > gate) | (t_cls[:, None] != o_cls[None, :])
    cost = np.where(forbidden, _FORBIDDEN_COST, cost)

    rows, cols = linear_sum_assignment(cost)
    matches = [(int(r), int(c)) for r, c in zip(rows, cols) if not forbidden[r, c]]
    matched_t = {r for r, _ in matches}
    matched_o = {c for _, c in matches}
    unmatched_t = [i for i in range(len(tracks)) if i not in matched_t]
    unmatched_o = [j for j in range(len(objects)) if j not in matched_o]
    return matches, unmatched_t, unmatched_o


@dataclass(frozen=True)
class StepResult:
    tracks: tuple[Track, ...]
    born: tuple[int, ...]
    dead: tuple[int, ...]


def _new_track(track_id: int, obs: Object3D, params: TrackerParams) -> Track:
    state = np.zeros(6)
    state[0:3] = obs.centroid.as_array()
    cov = np.zeros((6, 6))
    cov[0:3, 0:3] = params.measurement_noise ** 2 * np.eye(3)
    cov[3:6, 3:6] = INITIAL_VELOCITY_STD ** 2 * np.eye(3)
    status = TrackStatus.CONFIRMED if params.confirm_hits <= 1 else TrackStatus.TENTATIVE
    return Track(
        id=track_id, state=state, covariance=cov, class_id=obs.class_id,
        hits=1, misses=0, status=status, last_timestamp=obs.timestamp,
    )


class Tracker:
    """Single-writer tracker state; step() returns immutable snapshots."""

    def __init__(self, params: TrackerParams | None = None) -> None:
        self.params = params or TrackerParams()
        self._tracks: dict[int, Track] = {}
        self._next_id = 0
        self._last_t: float | None = None

    @property
    def tracks(self) -> tuple[Track, ...]:
        return tuple(self._tracks[i] for i in sorted(self._tracks))

    def confirmed(self) -> tuple[Track, ...]:
        return tuple(t for t in self.tracks if t.status is TrackStatus.CONFIRMED)

    def step(self, objects: list[Object3D], timestamp: float) -> StepResult:
        """Advance one frame: predict, associate, update, age, spawn."""
        if self._last_t is not None and timestamp < self._last_t:
            raise OrderingError(
                f"timestamp {timestamp} decreased (last was {self._last_t})"
            )
        dt = 0.0 if self._last_t is None else timestamp - self._last_t
        self._last_t = timestamp

        ordered = [self._tracks[i] for i in sorted(self._tracks)]
        predicted = [predict(t, dt, self.params) for t in ordered]

        matches, unmatched_t, unmatched_o = associate(
            predicted, objects, self.params.gate_distance
        )

        born: list[int] = []
        dead: list[int] = []
        next_tracks: dict[int, Track] = {}

        for ti, oi in matches:
            upd = update(predicted[ti], objects[oi], self.params)
            next_tracks[upd.id] = upd
        for ti in unmatched_t:
            t = predicted[ti]
            misses = t.misses + 1
            if misses > self.params.max_misses:
                dead.append(t.id)
            else:
                next_tracks[t.id] = replace(t, misses=misses)
        for oi in unmatched_o:
            t = _new_track(self._next_id, objects[oi], self.params)
            self._next_id += 1
            next_tracks[t.id] = t
            born.append(t.id)

        self._tracks = next_tracks
        snapshot = tuple(next_tracks[i] for i in sorted(next_tracks))
        return StepResult(tracks=snapshot, born=tuple(born), dead=tuple(dead))
