"""Declarative scene logic: zones, distance rules, event log, and sinks.

Zones are convex polygon footprints in world x-y extruded over a z range.
Containment transitions are debounced over two consecutive frames before an
entry/exit event is emitted, to absorb single-frame flicker.

Rules watch distances between subject tracks and an anchor (a fixed point
or the nearest track of a class):

  Proximity      fires on the falling edge through the threshold and
                 re-arms only after the distance rises 10% above it.
  Approach       fires when the last window_k distances decrease strictly
                 by at least min_step each, then stays quiet until the
                 monotone run breaks.
  DistanceLevel  maps distance linearly to [0, 1] between d_min and d_max
                 and reports the level whenever its 0.05-quantized value
                 changes.
  ZoneOccupancy  entry/exit on a referenced zone restricted to one class.

Every event is appended to a JSON-lines log.  Sinks only receive events
flagged for notification: exits from zones with on_exit_alarm set, and
events of rules with notify set.
"""

from __future__ import annotations

import json
import subprocess
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Protocol, Sequence

import numpy as np

from .errors import DomainError, LogWriteError
from .geometry import Point3
from .tracking import Track

ZONE_DEBOUNCE_FRAMES = 2
PROXIMITY_HYSTERESIS = 0.10
LEVEL_QUANT_STEP = 0.05


class EventKind(str, Enum):
    ZONE_ENTRY = "ZoneEntry"
    ZONE_EXIT = "ZoneExit"
    PROXIMITY_TRIGGERED = "ProximityTriggered"
    APPROACH_DETECTED = "ApproachDetected"
    LEVEL_CHANGED = "LevelChanged"


class RuleKind(str, Enum):
    PROXIMITY = "Proximity"
    APPROACH = "Approach"
    DISTANCE_LEVEL = "DistanceLevel"
    ZONE_OCCUPANCY = "ZoneOccupancy"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    t: float
    track_id: int
    ref_id: str  # zone id or rule id
    payload: dict

    def to_record(self, seq: int) -> dict:
        return {
            "seq": seq,
            "t": self.t,
            "kind": self.kind.value,
            "track_id": self.track_id,
            "ref_id": self.ref_id,
            "payload": self.payload,
        }

    @staticmethod
    def from_record(rec: dict) -> "Event":
        return Event(
            kind=EventKind(rec["kind"]),
            t=float(rec["t"]),
            track_id=int(rec["track_id"]),
            ref_id=str(rec["ref_id"]),
            payload=dict(rec["payload"]),
        )


@dataclass
class Zone:
    """Convex CCW polygon footprint extruded over [z_min, z_max).

    Clockwise input is normalized to CCW; non-convex footprints are
    rejected.
    """

    id: str
    footprint: np.ndarray  # (N, 2) world x-y vertices
    z_range: tuple[float, float]
    on_exit_alarm: bool = False

    def __post_init__(self) -> None:
        poly = np.asarray(self.footprint, dtype=np.float64).reshape(-1, 2)
        if poly.shape[0] < 3:
            raise DomainError(f"zone {self.id}: footprint needs >= 3 vertices")
        area2 = _signed_area2(poly)
        if abs(area2) < 1e-12:
            raise DomainError(f"zone {self.id}: footprint vertices are collinear")
        if area2 < 0:
            poly = poly[::-1].copy()
        crosses = _edge_crosses(poly)
        if np.any(crosses < -1e-12):
            raise DomainError(f"zone {self.id}: footprint is not convex")
        self.footprint = poly
        lo, hi = self.z_range
        if not lo < hi:
            raise DomainError(f"zone {self.id}: need z_min < z_max, got {self.z_range}")

    def contains(self, p: Point3) -> bool:
        lo, hi = self.z_range
        if not (lo <= p.z < hi):
            return False
        return _point_in_convex(self.footprint, p.x, p.y)


def _signed_area2(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _edge_crosses(poly: np.ndarray) -> np.ndarray:
    a = np.roll(poly, -1, axis=0) - poly
    b = np.roll(poly, -2, axis=0) - np.roll(poly, -1, axis=0)
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def _point_in_convex(poly: np.ndarray, x: float, y: float) -> bool:
    """Half-plane test against every CCW edge, boundary inclusive."""
    nxt = np.roll(poly, -1, axis=0)
    cross = (nxt[:, 0] - poly[:, 0]) * (y - poly[:, 1]) \
        - (nxt[:, 1] - poly[:, 1]) * (x - poly[:, 0])
    return bool(np.all(cross >= -1e-12))


def zone_contains(zone: Zone, p: Point3) -> bool:
    return zone.contains(p)


@dataclass(frozen=True)
class Rule:
    id: str
    kind: RuleKind
    subject_class: int | None = None      # None matches any class
    anchor_point: Point3 | None = None
    anchor_class: int | None = None
    threshold: float = 1.0                # Proximity
    window_k: int = 3                     # Approach
    min_step: float = 0.1                 # Approach
    d_min: float = 0.5                    # DistanceLevel
    d_max: float = 5.0                    # DistanceLevel
    invert: bool = False                  # DistanceLevel: level falls with distance
    zone_id: str | None = None            # ZoneOccupancy
    notify: bool = False

    def __post_init__(self) -> None:
        if self.kind is RuleKind.PROXIMITY and self.threshold <= 0:
            raise DomainError(f"rule {self.id}: threshold must be positive")
        if self.kind is RuleKind.APPROACH and self.window_k < 2:
            raise DomainError(f"rule {self.id}: window_k must be >= 2")
        if self.kind is RuleKind.DISTANCE_LEVEL and not self.d_min < self.d_max:
            raise DomainError(f"rule {self.id}: need d_min < d_max")
        if self.kind is RuleKind.ZONE_OCCUPANCY and not self.zone_id:
            raise DomainError(f"rule {self.id}: zone occupancy needs zone_id")
        if self.kind is not RuleKind.ZONE_OCCUPANCY \
                and self.anchor_point is None and self.anchor_class is None:
            raise DomainError(f"rule {self.id}: needs an anchor point or class")


def distance_level(d: float, d_min: float, d_max: float, invert: bool = False) -> float:
    level = (d - d_min) / (d_max - d_min)
    level = min(1.0, max(0.0, level))
    if invert:
        level = 1.0 - level
    return level


def quantize_level(level: float, step: float = LEVEL_QUANT_STEP) -> float:
    return round(level / step) * step


class _Debounce:
    """Containment state flips only after N consecutive contrary frames."""

    __slots__ = ("inside", "streak")

    def __init__(self) -> None:
        self.inside = False
        self.streak = 0

    def observe(self, raw: bool, frames: int) -> bool | None:
        """Returns the new state when a flip happens, else None."""
        if raw == self.inside:
            self.streak = 0
            return None
        self.streak += 1
        if self.streak >= frames:
            self.inside = raw
            self.streak = 0
            return raw
        return None


class ZoneMonitor:
    """Tracks debounced zone membership per (track, zone) and emits events."""

    def __init__(self, zones: Sequence[Zone],
                 debounce_frames: int = ZONE_DEBOUNCE_FRAMES,
                 subject_class: int | None = None,
                 ref_prefix: str | None = None) -> None:
        self.zones = list(zones)
        self.debounce_frames = debounce_frames
        self.subject_class = subject_class
        self.ref_prefix = ref_prefix
        self._state: dict[tuple[int, str], _Debounce] = {}

    def drop_tracks(self, track_ids: Iterable[int]) -> None:
        gone = set(track_ids)
        self._state = {k: v for k, v in self._state.items() if k[0] not in gone}

    def step(self, tracks: Sequence[Track], t: float) -> list[Event]:
        events: list[Event] = []
        for zone in self.zones:
            for track in tracks:
                if self.subject_class is not None \
                        and track.class_id != self.subject_class:
                    continue
                key = (track.id, zone.id)
                st = self._state.setdefault(key, _Debounce())
                flip = st.observe(zone.contains(track.position), self.debounce_frames)
                if flip is None:
                    continue
                kind = EventKind.ZONE_ENTRY if flip else EventKind.ZONE_EXIT
                ref = self.ref_prefix if self.ref_prefix else zone.id
                events.append(Event(
                    kind=kind, t=t, track_id=track.id, ref_id=ref,
                    payload={"zone_id": zone.id},
                ))
        return events


class _ProximityState:
    __slots__ = ("armed",)

    def __init__(self) -> None:
        self.armed = True


class _ApproachState:
    __slots__ = ("last", "run", "fired")

    def __init__(self) -> None:
        self.last: float | None = None
        self.run = 0
        self.fired = False


class _LevelState:
    __slots__ = ("last_quantized",)

    def __init__(self) -> None:
        self.last_quantized: float | None = None


class RuleEngine:
    """Evaluates distance rules per confirmed track per frame."""

    def __init__(self, rules: Sequence[Rule],
                 hysteresis: float = PROXIMITY_HYSTERESIS) -> None:
        self.rules = [r for r in rules if r.kind is not RuleKind.ZONE_OCCUPANCY]
        self.hysteresis = hysteresis
        self._state: dict[tuple[str, int], object] = {}

    def drop_tracks(self, track_ids: Iterable[int]) -> None:
        gone = set(track_ids)
        self._state = {k: v for k, v in self._state.items() if k[1] not in gone}

    def _anchor_positions(self, rule: Rule, tracks: Sequence[Track],
                          subject: Track) -> list[np.ndarray]:
        if rule.anchor_point is not None:
            return [rule.anchor_point.as_array()]
        return [
            t.position.as_array() for t in tracks
            if t.class_id == rule.anchor_class and t.id != subject.id
        ]

    def step(self, tracks: Sequence[Track], t: float) -> list[Event]:
        events: list[Event] = []
        for rule in self.rules:
            for track in tracks:
                if rule.subject_class is not None \
                        and track.class_id != rule.subject_class:
                    continue
                anchors = self._anchor_positions(rule, tracks, track)
                if not anchors:
                    continue
                pos = track.position.as_array()
                d = float(min(np.linalg.norm(pos - a) for a in anchors))
                events.extend(self._eval(rule, track.id, d, t))
        return events

    def _eval(self, rule: Rule, track_id: int, d: float, t: float) -> list[Event]:
        key = (rule.id, track_id)
        if rule.kind is RuleKind.PROXIMITY:
            st = self._state.setdefault(key, _ProximityState())
            if st.armed and d < rule.threshold:
                st.armed = False
                return [Event(EventKind.PROXIMITY_TRIGGERED, t, track_id, rule.id,
                              {"distance": d})]
            if not st.armed and d >= rule.threshold * (1.0 + self.hysteresis):
                st.armed = True
            return []

        if rule.kind is RuleKind.APPROACH:
            st = self._state.setdefault(key, _ApproachState())
            if st.last is not None and st.last - d >= rule.min_step:
                st.run += 1
            elif st.last is not None:
                st.run = 0
                st.fired = False
            st.last = d
            if st.run >= rule.window_k - 1 and not st.fired:
                st.fired = True
                return [Event(EventKind.APPROACH_DETECTED, t, track_id, rule.id,
                              {"distance": d, "window": rule.window_k})]
            return []

        st = self._state.setdefault(key, _LevelState())
        level = distance_level(d, rule.d_min, rule.d_max, rule.invert)
        q = quantize_level(level)
        if st.last_quantized is None or abs(q - st.last_quantized) > 1e-12:
            st.last_quantized = q
            return [Event(EventKind.LEVEL_CHANGED, t, track_id, rule.id,
                          {"distance": d, "level": q})]
        return []


@dataclass(frozen=True)
class Receipt:
    seq: int


class EventLog:
    """Append-only JSON-lines event log with strictly increasing sequence numbers.

    A sequence number is committed only by a successful flushed write, so a
    failed append (after its single retry) leaves no gap.
    """

    def __init__(self, stream: IO[str] | None = None,
                 path: str | Path | None = None) -> None:
        if stream is None and path is None:
            raise DomainError("EventLog needs a stream or a path")
        self._owns = stream is None
        self._stream = stream if stream is not None else open(path, "a", encoding="utf-8")
        self._next_seq = 0

    def append(self, event: Event) -> Receipt:
        line = json.dumps(event.to_record(self._next_seq)) + "\n"
        try:
            self._write(line)
        except OSError:
            try:
                self._write(line)
            except OSError as exc:
                raise LogWriteError(f"event log write failed twice: {exc}") from exc
        seq = self._next_seq
        self._next_seq += 1
        return Receipt(seq)

    def _write(self, line: str) -> None:
        self._stream.write(line)
        self._stream.flush()

    def close(self) -> None:
        if self._owns:
            self._stream.close()


def read_event_log(path: str | Path) -> list[Event]:
    events = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            events.append(Event.from_record(json.loads(line)))
    return events


class NotificationSink(Protocol):
    def deliver(self, event: Event) -> None: ...


class StdoutSink:
    def deliver(self, event: Event) -> None:
        print(json.dumps(event.to_record(-1)), file=sys.stdout)


class FileSink:
    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    def deliver(self, event: Event) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_record(-1)) + "\n")


class CommandSink:
    """Spawns a configured executable with the event JSON on stdin."""

    def __init__(self, argv: Sequence[str], timeout: float = 10.0) -> None:
        self.argv = list(argv)
        self.timeout = timeout

    def deliver(self, event: Event) -> None:
        subprocess.run(
            self.argv, input=json.dumps(event.to_record(-1)),
            text=True, timeout=self.timeout, check=True,
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
        )


class RecordingSink:
    """In-memory sink for tests and the service layer."""

    def __init__(self) -> None:
        self.delivered: list[Event] = []

    def deliver(self, event: Event) -> None:
        self.delivered.append(event)


def dispatch(sinks: Sequence[NotificationSink], event: Event) -> None:
    """At-least-once delivery attempt per sink, with one retry."""
    for sink in sinks:
        try:
            sink.deliver(event)
        except Exception:
            try:
                sink.deliver(event)
            except Exception as exc:
                print(f"sink delivery failed twice: {exc!r}", file=sys.stderr)


class EventEngine:
    """Composes zones, rules, the log, and sinks for one pipeline."""

    def __init__(self, zones: Sequence[Zone], rules: Sequence[Rule],
                 log: EventLog | None, sinks: Sequence[NotificationSink] = ()) -> None:
        self.zone_monitor = ZoneMonitor(zones)
        self.rule_engine = RuleEngine(rules)
        self.occupancy_monitors = [
            ZoneMonitor(
                [z for z in zones if z.id == r.zone_id],
                subject_class=r.subject_class,
                ref_prefix=r.id,
            )
            for r in rules if r.kind is RuleKind.ZONE_OCCUPANCY
        ]
        self._zones_by_id = {z.id: z for z in zones}
        self._rules_by_id = {r.id: r for r in rules}
        self.log = log
        self.sinks = list(sinks)

    def _notifiable(self, event: Event) -> bool:
        zone = self._zones_by_id.get(str(event.payload.get("zone_id", "")))
        if event.kind is EventKind.ZONE_EXIT and zone is not None \
                and zone.on_exit_alarm:
            return True
        rule = self._rules_by_id.get(event.ref_id)
        return rule is not None and rule.notify

    def step(self, tracks: Sequence[Track], t: float,
             dead_ids: Iterable[int] = ()) -> list[Event]:
        dead = list(dead_ids)
        if dead:
            self.zone_monitor.drop_tracks(dead)
            self.rule_engine.drop_tracks(dead)
            for m in self.occupancy_monitors:
                m.drop_tracks(dead)
        events = self.zone_monitor.step(tracks, t)
        for m in self.occupancy_monitors:
            events.extend(m.step(tracks, t))
        events.extend(self.rule_engine.step(tracks, t))
        for e in events:
            if self.log is not None:
                self.log.append(e)
            if self._notifiable(e):
                dispatch(self.sinks, e)
        return events
