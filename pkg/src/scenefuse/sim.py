"""Synthetic scene oracle: analytic depth rendering, stereo-style depth
noise, exact detection synthesis, and the distance-accuracy experiment.

Rendering casts one pinhole ray per pixel and records the camera-frame
z-depth of the nearest analytic ray-sphere or ray-box hit.  Because the
ray direction is ((u-cx)/fx, (v-cy)/fy, 1) in camera coordinates, the ray
parameter of a hit in world space *is* the camera z-depth, so no rasterizer
or approximation is involved: the renderer is an exact inverse of the
back-projection equations and can serve as a ground-truth oracle.

The noise model perturbs each valid depth Z with a Gaussian of

    sigma_Z = Z^2 * disparity_std / (fx * baseline)

which is the first-order propagation of disparity error through stereo
triangulation: depth error grows quadratically with distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    Detection2D,
    RigidTransform,
    rotation_x,
)

GREEN_MAX_ERROR_M = 0.30
RED_MIN_ERROR_M = 1.00

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if self.radius <= 0:
            raise DomainError(f"sphere radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Box:
    aabb_min: np.ndarray
    aabb_max: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.aabb_min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.aabb_max, dtype=np.float64).reshape(3)
        if np.any(lo >= hi):
            raise DomainError("box is degenerate (min must be < max per axis)")
        object.__setattr__(self, "aabb_min", lo)
        object.__setattr__(self, "aabb_max", hi)

    @property
    def center(self) -> np.ndarray:
        return (self.aabb_min + self.aabb_max) / 2.0


@dataclass
class Actor:
    """A shape with a class label and an optional piecewise-linear path.

    The trajectory gives the shape's center position over time; between
    knots the position interpolates linearly and clamps at the ends.
    """

    shape: Sphere | Box
    class_id: int
    trajectory: list[tuple[float, np.ndarray]] | None = None

    def __post_init__(self) -> None:
        if self.trajectory is not None:
            traj = [(float(t), np.asarray(p, dtype=np.float64).reshape(3))
                    for t, p in self.trajectory]
            if any(traj[i + 1][0] < traj[i][0] for i in range(len(traj) - 1)):
                raise DomainError("trajectory knots must be time-sorted")
            self.trajectory = traj

    def center_at(self, t: float) -> np.ndarray:
        if not self.trajectory:
            return np.asarray(self.shape.center)
        knots = self.trajectory
        if t <= knots[0][0]:
            return knots[0][1]
        if t >= knots[-1][0]:
            return knots[-1][1]
        for (t0, p0), (t1, p1) in zip(knots, knots[1:]):
            if t0 <= t <= t1:
                if t1 == t0:
                    return p1
                a = (t - t0) / (t1 - t0)
                return (1 - a) * p0 + a * p1
        return knots[-1][1]

    def shape_at(self, t: float) -> Sphere | Box:
        center = self.center_at(t)
        if isinstance(self.shape, Sphere):
            return Sphere(center, self.shape.radius)
        offset = center - self.shape.center
        return Box(self.shape.aabb_min + offset, self.shape.aabb_max + offset)


@dataclass
class SceneCamera:
    intrinsics: CameraIntrinsics
    pose: RigidTransform  # camera frame -> world frame


@dataclass
class Scene:
    actors: list[Actor]
    cameras: list[SceneCamera]
    duration: float
    frame_rate: float

    def __post_init__(self) -> None:
        if self.frame_rate <= 0:
            raise DomainError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.duration < 0:
            raise DomainError(f"duration must be >= 0, got {self.duration}")

    def frame_times(self) -> list[float]:
        n = int(math.floor(self.duration * self.frame_rate + 1e-9)) + 1
        return [i / self.frame_rate for i in range(n)]


@dataclass(frozen=True)
class NoiseModel:
    disparity_std: float = 0.25  # pixels
    baseline: float = 0.12       # meters
    enabled: bool = False

    def __post_init__(self) -> None:
        if self.disparity_std < 0:
            raise DomainError("disparity_std must be >= 0")
        if self.baseline <= 0:
            raise DomainError("baseline must be positive")


def _pixel_dirs(k: CameraIntrinsics, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Camera-frame ray directions with unit z for a pixel grid, (H, W, 3)."""
    a = (us[None, :] - k.cx) / k.fx
    b = (vs[:, None] - k.cy) / k.fy
    dirs = np.empty((vs.size, us.size, 3), dtype=np.float64)
    dirs[:, :, 0] = a
    dirs[:, :, 1] = b
    dirs[:, :, 2] = 1.0
    return dirs


def _ray_sphere(origin: np.ndarray, dirs: np.ndarray, sphere: Sphere) -> np.ndarray:
    """Smallest positive hit parameter per ray, inf where the ray misses."""
    oc = origin - sphere.center
    a = np.einsum("...i,...i->...", dirs, dirs)
    b = 2.0 * np.einsum("...i,i->...", dirs, oc)
    c = float(oc @ oc) - sphere.radius ** 2
    disc = b * b - 4.0 * a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    s1 = (-b - sq) / (2.0 * a)
    s2 = (-b + sq) / (2.0 * a)
    s = np.where(s1 > _RAY_EPS, s1, np.where(s2 > _RAY_EPS, s2, np.inf))
    return np.where(hit, s, np.inf)


def _ray_box(origin: np.ndarray, dirs: np.ndarray, box: Box) -> np.ndarray:
    """Slab-method hit parameter per ray, inf where the ray misses."""
    tnear = np.full(dirs.shape[:-1], -np.inf)
    tfar = np.full(dirs.shape[:-1], np.inf)
    for axis in range(3):
        d = dirs[..., axis]
        lo = box.aabb_min[axis] - origin[axis]
        hi = box.aabb_max[axis] - origin[axis]
        parallel = np.abs(d) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = lo / d
            t2 = hi / d
        axis_min = np.where(parallel, np.where((lo <= 0) & (0 <= hi), -np.inf, np.inf), np.minimum(t1, t2))
        axis_max = np.where(parallel, np.where((lo <= 0) & (0 <= hi), np.inf, -np.inf), np.maximum(t1, t2))
        tnear = np.maximum(tnear, axis_min)
        tfar = np.minimum(tfar, axis_max)
    hit = (tnear <= tfar) & (tfar > _RAY_EPS)
    s = np.where(tnear > _RAY_EPS, tnear, tfar)
    return np.where(hit, s, np.inf)


def _sphere_silhouette_bbox(k: CameraIntrinsics, c_cam: np.ndarray,
                            radius: float) -> tuple[float, float, float, float] | None:
    """Exact image bounds of a sphere's silhouette, or None when unusable.

    The silhouette boundary is the conic p^T (C C^T - k2 I) p = 0 in
    homogeneous pixel-plane coordinates p = ((u-cx)/fx, (v-cy)/fy, 1);
    its axis-aligned extremes come from the dual conic (tangent lines).
    """
    if c_cam[2] <= radius:
        return None
    k2 = float(c_cam @ c_cam) - radius ** 2
    if k2 <= 0:
        return None
    m = np.outer(c_cam, c_cam) - k2 * np.eye(3)
    # Adjugate of the symmetric 3x3 conic matrix.
    adj = np.linalg.inv(m) * np.linalg.det(m)
    if abs(adj[2, 2]) < 1e-30:
        return None
    da = adj[0, 2] ** 2 - adj[0, 0] * adj[2, 2]
    db = adj[1, 2] ** 2 - adj[1, 1] * adj[2, 2]
    if da < 0 or db < 0:
        return None
    a_lo = (adj[0, 2] - math.sqrt(da)) / adj[2, 2]
    a_hi = (adj[0, 2] + math.sqrt(da)) / adj[2, 2]
    b_lo = (adj[1, 2] - math.sqrt(db)) / adj[2, 2]
    b_hi = (adj[1, 2] + math.sqrt(db)) / adj[2, 2]
    u_lo, u_hi = sorted((a_lo * k.fx + k.cx, a_hi * k.fx + k.cx))
    v_lo, v_hi = sorted((b_lo * k.fy + k.cy, b_hi * k.fy + k.cy))
    return u_lo, v_lo, u_hi, v_hi


def _box_silhouette_bbox(k: CameraIntrinsics,
                         corners_cam: np.ndarray) -> tuple[float, float, float, float] | None:
    """Image bounds of the projected box corners; None if any is behind."""
    if np.any(corners_cam[:, 2] <= 1e-9):
        return None
    us = k.fx * corners_cam[:, 0] / corners_cam[:, 2] + k.cx
    vs = k.fy * corners_cam[:, 1] / corners_cam[:, 2] + k.cy
    return float(us.min()), float(vs.min()), float(us.max()), float(vs.max())


def _box_corners(box: Box) -> np.ndarray:
    lo, hi = box.aabb_min, box.aabb_max
    return np.array([
        [x, y, z]
        for x in (lo[0], hi[0])
        for y in (lo[1], hi[1])
        for z in (lo[2], hi[2])
    ])


def _silhouette_bbox(cam: SceneCamera, shape: Sphere | Box) -> tuple[float, float, float, float] | None:
    inv = cam.pose.inverse()
    if isinstance(shape, Sphere):
        return _sphere_silhouette_bbox(cam.intrinsics, inv.rotation @ shape.center + inv.translation,
                                       shape.radius)
    corners_cam = inv.apply(_box_corners(shape))
    return _box_silhouette_bbox(cam.intrinsics, corners_cam)


def render_depth(scene: Scene, camera_index: int, t: float) -> DepthMap:
    """Exact per-pixel depth of the nearest actor surface at time t."""
    if not 0 <= t <= scene.duration + 1e-9:
        raise DomainError(f"time {t} outside scene duration [0, {scene.duration}]")
    cam = scene.cameras[camera_index]
    k = cam.intrinsics
    origin = cam.pose.translation
    rot = cam.pose.rotation

    best = np.full((k.height, k.width), np.inf)
    full_us = np.arange(k.width, dtype=np.float64)
    full_vs = np.arange(k.height, dtype=np.float64)

    for actor in scene.actors:
        shape = actor.shape_at(t)
        bbox = _silhouette_bbox(cam, shape)
        if bbox is not None:
            u0 = max(0, int(math.floor(bbox[0])) - 2)
            v0 = max(0, int(math.floor(bbox[1])) - 2)
            u1 = min(k.width, int(math.ceil(bbox[2])) + 3)
            v1 = min(k.height, int(math.ceil(bbox[3])) + 3)
            if u0 >= u1 or v0 >= v1:
                continue
        else:
            u0, v0, u1, v1 = 0, 0, k.width, k.height
        dirs_cam = _pixel_dirs(k, full_us[u0:u1], full_vs[v0:v1])
        dirs_world = dirs_cam @ rot.T
        if isinstance(shape, Sphere):
            s = _ray_sphere(origin, dirs_world, shape)
        else:
            s = _ray_box(origin, dirs_world, shape)
        np.minimum(best[v0:v1, u0:u1], s, out=best[v0:v1, u0:u1])

    valid = np.isfinite(best) & (best >= k.depth_min) & (best <= k.depth_max)
    values = np.where(valid, best, 0.0).astype(np.float32)
    return DepthMap(k.width, k.height, values)


def apply_noise(depth_map: DepthMap, k: CameraIntrinsics, n: NoiseModel,
                seed: int | tuple[int, ...]) -> DepthMap:
    """Perturb valid depths with the stereo triangulation error model."""
    if not n.enabled or n.disparity_std == 0:
        return DepthMap(depth_map.width, depth_map.height, depth_map.values.copy())
    rng = np.random.default_rng(seed)
    values = depth_map.values.astype(np.float64)
    valid = np.isfinite(values) & (values > 0)
    sigma = values ** 2 * n.disparity_std / (k.fx * n.baseline)
    noise = rng.standard_normal(values.shape) * sigma
    noisy = np.where(valid, values + noise, values)
    return DepthMap(depth_map.width, depth_map.height, noisy.astype(np.float32))


def synth_detections(scene: Scene, camera_index: int, t: float,
                     frame_index: int | None = None) -> list[Detection2D]:
    """Exact silhouette bounding boxes for every actor in the frustum.

    Boxes are clamped to the image; actors fully outside (or behind the
    camera) are omitted.  Confidence is always 1.0; occlusion between
    actors is deliberately ignored, as a detector sees texture, not depth.
    """
    cam = scene.cameras[camera_index]
    k = cam.intrinsics
    if frame_index is None:
        frame_index = int(round(t * scene.frame_rate))
    out: list[Detection2D] = []
    for actor in scene.actors:
        bbox = _silhouette_bbox(cam, actor.shape_at(t))
        if bbox is None:
            continue
        u_lo = max(0.0, bbox[0])
        v_lo = max(0.0, bbox[1])
        u_hi = min(float(k.width), bbox[2])
        v_hi = min(float(k.height), bbox[3])
        if u_hi - u_lo <= 0 or v_hi - v_lo <= 0:
            continue
        out.append(Detection2D(
            bbox=(u_lo, v_lo, u_hi - u_lo, v_hi - v_lo),
            class_id=actor.class_id,
            confidence=1.0,
            camera_id=camera_index,
            frame_index=frame_index,
            timestamp=t,
        ))
    return out


def ground_truth_positions(scene: Scene, t: float) -> list[tuple[int, np.ndarray]]:
    """(class_id, center) per actor at time t, in world coordinates."""
    return [(actor.class_id, actor.center_at(t)) for actor in scene.actors]


# --- Distance-accuracy experiment -----------------------------------------

def error_color(abs_error: float) -> tuple[int, int, int]:
    """Green under 0.30 m, red over 1.00 m, linear blend between."""
    if abs_error <= GREEN_MAX_ERROR_M:
        return (0, 255, 0)
    if abs_error >= RED_MIN_ERROR_M:
        return (255, 0, 0)
    frac = (abs_error - GREEN_MAX_ERROR_M) / (RED_MIN_ERROR_M - GREEN_MAX_ERROR_M)
    return (int(round(255 * frac)), int(round(255 * (1.0 - frac))), 0)


MISSING_COLOR = (128, 128, 128)


@dataclass(frozen=True)
class Station:
    label: str
    group: str
    position: np.ndarray  # mobile subject center, world frame

    def __post_init__(self) -> None:
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class AccuracyCondition:
    name: str
    width: int = 1280
    height: int = 720
    focal: float = 700.0
    noise: NoiseModel = NoiseModel()
    seed: int = 0
    camera_pitch_deg: float = 0.0


@dataclass
class AccuracyConfig:
    """Layout of the two-subject distance experiment.

    The fixed reference subject sits close to the camera and off to the
    side, outside every station's line of sight.  Keeping it at a smaller
    depth than any station makes the depth-noise coupling into the
    measured distance grow monotonically with station depth, which is the
    property the noise sweep checks.  Subjects are thin panels: a frontal
    rectangle projects to an exact rectangle, so the noise-free
    measurement error is pixel-quantization small.
    """

    stations: list[Station]
    conditions: list[AccuracyCondition]
    center_position: np.ndarray = field(default_factory=lambda: np.array([-1.5, 0.0, 2.0]))
    subject_size: tuple[float, float, float] = (0.5, 1.7, 0.002)  # w, h, d meters
    mobile_class: int = 1
    fixed_class: int = 2

    def __post_init__(self) -> None:
        self.center_position = np.asarray(self.center_position, dtype=np.float64).reshape(3)


def default_station_fan() -> list[Station]:
    """Stations on a depth line, a cross line, and two diagonals.

    All positions keep enough angular separation from the fixed center
    subject that the two silhouettes never overlap in the image, out to a
    maximum camera range of 12.5 m.
    """
    stations: list[Station] = []
    for i, z in enumerate([2.0, 4.0, 6.0, 8.0, 10.0, 12.44], start=1):
        stations.append(Station(f"v{i}", "depth_line", np.array([1.2, 0.0, z])))
    for i, x in enumerate([-3.0, -2.2, -1.4, 2.4, 3.2], start=1):
        stations.append(Station(f"h{i}", "cross_line", np.array([x, 0.0, 6.0])))
    for i, (x, z) in enumerate([(-0.9, 2.6), (-1.8, 5.2), (-2.7, 7.8)], start=1):
        stations.append(Station(f"dl{i}", "diag_left", np.array([x, 0.0, z])))
    for i, (x, z) in enumerate([(0.9, 3.4), (1.8, 6.8), (2.7, 10.2)], start=1):
        stations.append(Station(f"dr{i}", "diag_right", np.array([x, 0.0, z])))
    return stations


def default_accuracy_config(noise_enabled: bool = True) -> AccuracyConfig:
    """Three lighting/resolution conditions plus an unlevel-floor variant
    (5 degree camera pitch)."""
    base = NoiseModel(disparity_std=0.25, baseline=0.12, enabled=noise_enabled)
    night = NoiseModel(disparity_std=0.45, baseline=0.12, enabled=noise_enabled)
    return AccuracyConfig(
        stations=default_station_fan(),
        conditions=[
            AccuracyCondition("720p", 1280, 720, 700.0, base, seed=1),
            AccuracyCondition("2k", 2208, 1242, 1200.0, base, seed=2),
            AccuracyCondition("2k_night", 2208, 1242, 1200.0, night, seed=3),
            AccuracyCondition("720p_pitch5", 1280, 720, 700.0, base, seed=4,
                              camera_pitch_deg=5.0),
        ],
    )


@dataclass
class StationResult:
    label: str
    group: str
    range_m: float                 # camera to mobile subject
    true_distance: float
    measured_distance: float | None
    abs_error: float | None
    color: tuple[int, int, int]


@dataclass
class HeatmapReport:
    condition: str
    rows: list[StationResult]

    def to_csv_text(self) -> str:
        lines = ["station,group,range_m,true_distance_m,measured_distance_m,abs_error_m,color"]
        for r in self.rows:
            measured = "" if r.measured_distance is None else f"{r.measured_distance:.6f}"
            err = "" if r.abs_error is None else f"{r.abs_error:.6f}"
            color = f"#{r.color[0]:02x}{r.color[1]:02x}{r.color[2]:02x}"
            lines.append(
                f"{r.label},{r.group},{r.range_m:.6f},{r.true_distance:.6f},"
                f"{measured},{err},{color}"
            )
        return "\n".join(lines) + "\n"

    def to_ppm_bytes(self, cell: int = 40) -> bytes:
        """ASCII PPM of the station grid, one row of cells per station group."""
        groups: dict[str, list[StationResult]] = {}
        for r in self.rows:
            groups.setdefault(r.group, []).append(r)
        names = sorted(groups)
        ncols = max(len(v) for v in groups.values())
        width, height = ncols * cell, len(names) * cell
        img = np.full((height, width, 3), 32, dtype=np.uint8)
        for gi, name in enumerate(names):
            for ci, r in enumerate(groups[name]):
                img[gi * cell:(gi + 1) * cell, ci * cell:(ci + 1) * cell] = r.color
        lines = [f"P3 {width} {height} 255"]
        for row in img:
            lines.append(" ".join(str(int(v)) for v in row.reshape(-1)))
        return ("\n".join(lines) + "\n").encode()


@dataclass
class AccuracyOutcome:
    reports: list[HeatmapReport]
    average: HeatmapReport


def _panel_box(center: np.ndarray, size: tuple[float, float, float]) -> Box:
    half = np.array(size, dtype=np.float64) / 2.0
    return Box(center - half, center + half)


def _experiment_scene(config: AccuracyConfig, station: Station,
                      cond: AccuracyCondition) -> Scene:
    k = CameraIntrinsics(
        fx=cond.focal, fy=cond.focal,
        cx=cond.width / 2.0, cy=cond.height / 2.0,
        width=cond.width, height=cond.height,
    )
    pose = RigidTransform(rotation_x(math.radians(cond.camera_pitch_deg)), np.zeros(3))
    return Scene(
        actors=[
            Actor(_panel_box(station.position, config.subject_size), config.mobile_class),
            Actor(_panel_box(config.center_position, config.subject_size), config.fixed_class),
        ],
        cameras=[SceneCamera(k, pose)],
        duration=0.0,
        frame_rate=1.0,
    )


def measure_station(config: AccuracyConfig, station: Station, cond: AccuracyCondition,
                    seed: int | tuple[int, ...] | None = None) -> StationResult:
    """Render one station, run the detection + lifting path, compare distances."""
    from .geometry import bbox_to_object3d  # local import avoids cycle confusion

    scene = _experiment_scene(config, station, cond)
    cam = scene.cameras[0]
    depth = render_depth(scene, 0, 0.0)
    if cond.noise.enabled:
        depth = apply_noise(depth, cam.intrinsics, cond.noise,
                            seed if seed is not None else cond.seed)
    detections = synth_detections(scene, 0, 0.0)

    true_d = float(np.linalg.norm(station.position - config.center_position))
    range_m = float(np.linalg.norm(station.position))

    by_class = {}
    for det in detections:
        by_class[det.class_id] = det
    measured = None
    if config.mobile_class in by_class and config.fixed_class in by_class:
        try:
            mobile = bbox_to_object3d(by_class[config.mobile_class], depth,
                                      cam.intrinsics, cam.pose)
            fixed = bbox_to_object3d(by_class[config.fixed_class], depth,
                                     cam.intrinsics, cam.pose)
            measured = float(np.linalg.norm(
                mobile.centroid.as_array() - fixed.centroid.as_array()
            ))
        except Exception:
            measured = None

    if measured is None:
        return StationResult(station.label, station.group, range_m, true_d,
                             None, None, MISSING_COLOR)
    err = abs(measured - true_d)
    return StationResult(station.label, station.group, range_m, true_d,
                         measured, err, error_color(err))


def run_accuracy_experiment(config: AccuracyConfig) -> AccuracyOutcome:
    """One heatmap per condition plus the per-station average panel."""
    reports = []
    for cond in config.conditions:
        rows = [measure_station(config, st, cond) for st in config.stations]
        reports.append(HeatmapReport(cond.name, rows))

    avg_rows = []
    for i, st in enumerate(config.stations):
        errors = [rep.rows[i].abs_error for rep in reports
                  if rep.rows[i].abs_error is not None]
        measured = [rep.rows[i].measured_distance for rep in reports
                    if rep.rows[i].measured_distance is not None]
        base = reports[0].rows[i]
        if errors:
            mean_err = float(np.mean(errors))
            avg_rows.append(StationResult(
                st.label, st.group, base.range_m, base.true_distance,
                float(np.mean(measured)), mean_err, error_color(mean_err),
            ))
        else:
            avg_rows.append(StationResult(
                st.label, st.group, base.range_m, base.true_distance,
                None, None, MISSING_COLOR,
            ))
    return AccuracyOutcome(reports=reports, average=HeatmapReport("average", avg_rows))


def station_noise_sweep(config: AccuracyConfig, cond: AccuracyCondition,
                        n_seeds: int) -> list[dict]:
    """Mean absolute distance error per station over n_seeds noise draws.

    Renders each station once and redraws only the noise, so Monte-Carlo
    sweeps stay cheap.  Returns one dict per station sorted by range.
    """
    from .geometry import bbox_to_object3d

    rows = []
    for si, station in enumerate(config.stations):
        scene = _experiment_scene(config, station, cond)
        cam = scene.cameras[0]
        clean = render_depth(scene, 0, 0.0)
        detections = {d.class_id: d for d in synth_detections(scene, 0, 0.0)}
        true_d = float(np.linalg.norm(station.position - config.center_position))
        errors = []
        for s in range(n_seeds):
            depth = apply_noise(clean, cam.intrinsics, cond.noise, (cond.seed, si, s))
            try:
                mobile = bbox_to_object3d(detections[config.mobile_class], depth,
                                          cam.intrinsics, cam.pose)
                fixed = bbox_to_object3d(detections[config.fixed_class], depth,
                                         cam.intrinsics, cam.pose)
            except Exception:
                continue
            measured = float(np.linalg.norm(
                mobile.centroid.as_array() - fixed.centroid.as_array()
            ))
            errors.append(abs(measured - true_d))
        rows.append({
            "label": station.label,
            "range_m": float(np.linalg.norm(station.position)),
            "depth_m": float(station.position[2]),
            "mean_abs_error": float(np.mean(errors)) if errors else None,
            "samples": len(errors),
        })
    rows.sort(key=lambda r: (r["depth_m"], r["range_m"]))
    return rows
