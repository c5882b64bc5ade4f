"""scenefuse: multi stereo-camera depth fusion, 3D tracking, and zone/rule
event detection, with a synthetic scene simulator as a built-in oracle."""

__version__ = "0.1.0"

from .geometry import (
    CameraIntrinsics,
    DepthMap,
    Detection2D,
    Object3D,
    Pixel,
    Point3,
    RigidTransform,
    backproject_pixel,
    bbox_to_object3d,
    project_point,
)
from .cloud import (
    PointCloud,
    VoxelGrid,
    apply_transform,
    cloud_from_depth,
    merge_clouds,
    voxel_downsample,
)
from .registration import (
    CorrespondenceSet,
    IcpParams,
    RegistrationResult,
    estimate_rigid,
    icp_refine,
)
from .tracking import Track, Tracker, TrackerParams, TrackStatus
from .events import Event, EventKind, Rule, RuleKind, Zone, zone_contains
from .sim import NoiseModel, Scene, apply_noise, render_depth, synth_detections

__all__ = [
    "CameraIntrinsics", "DepthMap", "Detection2D", "Object3D", "Pixel",
    "Point3", "RigidTransform", "backproject_pixel", "bbox_to_object3d",
    "project_point",
    "PointCloud", "VoxelGrid", "apply_transform", "cloud_from_depth",
    "merge_clouds", "voxel_downsample",
    "CorrespondenceSet", "IcpParams", "RegistrationResult", "estimate_rigid",
    "icp_refine",
    "Track", "Tracker", "TrackerParams", "TrackStatus",
    "Event", "EventKind", "Rule", "RuleKind", "Zone", "zone_contains",
    "NoiseModel", "Scene", "apply_noise", "render_depth", "synth_detections",
    "__version__",
]
