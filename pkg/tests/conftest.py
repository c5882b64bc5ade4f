import numpy as np
import pytest

from scenefuse.geometry import CameraIntrinsics, RigidTransform


@pytest.fixture
def k_simple() -> CameraIntrinsics:
    """100 px focal, principal point at (50, 50), 100x100 sensor."""
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0,
                            width=100, height=100)


@pytest.fixture
def k_vga() -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0,
                            width=640, height=480)


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    """Uniform random axis, uniform angle up to max_angle."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    kx, ky, kz = axis
    kmat = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(angle) * kmat + (1 - np.cos(angle)) * (kmat @ kmat)


def random_rigid(rng: np.random.Generator, max_angle: float = np.pi,
                 max_translation: float = 10.0) -> RigidTransform:
    return RigidTransform(
        random_rotation(rng, max_angle),
        rng.uniform(-max_translation, max_translation, size=3),
    )


def rotation_angle_deg(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix in degrees."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
