import numpy as np
import pytest

from ellipslam.quadrics import QuadricParams
from ellipslam.se3 import Intrinsics, Pose


@pytest.fixture
def intrinsics():
    return Intrinsics(500.0, 500.0, 320.0, 240.0)


def look_at(eye, target, down=(0.0, 1.0, 0.0)) -> Pose:
    """Camera pose T_wc with z pointing from eye to target, y along `down`."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z = z / np.linalg.norm(z)
    x = np.cross(np.asarray(down, dtype=float), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=1)
    return Pose(r, eye)


def arc_camera_poses(n=5, arc_deg=18.0, radius=12.0, target=(0.0, 0.0, 0.0)):
    """Cameras evenly spread on a horizontal circular arc, all looking at target."""
    target = np.asarray(target, dtype=float)
    angles = np.deg2rad(np.linspace(-arc_deg / 2.0, arc_deg / 2.0, n))
    poses = []
    for a in angles:
        eye = target + radius * np.array([np.sin(a), 0.0, -np.cos(a)])
        poses.append(look_at(eye, target))
    return poses


def sample_ellipsoid_surface(q: QuadricParams, n, rng):
    """n points on the ellipsoid surface in world coordinates."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return (d * q.axes) @ q.rotation.T + q.translation


def yaw_rotation(deg):
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), 0.0, np.sin(a)], [0.0, 1.0, 0.0], [-np.sin(a), 0.0, np.cos(a)]])
