"""Residuals and Jacobians for the joint MAP problem.

Reprojection factors carry analytic Jacobians; the tangent-bbox and motion
factors differentiate numerically (central differences) because the
tangent-box map has piecewise min/max structure and those factor counts are
small. All pose Jacobians are with respect to right-multiplied twist
increments ``T <- T * exp(delta)`` in the order (rho, phi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateProjection
from .quadrics import BBox, QuadricParams, conic_to_bbox, project_quadric
from .se3 import Intrinsics, Pose, Twist, compose, inverse, se3_exp, se3_log, skew, so3_exp


@dataclass
class RobustConfig:
    kernel: str = "huber"  # "huber" or "tstudent"
    huber_delta: float = 2.447  # 2.447 * sigma_px for sigma = 1
    nu: float = 5.0


def robust_weight(r_norm: float, cfg: RobustConfig) -> float:
    """IRLS weight in (0, 1], equal to 1 at r = 0 and non-increasing."""
    if r_norm < 0:
        raise ValueError("residual norm must be non-negative")
    if cfg.kernel == "huber":
        if r_norm <= cfg.huber_delta:
            return 1.0
        return cfg.huber_delta / r_norm
    if cfg.kernel == "tstudent":
        return cfg.nu / (cfg.nu + r_norm**2)
    raise ValueError(f"unknown kernel {cfg.kernel!r}")


def _proj_jacobian(k: Intrinsics, p_cam):
    x, y, z = p_cam
    return np.array([[k.fx / z, 0.0, -k.fx * x / z**2], [0.0, k.fy / z, -k.fy * y / z**2]])


def feature_reproj_static(z_px, t_wc: Pose, x_w, k: Intrinsics):
    """r = z - project(T_wc^-1 X_w); returns (r, J_cam 2x6, J_point 2x3)."""
    x_w = np.asarray(x_w, dtype=float)
    p_cam = inverse(t_wc).apply(x_w)
    if p_cam[2] <= 1e-6:
        raise BehindCamera(f"landmark depth {p_cam[2]}")
    jp = _proj_jacobian(k, p_cam)
    r = np.asarray(z_px, dtype=float) - np.array(
        [k.fx * p_cam[0] / p_cam[2] + k.cx, k.fy * p_cam[1] / p_cam[2] + k.cy]
    )
    j_cam = np.hstack([jp, -jp @ skew(p_cam)])
    j_point = -jp @ t_wc.rotation.T
    return r, j_cam, j_point


def feature_reproj_dynamic(z_px, t_wc: Pose, t_wo: Pose, f_o, k: Intrinsics):
    """r = z - project(T_wc^-1 T_wo f_o); Jacobians w.r.t. camera twist,
    object twist and the object-frame landmark."""
    f_o = np.asarray(f_o, dtype=float)
    x_w = t_wo.apply(f_o)
    p_cam = inverse(t_wc).apply(x_w)
    if p_cam[2] <= 1e-6:
        raise BehindCamera(f"object landmark depth {p_cam[2]}")
    jp = _proj_jacobian(k, p_cam)
    r = np.asarray(z_px, dtype=float) - np.array(
        [k.fx * p_cam[0] / p_cam[2] + k.cx, k.fy * p_cam[1] / p_cam[2] + k.cy]
    )
    j_cam = np.hstack([jp, -jp @ skew(p_cam)])
    rcw_rwo = t_wc.rotation.T @ t_wo.rotation
    j_obj = -jp @ rcw_rwo @ np.hstack([np.eye(3), -skew(f_o)])
    j_point = -jp @ rcw_rwo
    return r, j_cam, j_obj, j_point


def _relative_motion(t_prev: Pose, t_curr: Pose) -> Pose:
    return compose(t_curr, inverse(t_prev))


def motion_model_residual(t_a: Pose, t_b: Pose, t_c: Pose, with_jacobians=True):
    """Constant-velocity model over three consecutive object poses:
    r = log(H_ab^-1 H_bc) with H_xy = T_y T_x^-1. Zero iff the relative
    motion is constant. Jacobians are central-difference by design."""
    def residual(ta, tb, tc):
        h1 = _relative_motion(ta, tb)
        h2 = _relative_motion(tb, tc)
        return se3_log(compose(inverse(h1), h2)).vector()

    r = residual(t_a, t_b, t_c)
    if not with_jacobians:
        return r, None
    jacs = []
    h = 1e-6
    for idx in range(3):
        j = np.zeros((6, 6))
        for col in range(6):
            d = np.zeros(6)
            d[col] = h
            poses_p = [t_a, t_b, t_c]
            poses_m = [t_a, t_b, t_c]
            poses_p[idx] = compose(poses_p[idx], se3_exp(Twist.from_vector(d)))
            poses_m[idx] = compose(poses_m[idx], se3_exp(Twist.from_vector(-d)))
            j[:, col] = (residual(*poses_p) - residual(*poses_m)) / (2 * h)
        jacs.append(j)
    return r, jacs


def quadric_bbox_residual(b: BBox, q: QuadricParams, t_wo: Pose, t_wc: Pose, k: Intrinsics,
                          with_jacobians=True):
    """r = observed bbox - tangent bbox of the projected quadric (4-vector).

    Jacobians (central differences) w.r.t. the 9 local quadric coordinates
    (log-axes, translation, rotation), the object twist and the camera
    twist. Raises DegenerateProjection/BehindCamera at invalid iterates so
    the caller can deactivate the factor for the iteration.
    """
    def residual(q_, t_wo_, t_wc_):
        proj = conic_to_bbox(project_quadric(q_, t_wo_, t_wc_, k))
        return b.vector() - proj.vector()

    r = residual(q, t_wo, t_wc)
    if not with_jacobians:
        return r, None, None, None
    h = 1e-6

    def perturb_quadric(d9):
        return QuadricParams(
            q.axes * np.exp(d9[:3]),
            q.translation + d9[3:6],
            q.rotation @ so3_exp(d9[6:9]),
        )

    j_q = np.zeros((4, 9))
    for col in range(9):
        d = np.zeros(9)
        d[col] = h
        j_q[:, col] = (residual(perturb_quadric(d), t_wo, t_wc) - residual(perturb_quadric(-d), t_wo, t_wc)) / (2 * h)
    j_obj = np.zeros((4, 6))
    j_cam = np.zeros((4, 6))
    for col in range(6):
        d = np.zeros(6)
        d[col] = h
        dp = se3_exp(Twist.from_vector(d))
        dm = se3_exp(Twist.from_vector(-d))
        j_obj[:, col] = (residual(q, compose(t_wo, dp), t_wc) - residual(q, compose(t_wo, dm), t_wc)) / (2 * h)
        j_cam[:, col] = (residual(q, t_wo, compose(t_wc, dp)) - residual(q, t_wo, compose(t_wc, dm))) / (2 * h)
    return r, j_q, j_obj, j_cam


def prior_size_residual(axes, prior_axes) -> np.ndarray:
    """Elementwise semi-axis difference against the prior lengths."""
    return np.asarray(axes, dtype=float) - np.asarray(prior_axes, dtype=float)


def roll_pitch(r) -> tuple:
    """Roll and pitch of a rotation matrix in the z-up-is-negative-y world;
    extracted from the last row of R (z-y-x Euler convention)."""
    r = np.asarray(r, dtype=float)
    pitch = -np.arcsin(np.clip(r[2, 0], -1.0, 1.0))
    roll = np.arctan2(r[2, 1], r[2, 2])
    return roll, pitch


def planar_motion_residual(t_wo: Pose, ref_plane_height: float) -> np.ndarray:
    """(z offset from the reference plane, roll, pitch); optional factor for
    ground-vehicle scenes."""
    roll, pitch = roll_pitch(t_wo.rotation)
    return np.array([t_wo.translation[2] - ref_plane_height, roll, pitch])
