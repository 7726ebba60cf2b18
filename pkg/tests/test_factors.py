import numpy as np
import pytest

from conftest import look_at, yaw_rotation
from ellipslam.errors import BehindCamera
from ellipslam.factors import (
    RobustConfig,
    feature_reproj_dynamic,
    feature_reproj_static,
    motion_model_residual,
    planar_motion_residual,
    prior_size_residual,
    quadric_bbox_residual,
    robust_weight,
)
from ellipslam.quadrics import QuadricParams, conic_to_bbox, project_quadric
from ellipslam.se3 import Intrinsics, Pose, Twist, compose, se3_exp, project, inverse

K = Intrinsics(500.0, 500.0, 320.0, 240.0)


def random_pose(rng, t_scale=1.0):
    return se3_exp(Twist(rng.normal(scale=t_scale, size=3), rng.normal(scale=0.5, size=3)))


def numeric_pose_jacobian(fun, pose, h=1e-6):
    """Central differences of fun(pose) w.r.t. right-multiplied twist."""
    r0 = fun(pose)
    j = np.zeros((len(r0), 6))
    for col in range(6):
        d = np.zeros(6)
        d[col] = h
        rp = fun(compose(pose, se3_exp(Twist.from_vector(d))))
        rm = fun(compose(pose, se3_exp(Twist.from_vector(-d))))
        j[:, col] = (rp - rm) / (2 * h)
    return j


def numeric_point_jacobian(fun, x, h=1e-6):
    r0 = fun(x)
    j = np.zeros((len(r0), len(x)))
    for col in range(len(x)):
        d = np.zeros(len(x))
        d[col] = h
        j[:, col] = (fun(x + d) - fun(x - d)) / (2 * h)
    return j


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-6)
    return np.max(np.abs(a - b)) / denom


class TestStaticReproj:
    def test_zero_on_ground_truth(self):
        t_wc = look_at([0, 0, -8], [0, 0, 0])
        x_w = np.array([0.5, -0.3, 1.0])
        z = project(K, inverse(t_wc).apply(x_w))
        r, _, _ = feature_reproj_static(z, t_wc, x_w, K)
        assert np.max(np.abs(r)) < 1e-12

    def test_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(40)
        checked = 0
        while checked < 100:
            t_wc = random_pose(rng, t_scale=2.0)
            x_w = t_wc.apply(np.array([rng.normal(), rng.normal(), rng.uniform(2, 10)]))
            z = rng.uniform([0, 0], [640, 480])
            try:
                r, j_cam, j_point = feature_reproj_static(z, t_wc, x_w, K)
            except BehindCamera:
                continue
            fd_cam = numeric_pose_jacobian(lambda p: feature_reproj_static(z, p, x_w, K)[0], t_wc)
            fd_point = numeric_point_jacobian(lambda x: feature_reproj_static(z, t_wc, x, K)[0], x_w)
            assert rel_err(j_cam, fd_cam) < 1e-4
            assert rel_err(j_point, fd_point) < 1e-4
            checked += 1

    def test_taylor_first_order(self):
        t_wc = look_at([0, 0, -8], [0, 0, 0])
        x_w = np.array([0.5, -0.3, 1.0])
        z = project(K, inverse(t_wc).apply(x_w))
        r0, _, j_point = feature_reproj_static(z, t_wc, x_w, K)
        eps = 1e-4
        d = np.array([eps, 0, 0])
        r1, _, _ = feature_reproj_static(z, t_wc, x_w + d, K)
        assert np.max(np.abs(r1 - (r0 + j_point @ d))) < 10 * eps**2 * 500

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            feature_reproj_static([320, 240], Pose.identity(), [0, 0, -1], K)


class TestDynamicReproj:
    def test_zero_on_ground_truth(self):
        t_wc = look_at([0, 0, -8], [0, 0, 0])
        t_wo = Pose(yaw_rotation(10.0), [1.0, 0.0, 2.0])
        f_o = np.array([0.3, 0.2, -0.1])
        z = project(K, inverse(t_wc).apply(t_wo.apply(f_o)))
        r, *_ = feature_reproj_dynamic(z, t_wc, t_wo, f_o, K)
        assert np.max(np.abs(r)) < 1e-12

    def test_reduces_to_static_at_identity_object(self):
        t_wc = look_at([0, 0, -8], [0, 0, 0])
        x = np.array([0.4, -0.2, 0.5])
        z = np.array([300.0, 250.0])
        r_dyn, j_cam_d, _, j_pt_d = feature_reproj_dynamic(z, t_wc, Pose.identity(), x, K)
        r_st, j_cam_s, j_pt_s = feature_reproj_static(z, t_wc, x, K)
        assert np.allclose(r_dyn, r_st)
        assert np.allclose(j_cam_d, j_cam_s)
        assert np.allclose(j_pt_d, j_pt_s)

    def test_jacobians_match_finite_differences(self):
        rng = np.random.default_rng(41)
        checked = 0
        while checked < 100:
            t_wc = random_pose(rng, t_scale=2.0)
            t_wo = random_pose(rng, t_scale=2.0)
            f_o = rng.normal(scale=0.5, size=3)
            z = rng.uniform([0, 0], [640, 480])
            try:
                r, j_cam, j_obj, j_point = feature_reproj_dynamic(z, t_wc, t_wo, f_o, K)
            except BehindCamera:
                continue
            fd_cam = numeric_pose_jacobian(lambda p: feature_reproj_dynamic(z, p, t_wo, f_o, K)[0], t_wc)
            fd_obj = numeric_pose_jacobian(lambda p: feature_reproj_dynamic(z, t_wc, p, f_o, K)[0], t_wo)
            fd_point = numeric_point_jacobian(lambda x: feature_reproj_dynamic(z, t_wc, t_wo, x, K)[0], f_o)
            assert rel_err(j_cam, fd_cam) < 1e-4
            assert rel_err(j_obj, fd_obj) < 1e-4
            assert rel_err(j_point, fd_point) < 1e-4
            checked += 1


class TestMotionModel:
    def test_constant_velocity_zero(self):
        v = se3_exp(Twist([0.5, 0, 0], [0, 0.02, 0]))
        t0 = Pose(yaw_rotation(5.0), [1, 0, 10])
        t1 = compose(v, t0)
        t2 = compose(v, t1)
        r, _ = motion_model_residual(t0, t1, t2, with_jacobians=False)
        assert np.max(np.abs(r)) < 1e-12

    def test_stationary_zero(self):
        t = Pose(np.eye(3), [2, 2, 2])
        r, _ = motion_model_residual(t, t, t, with_jacobians=False)
        assert np.max(np.abs(r)) < 1e-12

    def test_velocity_jump_magnitude(self):
        t0 = Pose.identity()
        t1 = Pose(np.eye(3), [0.5, 0, 0])
        t2 = Pose(np.eye(3), [1.1, 0, 0])  # 0.1 m/frame jump in x
        r, _ = motion_model_residual(t0, t1, t2, with_jacobians=False)
        assert abs(np.linalg.norm(r) - 0.1) < 1e-9

    def test_numeric_jacobians_consistent(self):
        # step-halving: central differences are O(h^2), so the numeric
        # Jacobian itself is checked against an independent fd evaluation
        rng = np.random.default_rng(42)
        t0, t1, t2 = (random_pose(rng) for _ in range(3))
        r, jacs = motion_model_residual(t0, t1, t2)
        fd1 = numeric_pose_jacobian(lambda p: motion_model_residual(t0, p, t2, with_jacobians=False)[0], t1, h=1e-5)
        assert rel_err(jacs[1], fd1) < 1e-4


class TestQuadricBBox:
    def setup_scene(self):
        q = QuadricParams([1.8, 1.1, 0.9], [0, 0, 0], yaw_rotation(3.0))
        t_wo = Pose(np.eye(3), [0, 0, 0])
        t_wc = look_at([0, 0, -12], [0, 0, 0])
        b = conic_to_bbox(project_quadric(q, t_wo, t_wc, K))
        return q, t_wo, t_wc, b

    def test_zero_on_ground_truth(self):
        q, t_wo, t_wc, b = self.setup_scene()
        r, *_ = quadric_bbox_residual(b, q, t_wo, t_wc, K, with_jacobians=False)
        assert np.max(np.abs(r)) < 1e-9

    def test_axis_growth_monotonicity(self):
        # widening the x semi-axis must widen the projected bbox for a
        # fronto-parallel view: r_xmin > 0 and r_xmax < 0
        q, t_wo, t_wc, b = self.setup_scene()
        grown = QuadricParams(q.axes + np.array([0.3, 0, 0]), q.translation, q.rotation)
        r, *_ = quadric_bbox_residual(b, grown, t_wo, t_wc, K, with_jacobians=False)
        assert r[0] > 0 and r[2] < 0

    def test_richardson_step_halving(self):
        # halving the fd step must shrink the Jacobian error ~4x; compare
        # J(h) against J(h/2) extrapolation consistency
        q, t_wo, t_wc, b = self.setup_scene()
        b_off = type(b).from_vector(b.vector() + np.array([2.0, -1.0, 1.5, 0.5]))

        def jac_with_step(h):
            def residual(q_):
                proj = conic_to_bbox(project_quadric(q_, t_wo, t_wc, K))
                return b_off.vector() - proj.vector()

            j = np.zeros((4, 3))
            for col in range(3):
                d = np.zeros(3)
                d[col] = h
                qp = QuadricParams(q.axes * np.exp(d), q.translation, q.rotation)
                qm = QuadricParams(q.axes * np.exp(-d), q.translation, q.rotation)
                j[:, col] = (residual(qp) - residual(qm)) / (2 * h)
            return j

        j1 = jac_with_step(1e-3)
        j2 = jac_with_step(5e-4)
        j3 = jac_with_step(2.5e-4)
        e1 = np.max(np.abs(j1 - j3))
        e2 = np.max(np.abs(j2 - j3))
        # O(h^2) scaling: error ratio close to 4 (j3 ~ truth)
        assert e1 / max(e2, 1e-14) > 2.5

    def test_returned_jacobian_matches_independent_fd(self):
        q, t_wo, t_wc, b = self.setup_scene()
        r, j_q, j_obj, j_cam = quadric_bbox_residual(b, q, t_wo, t_wc, K)
        fd_cam = numeric_pose_jacobian(
            lambda p: quadric_bbox_residual(b, q, t_wo, p, K, with_jacobians=False)[0], t_wc, h=1e-5
        )
        assert rel_err(j_cam, fd_cam) < 1e-3


class TestSmallResiduals:
    def test_prior_size(self):
        assert np.allclose(prior_size_residual([1, 1, 1], [1, 1, 1]), 0)
        assert np.allclose(prior_size_residual([2, 1, 1], [1, 1, 1]), [1, 0, 0])
        a, b = np.array([2.0, 1.0, 1.0]), np.array([1.0, 1.0, 1.0])
        assert np.allclose(prior_size_residual(a, b), -prior_size_residual(b, a))

    def test_planar_on_plane(self):
        r = planar_motion_residual(Pose(np.eye(3), [5, 2, 1.0]), 1.0)
        assert np.allclose(r, 0)

    def test_planar_lifted(self):
        r = planar_motion_residual(Pose(np.eye(3), [0, 0, 1.5]), 1.0)
        assert np.allclose(r, [0.5, 0, 0])

    def test_planar_roll(self):
        a = np.deg2rad(5.0)
        rx = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
        r = planar_motion_residual(Pose(rx, [0, 0, 0]), 0.0)
        assert abs(r[1] - 0.0872665) < 1e-6
        assert abs(r[2]) < 1e-12


class TestRobustWeight:
    def test_zero_residual(self):
        assert robust_weight(0.0, RobustConfig()) == 1.0
        assert robust_weight(0.0, RobustConfig(kernel="tstudent")) == 1.0

    def test_huber_at_two_delta(self):
        cfg = RobustConfig(kernel="huber", huber_delta=1.5)
        assert abs(robust_weight(3.0, cfg) - 0.5) < 1e-12

    def test_monotone_grid(self):
        for cfg in (RobustConfig(), RobustConfig(kernel="tstudent")):
            grid = np.linspace(0, 20, 200)
            w = [robust_weight(r, cfg) for r in grid]
            assert all(b <= a + 1e-12 for a, b in zip(w[:-1], w[1:]))
            assert all(0 < x <= 1 for x in w)
