"""Per-frame back-end orchestration.

For every incoming frame: obtain a camera pose (given or estimated from
background features), associate detections with tracks, register object
poses from tracked surface features, classify motion, initialize ellipsoids
once enough evidence accumulated, push states and factors into the sliding
window, solve, and emit the per-frame estimate record.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .association import (
    AssignmentCostConfig,
    MotionDetectorConfig,
    MotionLabel,
    PointLabel,
    TrackManager,
    classify_object_motion,
    scene_flow_label,
)
from .dataio import EstimateRecord, FrameObservation, TrackEstimate
from .errors import BehindCamera, DegenerateProjection, TooFewPoints, DegenerateCloud
from .initialization import (
    InitPrior,
    RefineConfig,
    centroid,
    fit_obb_ransac,
    init_sphere,
    prior_from_obb,
    refine_quadric,
)
from .metrics import umeyama_alignment
from .quadrics import BBox, QuadricParams, conic_to_bbox, project_quadric
from .se3 import (
    Intrinsics,
    Pose,
    Twist,
    back_project,
    compose,
    inverse,
    se3_exp,
    se3_log,
)
from .window import (
    MotionFactor,
    PlanarMotionFactor,
    PosePriorFactor,
    PriorSizeFactor,
    QuadricBBoxFactor,
    QuadricRegFactor,
    ReprojFactor,
    SolverConfig,
    WindowState,
)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    camera_mode: str = "given"  # "given" or "estimate"
    window_capacity: int = 15
    enable_quadric_factors: bool = True
    enable_motion_factors: bool = True
    enable_planar_prior: bool = False
    planar_height: float = 0.0
    feature_sigma_px: float = 1.0
    depth_sigma_coeff: float = 0.001
    depth_sigma_floor: float = 0.02
    use_depth: bool = True
    bbox_sigma_px: float = 4.0
    size_sigma_m: float = 0.5
    quadric_reg_sqrt_info: tuple = (0.1, 0.1, 0.1, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0)
    motion_sigma: tuple = (0.05, 0.05, 0.05, 0.01, 0.01, 0.02)
    planar_sigma: tuple = (0.1, 0.05, 0.05)
    init_min_frames: int = 3
    init_min_points: int = 10
    max_bbox_history: int = 12
    camera_prior_sigma: tuple = (1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4)
    object_anchor_sigma: tuple = (1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4)
    separate_quadric_solve: bool = False
    assoc: AssignmentCostConfig = field(default_factory=AssignmentCostConfig)
    motion: MotionDetectorConfig = field(default_factory=MotionDetectorConfig)
    # warm-started per-frame solves rarely need more than a few iterations;
    # the window is re-solved every frame so sub-ppm polishing is wasted
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(max_iters=3, rel_cost_tol=1e-6))
    refine: RefineConfig = field(default_factory=RefineConfig)

    def depth_sigma(self, z: float) -> float:
        return max(self.depth_sigma_floor, self.depth_sigma_coeff * z * z)


def solve_camera_pose(init: Pose, obs, k: Intrinsics, iters=10, px_sigma=1.0,
                      depth_sigma=None, huber_delta=2.447):
    """Pose-only Gauss-Newton over (landmark, pixel, depth) observations.

    Residual rows are whitened (pixel sigma, depth sigma model) and each
    observation carries a Huber IRLS weight, so a single bad landmark or
    depth outlier cannot steer the pose.
    """
    from .se3 import skew

    pose = init
    for _ in range(iters):
        h = np.zeros((6, 6))
        g = np.zeros(6)
        n_used = 0
        for x_w, uv, depth in obs:
            p_cam = inverse(pose).apply(x_w)
            if p_cam[2] <= 1e-3:
                continue
            z = p_cam[2]
            pred = np.array([k.fx * p_cam[0] / z + k.cx, k.fy * p_cam[1] / z + k.cy])
            jp = np.array([[k.fx / z, 0.0, -k.fx * p_cam[0] / z**2], [0.0, k.fy / z, -k.fy * p_cam[1] / z**2]])
            dp = np.hstack([-np.eye(3), skew(p_cam)])
            r = (np.asarray(uv) - pred) / px_sigma
            j = -jp @ dp / px_sigma
            rows_r = [r]
            rows_j = [j]
            if depth is not None:
                sd = depth_sigma(z) if depth_sigma is not None else 0.2
                rows_r.append(np.array([(depth - z) / sd]))
                rows_j.append((-dp[2] / sd)[None, :])
            rr = np.concatenate(rows_r)
            jj = np.vstack(rows_j)
            norm = float(np.linalg.norm(rr))
            w = 1.0 if norm <= huber_delta else huber_delta / norm
            h += w * (jj.T @ jj)
            g += w * (jj.T @ rr)
            n_used += 1
        if n_used < 3:
            return pose
        try:
            delta = np.linalg.solve(h + 1e-9 * np.eye(6), -g)
        except np.linalg.LinAlgError:
            return pose
        pose = compose(pose, se3_exp(Twist.from_vector(delta)))
        if np.linalg.norm(delta) < 1e-12:
            break
    return pose


class Backend:
    """Sliding-window SLAM back-end over FrameObservation streams."""

    def __init__(self, cfg: PipelineConfig | None = None):
        self.cfg = cfg or PipelineConfig()
        self.window = WindowState(capacity=self.cfg.window_capacity)
        self.tracks = TrackManager(self.cfg.assoc)
        self.k: Intrinsics | None = None
        self.cam_pose: Pose | None = None
        self.cam_rel: Pose = Pose.identity()
        self.prev_frame: int | None = None
        self.prev_time: float | None = None
        self.known_landmarks: set = set()
        self.prev_world_points: dict = {}  # feature id -> world point (previous frame)
        self._anchored_tracks: set = set()
        self._size_factor_tracks: set = set()
        self._track_aux: dict = {}  # track id -> dict(first_frame, frames_seen)

    # -- helpers -------------------------------------------------------------------

    def _camera_pose_for(self, obs: FrameObservation) -> Pose:
        if self.cfg.camera_mode == "given" and obs.pose_wc is not None:
            return obs.pose_wc
        if self.cfg.camera_mode == "given":
            # dead-reckon across gaps in the provided trajectory
            return compose(self.cam_pose, self.cam_rel) if self.cam_pose else Pose.identity()
        # estimate mode: refine from the last solved pose. Extrapolating the
        # velocity here couples the prediction error back into the window's
        # soft gauge mode with gain > 1 and slowly diverges; the pose solve
        # below recovers the actual per-frame motion from the map instead.
        init = self.cam_pose if self.cam_pose is not None else Pose.identity()
        pnp_obs = []
        for f in obs.features:
            if f.instance is not None:
                continue
            key = ("lm", f.id)
            if key in self.window.values:
                pnp_obs.append((self.window.values[key], np.array([f.u, f.v]), f.depth_m))
        if len(pnp_obs) >= 6:
            return solve_camera_pose(
                init, pnp_obs, self.k,
                px_sigma=self.cfg.feature_sigma_px,
                depth_sigma=self.cfg.depth_sigma,
            )
        return init

    def _world_point(self, feat, cam: Pose):
        return cam.apply(back_project(self.k, np.array([feat.u, feat.v]), feat.depth_m))

    def _register_object_pose(self, track, feats_with_world, frame):
        """Pose observation for this frame from 3D-3D correspondences of
        already-anchored object landmarks; falls back to the constant
        velocity prediction."""
        hist = track.pose_history
        if len(hist) >= 2:
            h = compose(hist[-1][1], inverse(hist[-2][1]))
            predicted = compose(h, hist[-1][1])
        elif hist:
            predicted = hist[-1][1]
        else:
            predicted = None

        shared = [(fid, p_w) for fid, p_w in feats_with_world if fid in track.landmarks]
        if len(shared) >= 3:
            src = np.array([track.landmarks[fid] for fid, _ in shared])
            dst = np.array([p_w for _, p_w in shared])
            if np.linalg.matrix_rank(src - src.mean(axis=0), tol=1e-9) >= 2:
                r, t = umeyama_alignment(src, dst)
                return Pose(r, t)
        if predicted is not None:
            return predicted
        # first sighting: anchor the object frame at the point centroid
        pts = np.array([p_w for _, p_w in feats_with_world])
        return Pose(np.eye(3), centroid(pts))

    def _maybe_init_quadric(self, track, tid):
        if track.quadric is not None:
            return
        aux = self._track_aux.setdefault(tid, {"frames_seen": 0})
        if aux["frames_seen"] < self.cfg.init_min_frames:
            return
        if len(track.landmarks) < self.cfg.init_min_points:
            return
        pts_o = np.array(list(track.landmarks.values()))
        try:
            obb = fit_obb_ransac(pts_o, rng=np.random.default_rng(1000 + tid))
            # unblended extents: the omega blend biases the prior low, which
            # the depth-degenerate bbox geometry converts into meters of
            # center error
            prior = InitPrior(per_axis=np.maximum(np.sort(obb.half_extents), 1e-6))
        except (TooFewPoints, DegenerateCloud):
            prior = InitPrior(radius=float(np.linalg.norm(pts_o.std(axis=0))) + 1e-3)
        sphere = init_sphere(centroid(pts_o), prior)
        obs = [(bbox, t_wc, t_wo) for _, bbox, t_wc, t_wo in track.bbox_history]
        try:
            cfg = RefineConfig(
                bbox_sigma_px=self.cfg.refine.bbox_sigma_px,
                prior_size_weight=self.cfg.refine.prior_size_weight,
            )
            track.quadric = refine_quadric(sphere, obs, prior, cfg, k=self.k)
        except Exception as exc:  # refinement is best-effort at init time
            log.debug("quadric init for track %d failed: %s", tid, exc)
            track.quadric = sphere
        # the window's size prior anchors to the refined axes: the raw OBB
        # blend is biased low and would drag the center along the depth
        # direction where bbox constraints are weakest
        self._prior_axes = getattr(self, "_prior_axes", {})
        self._prior_axes[tid] = np.sort(track.quadric.axes)

    def _projected_bbox(self, track, cam: Pose):
        if track.quadric is None or not track.pose_history:
            return None
        try:
            conic = project_quadric(track.quadric, track.pose_history[-1][1], cam, self.k)
            return conic_to_bbox(conic)
        except (BehindCamera, DegenerateProjection):
            return None

    # -- main step -------------------------------------------------------------------

    def process_frame(self, obs: FrameObservation) -> EstimateRecord:
        cfg = self.cfg
        if self.k is None:
            self.k = obs.intrinsics
        cam = self._camera_pose_for(obs)
        dt = (obs.time_s - self.prev_time) if self.prev_time is not None else None

        # detections paired with the feature ids inside their mask
        feats_by_mask: dict = {}
        for f in obs.features:
            if f.instance is not None:
                feats_by_mask.setdefault(f.instance, set()).add(f.id)
        detections = [(d.bbox, feats_by_mask.get(d.instance_gt)) for d in obs.detections]
        projected = [self._projected_bbox(t, cam) for t in self.tracks.tracks]
        matched = self.tracks.step(detections, projected)

        # --- object bookkeeping before the window solve
        new_object_poses = {}
        new_object_landmarks = {}
        new_quadrics = {}
        frame_factors = []
        world_points_this_frame: dict = {}

        for det_idx, track in matched:
            det = obs.detections[det_idx]
            tid = track.id
            mask_feats = [
                f
                for f in obs.features
                if f.instance is not None and f.id in (feats_by_mask.get(det.instance_gt) or set())
            ]
            feats_with_world = []
            for f in mask_feats:
                if f.depth_m is None:
                    continue
                p_w = self._world_point(f, cam)
                feats_with_world.append((f.id, p_w))
                world_points_this_frame[f.id] = p_w
            if not feats_with_world:
                continue
            pose = self._register_object_pose(track, feats_with_world, obs.frame)
            track.pose_history.append((obs.frame, pose))
            aux = self._track_aux.setdefault(tid, {"frames_seen": 0})
            aux["frames_seen"] += 1
            inv_pose = inverse(pose)
            for fid, p_w in feats_with_world:
                if fid not in track.landmarks:
                    track.landmarks[fid] = inv_pose.apply(p_w)
            track.bbox_history.append((obs.frame, det.bbox, cam, pose))
            if len(track.bbox_history) > cfg.max_bbox_history:
                track.bbox_history.pop(0)

            # motion evidence: raw world displacement of each object point
            labels = []
            for fid, p_w in feats_with_world:
                prev = self.prev_world_points.get(fid)
                if prev is None:
                    continue
                labels.append(scene_flow_label(prev, p_w, None, cfg.motion))
            classify_object_motion(track, labels, cfg.motion)

            self._maybe_init_quadric(track, tid)

            # states and factors for the window
            new_object_poses[tid] = pose
            for fid, _ in feats_with_world:
                key = ("olm", tid, fid)
                if key not in self.window.values:
                    new_object_landmarks[(tid, fid)] = track.landmarks[fid]
            if track.quadric is not None and ("quad", tid) not in self.window.values:
                new_quadrics[tid] = track.quadric
            for f in mask_feats:
                if f.depth_m is None:
                    continue
                frame_factors.append(
                    ReprojFactor(
                        frame=obs.frame,
                        lm_id=f.id,
                        z_px=np.array([f.u, f.v]),
                        k=self.k,
                        track=tid,
                        depth=f.depth_m if cfg.use_depth else None,
                        sigma_px=cfg.feature_sigma_px,
                        sigma_depth=cfg.depth_sigma(f.depth_m) if cfg.use_depth else None,
                    )
                )
            if cfg.enable_quadric_factors and track.quadric is not None:
                frame_factors.append(
                    QuadricBBoxFactor(
                        frame=obs.frame, track=tid, bbox=det.bbox, k=self.k, sigma_px=cfg.bbox_sigma_px
                    )
                )
            if cfg.enable_planar_prior:
                frame_factors.append(
                    PlanarMotionFactor(
                        frame=obs.frame,
                        track=tid,
                        ref_height=cfg.planar_height,
                        sqrt_info=1.0 / np.asarray(cfg.planar_sigma),
                    )
                )

        # background features
        new_landmarks = {}
        for f in obs.features:
            if f.instance is not None:
                continue
            key = ("lm", f.id)
            if key not in self.window.values and f.id not in new_landmarks:
                if f.depth_m is None:
                    continue
                new_landmarks[f.id] = self._world_point(f, cam)
            frame_factors.append(
                ReprojFactor(
                    frame=obs.frame,
                    lm_id=f.id,
                    z_px=np.array([f.u, f.v]),
                    k=self.k,
                    depth=f.depth_m if cfg.use_depth else None,
                    sigma_px=cfg.feature_sigma_px,
                    sigma_depth=cfg.depth_sigma(f.depth_m) if (cfg.use_depth and f.depth_m) else None,
                )
            )
            if f.depth_m is not None:
                world_points_this_frame[f.id] = self._world_point(f, cam)

        # --- window update
        self.window.add_frame(
            obs.frame,
            cam,
            object_poses=new_object_poses,
            landmarks=new_landmarks,
            object_landmarks=new_object_landmarks,
            quadrics=new_quadrics,
            factors=[],
        )
        if cfg.camera_mode == "given":
            self.window.add_factor(
                PosePriorFactor(
                    key=("cam", obs.frame), reference=cam, sqrt_info=1.0 / np.asarray(cfg.camera_prior_sigma)
                )
            )
        elif not self.window.fixed and len(self.window.frames) == 1:
            self.window.fixed.add(("cam", obs.frame))
        for f in frame_factors:
            self.window.add_factor(f)
        for tid in new_quadrics:
            if tid not in self._size_factor_tracks:
                if cfg.enable_quadric_factors:
                    prior_axes = getattr(self, "_prior_axes", {}).get(tid)
                    if prior_axes is not None:
                        self.window.add_factor(
                            PriorSizeFactor(track=tid, prior_axes=prior_axes, sigma=cfg.size_sigma_m)
                        )
                    self.window.add_factor(
                        QuadricRegFactor(
                            track=tid,
                            reference=new_quadrics[tid],
                            sqrt_info=np.asarray(cfg.quadric_reg_sqrt_info),
                        )
                    )
                self._size_factor_tracks.add(tid)
        for tid in new_object_poses:
            if tid not in self._anchored_tracks:
                self.window.add_factor(
                    PosePriorFactor(
                        key=("obj", obs.frame, tid),
                        reference=new_object_poses[tid],
                        sqrt_info=1.0 / np.asarray(cfg.object_anchor_sigma),
                    )
                )
                self._anchored_tracks.add(tid)
        if cfg.enable_motion_factors:
            for tid in new_object_poses:
                frames = [f for f in self.window.frames if ("obj", f, tid) in self.window.values]
                if len(frames) >= 3:
                    triple = tuple(frames[-3:])
                    self.window.add_factor(
                        MotionFactor(
                            track=tid, frames=triple, sqrt_info=1.0 / np.asarray(cfg.motion_sigma)
                        )
                    )

        if self.window.factors:
            self.window.lm_solve(cfg.solver)

        # --- read back optimized states
        cam_opt = self.window.values[("cam", obs.frame)]
        if self.cam_pose is not None:
            self.cam_rel = compose(inverse(self.cam_pose), cam_opt)
        self.cam_pose = cam_opt

        estimates = []
        for det_idx, track in matched:
            tid = track.id
            key = ("obj", obs.frame, tid)
            if key not in self.window.values:
                continue
            pose_opt = self.window.values[key]
            track.pose_history[-1] = (obs.frame, pose_opt)
            for k2 in self.window.values:
                if k2[0] == "olm" and k2[1] == tid:
                    track.landmarks[k2[2]] = self.window.values[k2]
            if ("quad", tid) in self.window.values:
                track.quadric = self.window.values[("quad", tid)]
            velocity = np.zeros(6)
            if len(track.pose_history) >= 2 and dt:
                h = compose(track.pose_history[-1][1], inverse(track.pose_history[-2][1]))
                try:
                    velocity = se3_log(h).vector() / dt
                except Exception:
                    velocity = np.zeros(6)
            track.velocity = Twist.from_vector(velocity * (dt or 1.0))
            quad_axes = track.quadric.axes if track.quadric is not None else None
            quad_pose = None
            if track.quadric is not None:
                quad_pose = compose(pose_opt, Pose(track.quadric.rotation, track.quadric.translation))
            estimates.append(
                TrackEstimate(
                    id=tid,
                    pose_wo=pose_opt,
                    velocity=velocity,
                    motion_label=track.motion_label.value,
                    quadric_axes=quad_axes,
                    quadric_pose=quad_pose,
                    bbox=obs.detections[det_idx].bbox,
                )
            )

        self._retire_dead_tracks()
        self.prev_world_points = world_points_this_frame
        self.prev_frame = obs.frame
        self.prev_time = obs.time_s
        return EstimateRecord(frame=obs.frame, camera_pose=cam_opt, tracks=estimates)

    def _retire_dead_tracks(self):
        """Drop window factors and mark states of tracks the manager pruned;
        their states fall out at the next marginalization."""
        alive = {t.id for t in self.tracks.tracks}
        dead_keys = set()
        for key in self.window.values:
            if key[0] == "quad" and key[1] not in alive:
                dead_keys.add(key)
            elif key[0] == "olm" and key[1] not in alive:
                dead_keys.add(key)
        if not dead_keys:
            return
        self.window.factors = [
            f for f in self.window.factors if not (set(f.keys()) & dead_keys)
        ]
        prior_keys = set(self.window.prior.keys) if self.window.prior is not None else set()
        for key in dead_keys - prior_keys:
            self.window.values.pop(key, None)
        for tid in list(self._track_aux):
            if tid not in alive:
                self._track_aux.pop(tid)


def run_pipeline(frames, cfg: PipelineConfig | None = None):
    """Run the back-end over an iterable of FrameObservation records."""
    backend = Backend(cfg)
    return [backend.process_frame(obs) for obs in frames]
