"""Sliding-window factor graph: state bookkeeping, Levenberg-Marquardt on
the manifold and Schur-complement marginalization into a Gaussian prior.

State keys address every optimizable quantity:

    ("cam", frame)            camera pose, 6 local dof
    ("obj", frame, track)     per-frame object pose, 6 dof
    ("lm", id)                background landmark, 3 dof
    ("olm", track, id)        object-frame landmark, 3 dof
    ("quad", track)           ellipsoid, 9 dof (log-axes, t, rotation)

Pose increments are right-multiplied twists; quadric axes update in log
space. The solver is deterministic: fixed iteration order, no seeding.
Reprojection factors are linearized in vectorized per-frame batches.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    BehindCamera,
    DanglingFactor,
    DegenerateProjection,
    NonMonotoneFrameId,
    SingularSystem,
)
from .factors import RobustConfig, robust_weight
from .quadrics import BBox, QuadricParams, batch_tangent_bboxes, projection_matrix
from .se3 import (
    Intrinsics,
    Pose,
    Twist,
    compose,
    inverse,
    se3_exp,
    se3_log,
    se3_log_batch,
    skew,
    so3_exp,
    so3_log,
)

log = logging.getLogger(__name__)


def state_dim(key) -> int:
    kind = key[0]
    if kind in ("cam", "obj"):
        return 6
    if kind in ("lm", "olm"):
        return 3
    if kind == "quad":
        return 9
    raise ValueError(f"unknown state kind {kind}")


def retract(value, delta):
    """Apply a local increment to a state value."""
    if isinstance(value, Pose):
        return compose(value, se3_exp(Twist.from_vector(delta)))
    if isinstance(value, QuadricParams):
        return QuadricParams(
            value.axes * np.exp(delta[:3]),
            value.translation + delta[3:6],
            value.rotation @ so3_exp(delta[6:9]),
        )
    return value + delta


def local_coords(value, reference):
    """Inverse of retract: the increment taking reference to value."""
    if isinstance(value, Pose):
        return se3_log(compose(inverse(reference), value)).vector()
    if isinstance(value, QuadricParams):
        return np.concatenate(
            [
                np.log(value.axes) - np.log(reference.axes),
                value.translation - reference.translation,
                so3_log(reference.rotation.T @ value.rotation),
            ]
        )
    return np.asarray(value) - np.asarray(reference)


_FD_STEP = 1e-6
# perturbation transforms exp(+-h e_i) for the fixed finite-difference step
_TWIST_PERTURB = []
for _col in range(6):
    _d = np.zeros(6)
    _d[_col] = _FD_STEP
    _TWIST_PERTURB.append(
        (se3_exp(Twist.from_vector(_d)).matrix(), se3_exp(Twist.from_vector(-_d)).matrix())
    )
_TWIST_PERTURB_PLUS = np.stack([p for p, _ in _TWIST_PERTURB])
_TWIST_PERTURB_MINUS = np.stack([m for _, m in _TWIST_PERTURB])
# interleaved (+h, -h) pairs, and rotation-only versions for quadric axes
_TWIST_PERTURB_PAIRS = np.stack([m for pair in _TWIST_PERTURB for m in pair])
_ROT_PERTURB_PAIRS = np.stack(
    [so3_exp(s * np.eye(3)[i]) for i in range(3) for s in (_FD_STEP, -_FD_STEP)]
)
# camera twists enter through the inverse pose: swap each (+h, -h) pair
_CAM_SWAP = np.array([1, 0, 3, 2, 5, 4, 7, 6, 9, 8, 11, 10])


# --- factors --------------------------------------------------------------------


@dataclass
class ReprojFactor:
    """Pixel (and optional depth) observation of a landmark.

    For `track` None the landmark is a background world point; otherwise it
    is an object-frame point seen through the object pose of this frame.
    """

    frame: int
    lm_id: int
    z_px: np.ndarray
    k: Intrinsics
    track: int | None = None
    depth: float | None = None
    sigma_px: float = 1.0
    sigma_depth: float | None = None
    robust: str = "tstudent"

    def lm_key(self):
        return ("lm", self.lm_id) if self.track is None else ("olm", self.track, self.lm_id)

    def keys(self):
        ks = [("cam", self.frame)]
        if self.track is None:
            ks.append(("lm", self.lm_id))
        else:
            ks.append(("obj", self.frame, self.track))
            ks.append(("olm", self.track, self.lm_id))
        return ks

    def evaluate(self, values, with_jacobians=True):
        t_wc = values[("cam", self.frame)]
        if self.track is None:
            f_o = values[("lm", self.lm_id)]
            x_w = f_o
        else:
            t_wo = values[("obj", self.frame, self.track)]
            f_o = values[("olm", self.track, self.lm_id)]
            x_w = t_wo.apply(f_o)
        p_cam = inverse(t_wc).apply(x_w)
        if p_cam[2] <= 1e-6:
            raise BehindCamera("landmark behind camera")
        k = self.k
        pred = np.array([k.fx * p_cam[0] / p_cam[2] + k.cx, k.fy * p_cam[1] / p_cam[2] + k.cy])
        use_depth = self.depth is not None and self.sigma_depth is not None
        r = (np.asarray(self.z_px) - pred) / self.sigma_px
        if use_depth:
            r = np.append(r, (self.depth - p_cam[2]) / self.sigma_depth)
        if not with_jacobians:
            return r, None
        dp_cam = np.hstack([-np.eye(3), skew(p_cam)])
        dp_xw = t_wc.rotation.T
        z = p_cam[2]
        jp = np.array([[k.fx / z, 0.0, -k.fx * p_cam[0] / z**2], [0.0, k.fy / z, -k.fy * p_cam[1] / z**2]])
        rows_cam = -jp @ dp_cam / self.sigma_px
        if use_depth:
            rows_cam = np.vstack([rows_cam, -dp_cam[2] / self.sigma_depth])
        jacs = {("cam", self.frame): rows_cam}
        if self.track is None:
            rows_lm = -jp @ dp_xw / self.sigma_px
            if use_depth:
                rows_lm = np.vstack([rows_lm, -dp_xw[2] / self.sigma_depth])
            jacs[("lm", self.lm_id)] = rows_lm
        else:
            t_wo = values[("obj", self.frame, self.track)]
            dxw_obj = t_wo.rotation @ np.hstack([np.eye(3), -skew(f_o)])
            dxw_f = t_wo.rotation
            rows_obj = -jp @ dp_xw @ dxw_obj / self.sigma_px
            rows_f = -jp @ dp_xw @ dxw_f / self.sigma_px
            if use_depth:
                rows_obj = np.vstack([rows_obj, -(dp_xw @ dxw_obj)[2] / self.sigma_depth])
                rows_f = np.vstack([rows_f, -(dp_xw @ dxw_f)[2] / self.sigma_depth])
            jacs[("obj", self.frame, self.track)] = rows_obj
            jacs[("olm", self.track, self.lm_id)] = rows_f
        return r, jacs


class _ReprojBatch:
    """Vectorized evaluation of reprojection factors across the whole
    window, split only by static/dynamic form and depth availability.

    Per-row camera (and object) poses are gathered through index arrays so
    one batch covers every frame; scatter indices into the normal equations
    are precomputed once per solve by `prepare`.
    """

    def __init__(self, factors):
        f0 = factors[0]
        self.dynamic = f0.track is not None
        self.has_depth = f0.depth is not None and f0.sigma_depth is not None
        self.k = f0.k
        self.factors = factors
        self.rows = 3 if self.has_depth else 2
        self.robust = f0.robust
        n = len(factors)
        cam_keys = []
        cam_index = {}
        obj_keys = []
        obj_index = {}
        self.row_cam = np.empty(n, dtype=int)
        self.row_obj = np.empty(n, dtype=int) if self.dynamic else None
        self.lm_keys = []
        for i, f in enumerate(factors):
            ck = ("cam", f.frame)
            if ck not in cam_index:
                cam_index[ck] = len(cam_keys)
                cam_keys.append(ck)
            self.row_cam[i] = cam_index[ck]
            if self.dynamic:
                ok = ("obj", f.frame, f.track)
                if ok not in obj_index:
                    obj_index[ok] = len(obj_keys)
                    obj_keys.append(ok)
                self.row_obj[i] = obj_index[ok]
            self.lm_keys.append(f.lm_key())
        self.cam_keys = cam_keys
        self.obj_keys = obj_keys
        self.z = np.array([f.z_px for f in factors], dtype=float)
        self.sigma_px = np.array([f.sigma_px for f in factors], dtype=float)
        if self.has_depth:
            self.depth = np.array([f.depth for f in factors], dtype=float)
            self.sigma_depth = np.array([f.sigma_depth for f in factors], dtype=float)

    def prepare(self, offsets):
        """Precompute per-row scatter offsets; -1 marks fixed/absent states."""
        self.cam_off = np.array([offsets.get(k, -1) for k in self.cam_keys], dtype=int)
        self.obj_off = (
            np.array([offsets.get(k, -1) for k in self.obj_keys], dtype=int) if self.dynamic else None
        )
        self.lm_off = np.array([offsets.get(k, -1) for k in self.lm_keys], dtype=int)

    def eval(self, values, with_jacobians=True):
        k = self.k
        cams = [values[ck] for ck in self.cam_keys]
        r_cam = np.stack([c.rotation for c in cams])[self.row_cam]
        t_cam = np.stack([c.translation for c in cams])[self.row_cam]
        f_o = np.array([values[kk] for kk in self.lm_keys], dtype=float)
        if not self.dynamic:
            x_w = f_o
        else:
            objs = [values[ok] for ok in self.obj_keys]
            r_obj = np.stack([o.rotation for o in objs])[self.row_obj]
            t_obj = np.stack([o.translation for o in objs])[self.row_obj]
            x_w = np.einsum("nij,nj->ni", r_obj, f_o) + t_obj
        p_cam = np.einsum("nj,nji->ni", x_w - t_cam, r_cam)
        z = p_cam[:, 2]
        valid = z > 1e-6
        zs = np.where(valid, z, 1.0)
        pred = np.stack([k.fx * p_cam[:, 0] / zs + k.cx, k.fy * p_cam[:, 1] / zs + k.cy], axis=1)
        m = len(f_o)
        r = np.empty((m, self.rows))
        r[:, :2] = (self.z - pred) / self.sigma_px[:, None]
        if self.has_depth:
            r[:, 2] = (self.depth - z) / self.sigma_depth
        if not with_jacobians:
            return r, valid, None
        jp = np.zeros((m, 2, 3))
        jp[:, 0, 0] = k.fx / zs
        jp[:, 0, 2] = -k.fx * p_cam[:, 0] / zs**2
        jp[:, 1, 1] = k.fy / zs
        jp[:, 1, 2] = -k.fy * p_cam[:, 1] / zs**2
        # dp_cam/d(camera twist) = [-I | skew(p_cam)]
        dp_cam = np.zeros((m, 3, 6))
        dp_cam[:, 0, 0] = dp_cam[:, 1, 1] = dp_cam[:, 2, 2] = -1.0
        dp_cam[:, 0, 4] = -p_cam[:, 2]
        dp_cam[:, 0, 5] = p_cam[:, 1]
        dp_cam[:, 1, 3] = p_cam[:, 2]
        dp_cam[:, 1, 5] = -p_cam[:, 0]
        dp_cam[:, 2, 3] = -p_cam[:, 1]
        dp_cam[:, 2, 4] = p_cam[:, 0]
        j_cam = np.empty((m, self.rows, 6))
        j_cam[:, :2] = -np.einsum("mij,mjk->mik", jp, dp_cam) / self.sigma_px[:, None, None]
        r_cam_t = np.swapaxes(r_cam, 1, 2)  # per-row R^T
        jp_cw = np.einsum("mij,mjk->mik", jp, r_cam_t)
        if not self.dynamic:
            j_lm = np.empty((m, self.rows, 3))
            j_lm[:, :2] = -jp_cw / self.sigma_px[:, None, None]
            j_obj = None
        else:
            # dxw/d(object twist) = R_wo [I | -skew(f_o)]
            dxw_obj = np.zeros((m, 3, 6))
            dxw_obj[:, :, :3] = r_obj
            sk = np.zeros((m, 3, 3))
            sk[:, 0, 1] = -f_o[:, 2]
            sk[:, 0, 2] = f_o[:, 1]
            sk[:, 1, 0] = f_o[:, 2]
            sk[:, 1, 2] = -f_o[:, 0]
            sk[:, 2, 0] = -f_o[:, 1]
            sk[:, 2, 1] = f_o[:, 0]
            dxw_obj[:, :, 3:] = -np.einsum("nij,njk->nik", r_obj, sk)
            j_lm = np.empty((m, self.rows, 3))
            j_lm[:, :2] = -np.einsum("mij,mjk->mik", jp_cw, r_obj) / self.sigma_px[:, None, None]
            j_obj = np.empty((m, self.rows, 6))
            j_obj[:, :2] = -np.einsum("mij,mjk->mik", jp_cw, dxw_obj) / self.sigma_px[:, None, None]
        if self.has_depth:
            dpz_xw = r_cam_t[:, 2]  # row 2 of R^T per row
            j_cam[:, 2] = -dp_cam[:, 2] / self.sigma_depth[:, None]
            if not self.dynamic:
                j_lm[:, 2] = -dpz_xw / self.sigma_depth[:, None]
            else:
                j_lm[:, 2] = -np.einsum("mj,mjk->mk", dpz_xw, r_obj) / self.sigma_depth[:, None]
                j_obj[:, 2] = -np.einsum("mj,mjk->mk", dpz_xw, dxw_obj) / self.sigma_depth[:, None]
        return r, valid, (j_cam, j_lm, j_obj)


def _inv_se3(m):
    rt = m[:3, :3].T
    out = np.eye(4)
    out[:3, :3] = rt
    out[:3, 3] = -rt @ m[:3, 3]
    return out


def _log_se3_mat(m):
    return se3_log(Pose(m[:3, :3], m[:3, 3])).vector()


@dataclass
class MotionFactor:
    """Constant-velocity smoothness over three consecutive object poses:
    r = log(H_ab^-1 H_bc), H_xy = T_y T_x^-1. Numeric Jacobians by design;
    the perturbed relative motions are assembled from cached SE3 inverses."""

    track: int
    frames: tuple
    sqrt_info: np.ndarray  # (6,) diagonal

    def keys(self):
        return [("obj", f, self.track) for f in self.frames]

    def evaluate(self, values, with_jacobians=True):
        m0, m1, m2 = (values[k].matrix() for k in self.keys())
        i1 = _inv_se3(m1)
        rel = m0 @ i1 @ m2 @ i1  # (H1^-1 H2) = T0 T1^-1 T2 T1^-1
        r = _log_se3_mat(rel) * self.sqrt_info
        if not with_jacobians:
            return r, None
        # all 72 perturbed relative motions in one batch:
        #   T0 -> T0 e:  rel = m0 e (i1 m2 i1)
        #   T1 -> T1 e:  rel = m0 e^-1 (i1 m2) e^-1 i1
        #   T2 -> T2 e:  rel = (m0 i1 m2) e i1
        b0 = i1 @ m2 @ i1
        q12 = i1 @ m2
        r2 = m0 @ q12
        ep = _TWIST_PERTURB_PLUS
        em = _TWIST_PERTURB_MINUS
        rels = np.empty((36, 4, 4))
        rels[0:6] = np.einsum("ij,njk,kl->nil", m0, ep, b0)
        rels[6:12] = np.einsum("ij,njk,kl->nil", m0, em, b0)
        t1p = np.einsum("ij,njk,kl->nil", m0, em, q12)
        t1m = np.einsum("ij,njk,kl->nil", m0, ep, q12)
        rels[12:18] = np.einsum("nij,njk,kl->nil", t1p, em, i1)
        rels[18:24] = np.einsum("nij,njk,kl->nil", t1m, ep, i1)
        rels[24:30] = np.einsum("ij,njk,kl->nil", r2, ep, i1)
        rels[30:36] = np.einsum("ij,njk,kl->nil", r2, em, i1)
        logs = se3_log_batch(rels)
        scale = self.sqrt_info[:, None] / (2 * _FD_STEP)
        keys = self.keys()
        return r, {
            keys[0]: (logs[0:6] - logs[6:12]).T * scale,
            keys[1]: (logs[12:18] - logs[18:24]).T * scale,
            keys[2]: (logs[24:30] - logs[30:36]).T * scale,
        }


_KI_CACHE = {}


def _ki_matrix(k: Intrinsics):
    key = (k.fx, k.fy, k.cx, k.cy)
    if key not in _KI_CACHE:
        m = np.zeros((3, 4))
        m[:, :3] = k.matrix()
        _KI_CACHE[key] = m
    return _KI_CACHE[key]


@dataclass
class QuadricBBoxFactor:
    """Detection bbox vs tangent box of the projected ellipsoid; numeric
    Jacobians evaluated in one batched pass."""

    frame: int
    track: int
    bbox: BBox
    k: Intrinsics
    sigma_px: float = 4.0
    robust: str = "huber"

    def keys(self):
        return [("quad", self.track), ("obj", self.frame, self.track), ("cam", self.frame)]

    def evaluate(self, values, with_jacobians=True):
        q = values[("quad", self.track)]
        t_wo = values[("obj", self.frame, self.track)]
        t_wc = values[("cam", self.frame)]
        ki = _ki_matrix(self.k)
        tcw = inverse(t_wc).matrix()
        a_cw = tcw @ t_wo.matrix()  # camera-from-object 4x4
        m_base = ki @ a_cw

        n = 1 + (42 if with_jacobians else 0)
        axes = np.tile(q.axes, (n, 1))
        trans = np.tile(q.translation, (n, 1))
        rots = np.tile(q.rotation, (n, 1, 1))
        mats = np.tile(m_base, (n, 1, 1))
        zrows = np.tile(a_cw[2], (n, 1))
        if with_jacobians:
            h = _FD_STEP
            # rows 1..18: quadric coordinates (log-axes, translation, rotation)
            for col in range(3):
                axes[1 + 2 * col, col] *= np.exp(h)
                axes[2 + 2 * col, col] *= np.exp(-h)
                trans[7 + 2 * col, col] += h
                trans[8 + 2 * col, col] -= h
            rots[13:19] = q.rotation @ _ROT_PERTURB_PAIRS
            # rows 19..30: object twist; rows 31..42: camera twist (inverted)
            a_obj = np.einsum("ij,njk->nik", a_cw, _TWIST_PERTURB_PAIRS)
            a_cam = np.einsum("nij,jk->nik", _TWIST_PERTURB_PAIRS[_CAM_SWAP], a_cw)
            mats[19:31] = np.einsum("ij,njk->nik", ki, a_obj)
            zrows[19:31] = a_obj[:, 2]
            mats[31:43] = np.einsum("ij,njk->nik", ki, a_cam)
            zrows[31:43] = a_cam[:, 2]
        boxes, valid = batch_tangent_bboxes(axes, trans, rots, mats, zrows)
        if not valid[0]:
            raise DegenerateProjection("quadric projection invalid at current state")
        res = (self.bbox.vector()[None, :] - boxes) / self.sigma_px
        r = res[0]
        if not with_jacobians:
            return r, None
        cols = np.zeros((4, 21))
        for col in range(21):
            ip, im = 1 + 2 * col, 2 + 2 * col
            if valid[ip] and valid[im]:
                cols[:, col] = (res[ip] - res[im]) / (2 * _FD_STEP)
        return r, {
            ("quad", self.track): cols[:, :9],
            ("obj", self.frame, self.track): cols[:, 9:15],
            ("cam", self.frame): cols[:, 15:21],
        }


class _BBoxBatch:
    """Evaluates every QuadricBBoxFactor of the window in one batched
    tangent-bbox call (43 rows per factor when Jacobians are needed)."""

    def __init__(self, factors):
        self.factors = factors

    def eval(self, values, with_jacobians=True):
        per = 43 if with_jacobians else 1
        n = len(self.factors) * per
        axes = np.empty((n, 3))
        trans = np.empty((n, 3))
        rots = np.empty((n, 3, 3))
        mats = np.empty((n, 3, 4))
        zrows = np.empty((n, 4))
        for i, f in enumerate(self.factors):
            q = values[("quad", f.track)]
            t_wo = values[("obj", f.frame, f.track)]
            t_wc = values[("cam", f.frame)]
            ki = _ki_matrix(f.k)
            a_cw = inverse(t_wc).matrix() @ t_wo.matrix()
            s = slice(i * per, (i + 1) * per)
            axes[s] = q.axes
            trans[s] = q.translation
            rots[s] = q.rotation
            mats[s] = ki @ a_cw
            zrows[s] = a_cw[2]
            if with_jacobians:
                o = i * per
                for col in range(3):
                    axes[o + 1 + 2 * col, col] *= np.exp(_FD_STEP)
                    axes[o + 2 + 2 * col, col] *= np.exp(-_FD_STEP)
                    trans[o + 7 + 2 * col, col] += _FD_STEP
                    trans[o + 8 + 2 * col, col] -= _FD_STEP
                rots[o + 13 : o + 19] = q.rotation @ _ROT_PERTURB_PAIRS
                a_obj = np.einsum("ij,njk->nik", a_cw, _TWIST_PERTURB_PAIRS)
                a_cam = np.einsum("nij,jk->nik", _TWIST_PERTURB_PAIRS[_CAM_SWAP], a_cw)
                mats[o + 19 : o + 31] = np.einsum("ij,njk->nik", ki, a_obj)
                zrows[o + 19 : o + 31] = a_obj[:, 2]
                mats[o + 31 : o + 43] = np.einsum("ij,njk->nik", ki, a_cam)
                zrows[o + 31 : o + 43] = a_cam[:, 2]
        boxes, valid = batch_tangent_bboxes(axes, trans, rots, mats, zrows)
        out = []
        for i, f in enumerate(self.factors):
            o = i * per
            if not valid[o]:
                continue
            res = (f.bbox.vector()[None, :] - boxes[o : o + per]) / f.sigma_px
            r = res[0]
            if not with_jacobians:
                out.append((f, r, None))
                continue
            cols = np.zeros((4, 21))
            for col in range(21):
                ip, im = 1 + 2 * col, 2 + 2 * col
                if valid[o + ip] and valid[o + im]:
                    cols[:, col] = (res[ip] - res[im]) / (2 * _FD_STEP)
            out.append(
                (
                    f,
                    r,
                    {
                        ("quad", f.track): cols[:, :9],
                        ("obj", f.frame, f.track): cols[:, 9:15],
                        ("cam", f.frame): cols[:, 15:21],
                    },
                )
            )
        return out


class _MotionBatch:
    """Evaluates every MotionFactor through one batched SE3 log call.
    Falls back to per-factor evaluation when any relative rotation sits on
    the log branch cut, so one bad factor only deactivates itself."""

    def __init__(self, factors):
        self.factors = factors

    def _eval_fallback(self, values, with_jacobians):
        out = []
        for f in self.factors:
            try:
                r, jacs = f.evaluate(values, with_jacobians=with_jacobians)
            except AngleNearPi:
                continue
            out.append((f, r, jacs))
        return out

    def eval(self, values, with_jacobians=True):
        per = 37 if with_jacobians else 1
        rels = np.empty((len(self.factors) * per, 4, 4))
        for i, f in enumerate(self.factors):
            m0, m1, m2 = (values[k].matrix() for k in f.keys())
            i1 = _inv_se3(m1)
            o = i * per
            rels[o] = m0 @ i1 @ m2 @ i1
            if with_jacobians:
                b0 = i1 @ m2 @ i1
                q12 = i1 @ m2
                r2 = m0 @ q12
                rels[o + 1 : o + 7] = np.einsum("ij,njk,kl->nil", m0, _TWIST_PERTURB_PLUS, b0)
                rels[o + 7 : o + 13] = np.einsum("ij,njk,kl->nil", m0, _TWIST_PERTURB_MINUS, b0)
                t1p = np.einsum("ij,njk,kl->nil", m0, _TWIST_PERTURB_MINUS, q12)
                t1m = np.einsum("ij,njk,kl->nil", m0, _TWIST_PERTURB_PLUS, q12)
                rels[o + 13 : o + 19] = np.einsum("nij,njk,kl->nil", t1p, _TWIST_PERTURB_MINUS, i1)
                rels[o + 19 : o + 25] = np.einsum("nij,njk,kl->nil", t1m, _TWIST_PERTURB_PLUS, i1)
                rels[o + 25 : o + 31] = np.einsum("ij,njk,kl->nil", r2, _TWIST_PERTURB_PLUS, i1)
                rels[o + 31 : o + 37] = np.einsum("ij,njk,kl->nil", r2, _TWIST_PERTURB_MINUS, i1)
        try:
            logs = se3_log_batch(rels)
        except AngleNearPi:
            return self._eval_fallback(values, with_jacobians)
        out = []
        for i, f in enumerate(self.factors):
            o = i * per
            r = logs[o] * f.sqrt_info
            if not with_jacobians:
                out.append((f, r, None))
                continue
            scale = f.sqrt_info[:, None] / (2 * _FD_STEP)
            keys = f.keys()
            out.append(
                (
                    f,
                    r,
                    {
                        keys[0]: (logs[o + 1 : o + 7] - logs[o + 7 : o + 13]).T * scale,
                        keys[1]: (logs[o + 13 : o + 19] - logs[o + 19 : o + 25]).T * scale,
                        keys[2]: (logs[o + 25 : o + 31] - logs[o + 31 : o + 37]).T * scale,
                    },
                )
            )
        return out


@dataclass
class PriorSizeFactor:
    track: int
    prior_axes: np.ndarray
    sigma: float = 0.5

    def keys(self):
        return [("quad", self.track)]

    def evaluate(self, values, with_jacobians=True):
        q = values[("quad", self.track)]
        # compare sorted axes: permutation symmetry of the ellipsoid frame
        order = np.argsort(q.axes)
        r = (q.axes[order] - np.sort(np.asarray(self.prior_axes, dtype=float))) / self.sigma
        if not with_jacobians:
            return r, None
        j = np.zeros((3, 9))
        for row, col in enumerate(order):
            j[row, col] = q.axes[col] / self.sigma  # d a / d log a = a
        return r, {("quad", self.track): j}


@dataclass
class PlanarMotionFactor:
    frame: int
    track: int
    ref_height: float
    sqrt_info: np.ndarray  # (3,)

    def keys(self):
        return [("obj", self.frame, self.track)]

    def evaluate(self, values, with_jacobians=True):
        from .factors import planar_motion_residual

        key = self.keys()[0]
        t_wo = values[key]
        r = planar_motion_residual(t_wo, self.ref_height) * self.sqrt_info
        if not with_jacobians:
            return r, None
        j = np.zeros((3, 6))
        for col in range(6):
            ep, em = _TWIST_PERTURB[col]
            rp = planar_motion_residual(Pose.from_matrix(t_wo.matrix() @ ep), self.ref_height)
            rm = planar_motion_residual(Pose.from_matrix(t_wo.matrix() @ em), self.ref_height)
            j[:, col] = (rp - rm) / (2 * _FD_STEP) * self.sqrt_info
        return r, {key: j}


@dataclass
class PosePriorFactor:
    """Soft anchor of a pose state to a reference (gauge fixing, odometry)."""

    key: tuple
    reference: Pose
    sqrt_info: np.ndarray  # (6,)

    def keys(self):
        return [self.key]

    def evaluate(self, values, with_jacobians=True):
        r = local_coords(values[self.key], self.reference) * self.sqrt_info
        if not with_jacobians:
            return r, None
        return r, {self.key: np.diag(self.sqrt_info)}


@dataclass
class QuadricRegFactor:
    """Weak prior around the initialized ellipsoid. Narrow-baseline windows
    leave rotation/translation combinations of the 9-dof quadric
    unconstrained by tangent boxes; this removes the null space while
    staying an order of magnitude below any real observation."""

    track: int
    reference: QuadricParams
    sqrt_info: np.ndarray  # (9,)

    def keys(self):
        return [("quad", self.track)]

    def evaluate(self, values, with_jacobians=True):
        r = local_coords(values[("quad", self.track)], self.reference) * self.sqrt_info
        if not with_jacobians:
            return r, None
        return r, {("quad", self.track): np.diag(self.sqrt_info)}


@dataclass
class GaussianPrior:
    """Marginalization prior: quadratic energy over survivor states around a
    linearization point, stored in square-root form (r = A d(x) - b)."""

    keys: list
    lin_points: dict
    sqrt_info: np.ndarray  # (r, n)
    rhs: np.ndarray  # (r,)

    def dim(self):
        return sum(state_dim(k) for k in self.keys)

    def information(self):
        return self.sqrt_info.T @ self.sqrt_info

    def delta(self, values):
        return np.concatenate([local_coords(values[k], self.lin_points[k]) for k in self.keys])

    def evaluate(self, values, with_jacobians=True):
        r = self.sqrt_info @ self.delta(values) - self.rhs
        if not with_jacobians:
            return r, None
        jacs = {}
        off = 0
        for k in self.keys:
            d = state_dim(k)
            jacs[k] = self.sqrt_info[:, off : off + d]
            off += d
        return r, jacs

    @staticmethod
    def from_information(keys, lin_points, h, b):
        """Square-root form of (H, b); eigenvalues clamped at zero so the
        information matrix stays PSD."""
        h = 0.5 * (h + h.T)
        evals, evecs = np.linalg.eigh(h)
        evals = np.clip(evals, 0.0, None)
        keep = evals > 1e-12
        sqrt_info = np.sqrt(evals[keep])[:, None] * evecs[:, keep].T
        inv_sqrt = np.where(evals[keep] > 0, 1.0 / np.sqrt(evals[keep]), 0.0)
        rhs = inv_sqrt * (evecs[:, keep].T @ b)
        return GaussianPrior(keys=list(keys), lin_points=dict(lin_points), sqrt_info=sqrt_info, rhs=rhs)


# --- window ---------------------------------------------------------------------


@dataclass
class SolveReport:
    iterations: int = 0
    accepted_steps: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    termination: str = ""


@dataclass
class SolverConfig:
    max_iters: int = 50
    lambda_init: float = 1e-3
    step_tol: float = 1e-8
    rel_cost_tol: float = 1e-9
    cost_tol: float = 1e-16  # below float noise for whitened residuals
    robust: RobustConfig = field(default_factory=RobustConfig)
    schur_landmark_threshold: int = 200


class WindowState:
    """Fixed-capacity window over frames plus landmarks, quadrics, factors
    and an optional marginalization prior."""

    def __init__(self, capacity=15):
        self.capacity = capacity
        self.frames: list[int] = []
        self.values: dict = {}
        self.factors: list = []
        self.prior: GaussianPrior | None = None
        self.fixed: set = set()

    # -- bookkeeping ------------------------------------------------------------

    def has_state(self, key) -> bool:
        return key in self.values

    def frame_keys(self, frame) -> list:
        return [k for k in self.values if (k[0] == "cam" and k[1] == frame) or (k[0] == "obj" and k[1] == frame)]

    def add_frame(self, frame, camera: Pose, object_poses=None, landmarks=None,
                  object_landmarks=None, quadrics=None, factors=None):
        """Insert a frame's states and factors, marginalizing first if the
        window is full. Factor keys must resolve to live states."""
        if self.frames and frame <= self.frames[-1]:
            raise NonMonotoneFrameId(f"frame {frame} after {self.frames[-1]}")
        if len(self.frames) >= self.capacity:
            self.marginalize_oldest()
        self.frames.append(frame)
        self.values[("cam", frame)] = camera
        for tid, pose in (object_poses or {}).items():
            self.values[("obj", frame, tid)] = pose
        for lid, pt in (landmarks or {}).items():
            self.values[("lm", lid)] = np.asarray(pt, dtype=float)
        for (tid, lid), pt in (object_landmarks or {}).items():
            self.values[("olm", tid, lid)] = np.asarray(pt, dtype=float)
        for tid, q in (quadrics or {}).items():
            self.values[("quad", tid)] = q
        for f in factors or []:
            self.add_factor(f)

    def add_factor(self, factor):
        for key in factor.keys():
            if key not in self.values:
                raise DanglingFactor(f"factor references missing state {key}")
        self.factors.append(factor)

    # -- optimization ------------------------------------------------------------

    def _free_keys(self):
        order = {"cam": 0, "obj": 1, "lm": 2, "olm": 3, "quad": 4}
        keys = [k for k in self.values if k not in self.fixed]
        keys.sort(key=lambda k: (order[k[0]], k[1:]))
        return keys

    def _split_factors(self):
        groups = {}
        bbox = []
        motion = []
        singles = []
        for f in self.factors:
            if isinstance(f, ReprojFactor):
                key = (
                    f.track is not None,
                    f.depth is not None and f.sigma_depth is not None,
                    (f.k.fx, f.k.fy, f.k.cx, f.k.cy),
                    f.robust,
                )
                groups.setdefault(key, []).append(f)
            elif isinstance(f, QuadricBBoxFactor):
                bbox.append(f)
            elif isinstance(f, MotionFactor):
                motion.append(f)
            else:
                singles.append(f)
        tuple_batches = []
        if bbox:
            tuple_batches.append(_BBoxBatch(bbox))
        if motion:
            tuple_batches.append(_MotionBatch(motion))
        return [_ReprojBatch(v) for v in groups.values()], tuple_batches, singles

    def _cost(self, values, robust_cfg, groups, tuple_batches, singles):
        total = 0.0
        for grp in groups:
            r, valid, _ = grp.eval(values, with_jacobians=False)
            norms = np.sqrt(np.einsum("mi,mi->m", r, r)[valid])
            total += _rho_vec(norms, grp.robust, robust_cfg)
        for batch in tuple_batches:
            for f, r, _ in batch.eval(values, with_jacobians=False):
                total += _rho(np.sqrt(r @ r), getattr(f, "robust", None), robust_cfg)
        for f in singles:
            try:
                r, _ = f.evaluate(values, with_jacobians=False)
            except (AngleNearPi, BehindCamera, DegenerateProjection):
                continue
            total += _rho(np.linalg.norm(r), getattr(f, "robust", None), robust_cfg)
        if self.prior is not None:
            r, _ = self.prior.evaluate(values, with_jacobians=False)
            total += float(r @ r)
        return total

    def lm_solve(self, cfg: SolverConfig | None = None) -> SolveReport:
        """Damped normal equations on manifold increments. Accepted steps
        strictly decrease the robustified cost; lambda scales by 10 per
        reject and 1/10 per accept."""
        if cfg is None:
            cfg = SolverConfig()
        if not self.factors and self.prior is None:
            raise ValueError("window has no factors to solve")
        keys = self._free_keys()
        if not keys:
            return SolveReport(termination="all states fixed")
        offsets = {}
        slices = []
        off = 0
        for k in keys:
            offsets[k] = off
            d = state_dim(k)
            slices.append((k, slice(off, off + d)))
            off += d
        n = off
        groups, tuple_batches, singles = self._split_factors()
        report = SolveReport()
        report.initial_cost = self._cost(self.values, cfg.robust, groups, tuple_batches, singles)
        cost = report.initial_cost
        lam = cfg.lambda_init
        termination = "max iterations"
        delta = None
        for it in range(cfg.max_iters):
            if cost < cfg.cost_tol:
                termination = "cost tolerance"
                break
            report.iterations = it + 1
            h_mat = np.zeros((n, n))
            g = np.zeros(n)
            active = 0
            for grp in groups:
                active += self._accumulate_group(grp, h_mat, g, offsets, cfg.robust)
            evaluated = []
            for batch in tuple_batches:
                evaluated.extend(batch.eval(self.values, with_jacobians=True))
            for f in singles:
                try:
                    r, jacs = f.evaluate(self.values, with_jacobians=True)
                except (AngleNearPi, BehindCamera, DegenerateProjection):
                    continue
                evaluated.append((f, r, jacs))
            for f, r, jacs in evaluated:
                active += 1
                w = _irls_weight(np.linalg.norm(r), getattr(f, "robust", None), cfg.robust)
                items = [(k, j) for k, j in jacs.items() if k in offsets]
                wr = w * r
                for k1, j1 in items:
                    o1 = offsets[k1]
                    s1 = slice(o1, o1 + j1.shape[1])
                    g[s1] += j1.T @ wr
                    for k2, j2 in items:
                        o2 = offsets[k2]
                        h_mat[s1, o2 : o2 + j2.shape[1]] += w * (j1.T @ j2)
            if self.prior is not None:
                r, jacs = self.prior.evaluate(self.values, with_jacobians=True)
                items = [(k, j) for k, j in jacs.items() if k in offsets]
                for k1, j1 in items:
                    o1 = offsets[k1]
                    s1 = slice(o1, o1 + j1.shape[1])
                    g[s1] += j1.T @ r
                    for k2, j2 in items:
                        o2 = offsets[k2]
                        h_mat[s1, o2 : o2 + j2.shape[1]] += j1.T @ j2
                active += 1
            if active == 0:
                termination = "no active factors"
                break
            if np.max(np.abs(g)) < 1e-12:
                termination = "gradient tolerance"
                break
            stepped = False
            new_cost = cost
            for _ in range(12):
                delta = self._solve_damped(h_mat, g, lam, keys, offsets, cfg)
                if delta is None:
                    raise SingularSystem("normal equations unsolvable after damping")
                candidate = dict(self.values)
                for k, s in slices:
                    candidate[k] = retract(self.values[k], delta[s])
                new_cost = self._cost(candidate, cfg.robust, groups, tuple_batches, singles)
                if np.isfinite(new_cost) and new_cost < cost:
                    self.values = candidate
                    lam = max(lam / 10.0, 1e-15)
                    report.accepted_steps += 1
                    stepped = True
                    break
                lam *= 10.0
            if not stepped:
                termination = "no downhill step"
                break
            step_norm = float(np.linalg.norm(delta))
            rel_decrease = (cost - new_cost) / max(cost, 1e-300)
            cost = new_cost
            if step_norm < cfg.step_tol:
                termination = "step tolerance"
                break
            if rel_decrease < cfg.rel_cost_tol:
                termination = "relative cost tolerance"
                break
        else:
            termination = "max iterations"
        report.final_cost = cost
        report.termination = termination
        return report

    def _accumulate_group(self, grp, h_mat, g, offsets, robust_cfg):
        grp.prepare(offsets)
        r, valid, jacs = grp.eval(self.values, with_jacobians=True)
        if not np.any(valid):
            return 0
        j_cam, j_lm, j_obj = jacs
        norms = np.sqrt(np.einsum("mi,mi->m", r, r))
        w = _irls_weight_vec(norms, grp.robust, robust_cfg)
        w = np.where(valid, w, 0.0)
        coff = grp.cam_off[grp.row_cam]
        loff = grp.lm_off
        ooff = grp.obj_off[grp.row_obj] if grp.dynamic else None

        def scatter_g(j, off, dim):
            sel = np.flatnonzero((off >= 0) & (w > 0))
            if not len(sel):
                return
            idx = off[sel][:, None] + np.arange(dim)[None, :]
            np.add.at(g, idx, np.einsum("mri,mr->mi", j[sel], (r * w[:, None])[sel]))

        def scatter_h(j_a, off_a, dim_a, j_b, off_b, dim_b, mirror):
            sel = np.flatnonzero((off_a >= 0) & (off_b >= 0) & (w > 0))
            if not len(sel):
                return
            blocks = np.einsum("mri,mrj->mij", j_a[sel] * w[sel][:, None, None], j_b[sel])
            rows = off_a[sel][:, None, None] + np.arange(dim_a)[None, :, None]
            cols = off_b[sel][:, None, None] + np.arange(dim_b)[None, None, :]
            rows_b = np.broadcast_to(rows, blocks.shape)
            cols_b = np.broadcast_to(cols, blocks.shape)
            np.add.at(h_mat, (rows_b, cols_b), blocks)
            if mirror:
                np.add.at(h_mat, (np.swapaxes(cols_b, 1, 2), np.swapaxes(rows_b, 1, 2)), np.swapaxes(blocks, 1, 2))

        scatter_g(j_cam, coff, 6)
        scatter_g(j_lm, loff, 3)
        scatter_h(j_cam, coff, 6, j_cam, coff, 6, False)
        scatter_h(j_lm, loff, 3, j_lm, loff, 3, False)
        scatter_h(j_cam, coff, 6, j_lm, loff, 3, True)
        if grp.dynamic:
            scatter_g(j_obj, ooff, 6)
            scatter_h(j_obj, ooff, 6, j_obj, ooff, 6, False)
            scatter_h(j_cam, coff, 6, j_obj, ooff, 6, True)
            scatter_h(j_obj, ooff, 6, j_lm, loff, 3, True)
        return int(np.sum(valid))

    def _solve_damped(self, h_mat, g, lam, keys, offsets, cfg):
        diag = np.diag(h_mat).copy()
        # states without any factor support get unit damping so the system
        # stays solvable and those states do not move
        diag[diag <= 0.0] = 1.0
        a = h_mat + lam * np.diag(diag)
        n_lm = sum(1 for k in keys if k[0] in ("lm", "olm"))
        if n_lm > cfg.schur_landmark_threshold:
            sol = self._solve_schur(a, -g, keys, offsets)
            if sol is not None:
                return sol
        try:
            c, low = scipy.linalg.cho_factor(a, check_finite=False)
            return scipy.linalg.cho_solve((c, low), -g, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            return None

    def _solve_schur(self, a, b, keys, offsets):
        """Eliminate the block-diagonal landmark part first."""
        lm_keys = [k for k in keys if k[0] in ("lm", "olm")]
        pose_keys = [k for k in keys if k[0] not in ("lm", "olm")]
        if not pose_keys:
            return None
        p_idx = np.concatenate([np.arange(offsets[k], offsets[k] + state_dim(k)) for k in pose_keys])
        l_idx = np.concatenate([np.arange(offsets[k], offsets[k] + state_dim(k)) for k in lm_keys])
        app = a[np.ix_(p_idx, p_idx)]
        apl = a[np.ix_(p_idx, l_idx)]
        all_ = a[np.ix_(l_idx, l_idx)]
        bp = b[p_idx]
        bl = b[l_idx]
        try:
            inv_blocks = np.zeros_like(all_)
            for i in range(0, len(l_idx), 3):
                inv_blocks[i : i + 3, i : i + 3] = np.linalg.inv(all_[i : i + 3, i : i + 3])
            red = app - apl @ inv_blocks @ apl.T
            rhs = bp - apl @ inv_blocks @ bl
            c, low = scipy.linalg.cho_factor(red, check_finite=False)
            xp = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
            xl = inv_blocks @ (bl - apl.T @ xp)
        except (scipy.linalg.LinAlgError, np.linalg.LinAlgError, ValueError):
            return None
        x = np.zeros(len(b))
        x[p_idx] = xp
        x[l_idx] = xl
        return x

    # -- marginalization -----------------------------------------------------------

    def marginalize_oldest(self):
        """Remove the oldest frame: drop landmarks seen only there, absorb
        every factor touching its states into the Gaussian prior via the
        Schur complement."""
        if not self.frames:
            return
        if len(self.frames) < self.capacity:
            return
        oldest = self.frames[0]
        elim_keys = set(self.frame_keys(oldest))

        # landmarks observed only in the oldest frame: drop with their factors
        obs_by_lm: dict = {}
        for f in self.factors:
            if isinstance(f, ReprojFactor):
                obs_by_lm.setdefault(f.lm_key(), set()).add(f.frame)
        dropped_lms = {k for k, frames in obs_by_lm.items() if frames == {oldest}}
        kept_factors = []
        absorbed = []
        for f in self.factors:
            if isinstance(f, ReprojFactor) and f.lm_key() in dropped_lms:
                continue
            if set(f.keys()) & elim_keys:
                absorbed.append(f)
            else:
                kept_factors.append(f)
        for k in dropped_lms:
            self.values.pop(k, None)

        prior_touches = self.prior is not None and bool(set(self.prior.keys) & elim_keys)
        if absorbed or prior_touches:
            self._absorb_into_prior(absorbed, elim_keys)
        self.factors = kept_factors
        for k in elim_keys:
            self.values.pop(k, None)
            self.fixed.discard(k)
        self.frames.pop(0)

    def _absorb_into_prior(self, absorbed, elim_keys):
        connected = set()
        for f in absorbed:
            connected.update(f.keys())
        # the existing prior is always folded in and re-expressed at the
        # current linearization point
        include_prior = self.prior is not None
        if include_prior:
            connected.update(self.prior.keys)
        connected -= self.fixed
        elim = sorted((k for k in connected & elim_keys), key=lambda k: (k[0], k[1:]))
        surv = sorted((k for k in connected - elim_keys), key=lambda k: (k[0], k[1:]))
        ordered = elim + surv
        offsets = {}
        off = 0
        for k in ordered:
            offsets[k] = off
            off += state_dim(k)
        n = off
        n_e = sum(state_dim(k) for k in elim)
        h_mat = np.zeros((n, n))
        b = np.zeros(n)
        robust_cfg = RobustConfig()
        reproj = [f for f in absorbed if isinstance(f, ReprojFactor)]
        others = [f for f in absorbed if not isinstance(f, ReprojFactor)]
        if reproj:
            grouped = {}
            for f in reproj:
                key = (
                    f.track is not None,
                    f.depth is not None and f.sigma_depth is not None,
                    (f.k.fx, f.k.fy, f.k.cx, f.k.cy),
                    f.robust,
                )
                grouped.setdefault(key, []).append(f)
            g_neg = np.zeros(n)
            for fs in grouped.values():
                self._accumulate_group(_ReprojBatch(fs), h_mat, g_neg, offsets, robust_cfg)
            b -= g_neg
        bbox = [f for f in others if isinstance(f, QuadricBBoxFactor)]
        motion = [f for f in others if isinstance(f, MotionFactor)]
        rest = [f for f in others if not isinstance(f, (QuadricBBoxFactor, MotionFactor))]
        evaluated = []
        if bbox:
            evaluated.extend(_BBoxBatch(bbox).eval(self.values, with_jacobians=True))
        if motion:
            evaluated.extend(_MotionBatch(motion).eval(self.values, with_jacobians=True))
        for f in rest:
            try:
                r, jacs = f.evaluate(self.values, with_jacobians=True)
            except (AngleNearPi, BehindCamera, DegenerateProjection):
                continue
            evaluated.append((f, r, jacs))
        for f, r, jacs in evaluated:
            w = _irls_weight(np.linalg.norm(r), getattr(f, "robust", None), robust_cfg)
            items = [(k, j) for k, j in jacs.items() if k in offsets]
            for k1, j1 in items:
                o1, d1 = offsets[k1], state_dim(k1)
                b[o1 : o1 + d1] -= w * (j1.T @ r)
                for k2, j2 in items:
                    o2, d2 = offsets[k2], state_dim(k2)
                    h_mat[o1 : o1 + d1, o2 : o2 + d2] += w * (j1.T @ j2)
        if include_prior and self.prior is not None:
            r, jacs = self.prior.evaluate(self.values, with_jacobians=True)
            items = [(k, j) for k, j in jacs.items() if k in offsets]
            for k1, j1 in items:
                o1, d1 = offsets[k1], state_dim(k1)
                b[o1 : o1 + d1] -= j1.T @ r
                for k2, j2 in items:
                    o2, d2 = offsets[k2], state_dim(k2)
                    h_mat[o1 : o1 + d1, o2 : o2 + d2] += j1.T @ j2
            self.prior = None
        if not surv:
            self.prior = None if include_prior else self.prior
            return
        hee = h_mat[:n_e, :n_e]
        hes = h_mat[:n_e, n_e:]
        hss = h_mat[n_e:, n_e:]
        be = b[:n_e]
        bs = b[n_e:]
        if n_e:
            hee_inv = np.linalg.pinv(0.5 * (hee + hee.T), rcond=1e-12)
            h_new = hss - hes.T @ hee_inv @ hes
            b_new = bs - hes.T @ hee_inv @ be
        else:
            h_new = hss
            b_new = bs
        lin = {k: self.values[k] for k in surv}
        self.prior = GaussianPrior.from_information(surv, lin, h_new, b_new)


def _rho(r_norm, factor_robust, cfg: RobustConfig):
    """Robustified cost of one factor's whitened residual norm."""
    s = float(r_norm)
    if factor_robust == "huber":
        d = cfg.huber_delta
        return s * s if s <= d else 2.0 * d * s - d * d
    if factor_robust == "tstudent":
        return cfg.nu * np.log1p(s * s / cfg.nu)
    return s * s


def _rho_vec(norms, factor_robust, cfg: RobustConfig):
    if len(norms) == 0:
        return 0.0
    if factor_robust == "huber":
        d = cfg.huber_delta
        return float(np.sum(np.where(norms <= d, norms**2, 2.0 * d * norms - d * d)))
    if factor_robust == "tstudent":
        return float(cfg.nu * np.sum(np.log1p(norms**2 / cfg.nu)))
    return float(np.sum(norms**2))


def _irls_weight(r_norm, factor_robust, cfg: RobustConfig):
    if factor_robust is None:
        return 1.0
    return robust_weight(float(r_norm), RobustConfig(kernel=factor_robust, huber_delta=cfg.huber_delta, nu=cfg.nu))


def _irls_weight_vec(norms, factor_robust, cfg: RobustConfig):
    if factor_robust == "huber":
        return np.where(norms <= cfg.huber_delta, 1.0, cfg.huber_delta / np.maximum(norms, 1e-12))
    if factor_robust == "tstudent":
        return cfg.nu / (cfg.nu + norms**2)
    return np.ones_like(norms)
