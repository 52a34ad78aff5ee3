"""Norm-position and rotation (NPR) loss with analytic command gradients.

The rotational term is the geodesic angle between target and predicted limb
quaternions, 2*arccos(|w|) of their relative rotation; the absolute value
collapses the double cover so q and -q cost nothing against each other. The
translational term is the MSE between norm-positions, weighted by the
robot's physical limb lengths, and the total is a weighted sum of both.

Gradients flow through the descriptor quaternions via the closed shortest-arc
form q = [1 + u.d, u x d] / sqrt(2(1 + u.d)), whose scalar product with the
target equals the w component of the relative rotation, then through the FK
Jacobians down to the 21 commanded joints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geom
from .descriptor import ROBOT_LIMBS, flatten, PoseDescriptor, robot_descriptor_batch
from .errors import ValidationError
from .robot import RobotModel, expand_command_batch, fk_world_batch, keypoint_jacobians_batch

_UNIT_TOL = 1e-6
_ARCCOS_EDGE = 1.0 - 1e-12


@dataclass(frozen=True)
class NprWeights:
    """Loss weights plus the robot limb lengths used to scale the MSE term."""

    l_arm: float
    l_leg: float
    w_trans: float = 1.0
    w_quat: float = 1.0

    def __post_init__(self) -> None:
        if self.l_arm <= 0 or self.l_leg <= 0:
            raise ValidationError("limb lengths must be positive")
        if self.w_trans < 0 or self.w_quat < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.w_trans == 0 and self.w_quat == 0:
            raise ValidationError("at least one loss weight must be positive")

    @classmethod
    def from_model(cls, model: RobotModel, w_trans: float = 1.0, w_quat: float = 1.0) -> "NprWeights":
        return cls(l_arm=model.l_arm, l_leg=model.l_leg, w_trans=w_trans, w_quat=w_quat)


def quat_loss(q_target, q_pred) -> float:
    """Geodesic angle (radians, in [0, pi]) between two unit quaternions."""
    q_target = np.asarray(q_target, dtype=float)
    q_pred = np.asarray(q_pred, dtype=float)
    for q in (q_target, q_pred):
        if not geom.is_unit_quat(q, tol=_UNIT_TOL):
            raise ValidationError("quat_loss requires unit quaternions")
    e = geom.quat_mul(q_target, geom.quat_inv(q_pred))
    w = min(abs(float(e[0])), 1.0)
    return 2.0 * math.acos(w)


def trans_loss(p_target, p_pred) -> float:
    """Mean squared error between two position vectors."""
    p_target = np.asarray(p_target, dtype=float)
    p_pred = np.asarray(p_pred, dtype=float)
    return float(np.mean((p_target - p_pred) ** 2))


def npr_loss(target: PoseDescriptor, pred: PoseDescriptor, w: NprWeights) -> float:
    """Weighted combination of limb-length-scaled MSE and mean geodesic error.

    Arm and leg MSEs are averaged within their pair before the length
    weighting; the quaternion term averages over all four limbs.
    """
    tl = [trans_loss(t.norm_pos, p.norm_pos) for t, p in zip(target.limbs, pred.limbs)]
    ql = [quat_loss(t.rot, p.rot) for t, p in zip(target.limbs, pred.limbs)]
    trans_total = w.l_arm * 0.5 * (tl[0] + tl[1]) + w.l_leg * 0.5 * (tl[2] + tl[3])
    quat_mean = 0.25 * sum(ql)
    return w.w_trans * trans_total + w.w_quat * quat_mean


def npr_loss_batch(targets: np.ndarray, preds: np.ndarray, w: NprWeights) -> np.ndarray:
    """(B,) losses for flattened (B, 28) target/predicted descriptors.

    Assumes unit quaternion blocks (holds for every descriptor this package
    produces); the relative rotation's w component is then the plain dot
    product of the two quaternions.
    """
    targets = np.asarray(targets, dtype=float)
    preds = np.asarray(preds, dtype=float)
    total = np.zeros(targets.shape[0])
    quat = np.zeros(targets.shape[0])
    for i, (_, _, _, _, _, is_arm) in enumerate(ROBOT_LIMBS):
        tq, tp = targets[:, 7 * i : 7 * i + 4], targets[:, 7 * i + 4 : 7 * i + 7]
        pq, pp = preds[:, 7 * i : 7 * i + 4], preds[:, 7 * i + 4 : 7 * i + 7]
        mse = np.mean((tp - pp) ** 2, axis=1)
        length = w.l_arm if is_arm else w.l_leg
        total += w.w_trans * length * 0.5 * mse
        dot = np.clip(np.abs(np.sum(tq * pq, axis=1)), 0.0, 1.0)
        quat += 2.0 * np.arccos(dot)
    return total + w.w_quat * 0.25 * quat


def npr_grad(target, q_cmd, model: RobotModel, w: NprWeights):
    """Loss and analytic gradient d(loss)/d(command) at a 21-dim command.

    The gradient of arccos is singular where predicted and target rotations
    coincide; the subgradient 0 is used there.
    """
    t28 = flatten(target) if isinstance(target, PoseDescriptor) else np.asarray(target, dtype=float)
    loss, grad = npr_grad_batch(t28[None, :], np.asarray(q_cmd, dtype=float)[None, :], model, w)
    return float(loss[0]), grad[0]


def npr_grad_batch(targets: np.ndarray, q_cmds: np.ndarray, model: RobotModel, w: NprWeights):
    """Batched loss and gradient: (B, 28) targets x (B, 21) commands ->
    ((B,), (B, 21))."""
    targets = np.asarray(targets, dtype=float)
    q_cmds = np.asarray(q_cmds, dtype=float)
    B = q_cmds.shape[0]

    q_full = expand_command_batch(q_cmds, model)
    fkb = fk_world_batch(q_full, model)
    preds = robot_descriptor_batch(fkb, model)
    loss = npr_loss_batch(targets, preds, w)

    # d(loss)/d(keypoint position), accumulated per keypoint.
    dpos = {}

    def add(kp: str, val: np.ndarray) -> None:
        if kp in dpos:
            dpos[kp] += val
        else:
            dpos[kp] = val.copy()

    for i, (_, base, end, dstart, dend, is_arm) in enumerate(ROBOT_LIMBS):
        length = model.l_arm if is_arm else model.l_leg
        default = model.default_arm_dir if is_arm else model.default_foot_dir

        # Translational part: with the pair mean and the 1/length inside the
        # norm-position, the length weight cancels to w_trans * (n - n_t) / 3.
        tn = targets[:, 7 * i + 4 : 7 * i + 7]
        pn = preds[:, 7 * i + 4 : 7 * i + 7]
        g_trans = w.w_trans * (pn - tn) / 3.0
        add(end, g_trans)
        add(base, -g_trans)

        # Rotational part through the shortest-arc quaternion.
        d = fkb.pos[dend] - fkb.pos[dstart]
        dn = np.linalg.norm(d, axis=1)
        dhat = d / dn[:, None]
        c = dhat @ default
        k = np.cross(np.broadcast_to(default, dhat.shape), dhat)
        active = np.linalg.norm(k, axis=1) >= geom.DEGENERATE_AXIS_NORM

        tq = targets[:, 7 * i : 7 * i + 4]
        pq = preds[:, 7 * i : 7 * i + 4]
        dot = np.sum(tq * pq, axis=1)
        # 2*arccos(|dot|): subgradient 0 at the |dot| = 1 singularity.
        active &= np.abs(dot) < _ARCCOS_EDGE
        if not np.any(active):
            continue
        dl_ddot = np.zeros(B)
        a = active
        dl_ddot[a] = -2.0 * w.w_quat * 0.25 * np.sign(dot[a]) / np.sqrt(1.0 - dot[a] ** 2)

        # dot = g / N with g = tq_w (1 + u.dhat) + tq_v . (u x dhat) and
        # N = sqrt(2 (1 + u.dhat)); d(dot)/d(dhat) = (tq_w u + tq_v x u)/N
        # - dot * u / N^2.
        n_sq = 2.0 * (1.0 + c)
        n_ = np.sqrt(np.maximum(n_sq, 1e-300))
        tqw = tq[:, 0:1]
        tqv = tq[:, 1:4]
        ddot_ddhat = (tqw * default + np.cross(tqv, np.broadcast_to(default, tqv.shape))) / n_[:, None]
        ddot_ddhat -= (dot / n_sq)[:, None] * default

        # Through the normalization: d(dhat)/d(d) = (I - dhat dhat^T)/|d|.
        g_dhat = dl_ddot[:, None] * ddot_ddhat
        g_dir = (g_dhat - np.sum(g_dhat * dhat, axis=1, keepdims=True) * dhat) / dn[:, None]
        g_dir[~active] = 0.0
        add(dend, g_dir)
        add(dstart, -g_dir)

    jacs = keypoint_jacobians_batch(fkb, model, dpos.keys())
    g_full = np.zeros((B, model.n_joints))
    for kp, g in dpos.items():
        g_full += np.einsum("bi,bij->bj", g, jacs[kp])

    # Collapse the mirrored hip pair onto its single command entry.
    g_full[:, model.mirror_leader] += g_full[:, model.mirror_follower]
    return loss, g_full[:, model.command_idx]
