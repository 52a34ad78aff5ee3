"""Normalized limb descriptors for human frames and robot poses.

Each limb is reduced to a dimensionless norm-position (end-chain vector over
limb length) and a unit quaternion rotating the limb's default distal
direction onto the observed one. Four limbs (left arm, right arm, left leg,
right leg) flatten to a 28-vector laid out [q_w q_x q_y q_z d_x d_y d_z] per
limb; that vector is both the network input and the retargeting target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import geom, skeleton
from .errors import DegenerateFrameError, ValidationError
from .fileio import atomic_write_text
from .robot import FkBatch, FkResult, RobotModel, expand_command_batch, fk_world_batch
from .skeleton import LIMB_ORDER, RootFrame, SkeletonFrame

# Default distal directions: horizontal forward for both arms and feet.
DEFAULT_ARM_DIR = np.array([1.0, 0.0, 0.0])
DEFAULT_FOOT_DIR = np.array([1.0, 0.0, 0.0])

NORM_POS_SLACK = 1e-6
DESCRIPTOR_DIM = 28

# Robot keypoints per limb: (chain base, chain end, direction start,
# direction end, arm?). Mirrors skeleton.LIMB_CHAINS / LIMB_DIRECTION.
ROBOT_LIMBS = (
    ("left_arm", "left_shoulder", "left_wrist", "left_elbow", "left_wrist", True),
    ("right_arm", "right_shoulder", "right_wrist", "right_elbow", "right_wrist", True),
    ("left_leg", "left_hip", "left_ankle", "left_ankle", "left_foot", False),
    ("right_leg", "right_hip", "right_ankle", "right_ankle", "right_foot", False),
)


@dataclass(frozen=True)
class LimbDescriptor:
    norm_pos: np.ndarray  # (3,) dimensionless
    rot: np.ndarray  # (4,) unit quaternion, w >= 0

    def __post_init__(self) -> None:
        if float(np.linalg.norm(self.norm_pos)) > 1.0 + NORM_POS_SLACK:
            raise ValidationError("norm_pos exceeds unit length")
        if not geom.is_unit_quat(self.rot):
            raise ValidationError("limb rotation must be a unit quaternion")


@dataclass(frozen=True)
class PoseDescriptor:
    limbs: Tuple[LimbDescriptor, ...]  # ordered per skeleton.LIMB_ORDER

    def __post_init__(self) -> None:
        if len(self.limbs) != len(LIMB_ORDER):
            raise ValidationError(f"expected {len(LIMB_ORDER)} limbs, got {len(self.limbs)}")

    def limb(self, name: str) -> LimbDescriptor:
        return self.limbs[LIMB_ORDER.index(name)]


def shortest_arc_quat(v_from: np.ndarray, v_to: np.ndarray) -> np.ndarray:
    """Quaternion form of geom.rotation_between, same identity fallback."""
    return geom.mat_to_quat(geom.rotation_between(v_from, v_to))


def human_descriptor(frame: SkeletonFrame, rf: RootFrame) -> PoseDescriptor:
    """Descriptor of a human frame in the root-aligned body frame."""
    limbs = []
    for name, lv in zip(LIMB_ORDER, skeleton.limb_vectors(frame, rf)):
        default = DEFAULT_ARM_DIR if name.endswith("arm") else DEFAULT_FOOT_DIR
        limbs.append(
            LimbDescriptor(
                norm_pos=lv.position / lv.length,
                rot=shortest_arc_quat(default, lv.direction),
            )
        )
    return PoseDescriptor(tuple(limbs))


def robot_descriptor(fkr: FkResult, model: RobotModel) -> PoseDescriptor:
    """Descriptor of a robot pose, normalized by the model's limb lengths."""
    limbs = []
    for name, base, end, dstart, dend, is_arm in ROBOT_LIMBS:
        length = model.l_arm if is_arm else model.l_leg
        default = model.default_arm_dir if is_arm else model.default_foot_dir
        dirseg = fkr.pos(dend) - fkr.pos(dstart)
        if np.linalg.norm(dirseg) <= 1e-9:
            raise DegenerateFrameError(f"{name}: zero-length direction segment")
        limbs.append(
            LimbDescriptor(
                norm_pos=(fkr.pos(end) - fkr.pos(base)) / length,
                rot=shortest_arc_quat(default, dirseg),
            )
        )
    return PoseDescriptor(tuple(limbs))


def flatten(pd: PoseDescriptor) -> np.ndarray:
    """PoseDescriptor -> 28-vector, [quat, norm_pos] per limb in order."""
    return np.concatenate([np.concatenate([l.rot, l.norm_pos]) for l in pd.limbs])


def unflatten(x) -> PoseDescriptor:
    x = np.asarray(x, dtype=float)
    if x.shape != (DESCRIPTOR_DIM,):
        raise ValidationError(f"descriptor must have length {DESCRIPTOR_DIM}, got shape {x.shape}")
    limbs = []
    for i in range(len(LIMB_ORDER)):
        chunk = x[7 * i : 7 * (i + 1)]
        limbs.append(LimbDescriptor(norm_pos=chunk[4:7].copy(), rot=chunk[0:4].copy()))
    return PoseDescriptor(tuple(limbs))


# --- batched robot path ------------------------------------------------------


def _shortest_arc_quat_batch(dirs: np.ndarray, default: np.ndarray) -> np.ndarray:
    """(B, 3) direction segments -> (B, 4) shortest-arc quaternions from
    ``default``, with the same identity fallback as rotation_between."""
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    d = dirs / np.maximum(norms, 1e-300)
    c = d @ default
    k = np.cross(np.broadcast_to(default, d.shape), d)
    kn = np.linalg.norm(k, axis=1)
    degenerate = kn < geom.DEGENERATE_AXIS_NORM
    w_raw = 1.0 + c
    n = np.sqrt(np.maximum(2.0 * w_raw, 1e-300))
    q = np.concatenate([w_raw[:, None], k], axis=1) / n[:, None]
    if degenerate.any():
        q[degenerate] = geom.IDENTITY_QUAT
        geom.antiparallel_fallbacks.bump(int(np.sum(degenerate & (c < 0.0))))
    return q


def robot_descriptor_batch(fkb: FkBatch, model: RobotModel) -> np.ndarray:
    """(B, 28) descriptors straight from batched FK keypoints."""
    cols = []
    for name, base, end, dstart, dend, is_arm in ROBOT_LIMBS:
        length = model.l_arm if is_arm else model.l_leg
        default = model.default_arm_dir if is_arm else model.default_foot_dir
        q = _shortest_arc_quat_batch(fkb.pos[dend] - fkb.pos[dstart], default)
        n = (fkb.pos[end] - fkb.pos[base]) / length
        cols.append(np.concatenate([q, n], axis=1))
    return np.concatenate(cols, axis=1)


def robot_descriptors_of_commands(cmds: np.ndarray, model: RobotModel) -> np.ndarray:
    """(B, 21) commands -> (B, 28) descriptors (no limit validation)."""
    fkb = fk_world_batch(expand_command_batch(cmds, model), model)
    return robot_descriptor_batch(fkb, model)


def descriptors_from_motion(seq) -> np.ndarray:
    """(F, 28) descriptors of a motion sequence, root-aligned to frame 0."""
    first = seq.frame(0)
    rows = []
    for i in range(len(seq)):
        cur = seq.frame(i)
        rows.append(flatten(human_descriptor(cur, skeleton.root_frame(first, cur))))
    return np.stack(rows)


# --- descriptor dump (training cache / debug) --------------------------------


def save_descriptors(path, descriptors: np.ndarray) -> None:
    """Text dump: one 28-vector per line, '#' comments allowed."""
    descriptors = np.asarray(descriptors, dtype=float)
    if descriptors.ndim != 2 or descriptors.shape[1] != DESCRIPTOR_DIM:
        raise ValidationError(f"expected (F, {DESCRIPTOR_DIM}) descriptors, got {descriptors.shape}")
    lines = ["# limb descriptors: 4 x [q_w q_x q_y q_z d_x d_y d_z], limbs " + " ".join(LIMB_ORDER)]
    for row in descriptors:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_descriptors(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = line.split()
            if len(vals) != DESCRIPTOR_DIM:
                raise ValidationError(f"{path}:{ln}: expected {DESCRIPTOR_DIM} values, got {len(vals)}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError as exc:
                raise ValidationError(f"{path}:{ln}: {exc}") from exc
    if not rows:
        raise ValidationError(f"{path}: no descriptor rows")
    return np.asarray(rows, dtype=float)
