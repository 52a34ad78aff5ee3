"""Human motion ingestion and root-aligned limb extraction.

Motion files are JSON documents with a small header (fps, joint layout,
label) and a ``frames`` array of 22 xyz triplets per frame, in meters, in
the source dataset's axis convention (y up by default). Loading remaps to
the robot convention: x forward, y left, z up.

Exporting from the common 263-dim generated-motion encoding is out of scope;
``scripts/export_from_humanml3d.py`` documents the recipe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import geom
from .errors import DegenerateFrameError, ParseError
from .fileio import atomic_write_text

# 22-joint layout used by HumanML3D-style generators (SMPL order minus hands).
HUMANML3D_JOINTS = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)


@dataclass(frozen=True)
class JointLayout:
    name: str
    joints: Tuple[str, ...]

    def index(self, joint: str) -> int:
        try:
            return self.joints.index(joint)
        except ValueError:
            raise KeyError(f"layout {self.name!r} has no joint {joint!r}") from None

    def __len__(self) -> int:
        return len(self.joints)


LAYOUTS = {"humanml3d": JointLayout("humanml3d", HUMANML3D_JOINTS)}

# Axis remaps are permutation matrices applied at load: v_robot = P @ v_file.
# "yup_to_zup" takes the common y-up / z-forward dataset convention to the
# robot's x-forward / y-left / z-up frame (a proper rotation).
AXIS_REMAPS = {
    "none": np.eye(3),
    "yup_to_zup": np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
}

LIMB_ORDER = ("left_arm", "right_arm", "left_leg", "right_leg")

# Per limb: (base, mid, end) keypoints. The end-chain vector runs base -> end
# and the per-frame limb length is |base->mid| + |mid->end|.
LIMB_CHAINS = {
    "left_arm": ("left_shoulder", "left_elbow", "left_wrist"),
    "right_arm": ("right_shoulder", "right_elbow", "right_wrist"),
    "left_leg": ("left_hip", "left_knee", "left_ankle"),
    "right_leg": ("right_hip", "right_knee", "right_ankle"),
}

# Distal direction segment per limb: forearm for arms, ankle-to-toe for legs.
LIMB_DIRECTION = {
    "left_arm": ("left_elbow", "left_wrist"),
    "right_arm": ("right_elbow", "right_wrist"),
    "left_leg": ("left_ankle", "left_foot"),
    "right_leg": ("right_ankle", "right_foot"),
}


@dataclass(frozen=True)
class SkeletonFrame:
    positions: np.ndarray  # (22, 3) meters, robot convention
    layout: JointLayout

    def joint(self, name: str) -> np.ndarray:
        return self.positions[self.layout.index(name)]


@dataclass
class MotionSequence:
    frames: np.ndarray  # (F, 22, 3)
    fps: float
    label: str
    layout: JointLayout

    def __len__(self) -> int:
        return self.frames.shape[0]

    def frame(self, i: int) -> SkeletonFrame:
        return SkeletonFrame(self.frames[i], self.layout)


@dataclass(frozen=True)
class RootFrame:
    """Heading frame of one motion frame relative to the sequence start.

    ``rotation`` carries the first frame's forward vector onto the current
    one; ``heading_align`` carries the robot's +x forward axis onto the first
    frame's forward vector, so that extracted limb vectors land in a
    heading-canonical body frame regardless of where the sequence faced.
    """

    rotation: np.ndarray
    heading_align: np.ndarray

    def to_root(self, v: np.ndarray) -> np.ndarray:
        m = self.rotation @ self.heading_align
        return np.asarray(v, dtype=float) @ m  # == m.T @ v, supports (..., 3)


@dataclass(frozen=True)
class LimbVectors:
    position: np.ndarray  # base -> end, root-aligned
    direction: np.ndarray  # distal segment, root-aligned
    length: float  # proximal + distal segment length, meters


def _validate_frames(arr_list, layout: JointLayout) -> np.ndarray:
    n = len(layout)
    frames = []
    for i, f in enumerate(arr_list):
        a = np.asarray(f, dtype=float)
        if a.shape != (n, 3):
            raise ParseError(f"frame {i}: expected {n} joints of 3 coordinates, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ParseError(f"frame {i}: non-finite joint coordinates")
        frames.append(a)
    return np.stack(frames)


def _check_segments(frames: np.ndarray, layout: JointLayout) -> None:
    for limb, (base, mid, end) in LIMB_CHAINS.items():
        bi, mi, ei = layout.index(base), layout.index(mid), layout.index(end)
        prox = np.linalg.norm(frames[:, mi] - frames[:, bi], axis=1)
        dist = np.linalg.norm(frames[:, ei] - frames[:, mi], axis=1)
        for seg, name in ((prox, f"{base}->{mid}"), (dist, f"{mid}->{end}")):
            bad = np.where(seg <= 0.0)[0]
            if bad.size:
                raise ParseError(f"frame {int(bad[0])}: zero-length segment {name}")


def load_motion(path, axis_remap: str = "yup_to_zup", layout_name: str | None = None) -> MotionSequence:
    """Load and validate a motion file, remapping axes to robot convention."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"motion file {path}: invalid JSON ({exc})") from exc

    try:
        fps = float(raw["fps"])
        layout_decl = str(raw["joint_layout"])
        label = str(raw.get("label", ""))
        frames_raw = raw["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"motion file {path}: bad header ({exc})") from exc

    if fps <= 0:
        raise ParseError(f"motion file {path}: fps must be positive, got {fps}")
    name = layout_name or layout_decl
    if name not in LAYOUTS:
        raise ParseError(f"motion file {path}: unknown joint layout {name!r}")
    layout = LAYOUTS[name]
    if not isinstance(frames_raw, list) or len(frames_raw) == 0:
        raise ParseError(f"motion file {path}: needs at least one frame")
    if axis_remap not in AXIS_REMAPS:
        raise ParseError(f"unknown axis remap {axis_remap!r}")

    frames = _validate_frames(frames_raw, layout)
    frames = frames @ AXIS_REMAPS[axis_remap].T
    _check_segments(frames, layout)
    return MotionSequence(frames=frames, fps=fps, label=label, layout=layout)


def save_motion(seq: MotionSequence, path, axis_remap: str = "yup_to_zup") -> None:
    """Write a motion file, expressing coordinates in the file convention.

    The inverse of the remap applied by :func:`load_motion`, so a
    save -> load round trip with the same remap is the identity.
    """
    if axis_remap not in AXIS_REMAPS:
        raise ParseError(f"unknown axis remap {axis_remap!r}")
    file_frames = seq.frames @ AXIS_REMAPS[axis_remap]  # == P.T applied per point
    doc = {
        "fps": seq.fps,
        "joint_layout": seq.layout.name,
        "label": seq.label,
        "frames": [[list(p) for p in frame] for frame in file_frames],
    }
    atomic_write_text(path, json.dumps(doc))


def root_forward(frame: SkeletonFrame) -> np.ndarray:
    """Unit heading vector of a frame: cross of the root-to-hip vectors,
    flattened to the horizontal plane.

    The vertical component is zeroed before normalization because the vector
    only serves as a heading reference; pelvis tilt must not leak into it.
    """
    root = frame.joint("pelvis")
    v_rrh = frame.joint("right_hip") - root
    v_rlh = frame.joint("left_hip") - root
    fwd = np.cross(v_rrh, v_rlh)
    if np.linalg.norm(fwd) < 1e-9:
        raise DegenerateFrameError("root and hips are collinear; no heading defined")
    fwd[2] = 0.0
    n = float(np.linalg.norm(fwd))
    if n < 1e-9:
        raise DegenerateFrameError("heading vector vanishes in the horizontal plane")
    return fwd / n


def root_frame(first: SkeletonFrame, current: SkeletonFrame) -> RootFrame:
    """Heading frame of ``current`` relative to the sequence's first frame."""
    v0 = root_forward(first)
    v = root_forward(current)
    rotation = geom.rotation_between(v0, v)
    # Both headings are horizontal, so the alignment onto +x is an exact
    # z-rotation; building it from the heading angle avoids the degenerate
    # axis fallback when the sequence faces backward.
    align = geom.axis_angle_mat([0.0, 0.0, 1.0], float(np.arctan2(v0[1], v0[0])))
    return RootFrame(rotation=rotation, heading_align=align)


def limb_vectors(frame: SkeletonFrame, rf: RootFrame) -> Tuple[LimbVectors, ...]:
    """Per-limb (position, direction, length) in the root-aligned frame.

    Limbs follow LIMB_ORDER. Lengths are recomputed per frame so slightly
    inconsistent generated skeletons still normalize cleanly.
    """
    out = []
    for limb in LIMB_ORDER:
        base, mid, end = (frame.joint(n) for n in LIMB_CHAINS[limb])
        dstart, dend = (frame.joint(n) for n in LIMB_DIRECTION[limb])
        prox = float(np.linalg.norm(mid - base))
        dist = float(np.linalg.norm(end - mid))
        dirseg = dend - dstart
        if prox <= 1e-9 or dist <= 1e-9:
            raise DegenerateFrameError(f"{limb}: zero-length chain segment")
        if np.linalg.norm(dirseg) <= 1e-9:
            raise DegenerateFrameError(f"{limb}: zero-length direction segment")
        out.append(
            LimbVectors(
                position=rf.to_root(end - base),
                direction=rf.to_root(dirseg),
                length=prox + dist,
            )
        )
    return tuple(out)
