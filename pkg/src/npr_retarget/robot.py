"""Robot kinematic model: joint specs, limits, forward kinematics, Jacobians.

The model is loaded from a flat JSON config (see ``data/nao_like.json`` for
the bundled default). Kinematics cover the four limb chains rooted at the
torso; the floating base is treated as identity. Internally everything is
vectorized over a batch axis so solvers and training can evaluate many poses
per call; the public single-pose API wraps the batch-of-one case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from . import geom
from .errors import ConfigError, ValidationError

ACTUATOR_CLASSES = ("head", "arm", "leg_pitch", "leg_roll", "leg_yaw_pitch")

KEYPOINT_NAMES = (
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_hip", "left_knee", "left_ankle", "left_foot",
    "right_hip", "right_knee", "right_ankle", "right_foot",
)

# Squashed joint values stay this fraction of sigmoid range away from the
# exact bounds so the open interval survives float rounding.
_SIGMOID_CLIP = 1e-12
_LIMIT_SLACK = 1e-9


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: Optional[str]
    offset: np.ndarray  # translation from parent joint frame, meters
    axis: np.ndarray  # unit rotation axis in the parent frame
    q_min: float
    q_max: float
    actuator_class: str


@dataclass
class RobotModel:
    name: str
    joints: Tuple[JointSpec, ...]
    parent_idx: np.ndarray  # (n,) int, -1 for torso-rooted joints
    offsets: np.ndarray  # (n, 3)
    axes: np.ndarray  # (n, 3)
    lo: np.ndarray  # (n,)
    hi: np.ndarray  # (n,)
    keypoints: Dict[str, Tuple[int, np.ndarray]]  # name -> (joint index, local offset)
    command_order: Tuple[str, ...]
    command_idx: np.ndarray  # (21,) int
    mirror_leader: int
    mirror_follower: int
    default_arm_dir: np.ndarray
    default_foot_dir: np.ndarray
    l_arm: float = field(init=False, default=0.0)
    l_leg: float = field(init=False, default=0.0)
    _name_to_idx: Dict[str, int] = field(init=False, default_factory=dict)
    _chains: Dict[str, Tuple[int, ...]] = field(init=False, default_factory=dict)

    def __post_init__(self) -> None:
        self._name_to_idx = {j.name: i for i, j in enumerate(self.joints)}
        for kp, (jidx, _) in self.keypoints.items():
            chain = []
            cur = jidx
            while cur >= 0:
                chain.append(cur)
                cur = int(self.parent_idx[cur])
            self._chains[kp] = tuple(reversed(chain))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def joint_index(self, name: str) -> int:
        try:
            return self._name_to_idx[name]
        except KeyError:
            raise KeyError(f"unknown joint {name!r}") from None

    def keypoint_chain(self, keypoint: str) -> Tuple[int, ...]:
        """Joint indices (root first) that move the given keypoint."""
        return self._chains[keypoint]

    @property
    def lo_cmd(self) -> np.ndarray:
        return self.lo[self.command_idx]

    @property
    def hi_cmd(self) -> np.ndarray:
        return self.hi[self.command_idx]

    @property
    def ankle_joint_idx(self) -> np.ndarray:
        return np.array([i for i, j in enumerate(self.joints) if "Ankle" in j.name], dtype=int)

    def actuator_class_of(self, idx: int) -> str:
        return self.joints[idx].actuator_class


@dataclass(frozen=True)
class FkResult:
    """World-frame keypoint positions for one joint configuration."""

    positions: Dict[str, np.ndarray]

    def pos(self, name: str) -> np.ndarray:
        return self.positions[name]


@dataclass(frozen=True)
class FkBatch:
    """Batched FK output plus the per-joint world frames needed for Jacobians."""

    pos: Dict[str, np.ndarray]  # keypoint -> (B, 3)
    rot: np.ndarray  # (B, n, 3, 3) world orientation of each joint frame
    org: np.ndarray  # (B, n, 3) world origin of each joint frame


def _as_vec3(raw, what: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what}: expected a finite 3-vector, got {raw!r}")
    return arr


def load_robot(path) -> RobotModel:
    """Load and validate a robot model from a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"robot config {path}: invalid JSON ({exc})") from exc
    return _build_model(raw, str(path))


def load_default_robot() -> RobotModel:
    """The bundled NAO-like model (21 commanded DoF)."""
    data = resources.files("npr_retarget").joinpath("data/nao_like.json").read_text()
    return _build_model(json.loads(data), "<bundled nao_like>")


def _build_model(raw: dict, origin: str) -> RobotModel:
    def fail(msg: str) -> ConfigError:
        return ConfigError(f"robot config {origin}: {msg}")

    joints_raw = raw.get("joints")
    if not joints_raw:
        raise fail("no joints defined")

    specs = []
    seen = {}
    for i, j in enumerate(joints_raw):
        name = j.get("name")
        if not name or name in seen:
            raise fail(f"joint {i}: missing or duplicate name")
        parent = j.get("parent")
        if parent is not None and parent not in seen:
            raise fail(f"joint {name}: parent {parent!r} must be declared earlier")
        axis = _as_vec3(j.get("axis"), f"joint {name} axis")
        axis_norm = float(np.linalg.norm(axis))
        if abs(axis_norm - 1.0) > 1e-6:
            raise fail(f"joint {name}: axis must be unit length (norm {axis_norm:.3g})")
        q_min = float(j["q_min"])
        q_max = float(j["q_max"])
        if not q_min < q_max:
            raise fail(f"joint {name}: q_min must be < q_max")
        klass = j.get("actuator_class")
        if klass not in ACTUATOR_CLASSES:
            raise fail(f"joint {name}: unknown actuator class {klass!r}")
        specs.append(
            JointSpec(
                name=name,
                parent=parent,
                offset=_as_vec3(j.get("origin_offset_m"), f"joint {name} offset"),
                axis=axis / axis_norm,
                q_min=q_min,
                q_max=q_max,
                actuator_class=klass,
            )
        )
        seen[name] = i

    n = len(specs)
    parent_idx = np.array([-1 if s.parent is None else seen[s.parent] for s in specs], dtype=int)
    offsets = np.stack([s.offset for s in specs])
    axes = np.stack([s.axis for s in specs])
    lo = np.array([s.q_min for s in specs])
    hi = np.array([s.q_max for s in specs])

    kp_raw = raw.get("keypoints", {})
    missing = [k for k in KEYPOINT_NAMES if k not in kp_raw]
    if missing:
        raise fail(f"missing keypoint bindings: {missing}")
    keypoints = {}
    for kp, binding in kp_raw.items():
        jname = binding.get("joint")
        if jname not in seen:
            raise fail(f"keypoint {kp}: unknown joint {jname!r}")
        keypoints[kp] = (seen[jname], _as_vec3(binding.get("offset_m"), f"keypoint {kp} offset"))

    command_order = tuple(raw.get("command_order", ()))
    if len(command_order) != 21:
        raise fail(f"command_order must list 21 joints, got {len(command_order)}")
    unknown = [c for c in command_order if c not in seen]
    if unknown:
        raise fail(f"command_order references unknown joints: {unknown}")
    if len(set(command_order)) != 21:
        raise fail("command_order contains duplicates")
    hyp = [c for c in command_order if "HipYawPitch" in c]
    if len(hyp) != 1:
        raise fail(f"command_order must contain exactly one HipYawPitch joint, got {hyp}")

    mirror = raw.get("mirror") or {}
    leader, follower = mirror.get("leader"), mirror.get("follower")
    if leader not in seen or follower not in seen:
        raise fail("mirror rule must name existing leader and follower joints")
    if follower in command_order:
        raise fail("mirror follower must not appear in command_order")
    li, fi = seen[leader], seen[follower]
    if not (np.isclose(lo[li], lo[fi]) and np.isclose(hi[li], hi[fi])):
        raise fail("mirrored joints must share identical limits")

    model = RobotModel(
        name=str(raw.get("name", "robot")),
        joints=tuple(specs),
        parent_idx=parent_idx,
        offsets=offsets,
        axes=axes,
        lo=lo,
        hi=hi,
        keypoints=keypoints,
        command_order=command_order,
        command_idx=np.array([seen[c] for c in command_order], dtype=int),
        mirror_leader=li,
        mirror_follower=fi,
        default_arm_dir=geom.unit(_as_vec3(raw.get("default_arm_dir", [1, 0, 0]), "default_arm_dir")),
        default_foot_dir=geom.unit(_as_vec3(raw.get("default_foot_dir", [1, 0, 0]), "default_foot_dir")),
    )

    # Segment sanity at the home pose, plus the model-level limb lengths.
    fkb = fk_world_batch(np.zeros((1, n)), model)
    pos = {k: v[0] for k, v in keypoint_positions(fkb, model).items()}
    segs = {
        "upper_arm": ("left_shoulder", "left_elbow"),
        "forearm": ("left_elbow", "left_wrist"),
        "thigh": ("left_hip", "left_knee"),
        "shin": ("left_knee", "left_ankle"),
        "foot": ("left_ankle", "left_foot"),
    }
    lengths = {}
    for seg, (a, b) in segs.items():
        d = float(np.linalg.norm(pos[b] - pos[a]))
        if d <= 1e-9:
            raise fail(f"zero-length segment {seg} ({a} -> {b})")
        lengths[seg] = d
    model.l_arm = lengths["upper_arm"] + lengths["forearm"]
    model.l_leg = lengths["thigh"] + lengths["shin"]
    return model


def validate_command(cmd, model: RobotModel) -> np.ndarray:
    """Check a 21-dim command for shape, finiteness, and joint limits."""
    cmd = np.asarray(cmd, dtype=float)
    if cmd.shape != (len(model.command_order),):
        raise ValidationError(f"command must have shape (21,), got {cmd.shape}")
    if not np.all(np.isfinite(cmd)):
        raise ValidationError("command contains non-finite values")
    lo, hi = model.lo_cmd, model.hi_cmd
    bad = np.where((cmd < lo - _LIMIT_SLACK) | (cmd > hi + _LIMIT_SLACK))[0]
    if bad.size:
        i = int(bad[0])
        raise ValidationError(
            f"command joint {model.command_order[i]} = {cmd[i]:.6f} outside "
            f"[{lo[i]:.6f}, {hi[i]:.6f}]"
        )
    return cmd


def expand_command(cmd, model: RobotModel) -> np.ndarray:
    """21-dim command -> full joint map, mirroring the coupled hip joint.

    The coupled hip actuator is physically shared, so the follower entry is
    set to the leader's commanded value.
    """
    cmd = validate_command(cmd, model)
    q = np.zeros(model.n_joints)
    q[model.command_idx] = cmd
    q[model.mirror_follower] = q[model.mirror_leader]
    return q


def expand_command_batch(cmds: np.ndarray, model: RobotModel) -> np.ndarray:
    """(B, 21) commands -> (B, n) joint maps. No limit validation (hot path)."""
    cmds = np.asarray(cmds, dtype=float)
    q = np.zeros((cmds.shape[0], model.n_joints))
    q[:, model.command_idx] = cmds
    q[:, model.mirror_follower] = q[:, model.mirror_leader]
    return q


def contract_command(q_full, model: RobotModel) -> np.ndarray:
    """Full joint map -> 21-dim command (drops the mirrored follower)."""
    q_full = np.asarray(q_full, dtype=float)
    return q_full[model.command_idx].copy()


def _validate_joint_map(q, model: RobotModel) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_joints,):
        raise ValidationError(f"joint map must have shape ({model.n_joints},), got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValidationError("joint map contains non-finite values")
    bad = np.where((q < model.lo - _LIMIT_SLACK) | (q > model.hi + _LIMIT_SLACK))[0]
    if bad.size:
        i = int(bad[0])
        raise ValidationError(
            f"joint {model.joints[i].name} = {q[i]:.6f} outside "
            f"[{model.lo[i]:.6f}, {model.hi[i]:.6f}]"
        )
    return q


def fk_world_batch(q: np.ndarray, model: RobotModel) -> FkBatch:
    """World frame of every joint for a (B, n) batch of joint maps."""
    q = np.asarray(q, dtype=float)
    B, n = q.shape
    rot = np.empty((B, n, 3, 3))
    org = np.empty((B, n, 3))
    for j in range(n):
        rj = geom.axis_angle_mat_batch(model.axes[j], q[:, j])
        p = int(model.parent_idx[j])
        if p < 0:
            org[:, j] = model.offsets[j]
            rot[:, j] = rj
        else:
            org[:, j] = org[:, p] + np.einsum("bij,j->bi", rot[:, p], model.offsets[j])
            rot[:, j] = rot[:, p] @ rj
    return FkBatch(pos=keypoint_positions_raw(rot, org, model), rot=rot, org=org)


def keypoint_positions_raw(rot: np.ndarray, org: np.ndarray, model: RobotModel) -> Dict[str, np.ndarray]:
    pos = {}
    for kp, (jidx, off) in model.keypoints.items():
        if np.any(off):
            pos[kp] = org[:, jidx] + np.einsum("bij,j->bi", rot[:, jidx], off)
        else:
            pos[kp] = org[:, jidx].copy()
    return pos


def keypoint_positions(fkb: FkBatch, model: RobotModel) -> Dict[str, np.ndarray]:
    return fkb.pos


def fk(q, model: RobotModel) -> FkResult:
    """Keypoint positions for one validated, in-limit joint map."""
    q = _validate_joint_map(q, model)
    fkb = fk_world_batch(q[None, :], model)
    return FkResult(positions={k: v[0].copy() for k, v in fkb.pos.items()})


def keypoint_jacobians_batch(
    fkb: FkBatch, model: RobotModel, names: Iterable[str]
) -> Dict[str, np.ndarray]:
    """Analytic position Jacobians d(keypoint)/d(joint map), (B, 3, n) each.

    Standard revolute-joint geometry: the column for a joint on the chain is
    the joint's world axis crossed with the lever arm to the keypoint; joints
    off the chain contribute zero columns.
    """
    B, n = fkb.org.shape[0], fkb.org.shape[1]
    out = {}
    for kp in names:
        jac = np.zeros((B, 3, n))
        p = fkb.pos[kp]
        for j in model.keypoint_chain(kp):
            omega = np.einsum("bij,j->bi", fkb.rot[:, j], model.axes[j])
            jac[:, :, j] = np.cross(omega, p - fkb.org[:, j])
        out[kp] = jac
    return out


def fk_jacobian(q, model: RobotModel) -> Dict[str, np.ndarray]:
    """Analytic Jacobian (3, n) of every keypoint for one joint map."""
    q = _validate_joint_map(q, model)
    fkb = fk_world_batch(q[None, :], model)
    jacs = keypoint_jacobians_batch(fkb, model, KEYPOINT_NAMES)
    return {k: v[0].copy() for k, v in jacs.items()}


# --- joint-limit squashing -------------------------------------------------
#
# Raw solver/network outputs are mapped into the joint box through a sigmoid
# scaled to [q_min, q_max]. The clip keeps the interval open under float
# rounding (the mathematical sigmoid never reaches 0 or 1).


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_to_limits(raw, lo, hi) -> np.ndarray:
    s = np.clip(_sigmoid(raw), _SIGMOID_CLIP, 1.0 - _SIGMOID_CLIP)
    return lo + s * (hi - lo)


def sigmoid_to_limits_grad(raw, lo, hi) -> np.ndarray:
    """Elementwise derivative of sigmoid_to_limits with respect to raw."""
    s = _sigmoid(raw)
    return s * (1.0 - s) * (hi - lo)


def limits_to_raw(q, lo, hi, margin: float = 0.01) -> np.ndarray:
    """Inverse squash. Values are first pulled ``margin`` of the range inside
    the bounds so the logit stays finite."""
    q = np.asarray(q, dtype=float)
    span = hi - lo
    qc = np.clip(q, lo + margin * span, hi - margin * span)
    p = (qc - lo) / span
    return np.log(p / (1.0 - p))
