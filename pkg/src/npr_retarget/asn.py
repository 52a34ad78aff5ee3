"""Angle signal network: 28 -> 128 -> 128 -> 21 MLP with batch norm, ReLU,
and a sigmoid output squash into the joint-limit box.

Training is self-supervised: the per-sample loss compares the input
descriptor against the descriptor of the robot pose the network commands,
differentiated through the FK Jacobians. No labeled joint angles are needed;
the numerical IK oracle provides an independent quality check.

Everything is hand-rolled numpy: forward, batch-norm statistics, and the
full backward pass.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from .descriptor import robot_descriptors_of_commands
from .errors import NumericError, ParseError, ValidationError
from .fileio import atomic_write_bytes
from .npr import NprWeights, npr_grad_batch, npr_loss_batch
from .robot import RobotModel, sigmoid_to_limits, sigmoid_to_limits_grad

IN_DIM = 28
HIDDEN = 128
OUT_DIM = 21
BN_EPS = 1e-5

_MAGIC = b"ASNP"
_VERSION = 1


@dataclass
class MlpParams:
    w1: np.ndarray  # (28, 128)
    b1: np.ndarray  # (128,)
    g1: np.ndarray  # batch-norm scale
    be1: np.ndarray  # batch-norm shift
    rm1: np.ndarray  # running mean
    rv1: np.ndarray  # running variance (floored at BN_EPS)
    w2: np.ndarray  # (128, 128)
    b2: np.ndarray
    g2: np.ndarray
    be2: np.ndarray
    rm2: np.ndarray
    rv2: np.ndarray
    w3: np.ndarray  # (128, 21)
    b3: np.ndarray  # (21,)

    def copy(self) -> "MlpParams":
        return MlpParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})


PARAM_SHAPES: Tuple[Tuple[str, Tuple[int, ...]], ...] = (
    ("w1", (IN_DIM, HIDDEN)),
    ("b1", (HIDDEN,)),
    ("g1", (HIDDEN,)),
    ("be1", (HIDDEN,)),
    ("rm1", (HIDDEN,)),
    ("rv1", (HIDDEN,)),
    ("w2", (HIDDEN, HIDDEN)),
    ("b2", (HIDDEN,)),
    ("g2", (HIDDEN,)),
    ("be2", (HIDDEN,)),
    ("rm2", (HIDDEN,)),
    ("rv2", (HIDDEN,)),
    ("w3", (HIDDEN, OUT_DIM)),
    ("b3", (OUT_DIM,)),
)

# Fields updated by gradient descent (running stats follow batch statistics).
TRAINABLE = ("w1", "b1", "g1", "be1", "w2", "b2", "g2", "be2", "w3", "b3")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    momentum: float = 0.9
    bn_momentum: float = 0.1
    seed: int = 0
    init_scale: float = 1.0
    val_fraction: float = 0.1
    reachable_mix: float = 0.5  # share of FK-generated samples when building datasets

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 (batch norm needs batch statistics)")
        if self.epochs < 1 or self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValidationError("epochs must be >= 1, lr > 0, momentum in [0, 1)")
        if not 0 < self.bn_momentum <= 1 or self.init_scale <= 0:
            raise ValidationError("bn_momentum must be in (0, 1], init_scale > 0")
        if not 0 <= self.val_fraction < 1 or not 0 <= self.reachable_mix <= 1:
            raise ValidationError("val_fraction in [0, 1), reachable_mix in [0, 1]")


@dataclass
class TrainReport:
    train_loss: List[float]  # entry 0 is the pre-training evaluation
    val_loss: List[float]
    params_checksum: str = ""


class TrainingDiverged(NumericError):
    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


def init_params(seed: int = 0, init_scale: float = 1.0) -> MlpParams:
    """Fan-in-scaled uniform weight init; batch norm starts as identity."""
    rng = np.random.default_rng(seed)

    def lin(n_in: int, n_out: int) -> np.ndarray:
        bound = init_scale / np.sqrt(n_in)
        return rng.uniform(-bound, bound, size=(n_in, n_out))

    ones, zeros = np.ones(HIDDEN), np.zeros(HIDDEN)
    return MlpParams(
        w1=lin(IN_DIM, HIDDEN), b1=zeros.copy(), g1=ones.copy(), be1=zeros.copy(),
        rm1=zeros.copy(), rv1=ones.copy(),
        w2=lin(HIDDEN, HIDDEN), b2=zeros.copy(), g2=ones.copy(), be2=zeros.copy(),
        rm2=zeros.copy(), rv2=ones.copy(),
        w3=lin(HIDDEN, OUT_DIM), b3=np.zeros(OUT_DIM),
    )


def _check_finite(arr: np.ndarray, stage: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activations at {stage}")


def forward(x, p: MlpParams, model: RobotModel, mode: str = "infer"):
    """Map descriptors to bounded joint commands.

    Accepts one (28,) sample or a (B, 28) batch. Training mode uses batch
    statistics (so it needs B >= 2) and also returns the activation cache
    for backprop; inference uses the stored running statistics and never
    mutates them. Outputs always lie strictly inside the joint limits.
    """
    if mode not in ("train", "infer"):
        raise ValidationError(f"unknown forward mode {mode!r}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != IN_DIM:
        raise ValidationError(f"input must be (B, {IN_DIM}) or ({IN_DIM},), got {x.shape}")
    train = mode == "train"
    if train and X.shape[0] < 2:
        raise ValidationError("train-mode forward needs a batch of >= 2 samples")
    _check_finite(X, "input")

    cache: Dict[str, np.ndarray] = {"X": X}

    def bn(h: np.ndarray, g, be, rm, rv, tag: str):
        if train:
            mu = h.mean(axis=0)
            var = h.var(axis=0)
        else:
            mu, var = rm, rv
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (h - mu) * inv
        if train:
            cache[f"mu{tag}"], cache[f"var{tag}"] = mu, var
            cache[f"inv{tag}"], cache[f"xhat{tag}"] = inv, xhat
        return g * xhat + be

    h1 = X @ p.w1 + p.b1
    _check_finite(h1, "layer 1 linear")
    z1 = bn(h1, p.g1, p.be1, p.rm1, p.rv1, "1")
    a1 = np.maximum(z1, 0.0)

    h2 = a1 @ p.w2 + p.b2
    _check_finite(h2, "layer 2 linear")
    z2 = bn(h2, p.g2, p.be2, p.rm2, p.rv2, "2")
    a2 = np.maximum(z2, 0.0)

    raw = a2 @ p.w3 + p.b3
    _check_finite(raw, "output linear")
    q = sigmoid_to_limits(raw, model.lo_cmd, model.hi_cmd)

    if train:
        cache.update(h1=h1, z1=z1, a1=a1, h2=h2, z2=z2, a2=a2, raw=raw, q=q)
        return (q[0] if single else q), cache
    return q[0] if single else q


def _bn_backward(dz, g, cache, tag: str):
    """Gradient through batch-statistics normalization."""
    inv, xhat = cache[f"inv{tag}"], cache[f"xhat{tag}"]
    B = dz.shape[0]
    dg = np.sum(dz * xhat, axis=0)
    dbe = np.sum(dz, axis=0)
    dxhat = dz * g
    # Standard batch-norm backward, mean/variance paths included.
    dh = (inv / B) * (B * dxhat - np.sum(dxhat, axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return dh, dg, dbe


def backward(targets, p: MlpParams, model: RobotModel, w: NprWeights):
    """Mean loss over a batch of target descriptors plus full parameter
    gradients, differentiated through FK and the output squash.

    Returns (loss, grads, bn_stats) where grads mirrors MlpParams (running
    stats entries are zero) and bn_stats carries the batch statistics for
    the trainer's running-average update.
    """
    T = np.asarray(targets, dtype=float)
    if T.ndim != 2 or T.shape[1] != IN_DIM or T.shape[0] < 2:
        raise ValidationError(f"backward needs a (B>=2, {IN_DIM}) batch, got {T.shape}")
    q, cache = forward(T, p, model, mode="train")
    B = T.shape[0]

    loss_vec, g_q = npr_grad_batch(T, q, model, w)
    loss = float(loss_vec.mean())
    draw = (g_q / B) * sigmoid_to_limits_grad(cache["raw"], model.lo_cmd, model.hi_cmd)

    grads = {name: np.zeros(shape) for name, shape in PARAM_SHAPES}
    grads["w3"] = cache["a2"].T @ draw
    grads["b3"] = draw.sum(axis=0)

    da2 = draw @ p.w3.T
    dz2 = da2 * (cache["z2"] > 0)
    dh2, grads["g2"], grads["be2"] = _bn_backward(dz2, p.g2, cache, "2")
    grads["w2"] = cache["a1"].T @ dh2
    grads["b2"] = dh2.sum(axis=0)

    da1 = dh2 @ p.w2.T
    dz1 = da1 * (cache["z1"] > 0)
    dh1, grads["g1"], grads["be1"] = _bn_backward(dz1, p.g1, cache, "1")
    grads["w1"] = cache["X"].T @ dh1
    grads["b1"] = dh1.sum(axis=0)

    bn_stats = {k: cache[k] for k in ("mu1", "var1", "mu2", "var2")}
    return loss, MlpParams(**grads), bn_stats


def evaluate(dataset: np.ndarray, p: MlpParams, model: RobotModel, w: NprWeights) -> float:
    """Mean inference-mode loss over a (N, 28) descriptor set."""
    X = np.asarray(dataset, dtype=float)
    q = forward(X, p, model, mode="infer")
    return float(npr_loss_batch(X, robot_descriptors_of_commands(q, model), w).mean())


def train(
    dataset,
    model: RobotModel,
    w: NprWeights,
    cfg: Optional[TrainConfig] = None,
) -> Tuple[MlpParams, TrainReport]:
    """Minibatch SGD with momentum; deterministic given the config seed.

    Loss entries in the report are full-split inference-mode evaluations,
    with index 0 recorded before the first update.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(dataset, dtype=float)
    if X.ndim != 2 or X.shape[1] != IN_DIM or X.shape[0] == 0:
        raise ValidationError(f"dataset must be a non-empty (N, {IN_DIM}) array, got {X.shape}")
    if X.shape[0] < cfg.batch_size:
        raise ValidationError(f"dataset size {X.shape[0]} smaller than batch_size {cfg.batch_size}")

    rng = np.random.default_rng(cfg.seed)
    n_val = int(round(cfg.val_fraction * X.shape[0]))
    n_val = min(n_val, X.shape[0] - cfg.batch_size)
    perm = rng.permutation(X.shape[0])
    val = X[perm[:n_val]] if n_val > 0 else X
    tr = X[perm[n_val:]]

    p = init_params(seed=int(rng.integers(2**31 - 1)), init_scale=cfg.init_scale)
    vel = {name: np.zeros(shape) for name, shape in PARAM_SHAPES if name in TRAINABLE}

    report = TrainReport(train_loss=[evaluate(tr, p, model, w)], val_loss=[evaluate(val, p, model, w)])

    for _ in range(cfg.epochs):
        order = rng.permutation(tr.shape[0])
        for s in range(0, tr.shape[0], cfg.batch_size):
            batch = tr[order[s : s + cfg.batch_size]]
            if batch.shape[0] < 2:
                continue
            try:
                loss, grads, bn_stats = backward(batch, p, model, w)
            except NumericError as exc:
                raise TrainingDiverged(f"training aborted: {exc}", report) from exc
            if not np.isfinite(loss) or loss > 1e6:
                raise TrainingDiverged(f"training aborted: batch loss {loss}", report)
            for name in TRAINABLE:
                v = vel[name]
                v *= cfg.momentum
                v -= cfg.lr * getattr(grads, name)
                getattr(p, name)[...] += v
            m = cfg.bn_momentum
            p.rm1[...] = (1 - m) * p.rm1 + m * bn_stats["mu1"]
            p.rm2[...] = (1 - m) * p.rm2 + m * bn_stats["mu2"]
            p.rv1[...] = np.maximum((1 - m) * p.rv1 + m * bn_stats["var1"], BN_EPS)
            p.rv2[...] = np.maximum((1 - m) * p.rv2 + m * bn_stats["var2"], BN_EPS)
        report.train_loss.append(evaluate(tr, p, model, w))
        report.val_loss.append(evaluate(val, p, model, w))

    report.params_checksum = hashlib.sha256(_params_bytes(p)).hexdigest()
    return p, report


def build_dataset(
    motion_descriptors: Optional[np.ndarray],
    model: RobotModel,
    n_reachable: int,
    seed: int = 0,
) -> np.ndarray:
    """Stack motion-derived descriptors with FK-generated reachable ones."""
    rng = np.random.default_rng(seed)
    parts = []
    if motion_descriptors is not None and len(motion_descriptors):
        parts.append(np.asarray(motion_descriptors, dtype=float))
    if n_reachable > 0:
        lo, hi = model.lo_cmd, model.hi_cmd
        q = lo + rng.random((n_reachable, len(lo))) * (hi - lo)
        parts.append(robot_descriptors_of_commands(q, model))
    if not parts:
        raise ValidationError("dataset would be empty")
    return np.concatenate(parts, axis=0)


# --- parameter serialization --------------------------------------------------


def _params_bytes(p: MlpParams) -> bytes:
    chunks = [_MAGIC, struct.pack("<I", _VERSION)]
    for name, shape in PARAM_SHAPES:
        arr = np.ascontiguousarray(getattr(p, name), dtype="<f8")
        if arr.shape != shape:
            raise ValidationError(f"param {name} has shape {arr.shape}, expected {shape}")
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def save_params(p: MlpParams, path) -> None:
    """Versioned binary dump; bit-exact round trip including running stats."""
    atomic_write_bytes(path, _params_bytes(p))


def load_params(path) -> MlpParams:
    with open(path, "rb") as fh:
        data = fh.read()
    head = len(_MAGIC) + 4
    if len(data) < head or data[: len(_MAGIC)] != _MAGIC:
        raise ParseError(f"params file {path}: bad magic")
    (version,) = struct.unpack("<I", data[len(_MAGIC) : head])
    if version != _VERSION:
        raise ParseError(f"params file {path}: version {version}, expected {_VERSION}")
    off = head
    values = {}
    for name, shape in PARAM_SHAPES:
        count = int(np.prod(shape))
        nbytes = count * 8
        if off + nbytes > len(data):
            raise ParseError(f"params file {path}: truncated at field {name}")
        values[name] = np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise ParseError(f"params file {path}: {len(data) - off} trailing bytes")
    return MlpParams(**values)
