"""Rotation and quaternion primitives.

Quaternions are scalar-first numpy arrays ``[w, x, y, z]`` under the Hamilton
product. Rotation matrices are 3x3 arrays acting on column vectors. All
functions are pure; the only shared state is a diagnostic counter for the
antiparallel identity fallback.
"""

from __future__ import annotations

import math

import numpy as np

# The vector-to-vector rotation falls back to the identity whenever the
# candidate rotation axis v1 x v2 has norm below this threshold. That norm
# equals |sin(angle)|, so the fallback fires for nearly parallel inputs
# (where the identity is correct) and nearly antiparallel ones (where no
# preferred axis exists).
DEGENERATE_AXIS_NORM = 1e-2

_ZERO = 1e-12


class _FallbackCounter:
    """Diagnostic count of identity fallbacks hit with antiparallel inputs."""

    def __init__(self) -> None:
        self.count = 0

    def bump(self, n: int = 1) -> None:
        self.count += n

    def reset(self) -> None:
        self.count = 0


antiparallel_fallbacks = _FallbackCounter()

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def unit(v) -> np.ndarray:
    """v / ||v||. Raises ValueError on (near-)zero-length input."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n < _ZERO:
        raise ValueError("zero-length vector")
    return v / n


def skew(v) -> np.ndarray:
    """Cross-product matrix K with K @ x == v x x."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_between(v1, v2) -> np.ndarray:
    """Rotation matrix carrying the direction of v1 onto the direction of v2.

    Rotates about the mutual perpendicular of the normalized inputs by the
    angle between them. When that axis is degenerate (inputs nearly parallel
    or antiparallel) the identity is returned instead; antiparallel hits are
    tallied in ``antiparallel_fallbacks``.
    """
    try:
        u1 = unit(v1)
        u2 = unit(v2)
    except ValueError:
        raise ValueError("rotation_between requires non-zero vectors") from None
    k = np.cross(u1, u2)
    # Clamp: rounding can push the dot product of unit vectors past +-1.
    cos_t = float(np.clip(np.dot(u1, u2), -1.0, 1.0))
    kn = float(np.linalg.norm(k))
    if kn < DEGENERATE_AXIS_NORM:
        if cos_t < 0.0:
            antiparallel_fallbacks.bump()
        return np.eye(3)
    theta = math.acos(cos_t)
    kmat = skew(k / kn)
    return np.eye(3) + math.sin(theta) * kmat + (1.0 - math.cos(theta)) * (kmat @ kmat)


def axis_angle_mat(axis, angle: float) -> np.ndarray:
    """Rotation matrix for a rotation of ``angle`` radians about a unit axis."""
    kmat = skew(unit(axis))
    return np.eye(3) + math.sin(angle) * kmat + (1.0 - math.cos(angle)) * (kmat @ kmat)


def axis_angle_mat_batch(axis, angles: np.ndarray) -> np.ndarray:
    """(B,3,3) rotation matrices about one fixed unit axis, one per angle."""
    angles = np.asarray(angles, dtype=float)
    kmat = skew(unit(axis))
    kk = kmat @ kmat
    s = np.sin(angles)[:, None, None]
    c = (1.0 - np.cos(angles))[:, None, None]
    return np.eye(3) + s * kmat + c * kk


def is_rotation(m, tol: float = 1e-6) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if not np.allclose(m.T @ m, np.eye(3), atol=tol):
        return False
    return abs(float(np.linalg.det(m)) - 1.0) <= tol


def mat_to_quat(m) -> np.ndarray:
    """Unit quaternion (w >= 0) equivalent to the rotation matrix ``m``.

    Raises ValueError if ``m`` is not a proper rotation.
    """
    m = np.asarray(m, dtype=float)
    if not is_rotation(m):
        raise ValueError("mat_to_quat requires a proper rotation matrix")
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = 0.5 / math.sqrt(tr + 1.0)
        q = np.array([0.25 / s, (m[2, 1] - m[1, 2]) * s, (m[0, 2] - m[2, 0]) * s, (m[1, 0] - m[0, 1]) * s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_mat(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product a (x) b."""
    w1, x1, y1, z1 = np.asarray(a, dtype=float)
    w2, x2, y2, z2 = np.asarray(b, dtype=float)
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_inv(q) -> np.ndarray:
    """Inverse of a unit quaternion (its conjugate)."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([w, -x, -y, -z])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate 3-vector ``v`` by unit quaternion ``q``."""
    v = np.asarray(v, dtype=float)
    qv = np.concatenate(([0.0], v))
    return quat_mul(quat_mul(q, qv), quat_inv(q))[1:]


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Unit quaternion for a rotation of ``angle`` radians about ``axis``."""
    ax = unit(axis)
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * ax))


def is_unit_quat(q, tol: float = 1e-6) -> bool:
    q = np.asarray(q, dtype=float)
    return q.shape == (4,) and np.all(np.isfinite(q)) and abs(float(np.linalg.norm(q)) - 1.0) <= tol
