"""Rigid transforms, constellations and the constellation distance.

Quaternions are scalar-first ``(w, x, y, z)`` and right-handed everywhere in
this package. Poses serialize to ``[x, y, z, w, qx, qy, qz]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points, check_vector

__all__ = [
    "Pose",
    "Twist",
    "Constellation",
    "AnchorFrame",
    "RankDeficientError",
    "cross3",
    "quat_mul",
    "quat_conj",
    "quat_rotate",
    "quat_to_matrix",
    "quat_from_matrix",
    "quat_from_axis_angle",
    "quat_from_yaw",
    "quat_to_rotvec",
    "yaw_of",
    "tilt_angle",
    "compose",
    "inverse",
    "transform_point",
    "constellation_distance",
    "make_pad_constellation",
    "make_cf_constellation",
    "make_base_constellation",
    "best_fit_transform",
    "RigidRegistration",
    "PAD_OFFSETS",
    "BASE_OFFSETS",
]

# Landmarks along the pad / contact-frame normal (+x), first one on the surface.
PAD_OFFSETS = np.array([[0.0, 0.0, 0.0],
                        [0.125, 0.0, 0.0],
                        [0.25, 0.0, 0.0],
                        [0.375, 0.0, 0.0],
                        [0.5, 0.0, 0.0]])
# Origin-adjacent corners of a 10 cm cube on the base body axes.
BASE_OFFSETS = np.array([[0.1, 0.0, 0.0],
                         [0.0, 0.1, 0.0],
                         [0.0, 0.0, 0.1]])


class RankDeficientError(ValueError):
    """Point set too degenerate to pin down a rigid transform."""


# ---------------------------------------------------------------------------
# quaternion helpers, vectorized over leading axes
# ---------------------------------------------------------------------------

def cross3(a, b):
    """``np.cross`` for 3-vectors without its per-call axis bookkeeping."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def quat_mul(q1, q2):
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    if q1.ndim == 1 and q2.ndim == 1:
        w1, x1, y1, z1 = q1.tolist()
        w2, x2, y2, z2 = q2.tolist()
        return np.array([w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                         w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                         w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                         w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2])
    w1, x1, y1, z1 = q1[..., 0], q1[..., 1], q1[..., 2], q1[..., 3]
    w2, x2, y2, z2 = q2[..., 0], q2[..., 1], q2[..., 2], q2[..., 3]
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v):
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.ndim == 1 and v.ndim == 1:
        # single vector: plain float arithmetic is much cheaper than ufuncs here
        w, x, y, z = q.tolist()
        a, b, c = v.tolist()
        tx = 2.0 * (y * c - z * b)
        ty = 2.0 * (z * a - x * c)
        tz = 2.0 * (x * b - y * a)
        return np.array([a + w * tx + y * tz - z * ty,
                         b + w * ty + z * tx - x * tz,
                         c + w * tz + x * ty - y * tx])
    if q.ndim == 1:
        return v @ quat_to_matrix(q).T
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * cross3(u, v)
    return v + w * t + cross3(u, t)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        w, x, y, z = q.tolist()
        return np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                         [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                         [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=-2)


def quat_from_matrix(R):
    """Shepperd's method; returns the quaternion with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * float(angle)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_from_rotvec(rv):
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
        return q / np.linalg.norm(q)
    return quat_from_axis_angle(rv / angle, angle)


def quat_to_rotvec(q):
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(s, q[0])
    return q[1:] / s * angle


def quat_from_yaw(yaw):
    return np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)])


def yaw_of(q):
    """Heading of the body x-axis projected on the ground plane."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def tilt_angle(q):
    """Angle between the body z-axis and world up."""
    q = np.asarray(q, dtype=float)
    x, y = q[..., 1], q[..., 2]
    cos_t = 1.0 - 2.0 * (x * x + y * y)
    return np.arccos(np.clip(cos_t, -1.0, 1.0))


def _normalized(q):
    q = np.asarray(q, dtype=float)
    n = math.sqrt(q @ q)
    if not math.isfinite(n) or n < 1e-12:
        raise ValueError(f"degenerate quaternion {q!r}")
    return q / n


# ---------------------------------------------------------------------------
# Pose / Twist
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = check_vector(self.position, 3, "position")
        q = _normalized(check_vector(self.orientation, 4, "orientation"))
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(np.asarray(t, dtype=float))

    @classmethod
    def from_yaw(cls, yaw: float, position=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(np.asarray(position, dtype=float), quat_from_yaw(yaw))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3].copy(), quat_from_matrix(T[:3, :3]))

    @classmethod
    def from_array(cls, a) -> "Pose":
        """Inverse of :meth:`as_array` (``[x, y, z, w, qx, qy, qz]``)."""
        a = check_vector(a, 7, "pose array")
        return cls(a[:3], a[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @property
    def yaw(self) -> float:
        return float(yaw_of(self.orientation))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        same_q = (np.allclose(self.orientation, other.orientation, atol=atol)
                  or np.allclose(self.orientation, -other.orientation, atol=atol))
        return bool(np.allclose(self.position, other.position, atol=atol) and same_q)


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "linear", check_vector(self.linear, 3, "linear"))
        object.__setattr__(self, "angular", check_vector(self.angular, 3, "angular"))


def _trusted_pose(position, q) -> Pose:
    # inputs come from valid poses: skip validation, only renormalize
    out = object.__new__(Pose)
    object.__setattr__(out, "position", position)
    object.__setattr__(out, "orientation", q / math.sqrt(q @ q))
    return out


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: express ``b`` (given in frame ``a``) in the parent of ``a``."""
    q = quat_mul(a.orientation, b.orientation)
    return _trusted_pose(a.position + quat_rotate(a.orientation, b.position), q)


def inverse(p: Pose) -> Pose:
    qc = quat_conj(p.orientation)
    return _trusted_pose(-quat_rotate(qc, p.position), qc)


def transform_point(p: Pose, x) -> np.ndarray:
    """Map point(s) ``x`` (shape ``(3,)`` or ``(K, 3)``) from pose frame to parent."""
    x = np.asarray(x, dtype=float)
    return quat_rotate(p.orientation, x) + p.position


# ---------------------------------------------------------------------------
# constellations
# ---------------------------------------------------------------------------

class AnchorFrame(str, Enum):
    PAD = "pad"
    BASE = "base"
    CONTACT_FRAME = "contact_frame"
    RIGID_TARGET = "rigid_target"


@dataclass(frozen=True)
class Constellation:
    """Ordered landmarks in world frame; landmark ``i`` pairs with target ``i``."""

    points: np.ndarray
    anchor_frame_id: AnchorFrame

    def __post_init__(self):
        pts = check_points(self.points, "points")
        if pts.shape[0] < 1:
            raise ValueError("a constellation needs at least one landmark")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "anchor_frame_id", AnchorFrame(self.anchor_frame_id))

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, g: Pose) -> "Constellation":
        return Constellation(transform_point(g, self.points), self.anchor_frame_id)


def _points_of(c) -> np.ndarray:
    return c.points if isinstance(c, Constellation) else np.asarray(c, dtype=float)


def constellation_distance(P, P_star) -> float:
    """Mean squared distance between index-matched landmarks (m^2)."""
    a = _points_of(P)
    b = _points_of(P_star)
    if a.shape != b.shape:
        raise ValueError(f"constellation size mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] != 3:
        raise ValueError(f"expected (K, 3) landmark arrays with K >= 1, got {a.shape}")
    return float(np.mean(np.sum((a - b) ** 2, axis=1)))


def make_pad_constellation(pad_pose: Pose) -> Constellation:
    return Constellation(transform_point(pad_pose, PAD_OFFSETS), AnchorFrame.PAD)


def make_cf_constellation(cf_pose: Pose) -> Constellation:
    # contact frame +x is the inward surface normal, so a flush pad whose own +x
    # faces the surface lands on the same five points
    return Constellation(transform_point(cf_pose, PAD_OFFSETS), AnchorFrame.CONTACT_FRAME)


def make_base_constellation(base_pose: Pose, anchor=AnchorFrame.BASE) -> Constellation:
    return Constellation(transform_point(base_pose, BASE_OFFSETS), anchor)


def best_fit_transform(P, P_star, rank_tol: float = 1e-9) -> Pose:
    """Least-squares rigid transform ``T`` minimizing ``sum ||T p_i - p*_i||^2``.

    SVD of the cross-covariance of the centered sets, with the reflection
    correction on the smallest singular direction. Raises
    :class:`RankDeficientError` for fewer than 3 points or collinear input.
    """
    A = _points_of(P)
    B = _points_of(P_star)
    if A.shape != B.shape:
        raise ValueError(f"constellation size mismatch: {A.shape} vs {B.shape}")
    if A.shape[0] < 3:
        raise RankDeficientError("need at least 3 landmarks")
    ca = A.mean(axis=0)
    cb = B.mean(axis=0)
    A0 = A - ca
    B0 = B - cb
    sv = np.linalg.svd(A0, compute_uv=False)
    scale = max(sv[0], 1.0)
    if sv[1] <= rank_tol * scale:
        raise RankDeficientError("landmarks are collinear or coincident")
    H = A0.T @ B0
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = cb - R @ ca
    return Pose(t, quat_from_matrix(R))


class RigidRegistration(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`best_fit_transform`.

    ``fit(P, P_star)`` stores the aligning pose in ``pose_``; ``transform``
    maps points through it and ``score`` is the negative residual distance.
    """

    def __init__(self, rank_tol: float = 1e-9):
        self.rank_tol = rank_tol

    def fit(self, X, y):
        X = check_points(_points_of(X), "X")
        y = check_points(_points_of(y), "y")
        self.pose_ = best_fit_transform(X, y, self.rank_tol)
        self.residual_ = constellation_distance(transform_point(self.pose_, X), y)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "pose_")
        return transform_point(self.pose_, check_points(_points_of(X), "X"))

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        return -constellation_distance(self.transform(X), _points_of(y))
