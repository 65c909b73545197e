"""SE(3) poses, rotation representations and interpolation.

Everything downstream of the recorder speaks this module's language: a pose is
a position plus a unit quaternion (w, x, y, z) with an advisory frame tag.
Quaternions are kept canonical (unit norm, w >= 0) after every operation so
that equality checks and serialized output are unambiguous despite the
quaternion double cover.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

QUAT_ATOL = 1e-9
# |dot| above this treats two quaternions as coincident and slerp degrades to
# normalized lerp, which is numerically stable there.
_SLERP_LERP_DOT = 1.0 - 1e-9


class FrameTag(str, enum.Enum):
    """Advisory coordinate-frame labels, checked at module boundaries only."""

    VR = "vr"
    CAMERA = "camera"
    WRIST = "wrist"
    CHESSBOARD = "chessboard"
    ROBOT_BASE = "robot_base"


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    """Normalize and flip sign so w >= 0 (first nonzero positive on the w=0 edge)."""
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("zero or non-finite quaternion")
    if abs(n - 1.0) > 1e-12:  # keep already-unit quaternions bit-stable
        q = q / n
    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        for v in q[1:]:
            if v != 0.0:
                if v < 0.0:
                    q = -q
                break
    return q


@dataclass
class Pose:
    """Rigid transform: position in meters plus unit quaternion (w, x, y, z).

    ``frame`` names the coordinate system the pose is expressed in. It is
    advisory metadata: boundary operations validate it, inner-loop algebra
    does not.
    """

    position: np.ndarray
    quat: np.ndarray
    frame: FrameTag = FrameTag.CAMERA

    def __post_init__(self) -> None:
        p = np.asarray(self.position, dtype=np.float64)
        if p.shape != (3,):
            p = p.reshape(3)
        if not (math.isfinite(p[0]) and math.isfinite(p[1]) and math.isfinite(p[2])):
            raise ValueError("non-finite position")
        self.position = p
        q = np.asarray(self.quat, dtype=np.float64)
        if q.shape != (4,):
            q = q.reshape(4)
        self.quat = _canonical_quat(q)
        if type(self.frame) is not FrameTag:
            self.frame = FrameTag(self.frame)

    @staticmethod
    def identity(frame: FrameTag = FrameTag.CAMERA) -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), frame)

    @staticmethod
    def from_matrix(m: np.ndarray, frame: FrameTag = FrameTag.CAMERA) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return Pose(m[:3, 3], quat_from_matrix(m[:3, :3]), frame)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.quat)
        m[:3, 3] = self.position
        return m

    def apply(self, point: np.ndarray) -> np.ndarray:
        """Map a 3-point (or Nx3 array of points) through this transform."""
        p = np.asarray(point, dtype=np.float64)
        return p @ quat_to_matrix(self.quat).T + self.position


@dataclass
class Rot6D:
    """First two rows of a rotation matrix, row-major (the 6D rotation code)."""

    values: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0, 1.0, 0]))

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(6)


# ---------------------------------------------------------------------------
# quaternion primitives
# ---------------------------------------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # plain-float math: these run in per-pose inner loops where numpy scalar
    # arithmetic is an order of magnitude slower
    aw, ax, ay, az = float(a[0]), float(a[1]), float(a[2]), float(a[3])
    bw, bx, by, bz = float(b[0]), float(b[1]), float(b[2]), float(b[3])
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([float(q[0]), -float(q[1]), -float(q[2]), -float(q[3])])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by quaternion q (q v q*); v may also be an Nx3 array."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim > 1:
        return v @ quat_to_matrix(q).T
    w, x, y, z = float(q[0]), float(q[1]), float(q[2]), float(q[3])
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.array(
        [
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = float(q[0]), float(q[1]), float(q[2]), float(q[3])
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to canonical unit quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return _canonical_quat(q)


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle in radians between two unit quaternions (shorter arc).

    atan2 form: precise down to machine epsilon for nearly equal rotations,
    where the acos form bottoms out near sqrt(eps).
    """
    r = quat_multiply(quat_conjugate(a), b)
    return 2.0 * math.atan2(math.sqrt(float(r[1:] @ r[1:])), abs(r[0]))


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    ax, ay, az = float(axis[0]), float(axis[1]), float(axis[2])
    n = math.sqrt(ax * ax + ay * ay + az * az)
    h = 0.5 * float(angle)
    s = math.sin(h) / n
    return _canonical_quat(np.array([math.cos(h), s * ax, s * ay, s * az]))


# ---------------------------------------------------------------------------
# pose algebra
# ---------------------------------------------------------------------------

def compose(a: Pose, b: Pose) -> Pose:
    """Rigid composition a * b; a maps b's frame into a's frame."""
    q = quat_multiply(a.quat, b.quat)
    p = a.position + quat_rotate(a.quat, b.position)
    return Pose(p, q, a.frame)


def inverse(p: Pose) -> Pose:
    q = quat_conjugate(p.quat)
    return Pose(-quat_rotate(q, p.position), q, p.frame)


def relative(base: Pose, target: Pose) -> Pose:
    """target expressed in base's local frame: base^-1 * target.

    In this pipeline base is the current wrist pose, so the result carries
    the wrist frame tag. Both inputs must share a frame.
    """
    if base.frame is not target.frame:
        raise ValueError(f"frame mismatch: {base.frame.value} vs {target.frame.value}")
    out = compose(inverse(base), target)
    out.frame = FrameTag.WRIST
    return out


def slerp(a: Pose, b: Pose, t: float) -> Pose:
    """Interpolate: position linearly, orientation along the shorter arc."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter {t} outside [0, 1]")
    if a.frame is not b.frame:
        raise ValueError(f"frame mismatch: {a.frame.value} vs {b.frame.value}")
    if t == 0.0:
        return Pose(a.position.copy(), a.quat.copy(), a.frame)
    if t == 1.0:
        return Pose(b.position.copy(), b.quat.copy(), b.frame)
    qa, qb = a.quat, b.quat
    d = float(qa @ qb)
    if d < 0.0:
        qb = -qb
        d = -d
    if d > _SLERP_LERP_DOT:
        q = (1.0 - t) * qa + t * qb
    else:
        ang = math.acos(min(1.0, d))
        s = math.sin(ang)
        q = (math.sin((1.0 - t) * ang) / s) * qa + (math.sin(t * ang) / s) * qb
    return Pose((1.0 - t) * a.position + t * b.position, q, a.frame)


# ---------------------------------------------------------------------------
# 6D rotation code
# ---------------------------------------------------------------------------

def encode_rot6d(q: np.ndarray) -> Rot6D:
    """Unit quaternion -> first two rotation-matrix rows, row-major."""
    m = quat_to_matrix(_canonical_quat(np.asarray(q, dtype=np.float64)))
    return Rot6D(m[:2].reshape(6))


def decode_rot6d(v: Rot6D | np.ndarray) -> np.ndarray:
    """6-vector -> canonical unit quaternion via Gram-Schmidt on the two rows."""
    vals = v.values if isinstance(v, Rot6D) else np.asarray(v, dtype=np.float64).reshape(6)
    r1 = vals[:3]
    n1 = np.linalg.norm(r1)
    if n1 < 1e-12:
        raise ValueError("degenerate 6D rotation: first row near zero")
    r1 = r1 / n1
    r2 = vals[3:] - (r1 @ vals[3:]) * r1
    n2 = np.linalg.norm(r2)
    if n2 < 1e-12:
        raise ValueError("degenerate 6D rotation: rows near parallel")
    r2 = r2 / n2
    r3 = np.cross(r1, r2)
    return quat_from_matrix(np.stack([r1, r2, r3]))


def rot6d_matrix(v: Rot6D | np.ndarray) -> np.ndarray:
    """Orthonormalized 3x3 matrix for a 6D code (same Gram-Schmidt as decode)."""
    return quat_to_matrix(decode_rot6d(v))


def pose_delta(a: Pose, b: Pose) -> tuple[float, float]:
    """(position distance, rotation angle) between two poses; test/report helper."""
    return float(np.linalg.norm(a.position - b.position)), quat_angle(a.quat, b.quat)
