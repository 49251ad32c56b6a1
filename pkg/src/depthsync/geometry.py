"""Pinhole cameras, rigid transforms, and z-buffered depth reprojection.

Conventions: camera coordinates are x right, y down, z forward, in meters.
Pixel (u, v) has its center at integer coordinates, column u and row v.
Depth images are float arrays in meters where 0 marks a missing pixel.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BehindCameraError, InvalidInputError

MIN_Z = 1e-4
DEFAULT_MAX_RANGE = 10.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(vals)):
            raise InvalidInputError(f"non-finite intrinsics {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, x, y):
        """Sub-pixel containment: pixel areas span [-0.5, size - 0.5)."""
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= -0.5) & (x < self.width - 0.5) & (y >= -0.5) & (y < self.height - 0.5)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]))
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"bad intrinsics record {d!r}: {exc}") from exc


def quat_to_matrix(q):
    """Rotation matrix of quaternion (w, x, y, z); ``q`` is normalized first."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def matrix_to_quat(R):
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + R[i, i] - R[j, j] - R[k, k])
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


class RigidTransform:
    """Rotation as a unit quaternion (w, x, y, z) plus translation in meters.

    Maps points from a source camera frame into a destination frame:
    ``X_dst = R @ X_src + t``.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=(1.0, 0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)):
        q = np.array(rotation, dtype=np.float64).reshape(4)
        t = np.array(translation, dtype=np.float64).reshape(3)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0 or not np.all(np.isfinite(t)):
            raise InvalidInputError(f"invalid transform q={q}, t={t}")
        q = q / n
        # canonical sign keeps serialization stable
        if q[0] < 0:
            q = -q
        q.flags.writeable = False
        t.flags.writeable = False
        self.rotation = q
        self.translation = t

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)):
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_axis_angle(cls, axis, angle_deg, translation=(0.0, 0.0, 0.0)):
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        half = np.deg2rad(angle_deg) / 2.0
        return cls(np.concatenate([[np.cos(half)], np.sin(half) * axis]), translation)

    @property
    def matrix3(self):
        return quat_to_matrix(self.rotation)

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.matrix3
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        q_inv = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(quat_multiply(self.rotation, other.rotation),
                              self.matrix3 @ other.translation + self.translation)

    def apply(self, points):
        P = np.asarray(points, dtype=np.float64)
        return P @ self.matrix3.T + self.translation

    def rotation_angle_deg(self, other=None):
        """Angle of ``self`` (or of ``other⁻¹ ∘ self``) in degrees."""
        q = self.rotation if other is None else other.inverse().compose(self).rotation
        return float(np.rad2deg(2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0]))))

    def translation_distance(self, other):
        return float(np.linalg.norm(self.translation - other.translation))

    def to_dict(self):
        return {"quaternion_wxyz": self.rotation.tolist(), "translation_m": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["quaternion_wxyz"], d["translation_m"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad transform record {d!r}: {exc}") from exc

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def unproject(p, depth, k):
    x, y = float(p[0]), float(p[1])
    if not depth > 0:
        raise InvalidInputError(f"depth must be positive, got {depth}")
    if not k.contains(x, y):
        raise InvalidInputError(f"pixel ({x}, {y}) outside {k.width}x{k.height} image")
    return np.array([(x - k.cx) * depth / k.fx, (y - k.cy) * depth / k.fy, float(depth)])


def project(P, k):
    """Returns ``((u, v), depth)``; the pixel may lie outside the image."""
    X, Y, Z = (float(c) for c in P)
    if not Z > 0:
        raise BehindCameraError(f"point {P} is not in front of the camera")
    return (k.fx * X / Z + k.cx, k.fy * Y / Z + k.cy), Z


def unproject_points(u, v, depth, k):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    return np.stack([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d], axis=-1)


def project_points(P, k):
    """Vectorized projection of (N, 3) points; caller handles z <= 0."""
    P = np.asarray(P, dtype=np.float64)
    Z = P[..., 2]
    return np.stack([k.fx * P[..., 0] / Z + k.cx, k.fy * P[..., 1] / Z + k.cy], axis=-1), Z


def apply_transform(t, P):
    return t.apply(P)


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def check_depth(depth, max_range=DEFAULT_MAX_RANGE, name="depth"):
    d = np.asarray(depth)
    if d.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D array, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if np.any(d < 0):
        raise InvalidInputError(f"{name} contains negative values")
    if np.any(d >= max_range):
        raise InvalidInputError(f"{name} exceeds max range {max_range} m")
    return d


def reproject_depth(src_depth, src_color, k_src, k_dst, t, return_index=False):
    """Warp a depth (and color) image from one camera into another.

    Every valid source pixel is unprojected, moved by ``t`` into the
    destination frame and splatted onto its nearest destination pixel.
    Collisions keep the nearest point; ties go to the smaller source linear
    index. With ``return_index`` a third array gives, per destination pixel,
    the source linear index it came from (-1 where empty).
    """
    src_depth = np.asarray(src_depth, dtype=np.float64)
    if src_depth.shape != k_src.shape:
        raise InvalidInputError(f"depth shape {src_depth.shape} does not match intrinsics {k_src.shape}")
    if src_color is not None:
        src_color = np.asarray(src_color)
        if src_color.shape[:2] != k_src.shape:
            raise InvalidInputError(f"color shape {src_color.shape} does not match intrinsics {k_src.shape}")

    lin = np.flatnonzero(src_depth.ravel() > 0)
    v, u = np.divmod(lin, k_src.width)
    X = t.apply(unproject_points(u, v, src_depth.ravel()[lin], k_src))
    front = X[:, 2] > MIN_Z
    lin, X = lin[front], X[front]
    px, z = project_points(X, k_dst)
    du = round_half_away(px[:, 0]).astype(np.int64)
    dv = round_half_away(px[:, 1]).astype(np.int64)

    out_depth, idx = kernels.splat_nearest(du, dv, z, k_dst.height, k_dst.width)
    hit = idx >= 0
    source = np.full(idx.shape, -1, dtype=np.int64)
    source[hit] = lin[idx[hit]]

    out_color = None
    if src_color is not None:
        flat = src_color.reshape(-1, *src_color.shape[2:])
        out_color = np.zeros((k_dst.height, k_dst.width) + src_color.shape[2:], dtype=src_color.dtype)
        out_color[hit] = flat[source[hit]]
    if return_index:
        return out_depth, out_color, source
    return out_depth, out_color
