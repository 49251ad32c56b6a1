"""Synthetic two-camera RGB-D rig.

Scenes are planes, spheres and oriented boxes, some of which may rotate as
a group about a fixed axis. The world frame is the LQ camera frame; the HQ
camera sits at the HQ->LQ extrinsic. Clocks follow ``t_lq = t_hq + delta``.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError, ManifestFormatError
from .geometry import (DEFAULT_MAX_RANGE, CameraIntrinsics, RigidTransform, quat_to_matrix,
                       round_half_away)
from .groundtruth import AlignmentResult
from .sequence_io import Frame, Sequence
from .temporal import match_frames

LIGHT = np.array([0.3, -0.5, -0.8]) / np.linalg.norm([0.3, -0.5, -0.8])
EPOCH_US = 1_000_000


# -- scene --------------------------------------------------------------------

@dataclass
class Primitive:
    kind: str
    params: dict
    color: tuple = (180, 180, 180)
    texture_cell: float = 0.0
    texture_contrast: float = 0.6
    texture_seed: int = 0
    moving: bool = False

    def __post_init__(self):
        p = self.params
        if self.kind == "plane":
            self.point = np.asarray(p["point"], dtype=float)
            n = np.asarray(p["normal"], dtype=float)
            self.normal = n / np.linalg.norm(n)
        elif self.kind == "sphere":
            self.center = np.asarray(p["center"], dtype=float)
            self.radius = float(p["radius"])
            if self.radius <= 0:
                raise InvalidInputError("sphere radius must be positive")
        elif self.kind == "box":
            self.center = np.asarray(p["center"], dtype=float)
            self.half = np.asarray(p["half_size"], dtype=float)
            if np.any(self.half <= 0):
                raise InvalidInputError("box half sizes must be positive")
            rot = RigidTransform.from_axis_angle(p.get("axis", (0, 1, 0)), p.get("angle_deg", 0.0))
            self.R = rot.matrix3
        else:
            raise InvalidInputError(f"unknown primitive type {self.kind!r}")

    def intersect(self, o, d):
        """Smallest positive ray parameter per ray (inf on miss); rays are o + s d."""
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "plane":
                den = d @ self.normal
                s = ((self.point - o) @ self.normal) / den
                return np.where((np.abs(den) > 1e-12) & (s > 1e-9), s, np.inf)
            if self.kind == "sphere":
                oc = o - self.center
                a = np.einsum("ij,ij->i", d, d)
                b = 2 * np.einsum("ij,ij->i", d, oc)
                c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
                disc = b * b - 4 * a * c
                sq = np.sqrt(np.maximum(disc, 0))
                s1 = (-b - sq) / (2 * a)
                s2 = (-b + sq) / (2 * a)
                s = np.where(s1 > 1e-9, s1, np.where(s2 > 1e-9, s2, np.inf))
                return np.where(disc >= 0, s, np.inf)
            ob = (o - self.center) @ self.R
            db = d @ self.R
            t1 = (-self.half - ob) / db
            t2 = (self.half - ob) / db
            tmin = np.nanmax(np.minimum(t1, t2), axis=1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=1)
            s = np.where(tmin > 1e-9, tmin, tmax)
            return np.where((tmax >= tmin) & (s > 1e-9), s, np.inf)

    def normal_at(self, X):
        if self.kind == "plane":
            return np.broadcast_to(self.normal, X.shape)
        if self.kind == "sphere":
            return (X - self.center) / self.radius
        local = (X - self.center) @ self.R
        axis = np.argmax(np.abs(local) / self.half, axis=1)
        n = np.zeros_like(local)
        n[np.arange(len(X)), axis] = np.sign(local[np.arange(len(X)), axis])
        return n @ self.R.T

    def texture(self, X):
        if self.texture_cell <= 0:
            return np.ones(len(X))
        cell = np.floor(X / self.texture_cell).astype(np.int64)
        h = (cell[:, 0] * 73856093) ^ (cell[:, 1] * 19349663) ^ (cell[:, 2] * 83492791) ^ (self.texture_seed * 2654435761)
        h = (h ^ (h >> 13)) * 1274126177
        v = ((h ^ (h >> 16)) & 1023) / 1023.0
        return 1.0 - self.texture_contrast * v

    def to_dict(self):
        d = {"type": self.kind, **{k: list(v) if isinstance(v, (tuple, np.ndarray)) else v
                                   for k, v in self.params.items()},
             "color": list(self.color), "moving": self.moving}
        if self.texture_cell > 0:
            d["texture"] = {"cell": self.texture_cell, "contrast": self.texture_contrast,
                            "seed": self.texture_seed}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("type")
        color = tuple(d.pop("color", (180, 180, 180)))
        moving = bool(d.pop("moving", False))
        tex = d.pop("texture", None) or {}
        return cls(kind, d, color, float(tex.get("cell", 0.0)), float(tex.get("contrast", 0.6)),
                   int(tex.get("seed", 0)), moving)


@dataclass
class Motion:
    """Rigid rotation of the moving group: angle(t) = phase + rate * t (seconds)."""

    center: tuple = (0.0, 0.0, 2.5)
    axis: tuple = (0.0, 1.0, 0.0)
    deg_per_s: float = 0.0
    phase_deg: float = 0.0

    def transform(self, t):
        rot = RigidTransform.from_axis_angle(self.axis, self.phase_deg + self.deg_per_s * t)
        c = np.asarray(self.center, dtype=float)
        return RigidTransform(rot.rotation, c - rot.matrix3 @ c)


@dataclass
class Anchor:
    point: tuple
    moving: bool = False


class SceneSpec:
    def __init__(self, primitives, anchors=(), motion=None, max_range=DEFAULT_MAX_RANGE):
        self.primitives = list(primitives)
        self.anchors = list(anchors)
        self.motion = motion or Motion()
        self.max_range = max_range
        if not self.primitives:
            raise InvalidInputError("scene has no primitives")
        if len(self.anchors) < 8:
            raise InvalidInputError(f"scene needs at least 8 anchors, has {len(self.anchors)}")
        for p in self.primitives:
            ref = p.point if p.kind == "plane" else p.center
            if np.linalg.norm(ref) >= max_range:
                raise InvalidInputError(f"{p.kind} lies beyond the {max_range} m range")

    def group_pose(self, t):
        return self.motion.transform(t)

    def cast(self, origins, dirs, t):
        """Ray cast at time ``t`` (seconds).

        Returns ray parameter ``s`` (inf on miss), primitive index (-1 on
        miss) and the hit point in each primitive's rest frame.
        """
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        origins = np.broadcast_to(np.asarray(origins, dtype=float), dirs.shape)
        g_inv = self.group_pose(t).inverse()
        Rg = g_inv.matrix3
        o_rest = g_inv.apply(origins)
        d_rest = dirs @ Rg.T
        best = np.full(len(dirs), np.inf)
        prim = np.full(len(dirs), -1)
        for n, p in enumerate(self.primitives):
            s = p.intersect(o_rest, d_rest) if p.moving else p.intersect(origins, dirs)
            closer = s < best
            best[closer] = s[closer]
            prim[closer] = n
        rest = np.zeros(dirs.shape)
        for n, p in enumerate(self.primitives):
            sel = prim == n
            if sel.any():
                o, d = (o_rest, d_rest) if p.moving else (origins, dirs)
                rest[sel] = o[sel] + best[sel, None] * d[sel]
        return best, prim, rest

    def shade(self, prim, rest):
        color = np.zeros((len(prim), 3))
        for n, p in enumerate(self.primitives):
            sel = prim == n
            if not sel.any():
                continue
            X = rest[sel]
            lam = 0.35 + 0.65 * np.abs(p.normal_at(X) @ LIGHT)
            color[sel] = np.asarray(p.color, dtype=float)[None] * (lam * p.texture(X))[:, None]
        return np.clip(np.rint(color), 0, 255).astype(np.uint8)

    def anchor_world(self, t):
        pts = np.array([a.point for a in self.anchors], dtype=float)
        moving = np.array([a.moving for a in self.anchors])
        out = pts.copy()
        if moving.any():
            out[moving] = self.group_pose(t).apply(pts[moving])
        return out

    def to_dict(self):
        return {"primitives": [p.to_dict() for p in self.primitives],
                "anchors": [{"point": list(a.point), "moving": a.moving} for a in self.anchors],
                "motion": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.motion).items()},
                "max_range": self.max_range}

    @classmethod
    def from_dict(cls, d):
        try:
            prims = [Primitive.from_dict(p) for p in d["primitives"]]
            anchors = [Anchor(tuple(a["point"]), bool(a.get("moving", False))) for a in d.get("anchors", [])]
            m = d.get("motion") or {}
            motion = Motion(tuple(m.get("center", (0, 0, 2.5))), tuple(m.get("axis", (0, 1, 0))),
                            float(m.get("deg_per_s", 0.0)), float(m.get("phase_deg", 0.0)))
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed scene: {exc!r}") from exc
        return cls(prims, anchors, motion, float(d.get("max_range", DEFAULT_MAX_RANGE)))

    @classmethod
    def default(cls, deg_per_s=0.0, seed=0):
        """Textured back wall and slanted side wall with a box-and-sphere figure.

        The figure rotates about a vertical axis through (0, 0, 2.5) when
        ``deg_per_s`` is nonzero. Anchors are spread over walls and figure.
        """
        rng = np.random.default_rng(seed)
        prims = [
            Primitive("plane", {"point": [0, 0, 4.0], "normal": [0, 0, -1]}, (200, 170, 140), 0.12, 0.7, 1),
            Primitive("plane", {"point": [1.4, 0, 3.4], "normal": [-0.5, 0, -0.866]}, (150, 150, 210), 0.15, 0.6, 2),
            Primitive("box", {"center": [0, 0.3, 2.5], "half_size": [0.25, 0.5, 0.15], "axis": [0, 1, 0],
                              "angle_deg": 20.0}, (210, 120, 90), 0.06, 0.7, 4, moving=True),
            Primitive("sphere", {"center": [0, -0.45, 2.5], "radius": 0.22}, (230, 200, 160), 0.05, 0.6, 5,
                      moving=True),
        ]
        anchors = []
        for x, y in rng.uniform([-1.4, -1.0], [1.4, 1.0], size=(40, 2)):
            anchors.append(Anchor((float(x), float(y), 4.0)))
        for y, z in rng.uniform([-1.0, 3.25], [1.0, 3.55], size=(12, 2)):
            anchors.append(Anchor((float(1.4 - 1.732 * (z - 3.4)), float(y), float(z))))
        for _ in range(30):
            local = rng.uniform(-1, 1, 3) * np.array([0.25, 0.5, 0.15])
            face = rng.integers(3)
            local[face] = np.sign(local[face] or 1.0) * [0.25, 0.5, 0.15][face]
            R = RigidTransform.from_axis_angle((0, 1, 0), 20.0).matrix3
            anchors.append(Anchor(tuple((R @ local + [0, 0.3, 2.5]).tolist()), moving=True))
        for _ in range(12):
            v = rng.normal(size=3)
            anchors.append(Anchor(tuple((np.array([0, -0.45, 2.5]) + 0.22 * v / np.linalg.norm(v)).tolist()),
                                  moving=True))
        return cls(prims, anchors, Motion((0.0, 0.0, 2.5), (0.0, 1.0, 0.0), deg_per_s))


def pixel_rays(k):
    v, u = np.mgrid[0:k.height, 0:k.width]
    return np.stack([(u.ravel() - k.cx) / k.fx, (v.ravel() - k.cy) / k.fy, np.ones(u.size)], -1)


def render_frame(scene, k, pose, t, timestamp_us=None):
    """Ray-traced noiseless frame from a camera with camera-to-world ``pose`` at time ``t`` (s).

    Depth is the camera-frame z of the nearest hit; the mask marks pixels
    showing the moving group.
    """
    rays = pixel_rays(k)
    s, prim, rest = scene.cast(pose.translation, rays @ pose.matrix3.T, t)
    hit = np.isfinite(s) & (s < scene.max_range)
    depth = np.where(hit, s, 0.0).reshape(k.shape)
    color = np.zeros((rays.shape[0], 3), dtype=np.uint8)
    color[hit] = scene.shade(prim[hit], rest[hit])
    moving = np.array([p.moving for p in scene.primitives])
    mask = (hit & (prim >= 0) & moving[np.maximum(prim, 0)]).reshape(k.shape)
    ts = int(round(t * 1e6)) if timestamp_us is None else int(timestamp_us)
    return Frame(color.reshape(k.height, k.width, 3), depth, ts, mask)


# -- rig ----------------------------------------------------------------------

@dataclass
class SensorSpec:
    intrinsics: CameraIntrinsics
    fps: float = 30.0
    jitter_ms: float = 1.0
    start_ms: float = 0.0
    noise_mm: float = 0.0
    noise_quad: float = 0.0
    dropout: float = 0.0
    quant_mm: float = 0.0

    def __post_init__(self):
        if not self.fps > 0:
            raise InvalidInputError("fps must be positive")
        if min(self.jitter_ms, self.noise_mm, self.noise_quad, self.quant_mm) < 0:
            raise InvalidInputError("noise parameters must be non-negative")
        if not 0 <= self.dropout < 1:
            raise InvalidInputError("dropout must lie in [0, 1)")

    def noise_sigma_m(self, z):
        return (self.noise_mm + self.noise_quad * z * z) / 1000.0

    def to_dict(self):
        d = asdict(self)
        d["intrinsics"] = self.intrinsics.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        k = CameraIntrinsics.from_dict(d.pop("intrinsics"))
        return cls(k, **{key: float(v) for key, v in d.items()})


@dataclass
class RigSpec:
    lq: SensorSpec
    hq: SensorSpec
    extrinsic: RigidTransform = field(default_factory=RigidTransform.identity)
    delta_ms: float = 0.0
    lq_masks: bool = True

    def to_dict(self):
        return {"lq": self.lq.to_dict(), "hq": self.hq.to_dict(), "extrinsic": self.extrinsic.to_dict(),
                "delta_ms": self.delta_ms, "lq_masks": self.lq_masks}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(SensorSpec.from_dict(d["lq"]), SensorSpec.from_dict(d["hq"]),
                       RigidTransform.from_dict(d.get("extrinsic", RigidTransform().to_dict())),
                       float(d.get("delta_ms", 0.0)), bool(d.get("lq_masks", True)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed rig: {exc!r}") from exc


def load_json_spec(path, cls):
    try:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
    except FileNotFoundError as exc:
        raise ManifestFormatError("file not found", path) from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestFormatError(f"unreadable spec: {exc}", path) from exc


def timestamp_train(sensor, duration_s, rng):
    """True capture times in seconds: nominal grid + start offset + Gaussian jitter."""
    period = 1.0 / sensor.fps
    n = int(np.ceil(duration_s * sensor.fps)) + 2
    t = sensor.start_ms / 1000.0 + np.arange(n) * period + rng.normal(0, sensor.jitter_ms / 1000.0, n)
    t = t[(t >= 0) & (t < duration_s)]
    t = np.sort(t)
    # keep integer-microsecond stamps strictly increasing
    us = np.rint(t * 1e6).astype(np.int64)
    for i in range(1, len(us)):
        if us[i] <= us[i - 1]:
            us[i] = us[i - 1] + 1
    return us / 1e6


def degrade(depth, sensor, rng, max_range):
    d = depth.copy()
    valid = d > 0
    if sensor.noise_mm > 0 or sensor.noise_quad > 0:
        d[valid] += rng.normal(size=int(valid.sum())) * sensor.noise_sigma_m(d[valid])
    if sensor.dropout > 0:
        d[valid & (rng.random(d.shape) < sensor.dropout)] = 0.0
    if sensor.quant_mm > 0:
        step = sensor.quant_mm / 1000.0
        d = np.rint(d / step) * step
    d[(d <= 0) | (d >= max_range) | ~valid] = 0.0
    return d


_SENSOR_CODE = {"LQ": 1, "HQ": 2}


def record_pair(scene, rig, duration, seed=0):
    """Simulate a synchronized-in-reality, unsynchronized-in-timestamps recording.

    Returns ``(lq, hq, truth, info)``: the two sequences, the ground-truth
    alignment, and per-frame capture times for ``truth.json``.
    """
    if not duration > 0:
        raise InvalidInputError("duration must be positive")
    seqs = {}
    times = {}
    for label, sensor, pose in (("LQ", rig.lq, RigidTransform.identity()), ("HQ", rig.hq, rig.extrinsic)):
        code = _SENSOR_CODE[label]
        t_true = timestamp_train(sensor, duration, np.random.default_rng([seed, code, 0]))
        if len(t_true) == 0:
            raise InvalidInputError(f"{label}: no frames within {duration} s")
        frames = []
        for n, t in enumerate(t_true):
            us = int(round(t * 1e6)) + EPOCH_US
            if label == "HQ":
                us -= int(round(rig.delta_ms * 1000))
            f = render_frame(scene, sensor.intrinsics, pose, t, us)
            rng = np.random.default_rng([seed, code, n + 1])
            f.depth = degrade(f.depth, sensor, rng, scene.max_range)
            if label == "HQ" or not rig.lq_masks:
                f.mask = None
            frames.append(f)
        seqs[label] = Sequence(frames, sensor.intrinsics, label, f"sim{seed}_{label.lower()}")
        times[label] = t_true
    truth = AlignmentResult(rig.delta_ms, rig.extrinsic, match_frames(seqs["LQ"], seqs["HQ"], rig.delta_ms), 0.0)
    info = {"epoch_us": EPOCH_US, "lq_times_s": times["LQ"].tolist(), "hq_times_s": times["HQ"].tolist(),
            "lq_group_poses": [scene.group_pose(t).to_dict() for t in times["LQ"]],
            "hq_group_poses": [scene.group_pose(t).to_dict() for t in times["HQ"]]}
    return seqs["LQ"], seqs["HQ"], truth, info


# -- oracle correspondences ---------------------------------------------------------

class OracleProvider:
    """Exact correspondences from scene anchors, for simulated recordings.

    Each anchor is seen in the HQ frame at its capture time; the surface point
    under that HQ pixel is followed to the LQ capture time and projected
    into the LQ image. The HQ depth used is the recorded one, noise included.
    A fraction of the LQ points can be replaced by uniform outliers.
    """

    needs_warp = False

    def __init__(self, scene, extrinsic, delta_ms, epoch_us=EPOCH_US, outlier_fraction=0.0, seed=0):
        self.scene = scene
        self.extrinsic = extrinsic
        self.delta_ms = delta_ms
        self.epoch_us = epoch_us
        self.outlier_fraction = outlier_fraction
        self.seed = seed
        self._cache = {}

    def true_time(self, ts_us, hq):
        if hq:
            ts_us = ts_us + self.delta_ms * 1000.0
        return (ts_us - self.epoch_us) / 1e6

    def __call__(self, lq, hq, i, j, warp=None):
        # the cached frames are kept alive so their ids stay unique
        key = (id(lq[i]), id(hq[j]))
        if key not in self._cache:
            self._cache[key] = (lq[i], hq[j], self._compute(lq, hq, i, j))
        return self._cache[key][2]

    def _compute(self, lq, hq, i, j):
        empty = (np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
        k_l, k_h = lq.intrinsics, hq.intrinsics
        t_h = self.true_time(hq[j].timestamp_us, True)
        t_l = self.true_time(lq[i].timestamp_us, False)
        T = self.extrinsic
        X_h = T.inverse().apply(self.scene.anchor_world(t_h))
        X_h = X_h[X_h[:, 2] > 1e-3]
        uh = round_half_away(k_h.fx * X_h[:, 0] / X_h[:, 2] + k_h.cx).astype(np.int64)
        vh = round_half_away(k_h.fy * X_h[:, 1] / X_h[:, 2] + k_h.cy).astype(np.int64)
        inside = (uh >= 0) & (vh >= 0) & (uh < k_h.width) & (vh < k_h.height)
        uh, vh = uh[inside], vh[inside]
        if len(uh) == 0:
            return empty
        # unique pixels, in a fixed order
        uniq = np.unique(vh * k_h.width + uh)
        vh, uh = np.divmod(uniq, k_h.width)
        d_rec = hq[j].depth[vh, uh]
        ok = d_rec > 0
        uh, vh, d_rec = uh[ok], vh[ok], d_rec[ok]
        if len(uh) == 0:
            return empty

        # exact surface point behind each HQ pixel
        rays = np.stack([(uh - k_h.cx) / k_h.fx, (vh - k_h.cy) / k_h.fy, np.ones(len(uh))], -1)
        s, prim, rest = self.scene.cast(T.translation, rays @ T.matrix3.T, t_h)
        hit = np.isfinite(s)
        moving = np.array([p.moving for p in self.scene.primitives])[np.maximum(prim, 0)] & hit
        world_l = rest.copy()
        if moving.any():
            world_l[moving] = self.scene.group_pose(t_l).apply(rest[moving])
        # world frame is the LQ camera frame
        Z = world_l[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            pl = np.stack([k_l.fx * world_l[:, 0] / Z + k_l.cx, k_l.fy * world_l[:, 1] / Z + k_l.cy], -1)
        ok = hit & (Z > 1e-3) & k_l.contains(pl[:, 0], pl[:, 1])
        # visible from the LQ camera at its capture time
        if ok.any():
            dirs = world_l[ok] / Z[ok, None]
            s_l, _, _ = self.scene.cast(np.zeros(3), dirs, t_l)
            vis = np.zeros(len(ok), dtype=bool)
            vis[ok] = np.abs(s_l - Z[ok]) <= 1e-6 * np.maximum(Z[ok], 1.0)
            ok &= vis
        pl, uh, vh, d_rec = pl[ok], uh[ok], vh[ok], d_rec[ok]
        if self.outlier_fraction > 0 and len(pl):
            rng = np.random.default_rng([self.seed, i, j])
            bad = rng.random(len(pl)) < self.outlier_fraction
            pl = pl.copy()
            pl[bad] = rng.uniform([-0.5, -0.5], [k_l.width - 0.5, k_l.height - 0.5], size=(int(bad.sum()), 2))
        return pl, np.stack([uh, vh], -1).astype(np.float64), d_rec
