"""On-disk sequences and paired ground-truth datasets.

A sequence directory holds ``manifest.json`` plus ``color/``, ``depth/`` and
optionally ``mask/`` PNGs named ``%06d.png``. Depth PNGs are 16-bit
millimeters with 0 for missing; in memory depth is float64 meters.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import (DimensionMismatchError, ImageReadError, InvalidInputError,
                     ManifestFormatError, ManifestMissingError, TimestampOrderError,
                     WriteError)
from .geometry import DEFAULT_MAX_RANGE, CameraIntrinsics, RigidTransform

SENSORS = ("LQ", "HQ")
MM_PER_M = 1000.0


@dataclass
class Frame:
    color: np.ndarray
    depth: np.ndarray
    timestamp_us: int
    mask: np.ndarray | None = None

    @property
    def valid(self):
        return self.depth > 0

    @property
    def shape(self):
        return self.depth.shape

    def seg_mask(self):
        return np.ones(self.depth.shape, dtype=bool) if self.mask is None else self.mask


@dataclass
class Sequence:
    frames: list
    intrinsics: CameraIntrinsics
    sensor: str = "LQ"
    sequence_id: str = "seq"

    def __post_init__(self):
        if self.sensor not in SENSORS:
            raise InvalidInputError(f"sensor must be one of {SENSORS}, got {self.sensor!r}")
        if not self.frames:
            raise InvalidInputError("sequence has no frames")
        prev = None
        for i, f in enumerate(self.frames):
            _check_frame(f, self.intrinsics, f"frame {i}")
            if prev is not None and f.timestamp_us <= prev:
                raise TimestampOrderError(
                    f"timestamps not strictly increasing at frame {i} ({f.timestamp_us} <= {prev})")
            prev = f.timestamp_us

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def timestamps_us(self):
        return np.array([f.timestamp_us for f in self.frames], dtype=np.int64)


def _check_frame(f, k, where):
    if f.depth.shape != k.shape:
        raise DimensionMismatchError(f"{where}: depth shape {f.depth.shape} != declared {k.shape}")
    if f.color.shape != k.shape + (3,):
        raise DimensionMismatchError(f"{where}: color shape {f.color.shape} != declared {k.shape + (3,)}")
    if f.mask is not None and f.mask.shape != k.shape:
        raise DimensionMismatchError(f"{where}: mask shape {f.mask.shape} != declared {k.shape}")
    if f.timestamp_us < 0:
        raise InvalidInputError(f"{where}: negative timestamp {f.timestamp_us}")


@dataclass
class PairedRecord:
    """One LQ frame with the HQ frame reprojected into its camera."""

    lq_index: int
    hq_index: int
    lq_frame: Frame
    depth: np.ndarray
    color: np.ndarray
    gap_ms: float

    @property
    def mask(self):
        return self.depth > 0


@dataclass
class PairedDataset:
    records: list
    intrinsics: CameraIntrinsics
    delta_ms: float = 0.0
    transform: RigidTransform = field(default_factory=RigidTransform.identity)
    max_gap_ms: float = 15.0
    sequence_id: str = "seq"

    def __post_init__(self):
        for r in self.records:
            _check_frame(r.lq_frame, self.intrinsics, f"record {r.lq_index} LQ frame")
            if r.depth.shape != self.intrinsics.shape or r.color.shape != self.intrinsics.shape + (3,):
                raise DimensionMismatchError(f"record {r.lq_index}: ground truth does not match LQ size")
            if not 0 <= r.gap_ms <= self.max_gap_ms:
                raise InvalidInputError(
                    f"record {r.lq_index}: gap {r.gap_ms} ms outside [0, {self.max_gap_ms}] ms")

    def __len__(self):
        return len(self.records)

    @property
    def frames(self):
        return [r.lq_frame for r in self.records]


# -- image helpers -----------------------------------------------------------

def _read_png(path, flags):
    img = cv2.imread(str(path), flags)
    if img is None:
        raise ImageReadError("cannot read image", path)
    return img


def read_depth_png(path):
    img = _read_png(path, cv2.IMREAD_UNCHANGED)
    if img.dtype != np.uint16 or img.ndim != 2:
        raise ImageReadError(f"expected 16-bit single-channel depth, got {img.dtype} {img.shape}", path)
    return img.astype(np.float64) / MM_PER_M


def read_color_png(path):
    img = _read_png(path, cv2.IMREAD_COLOR)
    return np.ascontiguousarray(img[:, :, ::-1])


def read_mask_png(path):
    img = _read_png(path, cv2.IMREAD_UNCHANGED)
    if img.ndim != 2:
        raise ImageReadError(f"expected single-channel mask, got shape {img.shape}", path)
    return img != 0


def depth_to_mm(depth):
    mm = np.rint(np.asarray(depth, dtype=np.float64) * MM_PER_M)
    if mm.size and (mm.min() < 0 or mm.max() > np.iinfo(np.uint16).max):
        raise InvalidInputError("depth outside the 16-bit millimeter range")
    return mm.astype(np.uint16)


def _write_png(path, img):
    try:
        ok = cv2.imwrite(str(path), img)
    except cv2.error as exc:
        raise WriteError(f"{path}: {exc}") from exc
    if not ok:
        raise WriteError(f"{path}: image write failed")


def write_depth_png(path, depth):
    _write_png(path, depth_to_mm(depth))


def write_color_png(path, color):
    _write_png(path, np.ascontiguousarray(np.asarray(color, dtype=np.uint8)[:, :, ::-1]))


def write_mask_png(path, mask):
    _write_png(path, np.asarray(mask, dtype=np.uint8) * 255)


def _read_manifest(path):
    mpath = Path(path) / "manifest.json"
    if not mpath.is_file():
        raise ManifestMissingError("manifest.json not found", mpath)
    try:
        with open(mpath) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestFormatError(f"unreadable manifest: {exc}", mpath) from exc


def _write_manifest(path, manifest):
    try:
        with open(Path(path) / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise WriteError(f"{path}: {exc}") from exc


def _mkdirs(root, names):
    try:
        for n in names:
            os.makedirs(Path(root) / n, exist_ok=True)
    except OSError as exc:
        raise WriteError(f"{root}: {exc}") from exc


# -- sequences ---------------------------------------------------------------

def load_sequence(path, max_range=DEFAULT_MAX_RANGE):
    path = Path(path)
    m = _read_manifest(path)
    mpath = path / "manifest.json"
    try:
        k = CameraIntrinsics.from_dict(m["intrinsics"])
        sensor = m["sensor"]
        records = m["frames"]
    except KeyError as exc:
        raise ManifestFormatError(f"missing key {exc}", mpath) from exc
    except InvalidInputError as exc:
        raise ManifestFormatError(str(exc), mpath) from exc
    if not isinstance(records, list) or not records:
        raise ManifestFormatError("'frames' must be a non-empty list", mpath)

    frames = []
    prev = None
    for i, rec in enumerate(records):
        try:
            ts = rec["timestamp_us"]
            color_file, depth_file = rec["color"], rec["depth"]
        except (KeyError, TypeError) as exc:
            raise ManifestFormatError(f"frame {i}: missing key {exc}", mpath) from exc
        if not isinstance(ts, int) or isinstance(ts, bool) or ts < 0:
            raise ManifestFormatError(f"frame {i}: timestamp_us must be a non-negative integer", mpath)
        if prev is not None and ts <= prev:
            raise TimestampOrderError(f"frame {i}: timestamp {ts} not after {prev}", mpath)
        prev = ts

        depth = read_depth_png(path / depth_file)
        if depth.shape != k.shape:
            raise DimensionMismatchError(
                f"depth is {depth.shape[1]}x{depth.shape[0]}, manifest declares {k.width}x{k.height}",
                path / depth_file)
        if np.any(depth >= max_range):
            raise InvalidInputError(f"{path / depth_file}: depth beyond max range {max_range} m")
        color = read_color_png(path / color_file)
        if color.shape[:2] != k.shape:
            raise DimensionMismatchError(
                f"color is {color.shape[1]}x{color.shape[0]}, manifest declares {k.width}x{k.height}",
                path / color_file)
        mask = None
        if rec.get("mask"):
            mask = read_mask_png(path / rec["mask"])
            if mask.shape != k.shape:
                raise DimensionMismatchError("mask size does not match intrinsics", path / rec["mask"])
        frames.append(Frame(color, depth, ts, mask))
    return Sequence(frames, k, sensor, m.get("sequence_id", path.name))


def save_sequence(seq, path):
    path = Path(path)
    depths = [depth_to_mm(f.depth) for f in seq.frames]
    has_mask = any(f.mask is not None for f in seq.frames)
    _mkdirs(path, ["color", "depth"] + (["mask"] if has_mask else []))
    frames = []
    for i, (f, mm) in enumerate(zip(seq.frames, depths)):
        rec = {"color": f"color/{i:06d}.png", "depth": f"depth/{i:06d}.png",
               "timestamp_us": int(f.timestamp_us)}
        write_color_png(path / rec["color"], f.color)
        _write_png(path / rec["depth"], mm)
        if f.mask is not None:
            rec["mask"] = f"mask/{i:06d}.png"
            write_mask_png(path / rec["mask"], f.mask)
        frames.append(rec)
    _write_manifest(path, {"sequence_id": seq.sequence_id, "sensor": seq.sensor,
                           "intrinsics": seq.intrinsics.to_dict(), "frames": frames})


# -- paired datasets -----------------------------------------------------------

def save_paired_dataset(d, path):
    path = Path(path)
    # validate everything convertible before touching the disk
    d.__post_init__()
    for r in d.records:
        depth_to_mm(r.depth)
        depth_to_mm(r.lq_frame.depth)
    if d.records:
        dirs = ["lq_color", "lq_depth", "gt_color", "gt_depth"]
        if any(r.lq_frame.mask is not None for r in d.records):
            dirs.append("lq_mask")
        _mkdirs(path, dirs)
    else:
        _mkdirs(path, [""])
    recs = []
    for n, r in enumerate(d.records):
        name = f"{n:06d}.png"
        rec = {"lq_index": int(r.lq_index), "hq_index": int(r.hq_index),
               "timestamp_us": int(r.lq_frame.timestamp_us), "gap_ms": float(r.gap_ms),
               "lq_color": f"lq_color/{name}", "lq_depth": f"lq_depth/{name}",
               "gt_color": f"gt_color/{name}", "gt_depth": f"gt_depth/{name}"}
        write_color_png(path / rec["lq_color"], r.lq_frame.color)
        write_depth_png(path / rec["lq_depth"], r.lq_frame.depth)
        write_color_png(path / rec["gt_color"], r.color)
        write_depth_png(path / rec["gt_depth"], r.depth)
        if r.lq_frame.mask is not None:
            rec["lq_mask"] = f"lq_mask/{name}"
            write_mask_png(path / rec["lq_mask"], r.lq_frame.mask)
        recs.append(rec)
    _write_manifest(path, {
        "kind": "paired",
        "sequence_id": d.sequence_id,
        "intrinsics": d.intrinsics.to_dict(),
        "delta_ms": float(d.delta_ms),
        "transform": d.transform.to_dict(),
        "max_gap_ms": float(d.max_gap_ms),
        "records": recs,
    })


def load_paired_dataset(path):
    path = Path(path)
    m = _read_manifest(path)
    mpath = path / "manifest.json"
    if m.get("kind") != "paired":
        raise ManifestFormatError("not a paired dataset manifest", mpath)
    try:
        k = CameraIntrinsics.from_dict(m["intrinsics"])
        records = []
        for rec in m["records"]:
            lq_depth = read_depth_png(path / rec["lq_depth"])
            gt_depth = read_depth_png(path / rec["gt_depth"])
            for p, img in ((rec["lq_depth"], lq_depth), (rec["gt_depth"], gt_depth)):
                if img.shape != k.shape:
                    raise DimensionMismatchError("image size does not match intrinsics", path / p)
            mask = read_mask_png(path / rec["lq_mask"]) if rec.get("lq_mask") else None
            frame = Frame(read_color_png(path / rec["lq_color"]), lq_depth, int(rec["timestamp_us"]), mask)
            records.append(PairedRecord(int(rec["lq_index"]), int(rec["hq_index"]), frame, gt_depth,
                                        read_color_png(path / rec["gt_color"]), float(rec["gap_ms"])))
        return PairedDataset(records, k, float(m["delta_ms"]), RigidTransform.from_dict(m["transform"]),
                             float(m["max_gap_ms"]), m.get("sequence_id", path.name))
    except (KeyError, TypeError) as exc:
        raise ManifestFormatError(f"missing or malformed key {exc}", mpath) from exc
