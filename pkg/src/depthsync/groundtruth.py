"""Paired ground truth: HQ frames reprojected into the LQ camera."""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ManifestFormatError, WriteError
from .geometry import RigidTransform, reproject_depth
from .sequence_io import MM_PER_M, PairedDataset, PairedRecord
from .temporal import FrameMapping


@dataclass
class AlignmentResult:
    delta_ms: float
    transform: RigidTransform
    mapping: FrameMapping
    residual: float = 0.0

    def __post_init__(self):
        if not self.residual >= 0:
            raise InvalidInputError(f"residual must be non-negative, got {self.residual}")

    def check(self, lq, hq):
        for i, j, _ in self.mapping.pairs:
            if not (0 <= i < len(lq) and 0 <= j < len(hq)):
                raise InvalidInputError(f"mapping pair ({i}, {j}) out of range for sequences "
                                        f"of length {len(lq)} / {len(hq)}")

    def to_dict(self):
        return {"delta_ms": float(self.delta_ms), "transform": self.transform.to_dict(),
                "residual_px": float(self.residual), "mapping": self.mapping.to_list()}

    @classmethod
    def from_dict(cls, d):
        try:
            pairs = tuple((int(i), int(j), float(g)) for i, j, g in d["mapping"])
            return cls(float(d["delta_ms"]), RigidTransform.from_dict(d["transform"]),
                       FrameMapping(pairs), float(d.get("residual_px", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed alignment record: {exc}") from exc


def save_alignment(a, path, extra=None):
    d = a.to_dict()
    if extra:
        d.update(extra)
    try:
        with open(path, "w") as fh:
            json.dump(d, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise WriteError(f"{path}: {exc}") from exc


def load_alignment(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestFormatError(f"cannot read alignment: {exc}", Path(path)) from exc
    return AlignmentResult.from_dict(d)


def build_paired_dataset(lq, hq, a, max_gap_ms=15.0, threads=1):
    """Reproject the matched HQ frame of every LQ frame within ``max_gap_ms``.

    Ground-truth depth is rounded to whole millimeters, the resolution of
    the on-disk format, so saved datasets reload bit-exactly.
    """
    a.check(lq, hq)
    pairs = [(i, j, g) for i, j, g in a.mapping.pairs if g <= max_gap_ms]

    def one(p):
        i, j, gap = p
        depth, color = reproject_depth(hq[j].depth, hq[j].color, hq.intrinsics, lq.intrinsics, a.transform)
        depth = np.rint(depth * MM_PER_M) / MM_PER_M
        color = np.where((depth > 0)[..., None], color, 0).astype(np.uint8)
        return PairedRecord(i, j, lq[i], depth, color, gap)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, pairs))
    else:
        records = [one(p) for p in pairs]
    return PairedDataset(records, lq.intrinsics, a.delta_ms, a.transform, max_gap_ms, lq.sequence_id)
