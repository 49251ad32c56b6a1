import json

import cv2
import numpy as np
import pytest

from depthsync.errors import (DimensionMismatchError, ImageReadError, InvalidInputError, LoadError,
                              ManifestFormatError, ManifestMissingError, TimestampOrderError)
from depthsync.geometry import CameraIntrinsics, RigidTransform
from depthsync.sequence_io import (Frame, PairedDataset, PairedRecord, Sequence, load_paired_dataset,
                                   load_sequence, save_paired_dataset, save_sequence)

K = CameraIntrinsics(20.0, 20.0, 7.5, 5.5, 16, 12)


def make_sequence(n=3, k=K, seed=0, masks=True):
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(n):
        d = np.rint(rng.uniform(0.3, 6.0, k.shape) * 1000) / 1000
        d[rng.random(k.shape) < 0.1] = 0
        c = rng.integers(0, 256, k.shape + (3,), dtype=np.uint8)
        m = rng.random(k.shape) < 0.5 if masks else None
        frames.append(Frame(c, d, 1000 + 33_333 * i, m))
    return Sequence(frames, k, "LQ", "fixture")


def test_round_trip_bit_exact(tmp_path):
    seq = make_sequence()
    save_sequence(seq, tmp_path / "s")
    back = load_sequence(tmp_path / "s")
    assert len(back) == 3 and back.intrinsics == K and back.sensor == "LQ"
    assert np.all(np.diff(back.timestamps_us) > 0)
    for a, b in zip(seq.frames, back.frames):
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.color, b.color)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.timestamp_us == b.timestamp_us


def test_manifest_layout(tmp_path):
    save_sequence(make_sequence(masks=False), tmp_path / "s")
    m = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert m["sensor"] == "LQ"
    assert set(m["intrinsics"]) == {"fx", "fy", "cx", "cy", "width", "height"}
    assert m["frames"][0]["depth"] == "depth/000000.png"
    assert "mask" not in m["frames"][0]
    img = cv2.imread(str(tmp_path / "s" / "depth" / "000001.png"), cv2.IMREAD_UNCHANGED)
    assert img.dtype == np.uint16


def test_missing_mask_means_all_ones():
    f = make_sequence(masks=False)[0]
    assert f.seg_mask().all()


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestMissingError) as e:
        load_sequence(tmp_path)
    assert "manifest.json" in str(e.value)


def _tamper(path, fn):
    m = json.loads((path / "manifest.json").read_text())
    fn(m)
    (path / "manifest.json").write_text(json.dumps(m))


def test_non_monotone_timestamps(tmp_path):
    save_sequence(make_sequence(), tmp_path)
    _tamper(tmp_path, lambda m: m["frames"][2].update(timestamp_us=m["frames"][1]["timestamp_us"]))
    with pytest.raises(TimestampOrderError):
        load_sequence(tmp_path)


def test_sensor_size_mismatch(tmp_path):
    # manifest declares the 512x424 sensor, files come from the 480x640 one
    k_phone = CameraIntrinsics(500.0, 500.0, 239.5, 319.5, 480, 640)
    rng = np.random.default_rng(1)
    f = Frame(rng.integers(0, 255, (640, 480, 3), dtype=np.uint8), np.full((640, 480), 1.5), 0)
    save_sequence(Sequence([f], k_phone), tmp_path)
    _tamper(tmp_path, lambda m: m.update(intrinsics={"fx": 365.0, "fy": 365.0, "cx": 255.5, "cy": 211.5,
                                                     "width": 512, "height": 424}))
    with pytest.raises(DimensionMismatchError) as e:
        load_sequence(tmp_path)
    assert "000000.png" in str(e.value)


def test_unreadable_image(tmp_path):
    save_sequence(make_sequence(), tmp_path)
    (tmp_path / "depth" / "000001.png").write_bytes(b"not a png")
    with pytest.raises(ImageReadError) as e:
        load_sequence(tmp_path)
    assert "000001.png" in str(e.value)


def test_bad_manifest_json(tmp_path):
    (tmp_path / "manifest.json").write_text("{")
    with pytest.raises(ManifestFormatError):
        load_sequence(tmp_path)


def test_load_errors_are_distinct_and_invalid_input():
    kinds = {ManifestMissingError, ManifestFormatError, TimestampOrderError, DimensionMismatchError, ImageReadError}
    assert len(kinds) == 5
    assert all(issubclass(k, LoadError) and issubclass(k, InvalidInputError) for k in kinds)


def test_sequence_invariants():
    with pytest.raises(InvalidInputError):
        Sequence([], K)
    f = make_sequence()[0]
    with pytest.raises(TimestampOrderError):
        Sequence([f, f], K)
    with pytest.raises(InvalidInputError):
        Sequence([f], K, sensor="XX")


def _paired(n=2, gap=12.0, max_gap=15.0):
    seq = make_sequence(n)
    rng = np.random.default_rng(9)
    recs = []
    for i, f in enumerate(seq.frames):
        d = np.rint(rng.uniform(0.5, 4, K.shape) * 1000) / 1000
        d[rng.random(K.shape) < 0.4] = 0
        c = np.where((d > 0)[..., None], rng.integers(0, 255, K.shape + (3,), dtype=np.uint8), 0).astype(np.uint8)
        recs.append(PairedRecord(i, i + 1, f, d, c, gap))
    return PairedDataset(recs, K, -17.5, RigidTransform.from_axis_angle((0, 1, 0), 4, (0.1, 0, 0)), max_gap)


def test_paired_round_trip(tmp_path):
    ds = _paired()
    save_paired_dataset(ds, tmp_path / "p")
    back = load_paired_dataset(tmp_path / "p")
    assert back.delta_ms == ds.delta_ms and back.max_gap_ms == ds.max_gap_ms
    np.testing.assert_array_equal(back.transform.rotation, ds.transform.rotation)
    for a, b in zip(ds.records, back.records):
        assert (a.lq_index, a.hq_index, a.gap_ms) == (b.lq_index, b.hq_index, b.gap_ms)
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.color, b.color)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(a.lq_frame.depth, b.lq_frame.depth)
        np.testing.assert_array_equal(a.lq_frame.mask, b.lq_frame.mask)


def test_empty_paired_dataset(tmp_path):
    save_paired_dataset(PairedDataset([], K), tmp_path / "p")
    m = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert m["records"] == []
    files = [p for p in (tmp_path / "p").rglob("*") if p.is_file()]
    assert [p.name for p in files] == ["manifest.json"]
    assert len(load_paired_dataset(tmp_path / "p")) == 0


def test_gap_threshold():
    assert len(_paired(gap=12.0, max_gap=15.0)) == 2
    with pytest.raises(InvalidInputError):
        _paired(gap=12.0, max_gap=5.0)
