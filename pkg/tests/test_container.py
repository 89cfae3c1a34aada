import numpy as np
import pytest

from crosstouch import container
from crosstouch.sensorsim import GridSpec, IndenterSet, default_indenters, generate_dataset, make_sensor


@pytest.fixture(scope="module")
def small_pairs():
    spec_a = make_sensor("a", image_size=24, resolution_ppmm=1.5, gel_plane_z=30.0, max_indent=3.0)
    spec_b = make_sensor("b", image_size=24, resolution_ppmm=3.0, gel_plane_z=12.0,
                         max_indent=2.0, render_style="gel-rgb")
    ind = IndenterSet(default_indenters().shapes[:2], GridSpec(samples_per_indenter=2, max_tilt_deg=15.0))
    return generate_dataset(spec_a, spec_b, ind, seed=3), spec_a, spec_b


def _write(tmp_path, pairs, meta=None):
    path = tmp_path / "ds"
    with container.DatasetWriter(path, meta=meta or {"kind": "test"}) as w:
        for i, (a, b) in enumerate(pairs):
            w.add_sample(f"s{i:03d}", a)
            w.add_sample(f"s{i:03d}", b)
    return path


def test_round_trip_exact(tmp_path, small_pairs):
    pairs, spec_a, spec_b = small_pairs
    path = _write(tmp_path, pairs)
    reader = container.DatasetReader(path)
    assert len(reader) == 4 * 2
    rec = reader.records[0]
    sample = reader.sample(rec, spec_a.intrinsics)
    orig = pairs[0][0]
    np.testing.assert_array_equal(sample.tactile.values, orig.tactile.values)
    np.testing.assert_allclose(sample.depth.values, orig.depth.values, atol=1e-5)
    np.testing.assert_array_equal(sample.mask.values, orig.mask.values)
    assert sample.indenter_id == orig.indenter_id
    np.testing.assert_allclose(sample.pose.rotation, orig.pose.rotation, atol=1e-7)
    np.testing.assert_allclose(sample.pose.translation, orig.pose.translation, atol=1e-7)
    reader.close()


def test_verify_walks_all_offsets(tmp_path, small_pairs):
    pairs, *_ = small_pairs
    path = _write(tmp_path, pairs)
    records, arrays = container.verify(path)
    assert records == 8
    assert arrays == 24


def test_corruption_detected(tmp_path, small_pairs):
    pairs, *_ = small_pairs
    path = _write(tmp_path, pairs)
    blob_path = path / container.BLOBS
    data = bytearray(blob_path.read_bytes())
    data[0:4] = b"XXXX"  # clobber the first blob magic
    blob_path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="magic"):
        container.verify(path)


def test_truncation_detected(tmp_path, small_pairs):
    pairs, *_ = small_pairs
    path = _write(tmp_path, pairs)
    blob_path = path / container.BLOBS
    blob_path.write_bytes(blob_path.read_bytes()[:-40])
    with pytest.raises(ValueError, match="truncated"):
        container.verify(path)


def test_quaternions_unit_norm(tmp_path, small_pairs):
    import json

    pairs, *_ = small_pairs
    path = _write(tmp_path, pairs)
    with open(path / container.MANIFEST) as f:
        for line in f:
            q = np.asarray(json.loads(line)["pose"]["q"])
            assert abs(np.linalg.norm(q) - 1.0) < 1e-6


def test_byte_identical_rewrites(tmp_path, small_pairs):
    pairs, *_ = small_pairs
    p1 = tmp_path / "one"
    p2 = tmp_path / "two"
    for p in (p1, p2):
        with container.DatasetWriter(p, meta={"kind": "same"}) as w:
            for i, (a, b) in enumerate(pairs):
                w.add_sample(f"s{i:03d}", a)
                w.add_sample(f"s{i:03d}", b)
    assert (p1 / container.BLOBS).read_bytes() == (p2 / container.BLOBS).read_bytes()
    assert (p1 / container.MANIFEST).read_text() == (p2 / container.MANIFEST).read_text()


def test_meta_round_trip(tmp_path, small_pairs):
    pairs, *_ = small_pairs
    meta = {"kind": "train", "sensors": {"src": "a", "dst": "b"}}
    path = _write(tmp_path, pairs, meta=meta)
    reader = container.DatasetReader(path)
    assert reader.meta == meta
    reader.close()


def test_missing_manifest_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        container.DatasetReader(tmp_path / "nope")
