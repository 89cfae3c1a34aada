"""Dataset container: a JSON-lines manifest plus one blob file of raw
little-endian f32 arrays, each preceded by a 16-byte header
(magic, dtype code, ndim, dims). Byte-stable and seekable."""

import json
import os
import struct

import numpy as np

from .geometry import ContactMask, DepthMap, RigidTransform, quat_from_rotation, rotation_from_quat
from .sensorsim import TactileImage, TouchSample

BLOB_MAGIC = b"CTBL"
DTYPE_F32 = 0
HEADER = struct.Struct("<4sHH4H")  # magic, dtype, ndim, dims[4]

MANIFEST = "manifest.jsonl"
BLOBS = "blobs.bin"
META = "meta.json"


def write_array(f, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 4:
        raise ValueError("arrays are limited to 4 dims")
    dims = list(arr.shape) + [0] * (4 - arr.ndim)
    offset = f.tell()
    f.write(HEADER.pack(BLOB_MAGIC, DTYPE_F32, arr.ndim, *dims))
    f.write(arr.tobytes())
    return offset


def read_array(f, offset):
    f.seek(offset)
    raw = f.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise ValueError(f"truncated blob header at offset {offset}")
    magic, dtype, ndim, *dims = HEADER.unpack(raw)
    if magic != BLOB_MAGIC:
        raise ValueError(f"bad blob magic at offset {offset}: {magic!r}")
    if dtype != DTYPE_F32:
        raise ValueError(f"unknown dtype code {dtype} at offset {offset}")
    shape = tuple(dims[:ndim])
    count = int(np.prod(shape)) if shape else 1
    data = f.read(4 * count)
    if len(data) != 4 * count:
        raise ValueError(f"truncated blob payload at offset {offset}")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


class DatasetWriter:
    def __init__(self, directory, meta=None):
        os.makedirs(directory, exist_ok=True)
        self.directory = directory
        self._blob = open(os.path.join(directory, BLOBS), "wb")
        self._manifest = open(os.path.join(directory, MANIFEST), "w")
        if meta is not None:
            with open(os.path.join(directory, META), "w") as f:
                json.dump(meta, f, sort_keys=True, indent=1)

    def add_sample(self, sample_id, sample):
        q = quat_from_rotation(sample.pose.rotation)
        record = {
            "id": sample_id,
            "indenter": sample.indenter_id,
            "sensor": sample.sensor_name,
            "seed": int(sample.seed),
            "pose": {"q": [float(v) for v in q], "t": [float(v) for v in sample.pose.translation]},
            "arrays": {
                "tactile": write_array(self._blob, sample.tactile.values),
                "depth": write_array(self._blob, sample.depth.values),
                "mask": write_array(self._blob, sample.mask.values.astype(np.float32)),
            },
        }
        self._manifest.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        self._blob.close()
        self._manifest.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class DatasetReader:
    def __init__(self, directory):
        self.directory = directory
        manifest_path = os.path.join(directory, MANIFEST)
        if not os.path.exists(manifest_path):
            raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
        with open(manifest_path) as f:
            self.records = [json.loads(line) for line in f if line.strip()]
        meta_path = os.path.join(directory, META)
        self.meta = None
        if os.path.exists(meta_path):
            with open(meta_path) as f:
                self.meta = json.load(f)
        self._blob = open(os.path.join(directory, BLOBS), "rb")

    def __len__(self):
        return len(self.records)

    def array(self, record, name):
        return read_array(self._blob, record["arrays"][name])

    def pose(self, record):
        q = np.asarray(record["pose"]["q"], dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError(f"record {record['id']}: quaternion is not unit-norm")
        return RigidTransform(rotation_from_quat(q), record["pose"]["t"])

    def sample(self, record, intrinsics):
        return TouchSample(
            tactile=TactileImage(self.array(record, "tactile")),
            depth=DepthMap(self.array(record, "depth").astype(np.float64), intrinsics),
            mask=ContactMask(self.array(record, "mask").astype(np.uint8)),
            indenter_id=record["indenter"],
            pose=self.pose(record),
            sensor_name=record["sensor"],
            seed=record["seed"],
        )

    def by_sensor(self, sensor_name):
        return [r for r in self.records if r["sensor"] == sensor_name]

    def close(self):
        self._blob.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def verify(directory):
    """Walk every manifest offset; raises on any malformed blob. Returns
    (records checked, arrays checked)."""
    reader = DatasetReader(directory)
    arrays = 0
    try:
        for record in reader.records:
            reader.pose(record)
            for name in record["arrays"]:
                reader.array(record, name)
                arrays += 1
    finally:
        reader.close()
    return len(reader.records), arrays
