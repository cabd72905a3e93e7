"""Binary scene file format (`GSLT`).

Little-endian layout:

    header   magic "GSLT" | version u32 | count u64 | d u32 | sh_degree u32
    splats   count fixed-width records:
             center 3*f64 | scale 3*f64 | rotation 4*f64 | opacity f64 |
             color n_sh*3*f64 | semantic d*f64
    codebook D u32 | seed u64 | basis D*d*f64 | n_labels u32 |
             per label: len u32 | utf8 bytes | entry D*f64
    meta     len u32 | utf8 JSON (bounds, timestamps)
    editlog  n u32 | per record: op u8 | label len u32 + utf8 | payload
             op 0 add:    n_new u64 | n_new splat records
             op 1 remove: n_idx u64 | n_idx * u64

Round trips are bit-exact: every array is written as raw float64/int64 bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .codebook import EmbeddingCodebook
from .model import EditRecord, SceneModel, n_sh_coeffs

MAGIC = b"GSLT"
VERSION = 1


class SceneFileError(Exception):
    """Base class for scene file problems."""


class HeaderError(SceneFileError):
    """File does not start with a valid GSLT header."""


class VersionError(SceneFileError):
    """File version is not supported by this reader."""


class TruncationError(SceneFileError):
    """File ends before the declared payload is complete."""


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, count: int, dtype) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).astype(
            dtype, copy=True)


def _splat_fields_to_bytes(fields: dict) -> bytes:
    n = np.asarray(fields["centers"]).reshape(-1, 3).shape[0]
    parts = []
    for i in range(n):
        parts.append(np.ascontiguousarray(fields["centers"], np.float64)[i].tobytes())
        parts.append(np.ascontiguousarray(fields["scales"], np.float64)[i].tobytes())
        parts.append(np.ascontiguousarray(fields["rotations"], np.float64)[i].tobytes())
        parts.append(struct.pack("<d", float(np.asarray(fields["opacities"]).reshape(-1)[i])))
        parts.append(np.ascontiguousarray(fields["colors"], np.float64)[i].tobytes())
        parts.append(np.ascontiguousarray(fields["semantics"], np.float64)[i].tobytes())
    return b"".join(parts)


def _read_splat_fields(r: _Reader, count: int, n_sh: int, d: int) -> dict:
    centers = np.empty((count, 3))
    scales = np.empty((count, 3))
    rotations = np.empty((count, 4))
    opacities = np.empty(count)
    colors = np.empty((count, n_sh, 3))
    semantics = np.empty((count, d))
    for i in range(count):
        centers[i] = r.array(3, np.float64)
        scales[i] = r.array(3, np.float64)
        rotations[i] = r.array(4, np.float64)
        (opacities[i],) = r.unpack("d")
        colors[i] = r.array(n_sh * 3, np.float64).reshape(n_sh, 3)
        semantics[i] = r.array(d, np.float64)
    return {"centers": centers, "scales": scales, "rotations": rotations,
            "opacities": opacities, "colors": colors, "semantics": semantics}


def scene_to_bytes(scene: SceneModel) -> bytes:
    n = len(scene)
    d = scene.semantic_dim
    out = [MAGIC, struct.pack("<IQII", VERSION, n, d, scene.sh_degree)]
    out.append(_splat_fields_to_bytes({
        "centers": scene.centers, "scales": scene.scales,
        "rotations": scene.rotations, "opacities": scene.opacities,
        "colors": scene.colors, "semantics": scene.semantics}))
    book = scene.codebook
    out.append(struct.pack("<IQ", book.D, book.seed))
    out.append(np.ascontiguousarray(book.basis, np.float64).tobytes())
    out.append(struct.pack("<I", len(book)))
    for label in book.labels:
        raw = label.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(np.ascontiguousarray(book.entry(label), np.float64).tobytes())
    meta = json.dumps({"bounds": scene.bounds.tolist(),
                       "created": scene.created,
                       "updated": scene.updated}, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(meta)))
    out.append(meta)
    out.append(struct.pack("<I", len(scene.edit_log)))
    n_sh = scene.colors.shape[1]
    for rec in scene.edit_log:
        raw = rec.label.encode("utf-8")
        op = 0 if rec.op == "add" else 1
        out.append(struct.pack("<BI", op, len(raw)))
        out.append(raw)
        if rec.op == "add":
            n_new = np.asarray(rec.payload["centers"]).reshape(-1, 3).shape[0]
            out.append(struct.pack("<Q", n_new))
            out.append(_splat_fields_to_bytes(rec.payload))
        else:
            idx = np.ascontiguousarray(rec.payload, np.int64)
            out.append(struct.pack("<Q", idx.size))
            out.append(idx.tobytes())
    return b"".join(out)


def scene_from_bytes(data: bytes) -> SceneModel:
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise HeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count, d, sh_degree = r.unpack("IQII")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}, reader supports {VERSION}")
    n_sh = n_sh_coeffs(sh_degree)
    fields = _read_splat_fields(r, count, n_sh, d)
    big_d, seed = r.unpack("IQ")
    basis = r.array(big_d * d, np.float64).reshape(big_d, d)
    (n_labels,) = r.unpack("I")
    labels, entries = [], []
    for _ in range(n_labels):
        (label_len,) = r.unpack("I")
        labels.append(r.take(label_len).decode("utf-8"))
        entries.append(r.array(big_d, np.float64))
    entries = np.stack(entries) if entries else np.zeros((0, big_d))
    book = EmbeddingCodebook.from_raw(seed, d, big_d, basis, labels, entries)
    (meta_len,) = r.unpack("I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    scene = SceneModel(fields["centers"], fields["scales"], fields["rotations"],
                       fields["opacities"], fields["colors"], fields["semantics"],
                       book, sh_degree=sh_degree,
                       bounds=np.asarray(meta["bounds"], dtype=np.float64))
    scene.created = meta["created"]
    scene.updated = meta["updated"]
    (n_records,) = r.unpack("I")
    for _ in range(n_records):
        op, label_len = r.unpack("BI")
        label = r.take(label_len).decode("utf-8")
        if op == 0:
            (n_new,) = r.unpack("Q")
            payload = _read_splat_fields(r, n_new, n_sh, d)
            scene.edit_log.append(EditRecord("add", label, payload))
        else:
            (n_idx,) = r.unpack("Q")
            scene.edit_log.append(EditRecord("remove", label, r.array(n_idx, np.int64)))
    return scene


def save_scene(scene: SceneModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(scene_to_bytes(scene))


def load_scene(path) -> SceneModel:
    with open(path, "rb") as fh:
        return scene_from_bytes(fh.read())
