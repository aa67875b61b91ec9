"""On-disk formats. All integers and floats are little-endian.

Embedding file (``.emb``)::

    offset  size  field
    0       8     magic  b"MMELEMB\\0"
    8       4     u32    format version (1)
    12      4     u32    dimension d
    16      8     u64    row count n
    24      1     u8     1 if a label column follows, else 0
    25      7     zero padding
    32      8*n*d f64    rows, row-major
    ...     8*n   i64    labels (only when flagged)

Container (``.ckpt``, ``.idx``, ``.enr``)::

    0       8     magic  b"MMELPACK"
    8       4     u32    format version (1)
    12      4     u32    reserved, zero
    16      8     u64    header length h
    24      h     UTF-8 JSON header, keys sorted
    ...           zero padding to a multiple of 8
    ...           array blob

The JSON header carries ``kind``, free-form ``meta`` and an ``arrays`` list
of ``{name, dtype, shape, offset}`` where ``dtype`` is ``"<f8"`` or
``"<i8"`` and ``offset`` is relative to the start of the blob.

Score file: UTF-8 text, ``# key=value`` header lines then one score per
line written with ``repr``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ContractViolation

EMB_MAGIC = b"MMELEMB\0"
EMB_VERSION = 1
EMB_HEADER = struct.Struct("<8sIIQB7x")
PACK_MAGIC = b"MMELPACK"
PACK_VERSION = 1
PACK_HEADER = struct.Struct("<8sIIQ")
SCORE_MAGIC = "# mmel-scores 1"


class FormatError(ContractViolation):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_embeddings(vectors, labels=None) -> bytes:
    x = np.ascontiguousarray(vectors, dtype="<f8")
    if x.ndim != 2:
        raise ContractViolation("embedding file rows must form a 2-d array")
    parts = [EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, x.shape[1], x.shape[0], labels is not None), x.tobytes()]
    if labels is not None:
        lab = np.ascontiguousarray(labels, dtype="<i8")
        if lab.shape != (x.shape[0],):
            raise ContractViolation("label column length does not match row count")
        parts.append(lab.tobytes())
    return b"".join(parts)


def decode_embeddings(data: bytes):
    if len(data) < EMB_HEADER.size:
        raise FormatError("embedding file is truncated")
    magic, version, dim, rows, has_labels = EMB_HEADER.unpack_from(data)
    if magic != EMB_MAGIC:
        raise FormatError("not an embedding file")
    if version != EMB_VERSION:
        raise FormatError(f"unsupported embedding file version {version}")
    body = rows * dim * 8
    expected = EMB_HEADER.size + body + (rows * 8 if has_labels else 0)
    if len(data) != expected:
        raise FormatError(f"embedding file size {len(data)} does not match header ({expected})")
    x = np.frombuffer(data, dtype="<f8", count=rows * dim, offset=EMB_HEADER.size).reshape(rows, dim)
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype="<i8", count=rows, offset=EMB_HEADER.size + body).astype(np.int64)
    return x.astype(np.float64), labels


def write_embeddings(path, vectors, labels=None) -> None:
    atomic_write(path, encode_embeddings(vectors, labels))


def read_embeddings(path):
    """Return (vectors, labels or None)."""
    return decode_embeddings(Path(path).read_bytes())


def encode_container(kind: str, meta: dict, arrays: dict) -> bytes:
    table, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        table.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": table}, sort_keys=True, separators=(",", ":")
    ).encode()
    pad = b"\0" * (-(PACK_HEADER.size + len(header)) % 8)
    return PACK_HEADER.pack(PACK_MAGIC, PACK_VERSION, 0, len(header)) + header + pad + b"".join(blobs)


def decode_container(data: bytes, kind: str | None = None):
    """Return (kind, meta, arrays)."""
    if len(data) < PACK_HEADER.size:
        raise FormatError("container is truncated")
    magic, version, _, hlen = PACK_HEADER.unpack_from(data)
    if magic != PACK_MAGIC:
        raise FormatError("not an mmel container")
    if version != PACK_VERSION:
        raise FormatError(f"unsupported container version {version}")
    header = json.loads(data[PACK_HEADER.size:PACK_HEADER.size + hlen])
    if kind is not None and header["kind"] != kind:
        raise FormatError(f"expected a {kind} container, found {header['kind']}")
    start = PACK_HEADER.size + hlen
    start += -start % 8
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = start + entry["offset"] + count * 8
        if end > len(data):
            raise FormatError(f"array {entry['name']} runs past the end of the file")
        arr = np.frombuffer(data, dtype=entry["dtype"], count=count, offset=start + entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(
            np.int64 if entry["dtype"] == "<i8" else np.float64
        )
    return header["kind"], header["meta"], arrays


def write_container(path, kind: str, meta: dict, arrays: dict) -> None:
    atomic_write(path, encode_container(kind, meta, arrays))


def read_container(path, kind: str | None = None):
    return decode_container(Path(path).read_bytes(), kind)


def encode_scores(scores, meta: dict) -> bytes:
    lines = [SCORE_MAGIC]
    lines += [f"# {k}={v}" for k, v in meta.items()]
    lines.append(f"# rows={len(scores)}")
    lines += [repr(float(s)) for s in scores]
    return ("\n".join(lines) + "\n").encode()


def write_scores(path, scores, meta: dict) -> None:
    atomic_write(path, encode_scores(scores, meta))


def read_scores(path):
    """Return (meta, scores)."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0] != SCORE_MAGIC:
        raise FormatError(f"{path} is not a score file")
    meta, values = {}, []
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif line.strip():
            values.append(float(line))
    scores = np.array(values, dtype=np.float64)
    if "rows" in meta and int(meta["rows"]) != len(scores):
        raise FormatError(f"{path}: header says {meta['rows']} rows, found {len(scores)}")
    return meta, scores
