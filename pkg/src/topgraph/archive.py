"""Binary archive container used for graphs, eigensystems, kappa tensors and models.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"TOPGARC1"
    offset 8   8 bytes   uint64 header length H
    offset 16  H bytes   UTF-8 JSON header (keys sorted, no whitespace)
    offset 16+H          blob section

The header always has a ``"kind"`` string and a ``"blobs"`` list.  Each blob
entry is ``{"name", "dtype", "shape", "offset", "nbytes"}`` where ``offset``
is relative to the start of the blob section, ``dtype`` is ``"<f8"``
(float64) or ``"<i8"`` (int64) and data is stored row-major (C order).
Blobs are packed back to back in header order with no padding.
"""

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"TOPGARC1"
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _encode(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps(kind, meta, blobs):
    """Serialize ``meta`` (JSON-able dict) and named arrays to bytes."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in blobs.items():
        arr = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes(order="C")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = dict(meta)
    header["kind"] = kind
    header["blobs"] = entries
    raw = _encode(header)
    return MAGIC + struct.pack("<Q", len(raw)) + raw + b"".join(chunks)


def loads(buf, kind=None):
    """Inverse of :func:`dumps`; returns ``(header, {name: array})``."""
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise DataError("not a topgraph archive (bad magic)")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    try:
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt archive header: {exc}") from None
    if kind is not None and header.get("kind") != kind:
        raise DataError(f"expected a {kind!r} archive, got {header.get('kind')!r}")
    base = 16 + hlen
    arrays = {}
    for entry in header["blobs"]:
        start = base + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(buf):
            raise DataError(f"truncated archive: blob {entry['name']!r}")
        arr = np.frombuffer(buf[start:stop], dtype=_DTYPES[entry["dtype"]])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(
            _DTYPES[entry["dtype"]].newbyteorder("="))
    return header, arrays


def save(path, kind, meta, blobs):
    with open(path, "wb") as fh:
        fh.write(dumps(kind, meta, blobs))


def load(path, kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind=kind)
