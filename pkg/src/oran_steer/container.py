"""Versioned binary container for fitted models.

Layout (all integers big-endian)::

    magic  b"OTSM"           4 bytes
    version                  uint16
    header length            uint32
    header                   UTF-8 JSON: {"kind", "meta", "arrays": [[name, dtype, shape], ...]}
    payload                  arrays back to back, row-major, little-endian
                             (dtypes: f8, i8, and u1 for nested blobs)
    crc32                    uint32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"OTSM"
VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "u1"}


class ContainerError(ValueError):
    pass


def dumps(kind, meta, arrays):
    table = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == np.uint8:
            code = "u1"
        elif np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
            code = "i8"
        else:
            code = "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        table.append([name, code, list(arr.shape)])
        chunks.append(data.tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": table}, sort_keys=True).encode()
    body = MAGIC + struct.pack(">HI", VERSION, len(header)) + header + b"".join(chunks)
    return body + struct.pack(">I", zlib.crc32(body))


def loads(blob, expected_kind=None):
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise ContainerError("not a model container (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack(">I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ContainerError("checksum mismatch")
    version, hlen = struct.unpack(">HI", body[4:10])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = json.loads(body[10:10 + hlen])
    if expected_kind is not None and header["kind"] != expected_kind:
        raise ContainerError(f"expected a {expected_kind!r} container, got {header['kind']!r}")
    offset = 10 + hlen
    arrays = {}
    for name, code, shape in header["arrays"]:
        dtype = np.dtype(_DTYPES[code])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        arrays[name] = np.frombuffer(body[offset:offset + nbytes], dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise ContainerError("trailing bytes after payload")
    return header["kind"], header["meta"], arrays


def save(path, kind, meta, arrays):
    with open(path, "wb") as fh:
        fh.write(dumps(kind, meta, arrays))


def load(path, expected_kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), expected_kind)
