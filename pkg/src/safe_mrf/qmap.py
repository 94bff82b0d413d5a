"""QMAP: a minimal self-describing little-endian array container.

Record layout::

    b"QMAP1" | version u16 | dtype u8 | ndim u8 | dims u32 * ndim | payload

dtype codes: 0 = float32, 1 = complex64, 2 = uint8. A file holds one or
more records back to back. Metadata lives in a JSON sidecar next to the file
(``name.qmap`` -> ``name.json``).
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"QMAP1"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<c8"), 2: np.dtype("u1")}
CODES = {np.dtype("float32"): 0, np.dtype("complex64"): 1, np.dtype("uint8"): 2}


class QmapError(ValueError):
    pass


def _coerce(arr) -> np.ndarray:
    a = np.asarray(arr)
    if a.dtype == bool:
        return a.astype(np.uint8)
    if np.issubdtype(a.dtype, np.complexfloating):
        return a.astype(np.complex64)
    if np.issubdtype(a.dtype, np.floating) or np.issubdtype(a.dtype, np.signedinteger):
        return a.astype(np.float32)
    if a.dtype == np.uint8:
        return a
    raise QmapError(f"cannot store dtype {a.dtype} in QMAP")


def encode(arr) -> bytes:
    a = _coerce(arr)
    code = CODES[a.dtype]
    head = MAGIC + struct.pack("<HBB", VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a).astype(DTYPES[code], copy=False).tobytes()


def _decode_one(buf: memoryview, pos: int, name: str):
    if bytes(buf[pos:pos + 5]) != MAGIC:
        raise QmapError(f"{name}: not a QMAP file")
    if len(buf) - pos < len(MAGIC) + 4:
        raise QmapError(f"{name}: truncated header")
    pos += 5
    version, code, ndim = struct.unpack_from("<HBB", buf, pos)
    pos += 4
    if version != VERSION:
        raise QmapError(f"{name}: unsupported QMAP version {version}")
    if code not in DTYPES:
        raise QmapError(f"{name}: unknown dtype code {code}")
    if len(buf) - pos < 4 * ndim:
        raise QmapError(f"{name}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dt = DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(buf) - pos < nbytes:
        raise QmapError(f"{name}: truncated payload")
    arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dt).reshape(dims).copy()
    return arr.astype(dt.newbyteorder("="), copy=False), pos + nbytes


def decode_all(data: bytes, name: str = "<bytes>") -> list[np.ndarray]:
    buf = memoryview(data)
    out, pos = [], 0
    while pos < len(buf):
        arr, pos = _decode_one(buf, pos, name)
        out.append(arr)
    if not out:
        raise QmapError(f"{name}: not a QMAP file")
    return out


def _read_bytes(src) -> tuple[bytes, str]:
    if isinstance(src, (str, os.PathLike)):
        path = Path(src)
        if not path.is_file():
            raise FileNotFoundError(f"{path}: no such file")
        return path.read_bytes(), str(path)
    return src.read(), getattr(src, "name", "<stream>")


def read_qmap_records(src) -> list[np.ndarray]:
    data, name = _read_bytes(src)
    return decode_all(data, name)


def read_qmap(src, expect: str | None = None) -> np.ndarray:
    """First record of a QMAP file or stream.

    ``expect`` ("f32", "c64" or "u8") raises on a dtype mismatch.
    """
    data, name = _read_bytes(src)
    arr, _ = _decode_one(memoryview(data), 0, name)
    if expect is not None:
        want = {"f32": np.float32, "c64": np.complex64, "u8": np.uint8}[expect]
        if arr.dtype != want:
            raise QmapError(f"{name}: dtype {arr.dtype} where {expect} was expected")
    return arr


def _atomic_write(path: Path, payload: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(payload, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_qmap(dst, arrays, meta: dict | None = None) -> None:
    """Write one array (or a list of records) plus an optional JSON sidecar."""
    records = arrays if isinstance(arrays, (list, tuple)) else [arrays]
    payload = b"".join(encode(a) for a in records)
    if isinstance(dst, (str, os.PathLike)):
        path = Path(dst)
        _atomic_write(path, payload)
        if meta is not None:
            _atomic_write(sidecar_path(path), json.dumps(meta, indent=1, sort_keys=True) + "\n")
    else:
        if meta is not None:
            raise QmapError("sidecar metadata needs a file path")
        dst.write(payload)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_meta(path) -> dict:
    p = sidecar_path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{p}: missing metadata sidecar")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise QmapError(f"{p}: malformed sidecar ({exc})") from None


def roundtrip(arr) -> np.ndarray:
    buf = io.BytesIO()
    write_qmap(buf, arr)
    buf.seek(0)
    return read_qmap(buf)
