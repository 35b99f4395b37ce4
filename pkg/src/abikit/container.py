"""Single-file array container.

Layout (all integers little-endian)::

    b"ABIC" | u16 version | u64 manifest length | manifest (UTF-8 JSON) | payload

The manifest lists entries as ``{name, dtype, shape, offset, length}`` where
``offset`` is an absolute file offset, a multiple of 64. Payload values are
raw little-endian IEEE-754 (or integer/bool) bytes in row-major order.
"""

from __future__ import annotations

import json
import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"ABIC"
VERSION = 1
ALIGN = 64
_HEADER = struct.Struct("<4sHQ")
DTYPES = {"f4": "<f4", "f8": "<f8", "i4": "<i4", "i8": "<i8", "u1": "|u1", "b1": "|b1"}
_CODES = {np.dtype(v): k for k, v in DTYPES.items()}


class ContainerError(ValueError):
    """Malformed, truncated or unsupported container file."""


def _code(arr: np.ndarray) -> str:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    try:
        return _CODES[np.dtype(dt)]
    except KeyError:
        raise ContainerError(f"unsupported dtype {arr.dtype}") from None


def _aligned(n: int) -> int:
    return -(-n // ALIGN) * ALIGN


def encode(arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serialise named arrays; entry order follows the mapping order."""
    items = []
    for name, value in arrays.items():
        arr = np.asarray(value)
        if arr.dtype == np.float16 or arr.dtype.kind == "f" and arr.dtype.itemsize not in (4, 8):
            raise ContainerError(f"unsupported dtype {arr.dtype} for {name!r}")
        if arr.dtype.kind in "iu" and arr.dtype not in (np.dtype("<i4"), np.dtype("<i8"), np.dtype("u1")):
            arr = arr.astype("<i8")
        code = _code(arr)
        items.append((name, code, arr.shape, np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()))
    if len({n for n, *_ in items}) != len(items):
        raise ContainerError("duplicate entry names")

    # offsets depend on the manifest length, which depends on the offsets; iterate to a fixed point
    base = 0
    while True:
        entries, offset = [], _aligned(base)
        for name, code, shape, raw in items:
            entries.append({"name": name, "dtype": code, "shape": list(shape), "offset": offset, "length": len(raw)})
            offset = _aligned(offset + len(raw))
        manifest = json.dumps({"entries": entries}, separators=(",", ":")).encode("utf-8")
        needed = _HEADER.size + len(manifest)
        if _aligned(needed) == _aligned(base) and base >= needed:
            break
        base = needed
    out = bytearray(_HEADER.pack(MAGIC, VERSION, len(manifest)) + manifest)
    for entry, (_, _, _, raw) in zip(entries, items):
        out.extend(b"\0" * (entry["offset"] - len(out)))
        out.extend(raw)
    return bytes(out)


def write(path, arrays: Mapping[str, np.ndarray]) -> None:
    data = encode(arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read_manifest(fh: BinaryIO, size: int) -> list[dict]:
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ContainerError("truncated header")
    magic, version, mlen = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version > VERSION:
        raise ContainerError(f"container version {version} is newer than supported version {VERSION}")
    if version < 1:
        raise ContainerError(f"unsupported container version {version}")
    if _HEADER.size + mlen > size:
        raise ContainerError("truncated manifest")
    try:
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        entries = manifest["entries"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ContainerError(f"corrupt manifest: {e}") from e
    end = _HEADER.size + mlen
    spans = []
    for e in entries:
        if set(e) != {"name", "dtype", "shape", "offset", "length"} or e["dtype"] not in DTYPES:
            raise ContainerError(f"corrupt manifest entry {e!r}")
        expected = int(np.prod(e["shape"], dtype=np.int64)) * np.dtype(DTYPES[e["dtype"]]).itemsize
        if e["length"] != expected or e["offset"] % ALIGN or e["offset"] < end:
            raise ContainerError(f"inconsistent entry {e['name']!r}")
        if e["offset"] + e["length"] > size:
            raise ContainerError(f"truncated payload for entry {e['name']!r}")
        spans.append((e["offset"], e["offset"] + e["length"]))
    spans.sort()
    if any(b0 < a1 for (_, a1), (b0, _) in zip(spans, spans[1:])):
        raise ContainerError("overlapping entries")
    return entries


def _decode(fh: BinaryIO, entry: dict) -> np.ndarray:
    fh.seek(entry["offset"])
    raw = fh.read(entry["length"])
    return np.frombuffer(raw, dtype=DTYPES[entry["dtype"]]).reshape(entry["shape"]).copy()


def manifest(path) -> list[dict]:
    with open(path, "rb") as fh:
        return _read_manifest(fh, os.fstat(fh.fileno()).st_size)


def read(path) -> dict[str, np.ndarray]:
    """All entries, validated in full before any array is returned."""
    with open(path, "rb") as fh:
        entries = _read_manifest(fh, os.fstat(fh.fileno()).st_size)
        return {e["name"]: _decode(fh, e) for e in entries}


def read_entry(path, name: str) -> np.ndarray:
    """Random access to one entry through its manifest offset."""
    with open(path, "rb") as fh:
        for e in _read_manifest(fh, os.fstat(fh.fileno()).st_size):
            if e["name"] == name:
                return _decode(fh, e)
    raise KeyError(name)


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def json_entry(obj) -> np.ndarray:
    """Encode a JSON document as a ``u1`` entry."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_plain)
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8)


def parse_json_entry(arr: np.ndarray):
    try:
        return json.loads(np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"corrupt JSON entry: {e}") from e
