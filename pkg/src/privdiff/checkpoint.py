"""Versioned checkpoint container: a JSON manifest followed by little-endian array data.

Layout::

    PRIVDIFF-CKPT\\n
    <manifest byte length>\\n
    <manifest JSON, sorted keys>\\n
    <array bytes, concatenated in manifest order>

Each manifest array entry records name, dtype (``<f4``/``<f8``/``<i8``), shape
and byte offset into the data section. Identical state gives identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"PRIVDIFF-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _le(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def dumps(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, a in arrays.items():
        a = _le(np.asarray(a))
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "meta": meta, "arrays": entries}
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + str(len(text)).encode() + b"\n" + text + b"\n" + b"".join(blobs)


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    rest = data[len(MAGIC):]
    nl = rest.index(b"\n")
    n = int(rest[:nl])
    manifest = json.loads(rest[nl + 1:nl + 1 + n].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {manifest.get('format_version')} "
                              f"!= supported {FORMAT_VERSION}")
    body = rest[nl + 1 + n + 1:]
    arrays = {}
    for e in manifest["arrays"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        if count == 0:
            arrays[e["name"]] = np.zeros(e["shape"], dtype=dt.newbyteorder("="))
            continue
        a = np.frombuffer(body, dtype=dt, count=count, offset=e["offset"]).reshape(e["shape"])
        arrays[e["name"]] = a.astype(dt.newbyteorder("="), copy=True)
    return manifest["meta"], arrays


def save(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(meta, arrays))


def load(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
