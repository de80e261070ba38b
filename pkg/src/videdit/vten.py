"""Reader and writer for the ``.vten`` tensor file format and parameter bundles.

Layout: ``b"VTEN"``, u32 version (1), u32 ndim, ndim x u32 dims, then the
little-endian float32 payload in row-major order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VTEN"
VERSION = 1


class VtenError(ValueError):
    pass


def write_vten(path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<II", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + a.tobytes(order="C"))


def read_vten(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise VtenError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise VtenError(f"{path}: truncated header")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise VtenError(f"{path}: unsupported version {version}")
    off = 12 + 4 * ndim
    if len(data) < off:
        raise VtenError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", data, 12)
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) - off != 4 * count:
        raise VtenError(f"{path}: payload has {len(data) - off} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def write_bundle(directory, tensors: dict[str, np.ndarray], extra: dict | None = None) -> None:
    """Write named tensors as one ``.vten`` each plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(tensors):
        fname = f"{name}.vten"
        write_vten(d / fname, tensors[name])
        entries.append({"name": name, "file": fname, "dims": list(np.shape(tensors[name]))})
    manifest = {"format": "vten-bundle", "version": VERSION, "tensors": entries}
    if extra:
        manifest["meta"] = extra
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_bundle(directory) -> tuple[dict[str, np.ndarray], dict]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    tensors = {}
    for e in manifest["tensors"]:
        a = read_vten(d / e["file"])
        if list(a.shape) != list(e["dims"]):
            raise VtenError(f"{e['file']}: dims {a.shape} disagree with manifest {e['dims']}")
        tensors[e["name"]] = a
    return tensors, manifest.get("meta", {})
