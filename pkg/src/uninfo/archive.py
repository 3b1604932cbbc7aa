"""Tensor archive: a directory of raw binary blobs plus a JSON manifest.

``manifest.json`` maps tensor name -> {dtype, shape, file, byte_offset};
blobs are little-endian, row-major, with no framing. Used for stem
weights, adapter checkpoints, prototype banks, cached corrupted batches,
and imported full-scale embeddings. Extra context (class names, cache
provenance) goes in JSON sidecar files next to the manifest.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch

from .errors import IoError

MANIFEST_NAME = "manifest.json"
_BLOB_NAME = "tensors.bin"

_DTYPES: dict[str, np.dtype] = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i32": np.dtype("<i4"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("u1"),
}
_TORCH_TO_TAG = {
    torch.float32: "f32",
    torch.float64: "f64",
    torch.int32: "i32",
    torch.int64: "i64",
    torch.uint8: "u8",
}


def write_archive(
    path: str | os.PathLike,
    tensors: dict[str, torch.Tensor],
    sidecars: dict[str, object] | None = None,
) -> None:
    """Write ``tensors`` to ``path``, replacing any previous archive.

    Files are written to temporaries first and renamed into place so a
    crash never leaves a manifest pointing at truncated blobs.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, dict] = {}
    offset = 0
    blob_tmp = root / (_BLOB_NAME + ".tmp")
    with open(blob_tmp, "wb") as fh:
        for name in sorted(tensors):
            t = tensors[name].detach().cpu().contiguous()
            if t.dtype not in _TORCH_TO_TAG:
                raise ValueError(f"unsupported dtype {t.dtype} for tensor {name!r}")
            tag = _TORCH_TO_TAG[t.dtype]
            arr = np.ascontiguousarray(t.numpy()).astype(_DTYPES[tag], copy=False)
            raw = arr.tobytes()
            fh.write(raw)
            manifest[name] = {
                "dtype": tag,
                "shape": list(t.shape),
                "file": _BLOB_NAME,
                "byte_offset": offset,
            }
            offset += len(raw)
    os.replace(blob_tmp, root / _BLOB_NAME)
    _write_json_atomic(root / MANIFEST_NAME, manifest)
    for name, payload in (sidecars or {}).items():
        _write_json_atomic(root / name, payload)


def _write_json_atomic(path: Path, payload: object) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_manifest(path: str | os.PathLike) -> dict[str, dict]:
    manifest_path = Path(path) / MANIFEST_NAME
    if not manifest_path.is_file():
        raise IoError(f"no tensor archive at {Path(path)} (missing {MANIFEST_NAME})")
    return json.loads(manifest_path.read_text())


def read_archive(path: str | os.PathLike) -> dict[str, torch.Tensor]:
    """Load every tensor in the archive as CPU tensors."""
    root = Path(path)
    manifest = read_manifest(root)
    out: dict[str, torch.Tensor] = {}
    blobs: dict[str, bytes] = {}
    for name, entry in manifest.items():
        tag = entry["dtype"]
        if tag not in _DTYPES:
            raise IoError(f"tensor {name!r} has unknown dtype tag {tag!r}")
        fname = entry["file"]
        if fname not in blobs:
            fpath = root / fname
            if not fpath.is_file():
                raise IoError(f"archive blob missing: {fpath}")
            blobs[fname] = fpath.read_bytes()
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            blobs[fname], dtype=_DTYPES[tag], count=count, offset=int(entry["byte_offset"])
        ).reshape(shape)
        out[name] = torch.from_numpy(arr.copy())
    return out


def read_sidecar(path: str | os.PathLike, name: str) -> object:
    fpath = Path(path) / name
    if not fpath.is_file():
        raise IoError(f"missing sidecar {fpath}")
    return json.loads(fpath.read_text())
