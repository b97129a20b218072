"""Checkpoint directories: a JSON `manifest` plus raw `weights.bin`.

The manifest carries arbitrary metadata plus a tensor index (name, shape,
byte offset, byte length, in file order); weights.bin concatenates the
arrays as little-endian IEEE-754 float32 in that order.  Writing is fully
deterministic so identical states produce identical bytes.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError

MANIFEST_NAME = "manifest"
WEIGHTS_NAME = "weights.bin"


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    os.makedirs(path, exist_ok=True)
    index = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = dict(meta)
    manifest["tensors"] = index
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    with open(os.path.join(path, WEIGHTS_NAME), "wb") as fh:
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    weights_path = os.path.join(path, WEIGHTS_NAME)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        raw = open(weights_path, "rb").read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: malformed manifest: {exc}") from exc
    tensors = {}
    for entry in manifest.pop("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(raw):
            raise DataError(f"{weights_path}: tensor {name!r} exceeds file size")
        flat = np.frombuffer(raw[start:start + nbytes], dtype="<f4")
        if flat.size != int(np.prod(shape)):
            raise DataError(f"{weights_path}: tensor {name!r} size/shape mismatch")
        tensors[name] = flat.reshape(shape).copy()
    return manifest, tensors
