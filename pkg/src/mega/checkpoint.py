"""On-disk tensor directories: manifest.json plus packed float32 weights.

A checkpoint directory holds `manifest.json` (format version, tensor
names/shapes/byte offsets, and arbitrary metadata) and `weights.bin`
(the tensors concatenated as little-endian float32 in manifest order).
Round-trips are bit-exact. Models, adapters, and weight snapshots all
reuse the same layout with different metadata.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .model import BaseModel, ModelConfig
from .tensor import Tensor
from .util import MissingArtifactError

FORMAT_VERSION = 1


def write_tensor_dir(path, named: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name, arr in named.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        blob = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "numel": int(arr.size)}
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {"format_version": FORMAT_VERSION, "tensors": entries, "meta": meta or {}}
    (path / "weights.bin").write_bytes(b"".join(blobs))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def read_tensor_dir(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise MissingArtifactError(f"no manifest.json under {path}")
    manifest = json.loads(mpath.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version}")
    raw = (path / "weights.bin").read_bytes()
    named = {}
    for entry in manifest["tensors"]:
        n = entry["numel"]
        start = entry["offset"]
        flat = np.frombuffer(raw, dtype="<f4", count=n, offset=start)
        named[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float32)
    return named, manifest.get("meta", {})


def save_model(path, model: BaseModel, extra_meta: dict | None = None) -> None:
    meta = {"kind": "base_model", "config": model.config.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    named = dict(model.param_arrays())
    if model.embed_stats is not None:
        for k, v in model.embed_stats.items():
            named[f"embed_stats.{k}"] = v
    write_tensor_dir(path, named, meta)


def load_model(path) -> BaseModel:
    """Load a model checkpoint; the result comes back frozen."""
    named, meta = read_tensor_dir(path)
    if meta.get("kind") != "base_model":
        raise ValueError(f"{path} is not a model checkpoint (kind={meta.get('kind')!r})")
    config = ModelConfig(**meta["config"])
    stats = {
        k.split(".", 1)[1]: v for k, v in named.items() if k.startswith("embed_stats.")
    }
    params = {
        k: Tensor(v) for k, v in named.items() if not k.startswith("embed_stats.")
    }
    model = BaseModel(config=config, params=params, embed_stats=stats or None)
    return model.freeze()


def tensors_checksum(named: dict[str, np.ndarray]) -> str:
    """Order-sensitive digest of names and exact float bytes."""
    h = hashlib.sha256()
    for name, arr in named.items():
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()


def model_checksum(model: BaseModel) -> str:
    return tensors_checksum(model.param_arrays())
