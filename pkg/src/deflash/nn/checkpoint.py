"""Checkpoint container.

Layout::

    b"DFLSHCK1"                 8-byte magic
    uint64 (little endian)      length of the JSON manifest in bytes
    manifest (UTF-8 JSON)       {"format": 1, "meta": {...},
                                 "tensors": [{"name", "shape", "dtype",
                                              "offset", "nbytes"}, ...]}
    payload                     little-endian float32 tensors, back to back;
                                offsets are relative to the payload start

Tensor names are namespaced: ``param/<name>``, ``buffer/<name>`` and
``optim/<name>``. ``meta`` carries the network spec, optimizer scalars,
the global step and free-form training metadata.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import Network, NetworkSpec

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint",
           "write_tensors", "read_tensors", "import_encoder_weights"]

MAGIC = b"DFLSHCK1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_tensors(path, tensors: dict, meta: dict) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        blob = data.tobytes()
        entries.append({"name": name, "shape": list(data.shape), "dtype": "float32",
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"format": FORMAT_VERSION, "meta": meta, "tensors": entries},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_tensors(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    (mlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        manifest = json.loads(raw[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')}")
    payload = start + mlen
    tensors = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["nbytes"] != 4 * count or payload + e["offset"] + e["nbytes"] > len(raw):
            raise CheckpointError(f"{path}: tensor {e['name']} is truncated or inconsistent")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=payload + e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return tensors, manifest["meta"]


@dataclass
class Checkpoint:
    network: Network
    step: int = 0
    optimizer: Optional[tuple[dict, dict]] = None  # (scalars, tensors) from state_dict()
    meta: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    net = ckpt.network
    tensors = {f"param/{k}": v for k, v in net.params.items()}
    tensors.update({f"buffer/{k}": v for k, v in net.buffers.items()})
    meta = {"step": int(ckpt.step), "network": net.spec.to_dict(), "meta": ckpt.meta}
    if ckpt.optimizer is not None:
        scalars, opt_tensors = ckpt.optimizer
        meta["optimizer"] = scalars
        tensors.update({f"optim/{k}": v for k, v in opt_tensors.items()})
    write_tensors(path, tensors, meta)


def load_checkpoint(path) -> Checkpoint:
    tensors, meta = read_tensors(path)
    spec = NetworkSpec.from_dict(meta["network"])
    params, buffers, opt = {}, {}, {}
    for name, arr in tensors.items():
        group, _, key = name.partition("/")
        {"param": params, "buffer": buffers, "optim": opt}.get(group, {})[key] = arr
    expected = spec.parameter_shapes()
    for key, shape in expected.items():
        if key not in params:
            raise CheckpointError(f"{path}: missing parameter {key}")
        if tuple(params[key].shape) != tuple(shape):
            raise CheckpointError(f"{path}: {key} has shape {params[key].shape}, expected {shape}")
    extra = set(params) - set(expected)
    if extra:
        raise CheckpointError(f"{path}: unexpected parameters {sorted(extra)[:5]}")
    for key, shape in spec.buffer_shapes().items():
        buffers.setdefault(key, np.ones(shape, np.float32) if key.endswith("var") else np.zeros(shape, np.float32))
    net = Network(spec, params, buffers)
    optimizer = (meta["optimizer"], opt) if "optimizer" in meta else None
    return Checkpoint(net, int(meta.get("step", 0)), optimizer, meta.get("meta", {}))


def import_encoder_weights(net: Network, path) -> list[str]:
    """Copy ``enc*`` parameters from a checkpoint-format file into ``net``.

    Used to start from pretrained encoder weights. Returns the imported names;
    a shape disagreement is an error.
    """
    tensors, _ = read_tensors(path)
    imported = []
    for name, arr in tensors.items():
        key = name[len("param/"):] if name.startswith("param/") else name
        if not key.startswith("enc"):
            continue
        if key not in net.params:
            raise CheckpointError(f"{path}: {key} does not exist in this network")
        if net.params[key].shape != arr.shape:
            raise CheckpointError(f"{path}: {key} has shape {arr.shape}, network expects {net.params[key].shape}")
        net.params[key] = arr.astype(net.params[key].dtype)
        imported.append(key)
    return imported
