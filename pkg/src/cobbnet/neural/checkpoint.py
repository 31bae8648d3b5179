"""Binary checkpoint files.

Layout::

    b"CBNCKPT\\0"          8-byte magic
    uint32 LE             format version
    uint32 LE             manifest length in bytes
    manifest              UTF-8 JSON (sorted keys)
    payload               float64 LE, tensors concatenated in manifest order

The manifest records the network description and, for every tensor, its
name and shape.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import Network

MAGIC = b"CBNCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(net: Network, extra: dict | None = None) -> bytes:
    tensors = [("param", k, v) for k, v in net.parameters().items()]
    tensors += [("buffer", k, v) for k, v in net.buffers().items()]
    manifest = {
        "input_shape": list(net.input_shape),
        "layers": net.layer_configs(),
        "branch_at": net.branch_at,
        "seed": net.seed,
        "tensors": [{"kind": kind, "name": k, "shape": list(v.shape)} for kind, k, v in tensors],
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, _, v in tensors)
    return MAGIC + struct.pack("<II", VERSION, len(head)) + head + payload


def loads(blob: bytes) -> tuple[Network, dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < 16:
        raise CheckpointError("truncated header")
    version, mlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        manifest = json.loads(blob[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    net = Network.from_config(manifest["layers"], manifest["input_shape"], manifest["seed"],
                              manifest["branch_at"])
    targets = {"param": net.parameters(), "buffer": net.buffers()}
    offset = 16 + mlen
    for t in manifest["tensors"]:
        dest = targets[t["kind"]].get(t["name"])
        if dest is None or list(dest.shape) != t["shape"]:
            raise CheckpointError(f"tensor {t['name']} does not match the network")
        nbytes = dest.size * 8
        if offset + nbytes > len(blob):
            raise CheckpointError("truncated payload")
        dest[...] = np.frombuffer(blob, dtype="<f8", count=dest.size, offset=offset).reshape(dest.shape)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError("trailing bytes after payload")
    return net, manifest["extra"]


def save(path, net: Network, extra: dict | None = None) -> None:
    Path(path).write_bytes(dumps(net, extra))


def load(path) -> tuple[Network, dict]:
    return loads(Path(path).read_bytes())
