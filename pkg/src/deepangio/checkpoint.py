"""Versioned binary checkpoints.

Layout::

    b"DANG" | u32 version | u64 header length | UTF-8 JSON header | payload

The header lists networks (role, config, tensor names and shapes), the
training epoch, a JSON-serializable ``state`` dict and any extra named
arrays (optimizer moments). The payload is every tensor, in header order, as
little-endian float32 in row-major order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nets import Network, NetworkConfig

MAGIC = b"DANG"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    nets: dict
    epoch: int = 0
    state: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)


def save_checkpoint(path, nets: dict, epoch: int = 0, state: dict | None = None,
                    arrays: dict | None = None) -> None:
    """Write ``nets`` (name -> Network) atomically; an existing file survives a failed write."""
    arrays = arrays or {}
    header = {
        "networks": [
            {
                "name": name,
                "role": net.role,
                "config": net.config.to_dict(),
                "tensors": [{"name": k, "shape": list(p.shape)} for k, p in net.params.items()],
            }
            for name, net in nets.items()
        ],
        "epoch": int(epoch),
        "state": state or {},
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for net in nets.values():
            for p in net.params.values():
                fh.write(np.ascontiguousarray(p.data, dtype=_F32).tobytes())
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype=_F32).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short ({len(raw)} bytes) for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} (reader supports {VERSION})")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

    offset = start + hlen

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape, dtype=np.int64)) * _F32.itemsize
        if offset + n > len(raw):
            raise CheckpointError(f"{path}: truncated payload at byte {offset} (need {n} more)")
        arr = np.frombuffer(raw, dtype=_F32, count=n // _F32.itemsize, offset=offset).reshape(shape)
        offset += n
        return arr.astype(np.float32)

    nets = {}
    for entry in header["networks"]:
        net = Network(NetworkConfig.from_dict(entry["config"]), entry["role"])
        state = {t["name"]: take(tuple(t["shape"])) for t in entry["tensors"]}
        try:
            net.load_state_dict(state)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}: network {entry['name']!r} does not match its config: {exc}") from exc
        nets[entry["name"]] = net
    arrays = {a["name"]: take(tuple(a["shape"])) for a in header["arrays"]}
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return Checkpoint(nets=nets, epoch=header["epoch"], state=header["state"], arrays=arrays)
