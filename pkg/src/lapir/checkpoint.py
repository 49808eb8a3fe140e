"""Binary checkpoint format.

Layout (all integers little-endian u32):

    magic  b"LIRS"
    version
    config block: byte length, then that many UTF-8 bytes of sorted
        "key=value" lines
    tensor records until end of file:
        name length, name bytes (UTF-8),
        ndim, one u32 per dimension,
        float32 element data in C order

Tensor payloads are float32, so saving quantizes; in-memory training
state is rounded to float32 at every epoch boundary precisely so that a
save/load cycle is bit-exact. load(save(x)) and save(load(p)) are
byte-identical. Parse errors report the byte offset at fault.
"""

from __future__ import annotations

import dataclasses
import os
import struct
from dataclasses import dataclass

import numpy as np

from .network import Network, NetworkConfig

MAGIC = b"LIRS"
VERSION = 1


@dataclass
class Checkpoint:
    meta: dict[str, str]
    tensors: dict[str, np.ndarray]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    lines = []
    for key in sorted(ckpt.meta):
        value = ckpt.meta[key]
        if "=" in key or "\n" in key:
            raise ValueError(f"invalid meta key {key!r}")
        if "\n" in value:
            raise ValueError(f"meta value for {key!r} contains a newline")
        lines.append(f"{key}={value}\n")
    config = "".join(lines).encode("utf-8")
    blob += struct.pack("<I", len(config))
    blob += config
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", data.ndim)
        for dim in data.shape:
            blob += struct.pack("<I", dim)
        blob += data.tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, count: int, what: str) -> bytes:
        if self.off + count > len(self.blob):
            raise ValueError(
                f"{self.path}: truncated {what} at byte {self.off}: "
                f"need {count} bytes, {len(self.blob) - self.off} remain")
        out = self.blob[self.off:self.off + count]
        self.off += count
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version} at byte 4")
    config_len = r.u32("config length")
    config = r.take(config_len, "config block").decode("utf-8")
    meta: dict[str, str] = {}
    for lineno, line in enumerate(config.splitlines(), 1):
        key, sep, value = line.partition("=")
        if not sep or not key:
            raise ValueError(f"{path}: malformed config line {lineno}: {line!r}")
        if key in meta:
            raise ValueError(f"{path}: duplicate config key {key!r}")
        meta[key] = value
    tensors: dict[str, np.ndarray] = {}
    while r.off < len(blob):
        at = r.off
        name = r.take(r.u32("tensor name length"), "tensor name").decode("utf-8")
        if name in tensors:
            raise ValueError(f"{path}: duplicate tensor {name!r} at byte {at}")
        ndim = r.u32(f"rank of {name!r}")
        shape = tuple(r.u32(f"dimension of {name!r}") for _ in range(ndim))
        count = 1
        for dim in shape:
            count *= dim
        raw = r.take(4 * count, f"data of tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Checkpoint(meta=meta, tensors=tensors)


def config_meta(cfg: NetworkConfig) -> dict[str, str]:
    meta = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "level_weights":
            meta[f"network.{f.name}"] = ",".join(repr(v) for v in value)
        else:
            meta[f"network.{f.name}"] = repr(value)
    return meta


def config_from_meta(meta: dict[str, str]) -> NetworkConfig:
    kwargs = {}
    for f in dataclasses.fields(NetworkConfig):
        key = f"network.{f.name}"
        if key not in meta:
            raise ValueError(f"checkpoint config is missing {key!r}")
        raw = meta[key]
        if f.name == "level_weights":
            kwargs[f.name] = tuple(float(v) for v in raw.split(",")) if raw else ()
        elif f.type == "int" or isinstance(getattr(NetworkConfig, f.name), int):
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = float(raw)
    return NetworkConfig(**kwargs)


def network_checkpoint(net: Network, extra_meta: dict[str, str] | None = None,
                       optimizer=None) -> Checkpoint:
    """Snapshot parameters, running statistics and (optionally) optimizer
    accumulators under `optim.<kind>.<param>` names."""
    meta = config_meta(net.cfg)
    if extra_meta:
        meta.update(extra_meta)
    tensors: dict[str, np.ndarray] = {}
    for name, t in net.store.params.items():
        tensors[name] = t.data.astype(np.float32)
    for name, buf in net.store.buffers.items():
        tensors[name] = buf.astype(np.float32)
    if optimizer is not None:
        for name, arr in optimizer.state.items():
            tensors[f"optim.{optimizer.kind}.{name}"] = arr.astype(np.float32)
    return Checkpoint(meta=meta, tensors=tensors)


def restore_network(net: Network, ckpt: Checkpoint) -> dict[str, np.ndarray]:
    """Copy checkpoint tensors into the network in place.

    Every parameter and buffer must be present with its exact shape.
    Returns the leftover `optim.*` tensors (empty when the checkpoint
    carries no optimizer state); any other unknown tensor is an error.
    """
    seen = set()
    for name, t in net.store.params.items():
        if name not in ckpt.tensors:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        arr = ckpt.tensors[name]
        if arr.shape != t.data.shape:
            raise ValueError(
                f"parameter {name!r} has shape {arr.shape}, expected {t.data.shape}")
        t.data = arr.astype(np.float64)
        seen.add(name)
    for name, buf in net.store.buffers.items():
        if name not in ckpt.tensors:
            raise ValueError(f"checkpoint is missing buffer {name!r}")
        arr = ckpt.tensors[name]
        if arr.shape != buf.shape:
            raise ValueError(
                f"buffer {name!r} has shape {arr.shape}, expected {buf.shape}")
        buf[...] = arr.astype(np.float64)
        seen.add(name)
    leftovers = {}
    for name, arr in ckpt.tensors.items():
        if name in seen:
            continue
        if name.startswith("optim."):
            leftovers[name] = arr
        else:
            raise ValueError(f"checkpoint has unknown tensor {name!r}")
    return leftovers


def restore_optimizer(opt, leftovers: dict[str, np.ndarray]) -> None:
    prefix = f"optim.{opt.kind}."
    for name, arr in opt.state.items():
        key = prefix + name
        if key not in leftovers:
            raise ValueError(f"checkpoint is missing optimizer state {key!r}")
        if leftovers[key].shape != arr.shape:
            raise ValueError(f"optimizer state {key!r} has shape "
                             f"{leftovers[key].shape}, expected {arr.shape}")
        arr[...] = leftovers[key].astype(np.float64)
