"""Binary checkpoint files.

Layout (all integers little-endian)::

    magic      8 bytes  b"AVOCKPT\\x00"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 "key = value" lines
    n_tensors  u32
    n_tensors x entry:
        name_len u16, name (UTF-8)
        dtype    u8   (1 = float32, 2 = float64)
        rank     u8, then rank x u32 extents
        payload  row-major little-endian values
    trailer    b"END!" + u32 CRC-32 of every preceding byte

Tensor names are prefixed ``param/``, ``adagrad/`` or ``best/``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from attnvo import config as kv
from attnvo.data.images import ChannelStats
from attnvo.nn.model import ParameterSet, parameter_shapes
from attnvo.training.config import TrainConfig
from attnvo.training.optim import OptimizerState

MAGIC = b"AVOCKPT\x00"
VERSION = 1
TRAILER = b"END!"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    params: ParameterSet
    optimizer: OptimizerState
    epoch: int = 0
    best_loss: float = float("inf")
    stats: ChannelStats = field(default_factory=ChannelStats.identity)
    stale_epochs: int = 0
    rng_state: dict = field(default_factory=dict)
    best_params: ParameterSet | None = None


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    dt = np.dtype(arr.dtype)
    if dt not in _TAGS:
        raise CheckpointError(f"{name}: unsupported dtype {dt}")
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", _TAGS[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt.newbyteorder("<")).tobytes()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {f"config.{k}": v for k, v in kv.flatten(ckpt.config).items()}
    meta.update(
        {
            "epoch": str(ckpt.epoch),
            "best_loss": repr(float(ckpt.best_loss)),
            "stale_epochs": str(ckpt.stale_epochs),
            "rng_state": json.dumps(ckpt.rng_state, sort_keys=True),
            "stats.mean": ", ".join(repr(float(v)) for v in ckpt.stats.mean),
            "stats.std": ", ".join(repr(float(v)) for v in ckpt.stats.std),
            "optimizer.epsilon": repr(float(ckpt.optimizer.epsilon)),
            "optimizer.steps": str(ckpt.optimizer.steps),
        }
    )
    meta_bytes = "".join(f"{k} = {v}\n" for k, v in meta.items()).encode()
    tensors = [(f"param/{n}", a) for n, a in ckpt.params.tensors.items()]
    tensors += [(f"adagrad/{n}", a) for n, a in ckpt.optimizer.accumulators.items()]
    if ckpt.best_params is not None:
        tensors += [(f"best/{n}", a) for n, a in ckpt.best_params.tensors.items()]
    body = bytearray(MAGIC)
    body += struct.pack("<I", VERSION)
    body += struct.pack("<I", len(meta_bytes)) + meta_bytes
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        body += _encode_tensor(name, arr)
    body += TRAILER
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(body))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    (meta_len,) = r.unpack("<I")
    meta = kv.parse_text(r.take(meta_len).decode())
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        tag, rank = r.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        dt = _DTYPES[tag]
        raw = r.take(int(np.prod(shape)) * dt.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    end = r.pos
    if r.take(4) != TRAILER:
        raise CheckpointError(f"{path}: missing end marker")
    (crc,) = r.unpack("<I")
    if crc != zlib.crc32(buf[: end + 4]):
        raise CheckpointError(f"{path}: checksum mismatch")
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes")

    cfg_values = {k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")}
    cfg = kv.apply(TrainConfig(), cfg_values)
    shapes = parameter_shapes(cfg.model)

    def group(prefix: str, names) -> dict[str, np.ndarray]:
        out = {}
        for n in names:
            key = f"{prefix}/{n}"
            if key not in tensors:
                raise CheckpointError(f"{path}: missing tensor {key}")
            if tensors[key].shape != shapes[n]:
                raise CheckpointError(
                    f"{path}: {key} has shape {tensors[key].shape}, config implies {shapes[n]}"
                )
            out[n] = tensors[key]
        return out

    params = ParameterSet(cfg.model, group("param", shapes))
    trainable = params.trainable()
    acc = group("adagrad", trainable) if any(k.startswith("adagrad/") for k in tensors) else {}
    best = None
    if any(k.startswith("best/") for k in tensors):
        best = ParameterSet(cfg.model, group("best", shapes))
    opt = OptimizerState(acc, float(meta["optimizer.epsilon"]), int(meta["optimizer.steps"]))
    stats = ChannelStats(
        [float(v) for v in meta["stats.mean"].split(",")],
        [float(v) for v in meta["stats.std"].split(",")],
    )
    return Checkpoint(
        config=cfg,
        params=params,
        optimizer=opt,
        epoch=int(meta["epoch"]),
        best_loss=float(meta["best_loss"]),
        stats=stats,
        stale_epochs=int(meta["stale_epochs"]),
        rng_state=json.loads(meta["rng_state"]),
        best_params=best,
    )
