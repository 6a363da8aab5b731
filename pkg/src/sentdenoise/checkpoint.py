"""Binary checkpoint format.

Layout (little endian)::

    b"DNSC" | u32 version | u64 n | n bytes of UTF-8 "key=value" lines
    then tensor records until EOF:
    u16 name_len | name | u8 rank | u64 dims[rank] | float32 values

Optimizer moments use the same record format under ``opt.m.<name>`` and
``opt.v.<name>``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompatibleCheckpointError
from .model import ModelConfig, parameter_shapes
from .optim import OptimizerState

MAGIC = b"DNSC"
VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0
    optimizer: OptimizerState | None = None
    extra: dict[str, str] = field(default_factory=dict)
    version: int = VERSION


def _config_block(ckpt: Checkpoint) -> bytes:
    lines = [f"model.{k}={v}" for k, v in ckpt.model_config.to_dict().items()]
    lines += [f"step={ckpt.step}", f"rng.seed={ckpt.seed}"]
    if ckpt.optimizer is not None:
        lines += [f"opt.{k}={v!r}" for k, v in ckpt.optimizer.hyperparameters().items()]
    for k, v in ckpt.extra.items():
        if "\n" in str(v) or "=" in k:
            raise ValueError(f"extra entry {k!r} cannot be stored as a key=value line")
        lines.append(f"extra.{k}={v}")
    return "\n".join(lines).encode("utf-8")


def _record(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(array, dtype="<f4")
    head = struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically: a partial file is never left under ``path``."""
    block = _config_block(ckpt)
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<Q", len(block)), block]
    for name, value in ckpt.params.items():
        parts.append(_record(name, getattr(value, "data", value)))
    if ckpt.optimizer is not None:
        for kind, moments in (("m", ckpt.optimizer.m), ("v", ckpt.optimizer.v)):
            for name, value in moments.items():
                parts.append(_record(f"opt.{kind}.{name}", value))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IncompatibleCheckpointError(f"{self.path}: truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def done(self) -> bool:
        return self.pos >= len(self.buf)


def _parse_block(text: str) -> dict[str, str]:
    out = {}
    for line in text.split("\n"):
        if line:
            key, sep, value = line.partition("=")
            if not sep:
                raise IncompatibleCheckpointError(f"malformed config line {line!r}")
            out[key] = value
    return out


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise IncompatibleCheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise IncompatibleCheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (n,) = r.unpack("<Q")
    try:
        config = _parse_block(r.take(n).decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise IncompatibleCheckpointError(f"{path}: config block is not UTF-8") from exc

    tensors: dict[str, np.ndarray] = {}
    while not r.done:
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}Q")
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)
        tensors[name] = values

    model_cfg = ModelConfig.from_dict({k[6:]: v for k, v in config.items() if k.startswith("model.")})
    params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    # a file cut at a record boundary parses cleanly, so check completeness
    expected = parameter_shapes(model_cfg)
    names = list(expected)
    if int(config.get("opt.t", 0)) > 0:
        names += [f"opt.{kind}.{n}" for kind in ("m", "v") for n in expected]
    for name in names:
        base = name.split(".", 2)[2] if name.startswith("opt.") else name
        if name not in tensors:
            raise IncompatibleCheckpointError(f"{path}: missing tensor {name!r} (truncated file?)")
        if tensors[name].shape != tuple(expected[base]):
            raise IncompatibleCheckpointError(f"{path}: tensor {name!r} has dims {tensors[name].shape}, "
                                              f"expected {tuple(expected[base])}")
    optimizer = None
    if "opt.t" in config:
        optimizer = OptimizerState(
            lr=float(config["opt.lr"]), beta1=float(config["opt.beta1"]), beta2=float(config["opt.beta2"]),
            eps=float(config["opt.eps"]), weight_decay=float(config["opt.weight_decay"]), t=int(config["opt.t"]),
            m={k[6:]: v.copy() for k, v in tensors.items() if k.startswith("opt.m.")},
            v={k[6:]: v.copy() for k, v in tensors.items() if k.startswith("opt.v.")},
        )
    return Checkpoint(
        model_config=model_cfg,
        params=params,
        step=int(config.get("step", 0)),
        seed=int(config.get("rng.seed", 0)),
        optimizer=optimizer,
        extra={k[6:]: v for k, v in config.items() if k.startswith("extra.")},
        version=version,
    )
