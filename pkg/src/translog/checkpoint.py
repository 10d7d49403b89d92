"""``model.ckpt`` reading and writing.

Layout: the 8-byte magic ``LOGCKPT1``, one JSON header line, then every
parameter's float32 payload (little-endian, row-major) in header order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, TransLog

MAGIC = b"LOGCKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: dict[str, Tensor], trainable: dict[str, bool],
                    **header: Any) -> None:
    names = list(params)
    head = dict(header)
    head["names"] = names
    head["shapes"] = [list(params[n].shape) for n in names]
    head["trainable"] = [bool(trainable.get(n, False)) for n in names]
    line = json.dumps(head, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(line)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    nl = raw.find(b"\n", 8)
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[8:nl])
    offset = nl + 1
    params: dict[str, Tensor] = {}
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {name}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float32)
        params[name] = Tensor(arr.reshape(shape))
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return params, header


def params_digest(params: dict[str, Tensor], names=None) -> str:
    """sha256 over names and raw bytes of the selected parameters."""
    h = hashlib.sha256()
    for n in sorted(params if names is None else names):
        h.update(n.encode())
        h.update(np.ascontiguousarray(params[n].data, dtype="<f4").tobytes())
    return h.hexdigest()


def save_model(path: str | Path, model: TransLog, seed: int = 0, step: int = 0, **extra: Any) -> None:
    trainable = {n: n in set(model.trainable_names()) for n in model.params}
    save_checkpoint(path, model.params, trainable, config=model.config.to_dict(),
                    mode=model.mode, backbone_hash=model.config.backbone_hash(),
                    seed=seed, step=step, **extra)


def load_model(path: str | Path, mode: str | None = None) -> tuple[TransLog, dict[str, Any]]:
    """Rebuild a ``TransLog`` from ``path``; returns (model, header)."""
    params, header = load_checkpoint(path)
    config = ModelConfig(**header["config"])
    if header.get("backbone_hash") not in (None, config.backbone_hash()):
        raise CheckpointError(f"{path}: header hash does not match its own config")
    return TransLog(config, params, mode or header.get("mode", "scratch")), header
