"""Checkpoint files: text manifest plus raw little-endian float32 payload.

The manifest echoes the model configuration and optimizer hyperparameters
as one JSON line, then lists every tensor with its shape and byte length;
the payload is the concatenation of the listed buffers in order. Reading
back a checkpoint written from the same state is bitwise exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .model import ModelConfig, YNetr
from .optim import AdamW

MAGIC = "ynetr-checkpoint 1"


class CheckpointError(Exception):
    pass


class ConfigMismatchError(CheckpointError):
    """Checkpoint was produced by a differently configured model."""


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    known = {f for f in ModelConfig.__dataclass_fields__}
    unknown = set(d) - known
    if unknown:
        raise CheckpointError(f"unknown model config keys: {sorted(unknown)}")
    return ModelConfig(**d)


@dataclass
class Checkpoint:
    meta: dict
    arrays: dict


def save_checkpoint(path, model: YNetr, optimizer: AdamW | None = None, step: int = 0,
                    extra: dict | None = None):
    entries = [(f"param:{name}", p.data) for name, p in model.named_parameters()]
    opt_meta = None
    if optimizer is not None:
        state = optimizer.state_arrays()
        entries += [(f"adamw.m:{i}", m) for i, m in enumerate(state["m"])]
        entries += [(f"adamw.v:{i}", v) for i, v in enumerate(state["v"])]
        opt_meta = {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "weight_decay": optimizer.weight_decay,
            "t": state["t"],
        }
    meta = {
        "step": int(step),
        "model_config": model_config_to_dict(model.cfg),
        "optimizer": opt_meta,
        "extra": extra or {},
    }
    lines = [MAGIC, "meta " + json.dumps(meta, sort_keys=True)]
    for name, arr in entries:
        shape = " ".join(str(n) for n in arr.shape)
        lines.append(f"tensor {name} {arr.ndim} {shape} {arr.nbytes}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0 or raw[:nl].decode("ascii", "replace") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = nl + 1
    meta = None
    directory = []
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError(f"{path}: manifest not terminated")
        line = raw[pos:nl].decode("ascii")
        pos = nl + 1
        if line == "end":
            break
        if line.startswith("meta "):
            meta = json.loads(line[5:])
        elif line.startswith("tensor "):
            parts = line.split()
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(x) for x in parts[3 : 3 + ndim])
            nbytes = int(parts[3 + ndim])
            directory.append((name, shape, nbytes))
        else:
            raise CheckpointError(f"{path}: unexpected manifest line {line!r}")
    if meta is None:
        raise CheckpointError(f"{path}: manifest has no meta line")
    arrays = {}
    for name, shape, nbytes in directory:
        chunk = raw[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload at tensor {name}")
        arrays[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes after payload")
    return Checkpoint(meta=meta, arrays=arrays)


def restore_model(ckpt: Checkpoint) -> YNetr:
    """Build a model from the stored config and load its parameters."""
    model = YNetr(model_config_from_dict(ckpt.meta["model_config"]))
    load_into(model, ckpt)
    return model


def load_into(model: YNetr, ckpt: Checkpoint):
    stored = ckpt.meta["model_config"]
    current = model_config_to_dict(model.cfg)
    if _normalize(stored) != _normalize(current):
        raise ConfigMismatchError(
            "checkpoint model config does not match the target model"
        )
    for name, p in model.named_parameters():
        key = f"param:{name}"
        if key not in ckpt.arrays:
            raise ConfigMismatchError(f"checkpoint is missing parameter {name}")
        arr = ckpt.arrays[key]
        if arr.shape != p.data.shape:
            raise ConfigMismatchError(
                f"parameter {name}: checkpoint shape {arr.shape} vs model {p.data.shape}"
            )
        p.data[...] = arr


def restore_optimizer(optimizer: AdamW, ckpt: Checkpoint):
    opt_meta = ckpt.meta.get("optimizer")
    if opt_meta is None:
        raise CheckpointError("checkpoint carries no optimizer state")
    n = len(optimizer.params)
    try:
        m = [ckpt.arrays[f"adamw.m:{i}"] for i in range(n)]
        v = [ckpt.arrays[f"adamw.v:{i}"] for i in range(n)]
    except KeyError as exc:
        raise CheckpointError(f"optimizer state incomplete: {exc}") from exc
    optimizer.load_state_arrays({"m": m, "v": v, "t": opt_meta["t"]})
    optimizer.lr = float(opt_meta["lr"])
    optimizer.beta1 = float(opt_meta["beta1"])
    optimizer.beta2 = float(opt_meta["beta2"])
    optimizer.eps = float(opt_meta["eps"])
    optimizer.weight_decay = float(opt_meta["weight_decay"])


def _normalize(d):
    return json.loads(json.dumps(d, sort_keys=True))
