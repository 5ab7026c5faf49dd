"""Binary checkpoint format.

Layout (all little-endian):
    magic "USPC" | u32 version=1 | u32 config length | config text (utf-8)
    | u64 step counter | u64 tensor count
    | per tensor: u32 name length | name bytes | u32 rank | u64 dims... | f64 data

Parameters, optimizer moments and codebook counters all travel as named
tensors; a round trip is bitwise lossless.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import FormatError
from .model import JointModel
from .optim import AdamState

MAGIC = b"USPC"
VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config_text: str
    step: int
    tensors: dict[str, np.ndarray]


def _write_tensor(fh, name: str, array: np.ndarray) -> None:
    data = np.asarray(array, dtype=np.float64)
    if not data.flags["C_CONTIGUOUS"]:
        data = np.ascontiguousarray(data)  # keeps 0-d tensors rank 0
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", data.ndim))
    for dim in data.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(data.astype("<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def save_checkpoint(path, model: JointModel, opt: AdamState | None,
                    train_config, step: int) -> None:
    tensors: dict[str, np.ndarray] = {name: p.data for name, p in model.store.items()}
    tensors["codebook.usage"] = model.codebook.usage.astype(np.float64)
    tensors["codebook.steps_since_use"] = model.codebook.steps_since_use.astype(np.float64)
    if opt is not None:
        tensors["optim.t"] = np.asarray(float(opt.t))
        tensors["optim.lr"] = np.asarray(float(opt.lr))
        for name in model.store:
            tensors[f"optim.m.{name}"] = opt.m[name]
            tensors[f"optim.v.{name}"] = opt.v[name]

    config_text = config_mod.to_text(train_config)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        encoded = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<Q", step))
        fh.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            _write_tensor(fh, name, tensors[name])


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic bytes (not a checkpoint)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        config_text = _read_exact(fh, cfg_len, "config").decode("utf-8")
        (step,) = struct.unpack("<Q", _read_exact(fh, 8, "step"))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = [struct.unpack("<Q", _read_exact(fh, 8, "dim"))[0] for _ in range(rank)]
            n_values = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, n_values * 8, f"tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        trailing = fh.read(1)
    if trailing:
        raise FormatError(f"{path}: trailing bytes after {count} tensors")
    if len(tensors) != count:
        raise FormatError(f"{path}: duplicate tensor names")
    return Checkpoint(version=version, config_text=config_text, step=step, tensors=tensors)


def restore_model(ckpt: Checkpoint) -> tuple[JointModel, AdamState, "config_mod.TrainConfig"]:
    """Rebuild model and optimizer from a loaded checkpoint.

    Raises FormatError listing every expected-but-missing tensor name.
    """
    cfg = config_mod.from_text(ckpt.config_text)
    model = JointModel(cfg.model, seed=cfg.seed, use_vq=cfg.mode != "novq")
    missing = [name for name in model.store if name not in ckpt.tensors]
    if missing:
        raise FormatError("checkpoint missing tensors: " + ", ".join(sorted(missing)))
    for name, param in model.store.items():
        stored = ckpt.tensors[name]
        if stored.shape != param.data.shape:
            raise FormatError(
                f"checkpoint tensor {name} has shape {stored.shape}, "
                f"model expects {param.data.shape}")
        param.data = stored.copy()
    if "codebook.usage" in ckpt.tensors:
        model.codebook.usage = ckpt.tensors["codebook.usage"].astype(np.int64).reshape(-1)
    if "codebook.steps_since_use" in ckpt.tensors:
        model.codebook.steps_since_use = (
            ckpt.tensors["codebook.steps_since_use"].astype(np.int64).reshape(-1))

    opt = AdamState.for_params(model.store, lr=cfg.lr_init)
    if "optim.t" in ckpt.tensors:
        opt.t = int(ckpt.tensors["optim.t"].ravel()[0])
        opt.lr = float(ckpt.tensors.get("optim.lr", np.asarray(cfg.lr_init)).ravel()[0])
        for name in model.store:
            if f"optim.m.{name}" in ckpt.tensors:
                opt.m[name] = ckpt.tensors[f"optim.m.{name}"].copy()
                opt.v[name] = ckpt.tensors[f"optim.v.{name}"].copy()
    return model, opt, cfg
