"""Versioned binary checkpoint container.

Layout: magic, length-prefixed JSON header (config, parameter manifest,
optimizer scalars, named RNG states, caller metadata), little-endian
float64 parameter payload (then first/second moments when the optimizer is
saved), and a trailing SHA-256 of everything before it. Loading restores
parameters, optimizer state, step counter and RNG states bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import numpy as np

from ..errors import DataFormatError
from .model import ModelConfig, Transformer
from .optim import AdamW

MAGIC = b"TSCHKPT1"
CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path, model: Transformer, optimizer: AdamW | None = None,
                    rng_states: dict | None = None, extra: dict | None = None) -> None:
    names = sorted(model.params)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(model.cfg),
        "params": [[n, list(model.params[n].shape)] for n in names],
        "has_optimizer": optimizer is not None,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "rng_states": rng_states or {},
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, len(blob).to_bytes(8, "little"), blob]
    for n in names:
        chunks.append(model.params[n].astype("<f8").tobytes())
    if optimizer is not None:
        optimizer._ensure_state(model)
        for n in names:
            chunks.append(optimizer.m[n].astype("<f8").tobytes())
        for n in names:
            chunks.append(optimizer.v[n].astype("<f8").tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def load_checkpoint(path, expect_vocab_size: int | None = None,
                    with_optimizer: bool = False):
    """Returns (model, optimizer_or_None, rng_states, extra)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 8 + 32 or not raw.startswith(MAGIC):
        raise DataFormatError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataFormatError(f"{path}: checksum mismatch (corrupt checkpoint)")
    hlen = int.from_bytes(body[8:16], "little")
    try:
        header = json.loads(body[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version")
    cfg = ModelConfig(**header["config"])
    if expect_vocab_size is not None and cfg.vocab_size != expect_vocab_size:
        raise DataFormatError(
            f"{path}: checkpoint vocab_size {cfg.vocab_size} does not match "
            f"expected {expect_vocab_size}")

    model = Transformer(cfg, init_rng=np.random.default_rng(0))
    offset = 16 + hlen
    names = [n for n, _ in header["params"]]
    if sorted(model.params) != names:
        raise DataFormatError(f"{path}: parameter manifest does not match config")

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape)) * 8
        if offset + size > len(body):
            raise DataFormatError(f"{path}: truncated payload")
        arr = np.frombuffer(body, dtype="<f8", count=int(np.prod(shape)),
                            offset=offset).reshape(shape).copy()
        offset += size
        return arr

    for n, shape in header["params"]:
        if list(model.params[n].shape) != list(shape):
            raise DataFormatError(f"{path}: shape mismatch for parameter {n}")
        model.params[n] = take(shape)
    model.grads = {k: np.zeros_like(v) for k, v in model.params.items()}

    optimizer = None
    if with_optimizer:
        if not header["has_optimizer"]:
            raise DataFormatError(f"{path}: checkpoint carries no optimizer state")
        optimizer = AdamW(**header["optimizer"])
        optimizer.m = {n: take(shape) for n, shape in header["params"]}
        optimizer.v = {n: take(shape) for n, shape in header["params"]}
    return model, optimizer, header["rng_states"], header["extra"]
