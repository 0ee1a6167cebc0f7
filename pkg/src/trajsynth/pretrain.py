"""Gravity-aware batch sampling and the pretraining loop.

Each training step draws whole trajectories (with replacement) from a
weight table proportional to the gravity between their endpoint regions,
takes one block per draw starting at the trajectory's first token in the
packed stream, and optimizes connectivity-masked next-token cross entropy.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .corpus import EOT_ONLY, PackedStream, Vocab, pack_corpus, padded_blocks
from .errors import ConfigError, NumericalError
from .nn.masking import apply_rcm_mask, cross_entropy_with_grad
from .nn.model import Transformer
from .nn.optim import AdamW
from .rng import substream

GRAVITY_WEIGHT_FLOOR = 1e-6   # x max weight; keeps every trajectory sampleable
EVAL_TRAJ_CAP = 128           # held-out loss is estimated on a fixed subset


def trajectory_gravity_weights(corpus, rmap, gtable,
                               pair_level: bool = True) -> np.ndarray:
    """Per-trajectory sampling weight from endpoint-region gravity, floored.

    With `pair_level` (default) a region pair is effectively drawn with
    probability proportional to its gravity and a trajectory uniformly
    within the pair, i.e. weight = gravity / pair count. That is what
    reduces sampling bias toward overrepresented pairs; weighting every
    trajectory by raw gravity instead amplifies it (selectable for the
    ablation grid). The floor keeps trajectories between never-visited
    regions sampleable.
    """
    if len(corpus) == 0:
        raise ValueError("weights need a nonempty corpus")
    first = rmap.link_region[[t[0] for t in corpus]]
    last = rmap.link_region[[t[-1] for t in corpus]]
    w = gtable.gravity[first, last].astype(np.float64)
    if pair_level:
        pair_ids = first * rmap.n_regions + last
        _, inverse, counts = np.unique(pair_ids, return_inverse=True,
                                       return_counts=True)
        w = w / counts[inverse]
    if w.max() > 0:
        return np.maximum(w, GRAVITY_WEIGHT_FLOOR * w.max())
    return np.ones(len(corpus))


class GravitySampler:
    """With-replacement categorical draws over normalized trajectory weights."""

    def __init__(self, weights, rng: np.random.Generator):
        w = np.asarray(weights, dtype=np.float64)
        if len(w) == 0 or (w <= 0).any():
            raise ValueError("sampler weights must be positive")
        self.weights = w / w.sum()
        self._cum = np.cumsum(self.weights)
        self._cum[-1] = 1.0
        self.rng = rng

    @classmethod
    def from_corpus(cls, corpus, rmap, gtable, rng: np.random.Generator,
                    gravity_on: bool = True) -> "GravitySampler":
        if gravity_on:
            return cls(trajectory_gravity_weights(corpus, rmap, gtable), rng)
        return cls(np.ones(len(corpus)), rng)

    def sample(self, k: int) -> np.ndarray:
        return np.searchsorted(self._cum, self.rng.random(k), side="right")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 64
    eval_interval: int = 100
    seed: int = 0
    gravity_sampling: bool = True
    rcm_masking: bool = True

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        return self


def _batch_fingerprint(inputs: np.ndarray) -> str:
    return hashlib.sha256(inputs.astype("<i8").tobytes()).hexdigest()[:16]


def _frame_token(vocab: Vocab) -> int | None:
    """Single-token mode frames each block with <EOT>; <BOT> is in-stream."""
    return vocab.eot if vocab.mode == EOT_ONLY else None


def _eval_blocks(corpus, vocab: Vocab, block_size: int):
    subset = corpus[:EVAL_TRAJ_CAP]
    stream = pack_corpus(subset, vocab, block_size)
    return padded_blocks(stream, stream.traj_offsets, vocab.eot, _frame_token(vocab))


def eval_loss(model: Transformer, blocks, rcm=None, batch: int = 128) -> float:
    """Deterministic held-out loss (dropout off) over prepared blocks."""
    inputs, targets, mask = blocks
    total_loss, total_w = 0.0, 0.0
    for i in range(0, len(inputs), batch):
        sl = slice(i, i + batch)
        logits = model.forward(inputs[sl], train=False)
        if rcm is not None:
            logits = apply_rcm_mask(logits, inputs[sl], rcm, copy=False)
        w = mask[sl]
        loss, _ = cross_entropy_with_grad(logits, targets[sl], w)
        total_loss += loss * w.sum()
        total_w += w.sum()
    return total_loss / total_w


def pretrain(model: Transformer, optimizer: AdamW, train_corpus, eval_corpus,
             vocab: Vocab, rcm, sampler: GravitySampler, cfg: TrainConfig,
             dropout_rng: np.random.Generator | None = None,
             start_step: int = 0, trace: list | None = None):
    """Run the training loop; returns the (step, train_loss, eval_loss) trace.

    Deterministic for a fixed config: all randomness comes from the sampler
    rng and the dropout rng. `start_step`/`trace` allow checkpoint resume.
    """
    cfg.validate()
    stream = pack_corpus(train_corpus, vocab, model.cfg.block_size)
    blocks_eval = _eval_blocks(eval_corpus, vocab, model.cfg.block_size) if eval_corpus else None
    if dropout_rng is None:
        dropout_rng = substream(cfg.seed, "dropout")
    trace = [] if trace is None else trace
    rcm_for_loss = rcm if cfg.rcm_masking else None

    frame = _frame_token(vocab)
    for step in range(start_step + 1, cfg.steps + 1):
        idx = sampler.sample(cfg.batch_size)
        offsets = stream.traj_offsets[idx]
        inputs, targets, mask = padded_blocks(stream, offsets, vocab.eot, frame)

        if cfg.rcm_masking:
            ok = rcm.pairs_allowed(inputs.ravel(), targets.ravel())
            if not (ok | (mask.ravel() == 0)).all():
                raise AssertionError("training batch contains an RC-disallowed transition")

        logits = model.forward(inputs, train=True, rng=dropout_rng)
        if cfg.rcm_masking:
            logits = apply_rcm_mask(logits, inputs, rcm, copy=False)
        loss, dlogits = cross_entropy_with_grad(logits, targets, mask)
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite loss at step {step} (batch {_batch_fingerprint(inputs)})")
        model.zero_grads()
        model.backward(dlogits)
        optimizer.step(model)

        if step % cfg.eval_interval == 0 or step == cfg.steps:
            ev = eval_loss(model, blocks_eval, rcm_for_loss) if blocks_eval else float("nan")
            trace.append({"step": step, "train_loss": loss, "eval_loss": ev})
    if cfg.steps == 0 and not trace:
        ev = eval_loss(model, blocks_eval, rcm_for_loss) if blocks_eval else float("nan")
        trace.append({"step": 0, "train_loss": float("nan"), "eval_loss": ev})
    return trace


def write_trace_csv(path, trace, header_meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in sorted((header_meta or {}).items()):
            fh.write(f"# {k}={v}\n")
        fh.write("step,train_loss,eval_loss\n")
        for row in trace:
            fh.write(f"{row['step']},{float(row['train_loss'])!r},"
                     f"{float(row['eval_loss'])!r}\n")
