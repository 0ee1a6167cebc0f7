"""Trajectory corpora: tokenizer with boundary tokens, splits, block packing.

A trajectory is a 1-D int64 array of link ids. The vocabulary maps link id
i to token i and appends an end-of-trajectory boundary token (plus an
optional begin token under the dual-token ablation). Corpora live on disk
as one whitespace-separated trajectory per line with a JSON sidecar
carrying provenance (network hash, seeds, config hash).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

CORPUS_FORMAT_VERSION = 1

EOT_ONLY = "eot_only"
BOT_AND_EOT = "bot_and_eot"


@dataclass(frozen=True)
class Vocab:
    n_links: int
    mode: str = EOT_ONLY

    def __post_init__(self):
        if self.mode not in (EOT_ONLY, BOT_AND_EOT):
            raise ValueError(f"unknown tokenizer mode {self.mode!r}")
        if self.n_links < 1:
            raise ValueError("vocab needs at least one link")

    @property
    def eot(self) -> int:
        return self.n_links

    @property
    def bot(self) -> int:
        if self.mode != BOT_AND_EOT:
            raise ValueError("<BOT> only exists in bot_and_eot mode")
        return self.n_links + 1

    @property
    def boundary_tokens(self) -> tuple[int, ...]:
        return (self.eot,) if self.mode == EOT_ONLY else (self.eot, self.bot)

    @property
    def size(self) -> int:
        return self.n_links + len(self.boundary_tokens)

    @property
    def start_context(self) -> np.ndarray:
        """Single boundary token conditioning unconditional generation.

        The packed training stream teaches trip starts as what follows a
        boundary, so an unconditional context is one boundary token: <EOT>
        in single-token mode, <BOT> in dual-token mode.
        """
        tok = self.eot if self.mode == EOT_ONLY else self.bot
        return np.array([tok], dtype=np.int64)


def encode(traj: np.ndarray, vocab: Vocab) -> np.ndarray:
    traj = np.asarray(traj, dtype=np.int64)
    bad = np.nonzero((traj < 0) | (traj >= vocab.n_links))[0]
    if len(bad):
        i = int(bad[0])
        raise DataFormatError(f"unknown link id {int(traj[i])} at index {i}")
    if vocab.mode == BOT_AND_EOT:
        return np.concatenate(([vocab.bot], traj, [vocab.eot]))
    return np.concatenate((traj, [vocab.eot]))


def decode(tokens: np.ndarray, vocab: Vocab) -> np.ndarray:
    """Strip boundary tokens, truncating at the first <EOT>."""
    tokens = np.asarray(tokens, dtype=np.int64)
    ends = np.nonzero(tokens == vocab.eot)[0]
    if len(ends):
        tokens = tokens[:ends[0]]
    return tokens[tokens < vocab.n_links]


def split(corpus: list[np.ndarray], train_frac: float, rng: np.random.Generator):
    """Seeded shuffle-then-split into (train, test)."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    if len(corpus) < 2:
        raise DataFormatError("need at least 2 trajectories to split")
    order = rng.permutation(len(corpus))
    cut = int(round(train_frac * len(corpus)))
    cut = min(max(cut, 1), len(corpus) - 1)
    return [corpus[i] for i in order[:cut]], [corpus[i] for i in order[cut:]]


@dataclass(frozen=True, eq=False)
class PackedStream:
    """Concatenated encoded trajectories plus each trajectory's start offset."""

    tokens: np.ndarray        # (S,) int64
    traj_offsets: np.ndarray  # (n,) int64, start index of each trajectory
    block_size: int
    n_truncated: int = 0      # trajectories cut to fit block_size - 1 links

    def __len__(self) -> int:
        return len(self.tokens)


def pack_corpus(corpus: list[np.ndarray], vocab: Vocab, block_size: int) -> PackedStream:
    chunks, offsets, pos, truncated = [], [], 0, 0
    for traj in corpus:
        if len(traj) > block_size:  # keep block_size - 1 links plus <EOT>
            traj = traj[:block_size - 1]
            truncated += 1
        enc = encode(traj, vocab)
        offsets.append(pos)
        chunks.append(enc)
        pos += len(enc)
    if not chunks:
        raise DataFormatError("cannot pack an empty corpus")
    return PackedStream(np.concatenate(chunks), np.array(offsets, dtype=np.int64),
                        block_size, truncated)


def next_token_batch(stream: PackedStream, positions) -> tuple[np.ndarray, np.ndarray]:
    """Shift-by-one (inputs, targets) blocks at exact stream offsets."""
    positions = np.asarray(positions, dtype=np.int64)
    if len(positions) and (positions.min() < 0
                           or positions.max() + stream.block_size + 1 > len(stream)):
        raise ValueError("block offset out of range")
    idx = positions[:, None] + np.arange(stream.block_size)[None, :]
    return stream.tokens[idx], stream.tokens[idx + 1]


def padded_blocks(stream: PackedStream, positions, eot: int,
                  frame_token: int | None = None):
    """Blocks that may overrun the stream end, right-padded with <EOT>.

    Returns (inputs, targets, loss_mask); padded target positions carry
    mask 0 and are excluded from the loss. With `frame_token`, every block
    is framed as [frame_token, window...] so position 0 holds the boundary
    that generation contexts also start with (single-token mode; dual-token
    encodings already open with <BOT> at the offset itself).
    """
    positions = np.asarray(positions, dtype=np.int64)
    if len(positions) and (positions.min() < 0 or positions.max() >= len(stream)):
        raise ValueError("block offset out of range")
    t = stream.block_size
    window = t if frame_token is None else t - 1
    padded = np.concatenate((stream.tokens, np.full(window + 1, eot, dtype=np.int64)))
    idx = positions[:, None] + np.arange(window)[None, :]
    inputs, targets = padded[idx], padded[idx + 1]
    mask = (idx + 1 < len(stream)).astype(np.float64)
    if frame_token is not None:
        head = np.full((len(positions), 1), frame_token, dtype=np.int64)
        inputs = np.concatenate([head, inputs], axis=1)
        # position 0 predicts the token at the offset itself
        targets = np.concatenate([padded[positions][:, None], targets], axis=1)
        mask = np.concatenate([np.ones((len(positions), 1)), mask], axis=1)
    return inputs, targets, mask


# ---------------------------------------------------------------------------
# Corpus file I/O
# ---------------------------------------------------------------------------

def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def write_corpus(path, corpus: list[np.ndarray], metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# trajectory corpus v{CORPUS_FORMAT_VERSION}\n")
        for traj in corpus:
            fh.write(" ".join(str(int(t)) for t in traj) + "\n")
    meta = {"format_version": CORPUS_FORMAT_VERSION, "n_trajectories": len(corpus)}
    meta.update(metadata or {})
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_corpus(path, expect_network_hash: str | None = None):
    corpus = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                traj = np.array([int(tok) for tok in line.split()], dtype=np.int64)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-integer link id") from exc
            if len(traj) == 0 or traj.min() < 0:
                raise DataFormatError(f"{path}:{lineno}: invalid trajectory")
            corpus.append(traj)
    meta = read_sidecar(path)
    if expect_network_hash is not None:
        stored = meta.get("network_sha256")
        if stored is not None and stored != expect_network_hash:
            raise DataFormatError(
                f"{path}: corpus was built against a different network "
                f"({stored[:12]} != {expect_network_hash[:12]})")
    return corpus, meta


def read_sidecar(path) -> dict:
    sp = sidecar_path(path)
    if not sp.exists():
        return {}
    with open(sp, "r", encoding="utf-8") as fh:
        return json.load(fh)
