"""Autoregressive trajectory generation with temperature and connectivity masking.

Every next-token distribution is the model's last-position logits divided
by temperature, masked by the allowed successors of the previously emitted
token, then softmaxed. Generation stops at the boundary token or at the
link-count cap. Trajectories are sampled from per-slot random substreams,
so results do not depend on batching and a master seed reproduces a corpus
byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocab, decode
from .nn.masking import apply_rcm_mask
from .nn.model import Transformer
from .rng import substream

DEFAULT_RETRY_BUDGET = 25
_WAVE = 256   # generation slots advanced together


@dataclass
class GenerationStats:
    retries: int = 0
    shortfall: int = 0
    window_truncations: int = 0
    empty_redraw_slots: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"retries": self.retries, "shortfall": self.shortfall,
                "window_truncations": self.window_truncations}


class _Slot:
    __slots__ = ("index", "context", "generated", "links", "rng", "done", "retries")

    def __init__(self, index, context, links, rng):
        self.index = index
        self.context = list(context)
        self.generated: list[int] = []
        self.links = links          # decoded link count so far (prompt included)
        self.rng = rng
        self.done = False
        self.retries = 0


def _sample_rows(probs: np.ndarray, slots, temperature: float) -> np.ndarray:
    if temperature == 0.0:
        return probs.argmax(axis=1)
    cum = probs.cumsum(axis=1)
    picks = np.empty(len(slots), dtype=np.int64)
    for i, slot in enumerate(slots):
        u = slot.rng.random() * cum[i, -1]
        picks[i] = min(np.searchsorted(cum[i], u, side="right"), probs.shape[1] - 1)
    return picks


def _advance_wave(model: Transformer, rcm, vocab: Vocab, slots: list[_Slot],
                  temperature: float, max_len: int, stats: GenerationStats,
                  retry_on_empty: bool, retry_budget: int) -> None:
    block = model.cfg.block_size
    active = [s for s in slots if not s.done]
    while active:
        by_len: dict[int, list[_Slot]] = {}
        for s in active:
            by_len.setdefault(len(s.context), []).append(s)
        for t, group in by_len.items():
            tokens = np.array([s.context for s in group], dtype=np.int64)
            logits = model.forward(tokens, train=False)[:, -1, :]
            if temperature > 0.0:
                logits = logits / temperature
            prev = tokens[:, -1]
            if rcm is not None:
                logits = apply_rcm_mask(logits, prev, rcm, copy=False)
            m = logits.max(axis=1, keepdims=True)
            e = np.exp(logits - m)
            probs = e / e.sum(axis=1, keepdims=True)
            picks = _sample_rows(probs, group, temperature)
            for s, tok in zip(group, picks):
                tok = int(tok)
                s.generated.append(tok)
                if tok == vocab.eot:
                    if retry_on_empty and s.links == 0:
                        if s.retries < retry_budget:
                            s.retries += 1
                            stats.retries += 1
                            s.generated = []
                            s.context = s.context[:1]
                            continue
                        stats.shortfall += 1
                        stats.empty_redraw_slots.append(s.index)
                    s.done = True
                    continue
                s.context.append(tok)
                if tok < vocab.n_links:
                    s.links += 1
                    if s.links >= max_len:
                        s.done = True
                        continue
                if len(s.context) >= block:
                    s.context = s.context[-(block - 1):]
                    stats.window_truncations += 1
        active = [s for s in slots if not s.done]


def generate(model: Transformer, rcm, vocab: Vocab, *, temperature: float = 1.0,
             max_len: int = 48, seed: int = 0, prompt=None,
             rng: np.random.Generator | None = None):
    """One trajectory; returns (link array, stats dict).

    `prompt` is a link-id sequence and must be connectivity-consistent;
    unconditional generation conditions on a single boundary token.
    temperature 0 selects the argmax (greedy) successor at every step.
    """
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if prompt is None:
        context = vocab.start_context
        links = 0
    else:
        prompt = np.asarray(prompt, dtype=np.int64)
        if len(prompt) == 0:
            raise ValueError("prompt must contain at least one link")
        if len(prompt) + 1 >= model.cfg.block_size:
            raise ValueError("prompt longer than the model block size")
        if rcm is not None and len(prompt) > 1:
            if not rcm.pairs_allowed(prompt[:-1], prompt[1:]).all():
                raise ValueError("prompt is not connectivity-consistent")
        # boundary-first framing matches how training blocks are assembled
        context = np.concatenate([vocab.start_context, prompt])
        links = len(prompt)
    slot = _Slot(0, context, links, rng if rng is not None else substream(seed, "traj", 0))
    stats = GenerationStats()
    if links >= max_len:
        traj = prompt.copy()
        return traj, stats.as_dict()
    _advance_wave(model, rcm, vocab, [slot], temperature, max_len, stats,
                  retry_on_empty=False, retry_budget=0)
    head = [] if prompt is None else prompt
    traj = decode(np.concatenate([head, slot.generated]).astype(np.int64), vocab)
    return traj, stats.as_dict()


def complete_prompts(model: Transformer, rcm, vocab: Vocab, prompts, rngs,
                     *, temperature: float = 1.0, max_len: int = 48):
    """Batched continuation of link-id prompts under boundary-first framing.

    Returns (completions, stats): one generated token sequence per prompt
    (terminating boundary token included when emitted).
    """
    slots = [_Slot(i, np.concatenate([vocab.start_context,
                                      np.asarray(p, dtype=np.int64)]), len(p), r)
             for i, (p, r) in enumerate(zip(prompts, rngs))]
    stats = GenerationStats()
    for s in slots:
        if s.links >= max_len:
            s.done = True
    _advance_wave(model, rcm, vocab, slots, temperature, max_len, stats,
                  retry_on_empty=False, retry_budget=0)
    return [np.array(s.generated, dtype=np.int64) for s in slots], stats


def generate_corpus(model: Transformer, rcm, vocab: Vocab, n: int, *,
                    temperature: float = 1.0, max_len: int = 48, seed: int = 0,
                    retry_budget: int = DEFAULT_RETRY_BUDGET):
    """n unconditional trajectories with per-slot derived substreams.

    Immediate-boundary (empty) generations are redrawn from the same slot
    stream up to `retry_budget` times; exhausted slots are dropped and
    reported as shortfall.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    stats = GenerationStats()
    corpus: list[np.ndarray] = []
    for lo in range(0, n, _WAVE):
        wave = [_Slot(i, vocab.start_context, 0, substream(seed, "traj", i))
                for i in range(lo, min(lo + _WAVE, n))]
        _advance_wave(model, rcm, vocab, wave, temperature, max_len, stats,
                      retry_on_empty=True, retry_budget=retry_budget)
        for s in wave:
            traj = decode(np.array(s.generated, dtype=np.int64), vocab)
            if traj.size:
                corpus.append(traj)
    meta = stats.as_dict()
    meta.update(temperature=temperature, seed=seed, max_len=max_len,
                requested=n, generated=len(corpus))
    return corpus, meta
