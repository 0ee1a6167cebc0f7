"""Trip-length preference feedback: dataset construction, reward model, PPO, SFT.

A preference pair prompts the policy with the first links of a real trip,
rolls out two completions, and labels the one whose total trip length lands
closer to the real trip as chosen. A scalar-headed copy of the policy is
trained on pairwise logistic loss over those labels, and the policy is then
fine-tuned with clipped policy gradients on a reward that anchors it to the
pretrained base through a token-level log-ratio penalty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Vocab, decode
from .errors import ConfigError, DataFormatError, NumericalError
from .generate import complete_prompts
from .nn.masking import apply_rcm_mask, cross_entropy_with_grad
from .nn.model import HEAD_SCORE, Transformer
from .nn.optim import AdamW
from .rng import substream
from .roadnet import RoadNetwork

PREFS_FORMAT_VERSION = 1
DEFAULT_PROMPT_FRAC = 0.25


def traj_length(traj, network: RoadNetwork) -> float:
    """Total length in meters of a link sequence; empty sums to zero."""
    traj = np.asarray(traj, dtype=np.int64)
    if traj.size == 0:
        return 0.0
    return float(network.link_length[traj].sum())


def prompt_links(traj: np.ndarray, m_frac: float) -> np.ndarray:
    """First max(1, floor(m_frac * n)) links, always leaving a completion."""
    n = len(traj)
    m = max(1, int(np.floor(m_frac * n)))
    return traj[:min(m, n - 1)]


@dataclass(frozen=True)
class PreferencePair:
    prompt: np.ndarray        # link tokens
    chosen: np.ndarray        # completion tokens (terminal boundary included)
    rejected: np.ndarray
    gamma_chosen: float       # |L(real) - L(prompt + completion)| in meters
    gamma_rejected: float
    source_index: int

    def __post_init__(self):
        if self.gamma_chosen > self.gamma_rejected:
            raise ValueError("chosen completion must carry the lower gamma")


def build_preference_dataset(policy: Transformer, rcm, vocab: Vocab,
                             network: RoadNetwork, corpus, n_pairs: int, *,
                             m_frac: float = DEFAULT_PROMPT_FRAC,
                             temperature: float = 1.0, max_len: int = 48,
                             seed: int = 0, wave: int = 64):
    """Sample prompts from real trips and label completion pairs by length error.

    Equal-gamma and twice-identical completion pairs carry no preference
    signal and are skipped (counted in the returned stats).
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    pick_rng = substream(seed, "prefs", "pick")
    pairs: list[PreferencePair] = []
    stats = {"skipped_identical": 0, "skipped_ties": 0, "attempts": 0}
    attempt = 0
    budget = 10 * n_pairs
    while len(pairs) < n_pairs and attempt < budget:
        todo = min(wave, n_pairs - len(pairs), budget - attempt)
        sources = pick_rng.integers(0, len(corpus), size=todo)
        prompts, metas = [], []
        for k, src in enumerate(sources):
            a = attempt + k
            traj = corpus[int(src)]
            prompts.append(prompt_links(traj, m_frac))
            metas.append((int(src), traj, a))
        attempt += todo
        stats["attempts"] += todo

        doubled = [p for p in prompts for _ in range(2)]
        rngs = [substream(seed, "prefs", a, j) for (_, _, a) in metas for j in range(2)]
        completions, _ = complete_prompts(policy, rcm, vocab, doubled, rngs,
                                          temperature=temperature, max_len=max_len)
        for k, (src, traj, a) in enumerate(metas):
            c1, c2 = completions[2 * k], completions[2 * k + 1]
            if np.array_equal(c1, c2):
                redo, _ = complete_prompts(
                    policy, rcm, vocab, [prompts[k]],
                    [substream(seed, "prefs", a, 2)],
                    temperature=temperature, max_len=max_len)
                c2 = redo[0]
                if np.array_equal(c1, c2):
                    stats["skipped_identical"] += 1
                    continue
            ref_len = traj_length(traj, network)
            full1 = np.concatenate([prompts[k], decode(c1, vocab)])
            full2 = np.concatenate([prompts[k], decode(c2, vocab)])
            g1 = abs(ref_len - traj_length(full1, network))
            g2 = abs(ref_len - traj_length(full2, network))
            if g1 == g2:
                stats["skipped_ties"] += 1
                continue
            if g1 < g2:
                pairs.append(PreferencePair(prompts[k], c1, c2, g1, g2, src))
            else:
                pairs.append(PreferencePair(prompts[k], c2, c1, g2, g1, src))
    return pairs, stats


def write_preference_dataset(path, pairs, metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        head = {"format_version": PREFS_FORMAT_VERSION, "n_pairs": len(pairs)}
        head.update(metadata or {})
        fh.write(json.dumps({"header": head}, sort_keys=True) + "\n")
        for p in pairs:
            rec = {"prompt": [int(t) for t in p.prompt],
                   "chosen": [int(t) for t in p.chosen],
                   "rejected": [int(t) for t in p.rejected],
                   "gamma_chosen": p.gamma_chosen,
                   "gamma_rejected": p.gamma_rejected,
                   "source_index": p.source_index}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_preference_dataset(path):
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())["header"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataFormatError(f"{path}: missing preference header") from exc
        if header.get("format_version") != PREFS_FORMAT_VERSION:
            raise DataFormatError(f"{path}: unsupported preference format")
        for line in fh:
            r = json.loads(line)
            pairs.append(PreferencePair(
                np.array(r["prompt"], dtype=np.int64),
                np.array(r["chosen"], dtype=np.int64),
                np.array(r["rejected"], dtype=np.int64),
                float(r["gamma_chosen"]), float(r["gamma_rejected"]),
                int(r["source_index"])))
    return pairs, header


# ---------------------------------------------------------------------------
# Reward model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RewardConfig:
    steps: int = 400
    batch_pairs: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.1
    val_frac: float = 0.1
    eval_interval: int = 50
    seed: int = 0

    def validate(self) -> "RewardConfig":
        if self.steps < 0 or self.batch_pairs < 1:
            raise ConfigError("invalid reward training config")
        if not 0.0 < self.val_frac < 1.0:
            raise ConfigError("val_frac must be in (0, 1)")
        return self


def _pad_sequences(seqs, pad_token: int, block_size: int):
    """Right-pad to a common length; overlong sequences keep their tail."""
    clipped = [s if len(s) <= block_size else s[-block_size:] for s in seqs]
    t = max(len(s) for s in clipped)
    out = np.full((len(clipped), t), pad_token, dtype=np.int64)
    lengths = np.empty(len(clipped), dtype=np.int64)
    for i, s in enumerate(clipped):
        out[i, :len(s)] = s
        lengths[i] = len(s)
    return out, lengths


def pair_sequences(pair: PreferencePair, vocab: Vocab):
    """Boundary-framed (chosen, rejected) token sequences of a pair."""
    start = vocab.start_context
    return (np.concatenate([start, pair.prompt, pair.chosen]),
            np.concatenate([start, pair.prompt, pair.rejected]))


def score_sequences(model: Transformer, seqs, vocab: Vocab, *,
                    train: bool = False, rng=None):
    """Scalar score of each token sequence, read at its final position.

    Returns (scores, cache) where cache holds what backward needs.
    """
    tokens, lengths = _pad_sequences(seqs, vocab.eot, model.cfg.block_size)
    out = model.forward(tokens, train=train, rng=rng)    # (B, T) scores
    rows = np.arange(len(seqs))
    return out[rows, lengths - 1], (rows, lengths, out.shape)


def reward_model_from_policy(policy: Transformer, rng: np.random.Generator) -> Transformer:
    """Scalar-head copy of the policy: shared backbone, fresh score head."""
    model = policy.clone(head=HEAD_SCORE)
    model.params["head.w"] = rng.normal(0.0, 0.02, model.params["head.w"].shape)
    model.params["head.b"] = np.zeros_like(model.params["head.b"])
    return model


def pairwise_loss(score_chosen: np.ndarray, score_rejected: np.ndarray):
    """-log sigmoid(Uc - Ur) averaged over pairs, plus d/dUc (d/dUr is its negation)."""
    delta = score_chosen - score_rejected
    # log(1 + exp(-delta)) computed stably on both sides
    loss = np.where(delta > 0, np.log1p(np.exp(-np.abs(delta))),
                    -delta + np.log1p(np.exp(-np.abs(delta))))
    sig = 1.0 / (1.0 + np.exp(-delta))
    dchosen = (sig - 1.0) / len(delta)
    return float(loss.mean()), dchosen


def pairwise_accuracy(model: Transformer, pairs, vocab: Vocab) -> float:
    if not pairs:
        return float("nan")
    seqs = [s for p in pairs for s in pair_sequences(p, vocab)]
    scores, _ = score_sequences(model, seqs, vocab)
    uc, ur = scores[0::2], scores[1::2]
    return float(np.mean(uc > ur))


def train_reward_model(pairs, policy: Transformer, vocab: Vocab,
                       cfg: RewardConfig):
    """Fit the scalar scorer on preference pairs; returns (model, trace).

    The backbone starts from the supplied policy; validation pairwise
    accuracy is tracked on a held-out fraction of the pairs.
    """
    cfg.validate()
    if len(pairs) < 2:
        raise DataFormatError("need at least 2 preference pairs")
    rng = substream(cfg.seed, "reward", "init")
    order = substream(cfg.seed, "reward", "split").permutation(len(pairs))
    n_val = max(1, int(round(cfg.val_frac * len(pairs))))
    val = [pairs[i] for i in order[:n_val]]
    train = [pairs[i] for i in order[n_val:]]

    model = reward_model_from_policy(policy, rng)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    batch_rng = substream(cfg.seed, "reward", "batches")
    drop_rng = substream(cfg.seed, "reward", "dropout")
    trace = []
    for step in range(1, cfg.steps + 1):
        idx = batch_rng.integers(0, len(train), size=min(cfg.batch_pairs, len(train)))
        batch = [train[i] for i in idx]
        seqs = [s for p in batch for s in pair_sequences(p, vocab)]
        scores, (rows, lengths, shape) = score_sequences(
            model, seqs, vocab, train=True, rng=drop_rng)
        loss, dchosen = pairwise_loss(scores[0::2], scores[1::2])
        if not np.isfinite(loss):
            raise NumericalError(f"reward training diverged at step {step}")
        dscores = np.zeros(shape)
        dscores[rows[0::2], lengths[0::2] - 1] = dchosen
        dscores[rows[1::2], lengths[1::2] - 1] = -dchosen
        model.zero_grads()
        model.backward(dscores)
        opt.step(model)
        if step % cfg.eval_interval == 0 or step == cfg.steps:
            trace.append({"step": step, "train_loss": loss,
                          "val_accuracy": pairwise_accuracy(model, val, vocab)})
    return model, trace


# ---------------------------------------------------------------------------
# PPO fine-tuning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PPOConfig:
    iterations: int = 50
    rollouts: int = 32
    epochs: int = 4
    lr: float = 1e-5
    beta: float = 0.1
    clip_eps: float = 0.2
    temperature: float = 1.0
    m_frac: float = DEFAULT_PROMPT_FRAC
    max_len: int = 48
    kl_ceiling: float = 5.0
    seed: int = 0

    def validate(self) -> "PPOConfig":
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("clip_eps must be in (0, 1)")
        if self.iterations < 0 or self.rollouts < 1 or self.epochs < 1:
            raise ConfigError("invalid PPO budget")
        return self


def completion_logprobs(model: Transformer, rcm, vocab: Vocab, tokens: np.ndarray,
                        prompt_lens: np.ndarray, lengths: np.ndarray, *,
                        train: bool = False, rng=None):
    """Per-token log-probabilities of the completion region of padded rows.

    Returns (logp (B, T-1), token_mask (B, T-1), probs, inputs) where
    position j scores tokens[:, j+1] given the prefix through j; masking
    mirrors generation (conditioned on the token at j).
    """
    inputs = tokens[:, :-1]
    targets = tokens[:, 1:]
    logits = model.forward(inputs, train=train, rng=rng)
    if rcm is not None:
        logits = apply_rcm_mask(logits, inputs, rcm, copy=False)
    m = logits.max(axis=-1, keepdims=True)
    z = np.exp(logits - m)
    denom = z.sum(axis=-1, keepdims=True)
    probs = z / denom
    logz = m[..., 0] + np.log(denom[..., 0])
    b, t = targets.shape
    rows = np.arange(b)[:, None]
    cols = np.arange(t)[None, :]
    logp = logits[rows, cols, targets] - logz
    token_mask = ((cols >= (prompt_lens - 1)[:, None]) &
                  (cols < (lengths - 1)[:, None])).astype(np.float64)
    return logp, token_mask, probs, inputs


def ppo_reward(u: float, logp_policy: np.ndarray, logp_base: np.ndarray,
               beta: float) -> float:
    """Score minus beta times the summed completion log-ratio to the base policy."""
    return float(u - beta * (np.sum(logp_policy) - np.sum(logp_base)))


def clipped_objective(ratio, adv, eps: float):
    """min(r*A, clip(r, 1-eps, 1+eps)*A): the per-token surrogate."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def whiten(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    std = x.std()
    if std < eps:
        return np.zeros_like(x)
    return (x - x.mean()) / (std + eps)


def ppo_finetune(policy: Transformer, base_policy: Transformer,
                 reward_model: Transformer, rcm, vocab: Vocab,
                 network: RoadNetwork, corpus, cfg: PPOConfig,
                 prompt_weights: np.ndarray | None = None):
    """Clipped policy-gradient fine-tuning against the reward model.

    Rollouts keep connectivity masking active; the whitened sequence-level
    reward acts as the per-token advantage (no value head). Returns
    (policy, trace) where trace rows carry mean reward / KL / length.
    """
    cfg.validate()
    opt = AdamW(lr=cfg.lr)
    drop_rng = substream(cfg.seed, "ppo", "dropout")
    pick_rng = substream(cfg.seed, "ppo", "prompts")
    if prompt_weights is not None:
        pw = np.asarray(prompt_weights, dtype=np.float64)
        pw = pw / pw.sum()
    trace = []
    for it in range(1, cfg.iterations + 1):
        if prompt_weights is None:
            srcs = pick_rng.integers(0, len(corpus), size=cfg.rollouts)
        else:
            srcs = pick_rng.choice(len(corpus), size=cfg.rollouts, p=pw)
        prompts = [prompt_links(corpus[int(s)], cfg.m_frac) for s in srcs]
        rngs = [substream(cfg.seed, "ppo", it, r) for r in range(cfg.rollouts)]
        completions, _ = complete_prompts(policy, rcm, vocab, prompts, rngs,
                                          temperature=cfg.temperature,
                                          max_len=cfg.max_len)
        keep = [i for i, c in enumerate(completions) if len(c) > 0]
        prompts = [prompts[i] for i in keep]
        completions = [completions[i] for i in keep]
        if not prompts:
            trace.append({"iteration": it, "mean_reward": float("nan"),
                          "mean_kl": float("nan"), "mean_completion_length": 0.0})
            continue
        start = vocab.start_context
        seqs = [np.concatenate([start, p, c]) for p, c in zip(prompts, completions)]
        tokens, lengths = _pad_sequences(seqs, vocab.eot, policy.cfg.block_size)
        prompt_lens = np.array([len(start) + len(p) for p in prompts], dtype=np.int64)

        logp_old, token_mask, _, _ = completion_logprobs(
            policy, rcm, vocab, tokens, prompt_lens, lengths)
        logp_base, _, _, _ = completion_logprobs(
            base_policy, rcm, vocab, tokens, prompt_lens, lengths)
        scores, _ = score_sequences(reward_model, seqs, vocab)
        kl_terms = (logp_old - logp_base) * token_mask
        rewards = scores - cfg.beta * kl_terms.sum(axis=1)
        mean_kl = float(kl_terms.sum() / token_mask.sum())
        if abs(mean_kl) > cfg.kl_ceiling:
            raise NumericalError(
                f"per-token KL {mean_kl:.3f} exceeded ceiling at iteration {it}")
        adv = whiten(rewards)

        n_tok = token_mask.sum()
        for _ in range(cfg.epochs):
            logp_new, _, probs, inputs = completion_logprobs(
                policy, rcm, vocab, tokens, prompt_lens, lengths,
                train=True, rng=drop_rng)
            ratio = np.exp(np.clip(logp_new - logp_old, -60.0, 60.0))
            a = adv[:, None]
            unclipped = ratio * a
            clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a
            active = (unclipped <= clipped) & (token_mask > 0)
            dlogp = np.where(active, -ratio * a, 0.0) / n_tok
            b, t = dlogp.shape
            rows = np.arange(b)[:, None]
            cols = np.arange(t)[None, :]
            dlogits = -probs * dlogp[..., None]
            dlogits[rows, cols, tokens[:, 1:]] += dlogp
            policy.zero_grads()
            policy.backward(dlogits)
            opt.step(policy)
            if not policy.all_finite():
                raise NumericalError(f"policy diverged at iteration {it}")
        trace.append({
            "iteration": it,
            "mean_reward": float(rewards.mean()),
            "mean_kl": mean_kl,
            "mean_completion_length": float(np.mean(
                [len(decode(c, vocab)) for c in completions])),
        })
    return policy, trace


# ---------------------------------------------------------------------------
# Supervised fine-tuning arm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SFTConfig:
    steps: int = 200
    batch_pairs: int = 32
    lr: float = 1e-5
    seed: int = 0


def sft_finetune(policy: Transformer, pairs, rcm, vocab: Vocab, cfg: SFTConfig):
    """Cross-entropy on prompt+chosen sequences, loss-masked over the prompt."""
    if cfg.steps and not pairs:
        raise DataFormatError("SFT needs preference pairs")
    opt = AdamW(lr=cfg.lr)
    batch_rng = substream(cfg.seed, "sft", "batches")
    drop_rng = substream(cfg.seed, "sft", "dropout")
    trace = []
    start = vocab.start_context
    for step in range(1, cfg.steps + 1):
        idx = batch_rng.integers(0, len(pairs), size=min(cfg.batch_pairs, len(pairs)))
        seqs = [np.concatenate([start, pairs[i].prompt, pairs[i].chosen])
                for i in idx]
        tokens, lengths = _pad_sequences(seqs, vocab.eot, policy.cfg.block_size)
        prompt_lens = np.array([len(start) + len(pairs[i].prompt) for i in idx],
                               dtype=np.int64)
        inputs, targets = tokens[:, :-1], tokens[:, 1:]
        cols = np.arange(inputs.shape[1])[None, :]
        mask = ((cols >= (prompt_lens - 1)[:, None]) &
                (cols < (lengths - 1)[:, None])).astype(np.float64)
        logits = policy.forward(inputs, train=True, rng=drop_rng)
        if rcm is not None:
            logits = apply_rcm_mask(logits, inputs, rcm, copy=False)
        loss, dlogits = cross_entropy_with_grad(logits, targets, mask)
        if not np.isfinite(loss):
            raise NumericalError(f"SFT diverged at step {step}")
        policy.zero_grads()
        policy.backward(dlogits)
        opt.step(policy)
        trace.append({"step": step, "train_loss": loss})
    return policy, trace


def write_ppo_trace_csv(path, trace, header_meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in sorted((header_meta or {}).items()):
            fh.write(f"# {k}={v}\n")
        fh.write("iteration,mean_reward,mean_kl,mean_completion_length\n")
        for r in trace:
            fh.write(f"{r['iteration']},{float(r['mean_reward'])!r},"
                     f"{float(r['mean_kl'])!r},"
                     f"{float(r['mean_completion_length'])!r}\n")
