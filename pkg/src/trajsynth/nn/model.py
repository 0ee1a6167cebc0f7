"""Minimal decoder-only transformer in float64 numpy with hand-written backprop.

Pre-norm blocks, learned positional embeddings, tanh-approximated GELU,
causal self-attention. The output head is either a next-token logit map
("lm") or a per-position scalar score ("score", used by the reward model).
Forward caches every intermediate needed by backward; a model instance is
single-writer (forward/backward/step require exclusive access) but cheap
read-only clones can serve parallel generation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError
from . import kernels as K

INIT_STD = 0.02

HEAD_LM = "lm"
HEAD_SCORE = "score"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 32
    block_size: int = 64
    dropout: float = 0.1
    seed: int = 0
    head: str = HEAD_LM

    def validate(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.block_size < 2:
            raise ConfigError("block_size must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.head not in (HEAD_LM, HEAD_SCORE):
            raise ConfigError(f"unknown head {self.head!r}")
        return self

    def with_head(self, head: str) -> "ModelConfig":
        return replace(self, head=head)


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for a config."""
    d, v = cfg.d_model, cfg.vocab_size
    per_layer = 12 * d * d + 13 * d
    head = d * v if cfg.head == HEAD_LM else d + 1
    return v * d + cfg.block_size * d + cfg.n_layers * per_layer + 2 * d + head


def paper_scale_config(vocab_size: int, block_size: int = 300, **overrides) -> ModelConfig:
    """The published-scale configuration (6 layers, 4 heads, 64-wide embeddings)."""
    return ModelConfig(vocab_size=vocab_size, n_layers=6, n_heads=4, d_model=64,
                       block_size=block_size, **overrides)


class Transformer:
    def __init__(self, cfg: ModelConfig, init_rng: np.random.Generator | None = None):
        cfg.validate()
        self.cfg = cfg
        rng = init_rng if init_rng is not None else np.random.default_rng(cfg.seed)
        d = cfg.d_model
        p: dict[str, np.ndarray] = {}
        p["tok_emb"] = rng.normal(0.0, INIT_STD, (cfg.vocab_size, d))
        p["pos_emb"] = rng.normal(0.0, INIT_STD, (cfg.block_size, d))
        for i in range(cfg.n_layers):
            p[f"l{i}.ln1.g"] = np.ones(d)
            p[f"l{i}.ln1.b"] = np.zeros(d)
            p[f"l{i}.attn.wqkv"] = rng.normal(0.0, INIT_STD, (d, 3 * d))
            p[f"l{i}.attn.bqkv"] = np.zeros(3 * d)
            p[f"l{i}.attn.wproj"] = rng.normal(0.0, INIT_STD, (d, d))
            p[f"l{i}.attn.bproj"] = np.zeros(d)
            p[f"l{i}.ln2.g"] = np.ones(d)
            p[f"l{i}.ln2.b"] = np.zeros(d)
            p[f"l{i}.mlp.wfc"] = rng.normal(0.0, INIT_STD, (d, 4 * d))
            p[f"l{i}.mlp.bfc"] = np.zeros(4 * d)
            p[f"l{i}.mlp.wproj"] = rng.normal(0.0, INIT_STD, (4 * d, d))
            p[f"l{i}.mlp.bproj"] = np.zeros(d)
        p["lnf.g"] = np.ones(d)
        p["lnf.b"] = np.zeros(d)
        if cfg.head == HEAD_LM:
            p["head.w"] = rng.normal(0.0, INIT_STD, (d, cfg.vocab_size))
        else:
            p["head.w"] = rng.normal(0.0, INIT_STD, (d, 1))
            p["head.b"] = np.zeros(1)
        self.params = p
        self.grads = {k: np.zeros_like(v) for k, v in p.items()}
        self._cache = None

    # -- housekeeping -------------------------------------------------------

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def clone(self, head: str | None = None) -> "Transformer":
        """Deep parameter copy; backbone transfers across head types."""
        cfg = self.cfg if head is None else self.cfg.with_head(head)
        other = Transformer(cfg, init_rng=np.random.default_rng(0))
        for k, v in self.params.items():
            if k in other.params and other.params[k].shape == v.shape:
                other.params[k] = v.copy()
        other.grads = {k: np.zeros_like(v) for k, v in other.params.items()}
        return other

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())

    # -- forward / backward -------------------------------------------------

    def forward(self, tokens: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """(B, T) int64 tokens -> (B, T, vocab) logits or (B, T) scores.

        Eval mode (train=False) is deterministic: dropout is off. Training
        mode draws dropout masks from `rng` in a fixed order.
        """
        cfg = self.cfg
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        b, t = tokens.shape
        if t == 0:
            raise ValueError("empty token sequence")
        if t > cfg.block_size:
            raise ValueError(f"sequence length {t} exceeds block size {cfg.block_size}")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
            raise ValueError("token id outside vocabulary")
        if train and cfg.dropout > 0.0 and rng is None:
            raise ValueError("training forward with dropout needs an rng")

        p = self.params
        drop = cfg.dropout if train else 0.0
        cache: dict = {"tokens": tokens, "drop": drop, "layers": []}

        x = p["tok_emb"][tokens] + p["pos_emb"][:t]
        x, m = _dropout(x, drop, rng)
        cache["emb_mask"] = m

        for i in range(cfg.n_layers):
            x = self._block_forward(i, x, drop, rng, cache)

        xn, xhat, rstd = _layernorm(x, p["lnf.g"], p["lnf.b"])
        cache["lnf"] = (xhat, rstd)
        cache["xn_final"] = xn
        if cfg.head == HEAD_LM:
            out = xn @ p["head.w"]
        else:
            out = (xn @ p["head.w"] + p["head.b"])[..., 0]
        self._cache = cache
        return out

    def _block_forward(self, i, x, drop, rng, cache):
        p = self.params
        cfg = self.cfg
        h, dk = cfg.n_heads, cfg.d_model // cfg.n_heads
        b, t, d = x.shape
        lc: dict = {}

        a, xhat1, rstd1 = _layernorm(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
        lc["ln1"] = (xhat1, rstd1)
        qkv = a @ p[f"l{i}.attn.wqkv"] + p[f"l{i}.attn.bqkv"]
        q, k, v = (qkv[..., j * d:(j + 1) * d].reshape(b, t, h, dk).transpose(0, 2, 1, 3)
                   for j in range(3))
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) / np.sqrt(dk)
        probs = K.causal_softmax(scores)
        probs_d, lc["attn_mask"] = _dropout(probs, drop, rng)
        y = np.matmul(probs_d, v).transpose(0, 2, 1, 3).reshape(b, t, d)
        att_out = y @ p[f"l{i}.attn.wproj"] + p[f"l{i}.attn.bproj"]
        att_out, lc["resid_mask"] = _dropout(att_out, drop, rng)
        x1 = x + att_out

        a2, xhat2, rstd2 = _layernorm(x1, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
        lc["ln2"] = (xhat2, rstd2)
        h_pre = a2 @ p[f"l{i}.mlp.wfc"] + p[f"l{i}.mlp.bfc"]
        h_act = K.gelu(h_pre)
        m_out = h_act @ p[f"l{i}.mlp.wproj"] + p[f"l{i}.mlp.bproj"]
        m_out, lc["mlp_mask"] = _dropout(m_out, drop, rng)
        x2 = x1 + m_out

        lc.update(x=x, a=a, q=q, k=k, v=v, probs=probs, probs_d=probs_d, y=y,
                  x1=x1, a2=a2, h_pre=h_pre, h_act=h_act)
        cache["layers"].append(lc)
        return x2

    def backward(self, dout: np.ndarray) -> None:
        """Accumulate parameter gradients for the most recent forward."""
        cache = self._cache
        if cache is None:
            raise RuntimeError("backward called before forward")
        cfg, p, g = self.cfg, self.params, self.grads
        xn = cache["xn_final"]
        b, t, d = xn.shape
        xn2 = xn.reshape(-1, d)

        if cfg.head == HEAD_LM:
            dout2 = dout.reshape(-1, cfg.vocab_size)
            g["head.w"] += xn2.T @ dout2
            dxn = dout2 @ p["head.w"].T
        else:
            dout2 = dout.reshape(-1, 1)
            g["head.w"] += xn2.T @ dout2
            g["head.b"] += dout2.sum(axis=0)
            dxn = dout2 @ p["head.w"].T

        dx, dg, db = _layernorm_grad(dxn.reshape(b, t, d), cache["lnf"], p["lnf.g"])
        g["lnf.g"] += dg
        g["lnf.b"] += db

        for i in reversed(range(cfg.n_layers)):
            dx = self._block_backward(i, dx, cache["layers"][i], cache["drop"])

        dx = _dropout_backward(dx, cache["emb_mask"])
        tokens = cache["tokens"]
        np.add.at(g["tok_emb"], tokens, dx)
        g["pos_emb"][:t] += dx.sum(axis=0)
        self._cache = None

    def _block_backward(self, i, dx2, lc, drop):
        p, g = self.params, self.grads
        cfg = self.cfg
        h, dk = cfg.n_heads, cfg.d_model // cfg.n_heads
        b, t, d = lc["x"].shape

        # MLP branch
        dm = _dropout_backward(dx2, lc["mlp_mask"]).reshape(-1, d)
        g[f"l{i}.mlp.wproj"] += lc["h_act"].reshape(-1, 4 * d).T @ dm
        g[f"l{i}.mlp.bproj"] += dm.sum(axis=0)
        dh_act = (dm @ p[f"l{i}.mlp.wproj"].T).reshape(b, t, 4 * d)
        dh_pre = K.gelu_grad(lc["h_pre"], dh_act).reshape(-1, 4 * d)
        g[f"l{i}.mlp.wfc"] += lc["a2"].reshape(-1, d).T @ dh_pre
        g[f"l{i}.mlp.bfc"] += dh_pre.sum(axis=0)
        da2 = (dh_pre @ p[f"l{i}.mlp.wfc"].T).reshape(b, t, d)
        dx1, dg2, db2 = _layernorm_grad(da2, lc["ln2"], p[f"l{i}.ln2.g"])
        g[f"l{i}.ln2.g"] += dg2
        g[f"l{i}.ln2.b"] += db2
        dx1 += dx2  # residual

        # Attention branch
        datt = _dropout_backward(dx1, lc["resid_mask"]).reshape(-1, d)
        g[f"l{i}.attn.wproj"] += lc["y"].reshape(-1, d).T @ datt
        g[f"l{i}.attn.bproj"] += datt.sum(axis=0)
        dy = (datt @ p[f"l{i}.attn.wproj"].T).reshape(b, t, h, dk).transpose(0, 2, 1, 3)
        dv = np.matmul(lc["probs_d"].transpose(0, 1, 3, 2), dy)
        dprobs_d = np.matmul(dy, lc["v"].transpose(0, 1, 3, 2))
        dprobs = _dropout_backward(dprobs_d, lc["attn_mask"])
        dscores = K.causal_softmax_grad(lc["probs"], np.ascontiguousarray(dprobs))
        dscores /= np.sqrt(dk)
        dq = np.matmul(dscores, lc["k"])
        dk_ = np.matmul(dscores.transpose(0, 1, 3, 2), lc["q"])
        dqkv = np.concatenate(
            [part.transpose(0, 2, 1, 3).reshape(b, t, d) for part in (dq, dk_, dv)],
            axis=-1).reshape(-1, 3 * d)
        g[f"l{i}.attn.wqkv"] += lc["a"].reshape(-1, d).T @ dqkv
        g[f"l{i}.attn.bqkv"] += dqkv.sum(axis=0)
        da = (dqkv @ p[f"l{i}.attn.wqkv"].T).reshape(b, t, d)
        dx, dg1, db1 = _layernorm_grad(da, lc["ln1"], p[f"l{i}.ln1.g"])
        g[f"l{i}.ln1.g"] += dg1
        g[f"l{i}.ln1.b"] += db1
        dx += dx1  # residual
        return dx


# ---------------------------------------------------------------------------
# Layer primitive wrappers (the (N, D) kernels see flattened activations)
# ---------------------------------------------------------------------------

def _layernorm(x, gamma, beta):
    b, t, d = x.shape
    y, xhat, rstd = K.layernorm(np.ascontiguousarray(x.reshape(-1, d)), gamma, beta)
    return y.reshape(b, t, d), xhat, rstd


def _layernorm_grad(dy, cache, gamma):
    xhat, rstd = cache
    b, t, d = dy.shape
    dx, dgamma, dbeta = K.layernorm_grad(
        np.ascontiguousarray(dy.reshape(-1, d)), xhat, rstd, gamma)
    return dx.reshape(b, t, d), dgamma, dbeta


def _dropout(x, p, rng):
    if p <= 0.0:
        return x, None
    # float32 uniforms: half the stream bytes, same Bernoulli(1-p) keep rate
    mask = (rng.random(x.shape, dtype=np.float32) >= p) * (1.0 / (1.0 - p))
    return x * mask, mask


def _dropout_backward(dy, mask):
    return dy if mask is None else dy * mask
