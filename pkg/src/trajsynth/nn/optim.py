"""Decoupled-weight-decay adaptive-moment optimizer with gradient clipping.

Weight decay applies to weight matrices only; biases, layernorm parameters
and embeddings are exempt (standard practice for small decoders).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .model import Transformer

_NO_DECAY_SUFFIXES = (".b", ".g", "tok_emb", "pos_emb", "bqkv", "bproj", "bfc")


def _decays(name: str) -> bool:
    return not name.endswith(_NO_DECAY_SUFFIXES)


@dataclass
class AdamW:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    clip_norm: float = 1.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def _ensure_state(self, model: Transformer) -> None:
        if not self.m:
            self.m = {k: np.zeros_like(p) for k, p in model.params.items()}
            self.v = {k: np.zeros_like(p) for k, p in model.params.items()}

    def grad_norm(self, model: Transformer) -> float:
        return float(np.sqrt(sum(float((g * g).sum()) for g in model.grads.values())))

    def step(self, model: Transformer) -> float:
        """Clip, update all parameters, clear gradients. Returns the raw grad norm."""
        self._ensure_state(model)
        norm = self.grad_norm(model)
        scale = self.clip_norm / norm if (self.clip_norm > 0 and norm > self.clip_norm) else 1.0
        self.step_count += 1
        for name, p in model.params.items():
            g = model.grads[name]
            if scale != 1.0:
                g *= scale
            wd = self.weight_decay if _decays(name) else 0.0
            K.adamw_update(p.reshape(-1), g.reshape(-1),
                           self.m[name].reshape(-1), self.v[name].reshape(-1),
                           self.step_count, self.lr, self.beta1, self.beta2,
                           self.eps, wd)
        model.zero_grads()
        return norm

    def state_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "weight_decay": self.weight_decay,
                "clip_norm": self.clip_norm, "step_count": self.step_count}
