"""Pure-numpy reference implementation of the hot training kernels.

Semantics are shared with the compiled backend in `_fastcore`; the test
suite runs both against each other. Everything is float64.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def causal_softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax over (B, H, T, T) scores restricted to j <= i."""
    t = scores.shape[-1]
    allowed = np.tril(np.ones((t, t), dtype=bool))
    s = np.where(allowed, scores, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def causal_softmax_grad(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Backward of causal_softmax; rows above the diagonal come out zero."""
    inner = (dprobs * probs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def softmax_xent(logits: np.ndarray, targets: np.ndarray,
                 weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Weighted-sum cross entropy over (N, V) logits; also returns softmax probs.

    Rows may contain -inf entries (hard connectivity masking); the target
    entry of any positively-weighted row must stay finite.
    """
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    lse = m[:, 0] + np.log(z[:, 0])
    picked = logits[np.arange(logits.shape[0]), targets]
    per_row = np.where(weights > 0, lse - picked, 0.0)
    return float(np.dot(weights, per_row)), probs


def softmax_xent_grad(probs: np.ndarray, targets: np.ndarray,
                      weights: np.ndarray) -> np.ndarray:
    dlogits = probs * weights[:, None]
    dlogits[np.arange(probs.shape[0]), targets] -= weights
    return dlogits


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x ** 3)
    th = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * du)


def adamw_update(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
                 step: int, lr: float, beta1: float, beta2: float,
                 eps: float, weight_decay: float) -> None:
    """In-place decoupled-weight-decay adaptive-moment update."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * param)


LN_EPS = 1e-5


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Row-normalize (N, D) activations; returns (y, xhat, rstd) for backward."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[..., 0]


def layernorm_grad(dy: np.ndarray, xhat: np.ndarray, rstd: np.ndarray,
                   gamma: np.ndarray):
    """Backward of layernorm; returns (dx, dgamma, dbeta)."""
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = rstd[:, None] * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                          - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta
