"""Connectivity masking of logits and the masked next-token objective.

Masking is additive -inf (equivalently: softmax support restricted to the
allowed successor set), so disallowed tokens come out with probability
exactly zero. The literal 0/1 multiplication of logits cannot zero a
probability, and a fully-connected generation corpus requires that it be
exactly zero.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K


def apply_rcm_mask(logits: np.ndarray, prev_tokens, rcm, copy: bool = True) -> np.ndarray:
    """Set logits of successors disallowed after `prev_tokens` to -inf.

    `logits` is (..., V) and `prev_tokens` the matching (...) int64 array of
    conditioning tokens; rows stay untouched where everything is allowed.
    """
    allowed = rcm.dense_mask()[np.asarray(prev_tokens, dtype=np.int64)]
    out = logits.copy() if copy else logits
    out[~allowed] = -np.inf
    return out


def masked_softmax(logits: np.ndarray, prev_token: int, rcm) -> np.ndarray:
    """Probability row after masking; disallowed entries are exactly 0."""
    z = apply_rcm_mask(logits, np.int64(prev_token), rcm)
    m = z.max()
    e = np.exp(z - m)
    return e / e.sum()


def cross_entropy(logits: np.ndarray, targets: np.ndarray,
                  loss_mask: np.ndarray | None = None) -> float:
    """Mean negative log-likelihood of targets over unmasked positions."""
    return cross_entropy_with_grad(logits, targets, loss_mask)[0]


def cross_entropy_with_grad(logits: np.ndarray, targets: np.ndarray,
                            loss_mask: np.ndarray | None = None):
    """Returns (loss, dlogits) with dlogits shaped like logits.

    Positions with mask 0 contribute neither loss nor gradient; rejecting
    an all-masked batch avoids a silent 0/0.
    """
    v = logits.shape[-1]
    flat = np.ascontiguousarray(logits.reshape(-1, v))
    tgt = np.ascontiguousarray(targets.reshape(-1), dtype=np.int64)
    if flat.shape[0] != tgt.shape[0]:
        raise ValueError("logits and targets disagree on position count")
    if loss_mask is None:
        w = np.ones(tgt.shape[0])
    else:
        w = np.ascontiguousarray(loss_mask.reshape(-1), dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("all positions are loss-masked")
    loss_sum, probs = K.softmax_xent(flat, tgt, w)
    dflat = K.softmax_xent_grad(probs, tgt, w)
    dflat /= total
    return loss_sum / total, dflat.reshape(logits.shape)
