"""Cross-entropy and distillation KL losses with their logit gradients.

Both accept a single logit vector or an ``(N, K)`` batch.  For a batch the
loss is the mean over rows while the returned gradient keeps one row per
sample; :func:`bridgenet.nn.functional.backward` does the batch averaging.
"""
from __future__ import annotations

import numpy as np

from .functional import log_softmax, softmax


def cross_entropy(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(labels))
    k = z.shape[1]
    if y.shape[0] != z.shape[0]:
        raise ValueError(f"{y.shape[0]} labels for {z.shape[0]} logit rows")
    if not np.issubdtype(y.dtype, np.integer) or np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must be integers in [0, {k})")
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, y].mean()
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    if single:
        return float(loss), grad[0]
    return float(loss), grad


def kl_loss(target_probs, pred_logits, atol: float = 1e-9):
    """KL(target || softmax(pred_logits)); zero-probability targets contribute 0."""
    t = np.asarray(target_probs, dtype=np.float64)
    z = np.asarray(pred_logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        t, z = t[None, :], z[None, :]
    if t.shape != z.shape:
        raise ValueError(f"target shape {t.shape} does not match logits shape {z.shape}")
    if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > atol):
        raise ValueError("target rows must be probability vectors (non-negative, summing to 1)")
    logp = log_softmax(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(t > 0, t * (np.log(np.where(t > 0, t, 1.0)) - logp), 0.0)
    loss = terms.sum(axis=1).mean()
    grad = softmax(z) - t
    if single:
        return float(max(loss, 0.0)), grad[0]
    return float(max(loss, 0.0)), grad
