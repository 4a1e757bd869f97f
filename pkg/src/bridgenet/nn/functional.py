"""Batched forward and analytic backward passes over flat parameter vectors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .arch import FRN, ArchSpec, Dense, ReLU, ResidualBlock, check_params


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shift-invariant (max subtracted before exponentiation)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax received non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("log_softmax received non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# -- per-layer kernels -------------------------------------------------------

def _frn_forward(x, gamma, beta, tau, eps):
    nu2 = np.mean(x * x, axis=1, keepdims=True)
    s = 1.0 / np.sqrt(nu2 + eps)
    xh = x * s
    y = gamma * xh + beta
    keep = y >= tau
    out = np.where(keep, y, tau)
    return out, (x, s, xh, keep)


def _frn_backward(g, gamma, cache):
    x, s, xh, keep = cache
    dy = np.where(keep, g, 0.0)
    dtau = np.where(keep, 0.0, g).sum(axis=0)
    dgamma = (dy * xh).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxh = dy * gamma
    width = x.shape[1]
    dx = s * dxh - x * (s ** 3) * np.sum(dxh * x, axis=1, keepdims=True) / width
    return dx, dgamma, dbeta, dtau


def _layer_forward(layer, p, x):
    if isinstance(layer, Dense):
        y = x @ p["W"]
        if layer.bias:
            y = y + p["b"]
        return y, x
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0), x
    if isinstance(layer, FRN):
        return _frn_forward(x, p["gamma"], p["beta"], p["tau"], layer.eps)
    if isinstance(layer, ResidualBlock):
        a = x @ p["Wa"] + p["ba"]
        f, frn_cache = _frn_forward(a, p["gamma"], p["beta"], p["tau"], layer.eps)
        h = np.maximum(f, 0.0)
        out = x + h @ p["Wb"] + p["bb"]
        return out, (x, frn_cache, f, h)
    raise TypeError(f"unknown layer {layer!r}")


def _layer_backward(layer, p, cache, g, grads):
    """Return dL/d(layer input); write parameter gradients into ``grads``."""
    if isinstance(layer, Dense):
        x = cache
        grads["W"][...] = x.T @ g
        if layer.bias:
            grads["b"][...] = g.sum(axis=0)
        return g @ p["W"].T
    if isinstance(layer, ReLU):
        return np.where(cache > 0, g, 0.0)
    if isinstance(layer, FRN):
        dx, grads["gamma"][...], grads["beta"][...], grads["tau"][...] = _frn_backward(
            g, p["gamma"], cache
        )
        return dx
    if isinstance(layer, ResidualBlock):
        x, frn_cache, f, h = cache
        grads["Wb"][...] = h.T @ g
        grads["bb"][...] = g.sum(axis=0)
        dh = g @ p["Wb"].T
        df = np.where(f > 0, dh, 0.0)
        da, grads["gamma"][...], grads["beta"][...], grads["tau"][...] = _frn_backward(
            df, p["gamma"], frn_cache
        )
        grads["Wa"][...] = x.T @ da
        grads["ba"][...] = da.sum(axis=0)
        return g + da @ p["Wa"].T
    raise TypeError(f"unknown layer {layer!r}")


# -- whole network -----------------------------------------------------------

@dataclass
class ForwardResult:
    """Logits, tapped feature and the per-layer cache needed by :func:`backward`."""

    logits: np.ndarray
    feature: np.ndarray
    cache: list[Any]
    arch: ArchSpec

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)


def forward(arch: ArchSpec, params: np.ndarray, inputs: np.ndarray) -> ForwardResult:
    check_params(arch, params)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(f"inputs must have shape (N, {arch.input_dim}), got {np.shape(inputs)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs contain non-finite values")
    views = arch.unflatten(params)
    cache = []
    feature = None
    for idx, (layer, p) in enumerate(zip(arch.layers, views)):
        x, c = _layer_forward(layer, p, x)
        cache.append(c)
        if idx == arch.feature_tap:
            feature = x
    return ForwardResult(logits=x, feature=feature, cache=cache, arch=arch)


def features(arch: ArchSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Run the feature extractor only (layers up to and including the tap)."""
    check_params(arch, params)
    x = np.asarray(inputs, dtype=np.float64)
    views = arch.unflatten(params)
    for layer, p in zip(arch.layers[:arch.feature_tap + 1], views):
        x, _ = _layer_forward(layer, p, x)
    return x


def backward(arch: ArchSpec, params: np.ndarray, result: ForwardResult,
             grad_logits: np.ndarray) -> np.ndarray:
    """Gradient of the batch-mean loss given per-sample logit gradients.

    ``grad_logits[n]`` is dL_n/dlogits_n; the returned vector is
    d(mean_n L_n)/dparams in the flat layout of ``arch``.
    """
    check_params(arch, params)
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if result.arch != arch or g.shape != result.logits.shape:
        raise ValueError(
            f"cache/batch mismatch: gradient shape {g.shape}, forward produced {result.logits.shape}"
        )
    g = g / g.shape[0]
    grad = np.zeros(arch.param_count)
    views = arch.unflatten(params)
    gviews = arch.unflatten(grad)
    for layer, p, gp, c in zip(
        reversed(arch.layers), reversed(views), reversed(gviews), reversed(result.cache)
    ):
        g = _layer_backward(layer, p, c, g, gp)
    return grad
