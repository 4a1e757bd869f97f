"""Quadratic Bezier curves between two modes in parameter space."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Mapping, Optional, Sequence

import numpy as np

from . import metrics
from .nn import (
    ArchSpec,
    DivergenceError,
    Network,
    OptimizerCfg,
    backward,
    cosine_lr,
    cross_entropy,
    forward,
    minibatches,
    sgd_step,
    softmax,
)
from .nn.arch import check_params


@dataclass(frozen=True, eq=False)
class BezierCurve:
    """Frozen endpoints ``theta_i``, ``theta_j`` and the trainable pin-point ``theta_be``."""

    arch: ArchSpec
    theta_i: np.ndarray
    theta_j: np.ndarray
    theta_be: np.ndarray

    def __post_init__(self):
        for v in (self.theta_i, self.theta_j, self.theta_be):
            check_params(self.arch, v)

    def network(self, r: float) -> Network:
        return Network(self.arch, curve_point(self, r))

    @property
    def endpoint_ids(self) -> tuple[str, str]:
        return Network(self.arch, self.theta_i).fingerprint, Network(self.arch, self.theta_j).fingerprint


def bezier_coefficients(r: float) -> tuple[float, float, float]:
    return (1.0 - r) ** 2, 2.0 * r * (1.0 - r), r * r


def curve_point(curve: BezierCurve, r: float) -> np.ndarray:
    """``(1-r)^2 theta_i + 2r(1-r) theta_be + r^2 theta_j``; endpoints returned exactly."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"curve position r={r} outside [0, 1]")
    if r == 0.0:
        return curve.theta_i.copy()
    if r == 1.0:
        return curve.theta_j.copy()
    a, b, c = bezier_coefficients(r)
    return a * curve.theta_i + b * curve.theta_be + c * curve.theta_j


def init_pinpoint(arch: ArchSpec, theta_i: np.ndarray, theta_j: np.ndarray) -> BezierCurve:
    """Curve whose pin-point is the segment midpoint, i.e. the straight line."""
    if theta_i.shape != theta_j.shape:
        raise ValueError("endpoint parameter vectors differ in length")
    return BezierCurve(arch, theta_i.copy(), theta_j.copy(), 0.5 * (theta_i + theta_j))


def pinpoint_grad(curve: BezierCurve, r: float, X: np.ndarray, y: np.ndarray):
    """Cross-entropy at ``theta(r)`` and its gradient with respect to ``theta_be``."""
    theta = curve_point(curve, r)
    res = forward(curve.arch, theta, X)
    loss, g = cross_entropy(res.logits, y)
    grad = bezier_coefficients(r)[1] * backward(curve.arch, theta, res, g)
    return loss, grad


def train_pinpoint(curve: BezierCurve, data, cfg: OptimizerCfg,
                   rng: Optional[np.random.Generator] = None):
    """Minimize the expected loss over ``r ~ U(0, 1)``, one ``r`` per minibatch.

    Only ``theta_be`` moves (weight decay included).  Returns the trained curve
    and a log of ``(step, r, lr, loss)`` rows.
    """
    if len(data) < 1:
        raise ValueError("empty training data")
    if data.dim != curve.arch.input_dim:
        raise ValueError("data dimension does not match the curve architecture")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    theta_be = curve.theta_be.copy()
    velocity = np.zeros_like(theta_be)
    log = []
    for step, idx in enumerate(minibatches(len(data), cfg.batch_size, cfg.total_steps, rng)):
        r = float(rng.uniform(0.0, 1.0))
        current = replace(curve, theta_be=theta_be)
        loss, grad = pinpoint_grad(current, r, data.X[idx], data.y[idx])
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite curve loss at step {step} (r={r:.4f})")
        lr = cosine_lr(step, cfg)
        theta_be, velocity = sgd_step(theta_be, grad, velocity, cfg, lr)
        log.append((step, r, lr, loss))
    return replace(curve, theta_be=theta_be), log


@dataclass(frozen=True)
class CurveScanRow:
    r: float
    loss: float
    acc: float
    ens_nll: Optional[float] = None
    ens_acc: Optional[float] = None
    ens_ece: Optional[float] = None
    ens_bs: Optional[float] = None


SCAN_HEADER = ("r", "loss", "acc", "ens_nll", "ens_acc", "ens_ece", "ens_bs")


def scan_curve(curve: BezierCurve, data, grid_size: int, n_bins: int = 15,
               ensemble: bool = True) -> list[CurveScanRow]:
    """Standalone metrics at ``r = k/(grid_size-1)`` and of ``{theta_i, theta_j, theta(r)}``."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    p_i = softmax(forward(curve.arch, curve.theta_i, data.X).logits)
    p_j = softmax(forward(curve.arch, curve.theta_j, data.X).logits)
    rows = []
    for k in range(grid_size):
        r = k / (grid_size - 1)
        logits = forward(curve.arch, curve_point(curve, r), data.X).logits
        loss, _ = cross_entropy(logits, data.y)
        p = softmax(logits)
        row = CurveScanRow(r, loss, metrics.accuracy(p, data.y))
        if ensemble:
            ens = (p_i + p_j + p) / 3.0
            row = replace(
                row,
                ens_nll=metrics.nll(ens, data.y),
                ens_acc=metrics.accuracy(ens, data.y),
                ens_ece=metrics.ece(ens, data.y, n_bins),
                ens_bs=metrics.brier(ens, data.y),
            )
        rows.append(row)
    return rows


def scan_to_csv(rows: Sequence[CurveScanRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_HEADER)
    for row in rows:
        w.writerow(["" if getattr(row, k) is None else repr(float(getattr(row, k))) for k in SCAN_HEADER])
    return buf.getvalue()


def pair_key(i: int, j: int) -> tuple[int, int]:
    if i == j:
        raise ValueError("a curve needs two distinct modes")
    return (i, j) if i < j else (j, i)


def bezier_ensemble_predict(modes: Sequence[Network], pinpoints: Mapping[tuple[int, int], np.ndarray],
                            inputs: np.ndarray, r: float = 0.5) -> np.ndarray:
    """Uniform average over the modes and every pairwise curve point ``theta_ij(r)``.

    ``pinpoints`` maps an unordered index pair to that curve's ``theta_be``.
    """
    if not modes:
        raise ValueError("need at least one mode")
    arch = modes[0].arch
    if any(m.arch != arch for m in modes):
        raise ValueError("all modes must share one architecture")
    table = {pair_key(*k): v for k, v in pinpoints.items()}
    total = np.zeros((np.shape(inputs)[0], arch.class_count))
    count = 0
    for m in modes:
        total += softmax(forward(arch, m.params, inputs).logits)
        count += 1
    for i, j in combinations(range(len(modes)), 2):
        if (i, j) not in table:
            raise ValueError(f"missing pin-point for mode pair ({i}, {j})")
        curve = BezierCurve(arch, modes[i].params, modes[j].params, table[(i, j)])
        total += softmax(forward(arch, curve_point(curve, r), inputs).logits)
        count += 1
    return total / count
