"""Uncertainty metrics, temperature scaling, the DEE score and correspondence reports.

All functions take ``(N, K)`` probability matrices.  Probabilities are floored
at ``PROB_FLOOR`` before any logarithm.  Argmax ties resolve to the lowest
class index.  Reductions run in ascending sample order.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

PROB_FLOOR = 1e-12
DEFAULT_BINS = 15
T_LOWER, T_UPPER = 0.05, 20.0
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _check(probs, labels=None):
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError("probabilities must be a non-empty (N, K) matrix")
    if labels is None:
        return p, None
    y = np.asarray(labels)
    if y.shape != (p.shape[0],):
        raise ValueError(f"{y.shape} labels for {p.shape[0]} rows")
    if not np.issubdtype(y.dtype, np.integer) or np.any(y < 0) or np.any(y >= p.shape[1]):
        raise ValueError(f"labels must be integers in [0, {p.shape[1]})")
    return p, y


def accuracy(probs, labels) -> float:
    p, y = _check(probs, labels)
    return float(np.mean(np.argmax(p, axis=1) == y))


def nll(probs, labels) -> float:
    p, y = _check(probs, labels)
    py = np.maximum(p[np.arange(len(y)), y], PROB_FLOOR)
    return float(np.mean(-np.log(py)))


def brier(probs, labels) -> float:
    p, y = _check(probs, labels)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))


def bin_edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1) / n_bins


def ece(probs, labels, n_bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error over max-confidence bins ``[(b-1)/n, b/n)``.

    The last bin is closed at 1.  Empty bins contribute nothing.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    p, y = _check(probs, labels)
    conf = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == y).astype(np.float64)
    idx = np.searchsorted(bin_edges(n_bins), conf, side="right") - 1
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    total = 0.0
    for b in range(n_bins):
        n_b = int(counts[b])
        if n_b:
            total += n_b * abs(acc_sum[b] / n_b - conf_sum[b] / n_b)
    return float(total / len(y))


# -- temperature scaling -------------------------------------------------------

def apply_temperature(probs, T: float) -> np.ndarray:
    """Row-wise ``p ** (1/T)`` renormalized; ``T = 1`` returns a copy unchanged."""
    if not T > 0:
        raise ValueError("temperature must be positive")
    p, _ = _check(probs)
    if T == 1.0:
        return p.copy()
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    z = (logp - logp.max(axis=1, keepdims=True)) / T
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_temperature(probs, labels, tol: float = 1e-4) -> float:
    """Temperature minimizing validation NLL.

    Golden-section search on ``ln T`` over ``[ln 0.05, ln 20]``; the search
    bounds and ``T = 1`` are also scored so the result never does worse than
    any of them.
    """
    p, y = _check(probs, labels)

    def objective(log_t: float) -> float:
        return nll(apply_temperature(p, math.exp(log_t)), y)

    a, b = math.log(T_LOWER), math.log(T_UPPER)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = objective(d)
    candidates = [(nll(p, y), 1.0), (objective(0.5 * (a + b)), math.exp(0.5 * (a + b))),
                  (nll(apply_temperature(p, T_LOWER), y), T_LOWER),
                  (nll(apply_temperature(p, T_UPPER), y), T_UPPER)]
    best = min(candidates, key=lambda item: item[0])
    return best[1]


# -- DEE ----------------------------------------------------------------------

@dataclass(frozen=True)
class DEEBaseline:
    """NLL of DE-m for increasing ensemble sizes m."""

    sizes: tuple[float, ...]
    nlls: tuple[float, ...]

    def __post_init__(self):
        if len(self.sizes) != len(self.nlls) or len(self.sizes) < 2:
            raise ValueError("a DEE baseline needs at least two (m, nll) points")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])) or self.sizes[0] <= 0:
            raise ValueError("baseline sizes must be positive and strictly increasing")
        if not all(math.isfinite(v) for v in self.nlls):
            raise ValueError("baseline NLL values must be finite")

    @classmethod
    def from_pairs(cls, pairs) -> "DEEBaseline":
        pairs = list(pairs)
        return cls(tuple(float(m) for m, _ in pairs), tuple(float(v) for _, v in pairs))


def dee(nll_value: float, baseline: DEEBaseline) -> float:
    """Invert the piecewise-linear map ``m -> NLL(DE-m)`` at ``nll_value``.

    Beyond the first and last knots the end segments are extended.  When the
    baseline is not monotone the first crossing from the left wins.  The
    result is clamped at 0.
    """
    m, v = baseline.sizes, baseline.nlls
    if all(x == v[0] for x in v):
        raise ValueError("baseline NLL is constant; DEE is undefined")
    x = float(nll_value)

    def clamp(val: float) -> float:
        return max(0.0, val)

    # left extension (m <= m_1)
    slope = (v[1] - v[0]) / (m[1] - m[0])
    if x == v[0]:
        return clamp(m[0])
    if slope != 0 and ((slope < 0 and x > v[0]) or (slope > 0 and x < v[0])):
        return clamp(m[0] + (x - v[0]) / slope)
    for k in range(len(m) - 1):
        lo, hi = v[k], v[k + 1]
        if x == hi:
            return clamp(m[k + 1])
        if min(lo, hi) < x < max(lo, hi):
            return clamp(m[k] + (x - lo) / (hi - lo) * (m[k + 1] - m[k]))
    slope = (v[-1] - v[-2]) / (m[-1] - m[-2])
    if slope != 0:
        ext = m[-1] + (x - v[-1]) / slope
        if ext >= m[-1]:
            return clamp(ext)
    raise ValueError(f"NLL {x} is never reached by the baseline")


# -- correspondence ------------------------------------------------------------

def r2_score(target, pred) -> float:
    """Entry-pooled coefficient of determination against the grand target mean."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {p.shape}")
    resid = float(np.sum((t - p) ** 2))
    denom = float(np.sum((t - t.mean()) ** 2))
    if denom == 0.0:
        if resid == 0.0:
            return 1.0
        raise ValueError("constant target with non-zero residual: R^2 undefined")
    return 1.0 - resid / denom


def mean_kl(target, pred) -> float:
    """Mean over rows of KL(target || pred); pred floored at ``PROB_FLOOR``."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 2:
        raise ValueError(f"shape mismatch {t.shape} vs {p.shape}")
    safe_t = np.where(t > 0, t, 1.0)
    terms = np.where(t > 0, t * (np.log(safe_t) - np.log(np.maximum(p, PROB_FLOOR))), 0.0)
    return float(max(np.mean(terms.sum(axis=1)), 0.0))


@dataclass(frozen=True)
class CorrespondenceRow:
    label: str
    r2: float
    kl: float


def correspondence_report(target_probs, candidates: Sequence[tuple[str, np.ndarray]]):
    """R^2 and mean KL of each labelled candidate against the target outputs."""
    return [CorrespondenceRow(label, r2_score(target_probs, p), mean_kl(target_probs, p))
            for label, p in candidates]


def correspondence_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "r2", "kl"])
    for row in rows:
        w.writerow([row.label, repr(row.r2), repr(row.kl)])
    return buf.getvalue()


# -- full report ---------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    acc: float
    nll: float
    brier: float
    ece: float
    temperature: float
    n: int
    dee: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "acc": self.acc, "nll": self.nll, "ece": self.ece, "bs": self.brier,
            "dee": self.dee, "temperature": self.temperature, "n": self.n,
        }


REPORT_KEYS = frozenset({"acc", "nll", "ece", "bs", "dee", "temperature", "n"})


def evaluate(probs, labels, val_probs=None, val_labels=None, n_bins: int = DEFAULT_BINS,
             baseline: Optional[DEEBaseline] = None) -> EvalReport:
    """Calibrated metrics: temperature fitted on validation outputs when given."""
    p, y = _check(probs, labels)
    T = 1.0
    if val_probs is not None:
        T = fit_temperature(val_probs, val_labels)
    scaled = apply_temperature(p, T)
    value = nll(scaled, y)
    return EvalReport(
        acc=accuracy(scaled, y),
        nll=value,
        brier=brier(scaled, y),
        ece=ece(scaled, y, n_bins),
        temperature=T,
        n=len(y),
        dee=None if baseline is None else dee(value, baseline),
    )
