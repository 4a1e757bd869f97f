"""Bridge networks: lightweight students that predict the curve-midpoint outputs.

A type I bridge reads the tapped feature of one endpoint, a type II bridge the
concatenated features of both.  The trunk is an input projection to width
``W``, three residual blocks and a dense classifier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .nn import (
    ArchSpec,
    Dense,
    DivergenceError,
    Network,
    OptimizerCfg,
    ResidualBlock,
    backward,
    cosine_lr,
    count_flops,
    features,
    fingerprint,
    forward,
    init_params,
    kl_loss,
    minibatches,
    sgd_step,
    softmax,
    sum_reports,
)
from .nn.arch import DEFAULT_FRN_EPS, check_params
from .nn.flops import FlopsReport
from .subspace import BezierCurve, curve_point

BLOCK_COUNT = 3


class BridgeKind(str, Enum):
    TYPE_I = "I"
    TYPE_II = "II"

    @classmethod
    def parse(cls, value) -> "BridgeKind":
        if isinstance(value, cls):
            return value
        v = str(value).upper()
        aliases = {"1": "I", "2": "II", "TYPEI": "I", "TYPEII": "II"}
        return cls(aliases.get(v, v))


@dataclass(frozen=True)
class BridgeSpec:
    kind: BridgeKind
    feature_dim: int
    width: int
    class_count: int
    target_r: float = 0.5
    hidden: Optional[int] = None
    eps: float = DEFAULT_FRN_EPS

    def __post_init__(self):
        object.__setattr__(self, "kind", BridgeKind.parse(self.kind))
        if self.width < 1 or self.feature_dim < 1 or self.class_count < 1:
            raise ValueError("bridge width, feature_dim and class_count must be >= 1")
        if not 0.0 < self.target_r < 1.0:
            raise ValueError("target_r must lie strictly inside (0, 1)")
        if self.hidden is not None and self.hidden < 1:
            raise ValueError("hidden width must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.feature_dim * (2 if self.kind is BridgeKind.TYPE_II else 1)

    @property
    def arch(self) -> ArchSpec:
        hidden = self.hidden or self.width
        layers = [Dense(self.input_dim, self.width)]
        layers += [ResidualBlock(self.width, hidden, self.eps) for _ in range(BLOCK_COUNT)]
        layers.append(Dense(self.width, self.class_count))
        return ArchSpec(tuple(layers), self.input_dim, self.class_count, BLOCK_COUNT)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value, "feature_dim": self.feature_dim, "width": self.width,
            "class_count": self.class_count, "target_r": self.target_r,
            "hidden": self.hidden, "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BridgeSpec":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class BridgeModel:
    """Bridge parameters plus the identity of the curve they imitate.

    ``endpoints`` are the fingerprints of the curve's ``theta_i`` and
    ``theta_j``; ``source`` names the endpoint feeding a type I bridge.
    """

    spec: BridgeSpec
    params: np.ndarray
    endpoints: tuple[str, str]
    source: Optional[str] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        check_params(self.spec.arch, self.params)
        if self.spec.kind is BridgeKind.TYPE_I and self.source not in ("i", "j"):
            raise ValueError("a type I bridge needs source 'i' or 'j'")
        if self.spec.kind is BridgeKind.TYPE_II and self.source is not None:
            raise ValueError("a type II bridge reads both endpoints; source must be None")

    @property
    def base_ids(self) -> tuple[str, ...]:
        """Fingerprints of the base networks whose features this bridge reads."""
        if self.spec.kind is BridgeKind.TYPE_II:
            return self.endpoints
        return (self.endpoints[0 if self.source == "i" else 1],)


def new_bridge(spec: BridgeSpec, curve: BezierCurve, source: Optional[str] = None,
               rng: Optional[np.random.Generator] = None) -> BridgeModel:
    rng = np.random.default_rng(0) if rng is None else rng
    if spec.kind is BridgeKind.TYPE_I and source is None:
        source = "i"
    return BridgeModel(spec, init_params(spec.arch, rng), curve.endpoint_ids, source)


def mixup(inputs: np.ndarray, alpha: float, rng: np.random.Generator,
          lam: Optional[np.ndarray] = None, perm: Optional[np.ndarray] = None) -> np.ndarray:
    """Convex combinations of each sample with a partner from a random permutation.

    ``lambda ~ Beta(alpha, alpha)`` per sample, drawn as ``G1 / (G1 + G2)`` from
    two Gamma draws.  ``alpha == 0`` disables mixing.  Labels are untouched.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if alpha < 0:
        raise ValueError("mixup alpha must be >= 0")
    if x.shape[0] < 1:
        raise ValueError("mixup needs a non-empty batch")
    if alpha == 0 and lam is None:
        return x.copy()
    n = x.shape[0]
    if perm is None:
        perm = rng.permutation(n)
    if lam is None:
        g1 = rng.gamma(alpha, 1.0, size=n)
        g2 = rng.gamma(alpha, 1.0, size=n)
        s = g1 + g2
        lam = np.where(s > 0, g1 / np.where(s > 0, s, 1.0), 0.5)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))[:, None]
    return lam * x + (1.0 - lam) * x[perm]


def _bridge_input(bridge: BridgeModel, z_i, z_j):
    spec = bridge.spec
    z_i = np.atleast_2d(np.asarray(z_i, dtype=np.float64))
    if z_i.shape[1] != spec.feature_dim:
        raise ValueError(f"feature dim {z_i.shape[1]} != bridge feature_dim {spec.feature_dim}")
    if spec.kind is BridgeKind.TYPE_I:
        if z_j is not None:
            raise ValueError("a type I bridge takes exactly one feature")
        return z_i
    if z_j is None:
        raise ValueError("a type II bridge needs features from both endpoints")
    z_j = np.atleast_2d(np.asarray(z_j, dtype=np.float64))
    if z_j.shape != z_i.shape:
        raise ValueError("type II features must have equal shapes")
    return np.concatenate([z_i, z_j], axis=1)


def bridge_forward(bridge: BridgeModel, z_i, z_j=None) -> np.ndarray:
    """Bridge logits for a batch of tapped features."""
    return forward(bridge.spec.arch, bridge.params, _bridge_input(bridge, z_i, z_j)).logits


def bridge_kl_grad(bridge: BridgeModel, teacher_probs, z_i, z_j=None):
    """Distillation KL and its gradient with respect to the bridge parameters."""
    arch = bridge.spec.arch
    res = forward(arch, bridge.params, _bridge_input(bridge, z_i, z_j))
    loss, g = kl_loss(teacher_probs, res.logits)
    return loss, backward(arch, bridge.params, res, g)


def _check_bases(bridge: BridgeModel, base_i: Network, base_j: Optional[Network],
                 curve: BezierCurve) -> list[Network]:
    if bridge.spec.kind is BridgeKind.TYPE_II:
        if base_j is None:
            raise ValueError("a type II bridge needs both endpoint networks")
        if not (np.array_equal(base_i.params, curve.theta_i) and np.array_equal(base_j.params, curve.theta_j)):
            raise ValueError("base networks are not the endpoints of the curve")
        return [base_i, base_j]
    if base_j is not None:
        raise ValueError("a type I bridge reads a single base network")
    expected = curve.theta_i if bridge.source == "i" else curve.theta_j
    if not np.array_equal(base_i.params, expected):
        raise ValueError(f"base network is not endpoint {bridge.source!r} of the curve")
    return [base_i]


def train_bridge(bridge: BridgeModel, base_i: Network, base_j: Optional[Network],
                 curve: BezierCurve, data, opt: OptimizerCfg, alpha: float = 0.4,
                 rng: Optional[np.random.Generator] = None):
    """Distill ``softmax(f(theta(target_r)))`` into the bridge on mixup inputs.

    Per minibatch: mix the inputs, read features from the frozen base
    endpoint(s), evaluate the curve teacher on the same mixed inputs and take
    one SGD step on the mean KL.  Returns the trained bridge and a log of
    ``(step, lr, kl)`` rows.
    """
    bases = _check_bases(bridge, base_i, base_j, curve)
    if curve.endpoint_ids != bridge.endpoints:
        raise ValueError("bridge was built for a different curve")
    rng = np.random.default_rng(opt.seed) if rng is None else rng
    arch = bridge.spec.arch
    teacher_theta = curve_point(curve, bridge.spec.target_r)
    params = bridge.params.copy()
    velocity = np.zeros_like(params)
    log = []
    for step, idx in enumerate(minibatches(len(data), opt.batch_size, opt.total_steps, rng)):
        x = mixup(data.X[idx], alpha, rng)
        feats = [features(b.arch, b.params, x) for b in bases]
        teacher = softmax(forward(curve.arch, teacher_theta, x).logits)
        res = forward(arch, params, np.concatenate(feats, axis=1))
        loss, g = kl_loss(teacher, res.logits)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite distillation loss at step {step}")
        lr = cosine_lr(step, opt)
        params, velocity = sgd_step(params, backward(arch, params, res, g), velocity, opt, lr)
        log.append((step, lr, loss))
    return replace(bridge, params=params), log


# -- ensembles ---------------------------------------------------------------

def _as_probs(p):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("inputs must be probability vectors")
    return p


def ensemble_type1(p_base, bridge_probs: Sequence) -> np.ndarray:
    """``(p_base + sum_k p_k) / (1 + k)`` for one mode and its type I bridges."""
    if len(bridge_probs) == 0:
        raise ValueError("need at least one bridge output")
    p_base = _as_probs(p_base)
    total = p_base.copy()
    for p in bridge_probs:
        p = _as_probs(p)
        if p.shape != p_base.shape:
            raise ValueError("all members must have the same shape")
        total = total + p
    return total / (1 + len(bridge_probs))


def ensemble_type2(p_i, p_j, p_bridge) -> np.ndarray:
    ps = [_as_probs(p) for p in (p_i, p_j, p_bridge)]
    if not ps[0].shape == ps[1].shape == ps[2].shape:
        raise ValueError("all members must have the same shape")
    return (ps[0] + ps[1] + ps[2]) / 3.0


@dataclass(frozen=True, eq=False)
class BezierMember:
    curve: BezierCurve
    r: float = 0.5


Member = Union[Network, BezierMember, BridgeModel]


def _resolve(members: Sequence[Member], declared: Sequence[Network]) -> dict[str, Network]:
    bases: dict[str, Network] = {}
    for net in list(declared) + [m for m in members if isinstance(m, Network)]:
        bases.setdefault(net.fingerprint, net)
    for m in members:
        if isinstance(m, BridgeModel):
            for fid in m.base_ids:
                if fid not in bases:
                    raise ValueError(f"bridge base {fid} is neither a member nor a declared base")
    return bases


def compose_ensemble(members: Sequence[Member], inputs,
                     declared: Sequence[Network] = ()) -> np.ndarray:
    """Uniform average of mode, curve-point and bridge members.

    Each base network runs at most once; its logits and tapped feature are
    shared by the mode member and every bridge attached to it.
    """
    if not members:
        raise ValueError("an ensemble needs at least one member")
    bases = _resolve(members, declared)
    cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def run(fid: str):
        if fid not in cache:
            net = bases[fid]
            res = forward(net.arch, net.params, inputs)
            cache[fid] = (softmax(res.logits), res.feature)
        return cache[fid]

    # identical members are merged and weighted by multiplicity, so k copies of
    # one member reproduce its output bit for bit
    groups: dict[tuple, list] = {}
    for m in members:
        key = _member_key(m)
        if key in groups:
            groups[key][1] += 1
        else:
            groups[key] = [m, 1]
    total = None
    for m, count in groups.values():
        if isinstance(m, Network):
            p = run(m.fingerprint)[0]
        elif isinstance(m, BezierMember):
            p = softmax(forward(m.curve.arch, curve_point(m.curve, m.r), inputs).logits)
        else:
            feats = [run(fid)[1] for fid in m.base_ids]
            p = softmax(bridge_forward(m, *feats))
        p = p * (count / len(members))
        total = p if total is None else total + p
    return total


def _member_key(m: Member) -> tuple:
    if isinstance(m, Network):
        return ("mode", m.fingerprint)
    if isinstance(m, BezierMember):
        return ("bezier", fingerprint(m.curve.arch, m.curve.theta_be), m.curve.endpoint_ids, float(m.r))
    if isinstance(m, BridgeModel):
        return ("bridge", fingerprint(m.spec.arch, m.params), m.endpoints, m.source)
    raise TypeError(f"unsupported ensemble member {m!r}")


def ensemble_flops(members: Sequence[Member], declared: Sequence[Network] = (),
                   reference: Optional[FlopsReport] = None) -> FlopsReport:
    """Per-sample inference cost of :func:`compose_ensemble` for these members."""
    bases = _resolve(members, declared)
    needed: list[str] = []
    reports = []
    for m in members:
        if isinstance(m, Network):
            ids = [m.fingerprint]
        elif isinstance(m, BridgeModel):
            ids = list(m.base_ids)
            reports.append(count_flops(m.spec.arch))
        elif isinstance(m, BezierMember):
            ids = []
            reports.append(count_flops(m.curve.arch))
        else:
            raise TypeError(f"unsupported ensemble member {m!r}")
        needed += [fid for fid in ids if fid not in needed]
    reports += [count_flops(bases[fid].arch) for fid in needed]
    return sum_reports(reports, reference)
