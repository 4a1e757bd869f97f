"""SGD with momentum, cosine learning-rate schedule and the minibatch loop."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .arch import ArchSpec, init_params
from .functional import backward, forward
from .losses import cross_entropy


class DivergenceError(RuntimeError):
    """Raised when a training run produces a non-finite loss or update."""


@dataclass(frozen=True)
class OptimizerCfg:
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    total_steps: int = 1000
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def sgd_step(params, grads, velocity, cfg: OptimizerCfg, lr: float):
    """One momentum step: ``v' = mu*v + g + wd*theta``, ``theta' = theta - lr*v'``."""
    if not (params.shape == grads.shape == velocity.shape):
        raise ValueError("params, grads and velocity must have equal shapes")
    v = cfg.momentum * velocity + grads + cfg.weight_decay * params
    new = params - lr * v
    if not (np.all(np.isfinite(new)) and np.all(np.isfinite(v))):
        raise DivergenceError(f"non-finite parameter update (lr={lr:g})")
    return new, v


def cosine_lr(step: int, cfg: OptimizerCfg) -> float:
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.total_steps))


def minibatches(n: int, batch_size: int, total_steps: int,
                rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Yield ``total_steps`` index batches, reshuffling at every epoch start."""
    step = 0
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if step == total_steps:
                return
            yield order[start:start + batch_size]
            step += 1


def train_network(arch: ArchSpec, data, cfg: OptimizerCfg, params=None):
    """Train a classifier with cross-entropy from a fresh seeded init.

    Returns ``(params, log)`` where ``log`` holds one ``(step, lr, loss)``
    tuple per optimizer step.
    """
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(arch, rng)
    params = params.copy()
    velocity = np.zeros_like(params)
    log = []
    for step, idx in enumerate(minibatches(len(data.y), cfg.batch_size, cfg.total_steps, rng)):
        res = forward(arch, params, data.X[idx])
        loss, g = cross_entropy(res.logits, data.y[idx])
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")
        lr = cosine_lr(step, cfg)
        params, velocity = sgd_step(params, backward(arch, params, res, g), velocity, cfg, lr)
        log.append((step, lr, loss))
    return params, log
