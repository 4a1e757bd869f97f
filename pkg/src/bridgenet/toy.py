"""Reference toy pipeline: spirals, a few modes, their curves and bridges.

Shared by the acceptance tests and the README quick start so both exercise
the same settings.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Optional

import numpy as np

from .bridge import BridgeModel, BridgeSpec, new_bridge, train_bridge
from .dataio import Dataset, gen_spirals, split
from .nn import ArchSpec, Network, OptimizerCfg, mlp_arch, train_network
from .subspace import BezierCurve, init_pinpoint, train_pinpoint


@dataclass(frozen=True)
class ToyConfig:
    n_per_class: int = 700
    classes: int = 3
    noise: float = 0.1
    ratios: tuple = (0.2, 0.3, 0.5)
    width: int = 32
    blocks: int = 2
    mode_opt: OptimizerCfg = OptimizerCfg(base_lr=0.05, weight_decay=0.0, total_steps=2000, batch_size=64)
    curve_opt: OptimizerCfg = OptimizerCfg(base_lr=0.05, weight_decay=0.0, total_steps=2000, batch_size=64)
    bridge_opt: OptimizerCfg = OptimizerCfg(base_lr=0.05, weight_decay=0.0, total_steps=2000, batch_size=64)
    bridge_width: int = 16
    alpha: float = 0.4
    target_r: float = 0.5


@dataclass
class ToyRun:
    config: ToyConfig
    arch: ArchSpec
    train: Dataset
    val: Dataset
    test: Dataset
    modes: list[Network] = field(default_factory=list)
    curves: dict[tuple[int, int], BezierCurve] = field(default_factory=dict)


def prepare(seed: int, config: ToyConfig = ToyConfig(), n_modes: int = 2,
            pairs: Optional[list[tuple[int, int]]] = None) -> ToyRun:
    """Generate data, train ``n_modes`` modes and a curve for each pair."""
    ds = gen_spirals(config.n_per_class, config.classes, config.noise, seed)
    train, val, test = split(ds, config.ratios, seed)
    arch = mlp_arch(ds.dim, ds.K, config.width, config.blocks)
    run = ToyRun(config, arch, train, val, test)
    for m in range(n_modes):
        params, _ = train_network(arch, train, replace(config.mode_opt, seed=1000 * seed + m))
        run.modes.append(Network(arch, params))
    for i, j in pairs if pairs is not None else combinations(range(n_modes), 2):
        curve = init_pinpoint(arch, run.modes[i].params, run.modes[j].params)
        run.curves[(i, j)], _ = train_pinpoint(
            curve, train, replace(config.curve_opt, seed=1000 * seed + 100 + 10 * i + j)
        )
    return run


def fit_bridge(run: ToyRun, pair: tuple[int, int], kind: str = "II", source: str = "i",
               width: Optional[int] = None, seed: int = 0) -> BridgeModel:
    cfg = run.config
    curve = run.curves[pair]
    spec = BridgeSpec(kind, run.arch.feature_dim, width or cfg.bridge_width, run.arch.class_count,
                      cfg.target_r)
    rng = np.random.default_rng(seed)
    bridge = new_bridge(spec, curve, source if kind in ("I", "1") else None, rng)
    i, j = pair
    if bridge.spec.kind.value == "II":
        bases = (run.modes[i], run.modes[j])
    else:
        bases = (run.modes[i] if source == "i" else run.modes[j], None)
    trained, _ = train_bridge(bridge, bases[0], bases[1], curve, run.train,
                              replace(cfg.bridge_opt, seed=seed), cfg.alpha, rng)
    return trained
