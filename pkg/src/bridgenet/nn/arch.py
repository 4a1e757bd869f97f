"""Layer descriptors, architecture specs and the flat parameter layout.

Every network is described by an :class:`ArchSpec` and carries its trainable
scalars in one flat float64 vector.  The layout is deterministic: layer by
layer, and inside a layer in the order returned by :func:`layer_param_shapes`
(weights before biases, arrays flattened row-major).  Dense weights are stored
with shape ``(d_in, d_out)`` so that a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

DEFAULT_FRN_EPS = 1e-6


@dataclass(frozen=True)
class Dense:
    d_in: int
    d_out: int
    bias: bool = True


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class FRN:
    """Filter response normalization followed by a thresholded linear unit."""

    width: int
    eps: float = DEFAULT_FRN_EPS


@dataclass(frozen=True)
class ResidualBlock:
    """``u + Dense_b(ReLU(FRN(Dense_a(u))))`` with ``Dense_a: width -> hidden``."""

    width: int
    hidden: int
    eps: float = DEFAULT_FRN_EPS


Layer = Union[Dense, ReLU, FRN, ResidualBlock]

_LAYER_TYPES = {"Dense": Dense, "ReLU": ReLU, "FRN": FRN, "ResidualBlock": ResidualBlock}


def layer_param_shapes(layer: Layer) -> list[tuple[str, tuple[int, ...]]]:
    if isinstance(layer, Dense):
        shapes = [("W", (layer.d_in, layer.d_out))]
        if layer.bias:
            shapes.append(("b", (layer.d_out,)))
        return shapes
    if isinstance(layer, FRN):
        w = layer.width
        return [("gamma", (w,)), ("beta", (w,)), ("tau", (w,))]
    if isinstance(layer, ResidualBlock):
        w, h = layer.width, layer.hidden
        return [
            ("Wa", (w, h)), ("ba", (h,)),
            ("gamma", (h,)), ("beta", (h,)), ("tau", (h,)),
            ("Wb", (h, w)), ("bb", (w,)),
        ]
    if isinstance(layer, ReLU):
        return []
    raise TypeError(f"unknown layer {layer!r}")


def _out_dim(layer: Layer, d_in: int) -> int:
    if isinstance(layer, Dense):
        if layer.d_in != d_in:
            raise ValueError(f"Dense expects input dim {layer.d_in}, got {d_in}")
        return layer.d_out
    if isinstance(layer, (FRN, ResidualBlock)):
        if layer.width != d_in:
            raise ValueError(f"{type(layer).__name__} expects width {layer.width}, got {d_in}")
        return d_in
    return d_in


@dataclass(frozen=True)
class ParamSlot:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple[Layer, ...]
    input_dim: int
    class_count: int
    feature_tap: int
    # derived
    dims: tuple[int, ...] = field(init=False, repr=False, compare=False)
    layout: tuple[tuple[ParamSlot, ...], ...] = field(init=False, repr=False, compare=False)
    param_count: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if self.input_dim < 1 or self.class_count < 1:
            raise ValueError("input_dim and class_count must be >= 1")
        if not layers:
            raise ValueError("architecture has no layers")
        if not 0 <= self.feature_tap < len(layers) - 1:
            raise ValueError(
                f"feature_tap {self.feature_tap} must index a layer before the classifier "
                f"(0..{len(layers) - 2})"
            )
        dims = [self.input_dim]
        for layer in layers:
            dims.append(_out_dim(layer, dims[-1]))
        if dims[-1] != self.class_count:
            raise ValueError(f"network outputs {dims[-1]} values, class_count is {self.class_count}")
        offset = 0
        layout = []
        for layer in layers:
            slots = []
            for name, shape in layer_param_shapes(layer):
                slot = ParamSlot(name, offset, shape)
                slots.append(slot)
                offset += slot.size
            layout.append(tuple(slots))
        object.__setattr__(self, "dims", tuple(dims))
        object.__setattr__(self, "layout", tuple(layout))
        object.__setattr__(self, "param_count", offset)

    @property
    def feature_dim(self) -> int:
        return self.dims[self.feature_tap + 1]

    def unflatten(self, params: np.ndarray) -> list[dict[str, np.ndarray]]:
        """Per-layer dicts of reshaped views into ``params`` (no copies)."""
        check_params(self, params)
        return [
            {s.name: params[s.offset:s.offset + s.size].reshape(s.shape) for s in slots}
            for slots in self.layout
        ]

    def to_dict(self) -> dict[str, Any]:
        layers = []
        for layer in self.layers:
            entry = {"type": type(layer).__name__}
            entry.update(layer.__dict__)
            layers.append(entry)
        return {
            "layers": layers,
            "input_dim": self.input_dim,
            "class_count": self.class_count,
            "feature_tap": self.feature_tap,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ArchSpec":
        layers = []
        for entry in d["layers"]:
            entry = dict(entry)
            kind = entry.pop("type")
            if kind not in _LAYER_TYPES:
                raise ValueError(f"unknown layer type {kind!r}")
            layers.append(_LAYER_TYPES[kind](**entry))
        return cls(tuple(layers), int(d["input_dim"]), int(d["class_count"]), int(d["feature_tap"]))


def check_params(arch: ArchSpec, params: np.ndarray) -> None:
    if not isinstance(params, np.ndarray) or params.ndim != 1:
        raise ValueError("parameters must be a 1-D numpy array")
    if params.shape[0] != arch.param_count:
        raise ValueError(
            f"parameter vector has length {params.shape[0]}, architecture needs {arch.param_count}"
        )


def mlp_arch(input_dim: int, class_count: int, width: int = 32, blocks: int = 2,
             eps: float = DEFAULT_FRN_EPS) -> ArchSpec:
    """Residual MLP used as the base network.

    ``Dense(D, W) -> FRN -> ResidualBlock x blocks -> Dense(W, K)``; the feature
    tap is the last hidden layer (the stem FRN when ``blocks == 0``).
    """
    layers: list[Layer] = [Dense(input_dim, width), FRN(width, eps)]
    layers += [ResidualBlock(width, width, eps) for _ in range(blocks)]
    tap = len(layers) - 1
    layers.append(Dense(width, class_count))
    return ArchSpec(tuple(layers), input_dim, class_count, tap)


def init_params(arch: ArchSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform dense weights, zero biases, FRN gamma=1, beta=0, tau=0."""
    params = np.zeros(arch.param_count)
    views = arch.unflatten(params)
    for layer, view in zip(arch.layers, views):
        for name, arr in view.items():
            if arr.ndim == 2:
                limit = np.sqrt(6.0 / (arr.shape[0] + arr.shape[1]))
                arr[...] = rng.uniform(-limit, limit, size=arr.shape)
            elif name == "gamma":
                arr[...] = 1.0
    return params


def fingerprint(arch: ArchSpec, params: np.ndarray) -> str:
    """Short content hash identifying one parameter vector on one architecture."""
    h = hashlib.sha256(json.dumps(arch.to_dict(), sort_keys=True).encode())
    h.update(np.ascontiguousarray(params, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Network:
    """An architecture together with one parameter vector."""

    arch: ArchSpec
    params: np.ndarray

    def __post_init__(self):
        check_params(self.arch, self.params)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.arch, self.params)

