"""Analytic forward-pass FLOPs and parameter counts.

Conventions: a Dense layer costs ``2*d_in*d_out`` multiply-adds plus ``d_out``
for the bias; ReLU costs 1 per element; FRN (normalize, scale, shift and
threshold) costs 6 per element; a residual add costs 1 per element.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .arch import FRN, ArchSpec, Dense, ReLU, ResidualBlock

FRN_FLOPS_PER_ELEMENT = 6
RELU_FLOPS_PER_ELEMENT = 1
ADD_FLOPS_PER_ELEMENT = 1


@dataclass(frozen=True)
class FlopsReport:
    total_flops: int
    param_count: int
    relative_flops: Optional[float] = None
    relative_params: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "total_flops": self.total_flops,
            "param_count": self.param_count,
            "relative_flops": self.relative_flops,
            "relative_params": self.relative_params,
        }


def _dense_flops(d_in: int, d_out: int, bias: bool) -> int:
    return 2 * d_in * d_out + (d_out if bias else 0)


def layer_flops(layer) -> int:
    if isinstance(layer, Dense):
        return _dense_flops(layer.d_in, layer.d_out, layer.bias)
    if isinstance(layer, FRN):
        return FRN_FLOPS_PER_ELEMENT * layer.width
    if isinstance(layer, ResidualBlock):
        w, h = layer.width, layer.hidden
        return (
            _dense_flops(w, h, True)
            + FRN_FLOPS_PER_ELEMENT * h
            + RELU_FLOPS_PER_ELEMENT * h
            + _dense_flops(h, w, True)
            + ADD_FLOPS_PER_ELEMENT * w
        )
    raise TypeError(f"unknown layer {layer!r}")


def _layer_total(arch: ArchSpec) -> int:
    total = 0
    for layer, d_in in zip(arch.layers, arch.dims):
        if isinstance(layer, ReLU):
            total += RELU_FLOPS_PER_ELEMENT * d_in
        else:
            total += layer_flops(layer)
    return total


def relative_to(flops: int, params: int, reference: Optional[FlopsReport]) -> FlopsReport:
    if reference is None:
        return FlopsReport(flops, params)
    if reference.total_flops <= 0 or reference.param_count <= 0:
        raise ValueError("reference FLOPs and parameter count must be positive")
    return FlopsReport(
        flops, params, flops / reference.total_flops, params / reference.param_count
    )


def count_flops(arch: ArchSpec, reference: Optional[FlopsReport] = None) -> FlopsReport:
    """Per-sample forward FLOPs of ``arch``, optionally relative to ``reference``."""
    return relative_to(_layer_total(arch), arch.param_count, reference)


def sum_reports(reports: Iterable[FlopsReport],
                reference: Optional[FlopsReport] = None) -> FlopsReport:
    """Cost of running every member once: FLOPs and parameters add up."""
    reports = list(reports)
    return relative_to(
        sum(r.total_flops for r in reports), sum(r.param_count for r in reports), reference
    )
