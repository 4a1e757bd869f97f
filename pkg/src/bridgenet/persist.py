"""Conversions between model objects and :class:`~bridgenet.dataio.Checkpoint`."""
from __future__ import annotations

from typing import Union

import numpy as np

from .bridge import BridgeModel, BridgeSpec
from .dataio import Checkpoint, CheckpointError, load_checkpoint
from .nn import ArchSpec, Network, fingerprint
from .subspace import BezierCurve


def mode_checkpoint(net: Network, **metadata) -> Checkpoint:
    meta = {"fingerprint": net.fingerprint, **metadata}
    return Checkpoint("mode", net.arch.to_dict(), net.params.copy(), meta)


def curve_checkpoint(curve: BezierCurve, **metadata) -> Checkpoint:
    payload = np.concatenate([curve.theta_i, curve.theta_j, curve.theta_be])
    meta = {"endpoints": list(curve.endpoint_ids),
            "pinpoint": fingerprint(curve.arch, curve.theta_be), **metadata}
    return Checkpoint("curve_pinpoint", curve.arch.to_dict(), payload, meta)


def bridge_checkpoint(bridge: BridgeModel, **metadata) -> Checkpoint:
    meta = {**bridge.metadata, **metadata, "bridge_spec": bridge.spec.to_dict(),
            "endpoints": list(bridge.endpoints), "source": bridge.source}
    return Checkpoint("bridge", bridge.spec.arch.to_dict(), bridge.params.copy(), meta)


def to_network(ckpt: Checkpoint) -> Network:
    if ckpt.role != "mode":
        raise CheckpointError(f"expected a mode checkpoint, got role {ckpt.role!r}")
    return Network(ArchSpec.from_dict(ckpt.arch), ckpt.params)


def to_curve(ckpt: Checkpoint) -> BezierCurve:
    if ckpt.role != "curve_pinpoint":
        raise CheckpointError(f"expected a curve checkpoint, got role {ckpt.role!r}")
    arch = ArchSpec.from_dict(ckpt.arch)
    p = arch.param_count
    v = ckpt.params
    return BezierCurve(arch, v[:p].copy(), v[p:2 * p].copy(), v[2 * p:].copy())


def to_bridge(ckpt: Checkpoint) -> BridgeModel:
    if ckpt.role != "bridge":
        raise CheckpointError(f"expected a bridge checkpoint, got role {ckpt.role!r}")
    meta = dict(ckpt.metadata)
    try:
        spec = BridgeSpec.from_dict(meta.pop("bridge_spec"))
        endpoints = tuple(meta.pop("endpoints"))
        source = meta.pop("source")
    except KeyError as exc:
        raise CheckpointError(f"bridge checkpoint lacks metadata field {exc}") from None
    return BridgeModel(spec, ckpt.params, endpoints, source, meta)


def load_any(path) -> Union[Network, BezierCurve, BridgeModel]:
    ckpt = load_checkpoint(path)
    return {"mode": to_network, "curve_pinpoint": to_curve, "bridge": to_bridge}[ckpt.role](ckpt)
