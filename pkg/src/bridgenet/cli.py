"""Command-line harness: ``bridgenet <command> ...``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or config error.
Every output file is written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import argparse
import copy
import io
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import metrics
from .bridge import (
    BezierMember,
    BridgeKind,
    BridgeModel,
    BridgeSpec,
    compose_ensemble,
    ensemble_flops,
    new_bridge,
    train_bridge,
)
from .dataio import CheckpointError, atomic_write, gen_blobs, gen_spirals, load_csv, save_csv, split
from .nn import DivergenceError, Network, OptimizerCfg, count_flops, mlp_arch, sum_reports, train_network
from .nn.flops import FlopsReport
from .persist import bridge_checkpoint, curve_checkpoint, load_any, mode_checkpoint
from .dataio import save_checkpoint
from .plot import line_chart
from .subspace import BezierCurve, init_pinpoint, scan_curve, scan_to_csv, train_pinpoint


class UsageError(Exception):
    """Bad flags, config or member specs (exit code 2)."""


# -- config -------------------------------------------------------------------

_OPT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "base_lr": {"type": "number", "exclusiveMinimum": 0},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "weight_decay": {"type": "number", "minimum": 0},
        "total_steps": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "arch": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width": {"type": "integer", "minimum": 1},
                "blocks": {"type": "integer", "minimum": 0},
                "frn_eps": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"mode": _OPT_SCHEMA, "curve": _OPT_SCHEMA, "bridge": _OPT_SCHEMA},
        },
        "mixup": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"alpha": {"type": "number", "minimum": 0}},
        },
        "bridge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["I", "II"]},
                "width": {"type": "integer", "minimum": 1},
                "hidden": {"type": ["integer", "null"], "minimum": 1},
                "target_r": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_bins": {"type": "integer", "minimum": 1},
                "dee_baseline": {"type": ["string", "null"]},
            },
        },
    },
}

_DEFAULT_OPT = {"base_lr": 0.05, "momentum": 0.9, "weight_decay": 0.0, "total_steps": 2000, "batch_size": 64}

DEFAULT_CONFIG = {
    "seed": 0,
    "arch": {"width": 32, "blocks": 2, "frn_eps": 1e-6},
    "optimizer": {"mode": dict(_DEFAULT_OPT), "curve": dict(_DEFAULT_OPT), "bridge": dict(_DEFAULT_OPT)},
    "mixup": {"alpha": 0.4},
    "bridge": {"kind": "II", "width": 16, "hidden": None, "target_r": 0.5},
    "eval": {"n_bins": 15, "dee_baseline": None},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path: Optional[str]) -> dict:
    """Schema-checked config merged over the defaults; unknown keys are rejected."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"{path}: config error at {where}: {exc.message}") from None
    return _merge(DEFAULT_CONFIG, raw)


def _opt(config: dict, stage: str, seed: int) -> OptimizerCfg:
    return OptimizerCfg(seed=seed, **config["optimizer"][stage])


# -- small helpers -------------------------------------------------------------

def _write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _log_path(out: str) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".log.csv")


def _load(path, kind):
    obj = load_any(path)
    if not isinstance(obj, kind):
        names = {Network: "mode", BezierCurve: "curve", BridgeModel: "bridge"}
        raise UsageError(f"{path}: expected a {names[kind]} checkpoint")
    return obj


def _data(path):
    return load_csv(path)


def _check_data(arch, ds, path):
    if ds.dim != arch.input_dim:
        raise UsageError(f"{path}: data has {ds.dim} features, model expects {arch.input_dim}")
    if ds.K > arch.class_count:
        raise UsageError(f"{path}: labels reach {ds.K - 1}, model has {arch.class_count} classes")


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    if args.classes < 2:
        raise UsageError("--classes must be >= 2")
    if args.n < 1 or args.noise < 0:
        raise UsageError("--n must be >= 1 and --noise >= 0")
    if args.kind == "spirals":
        ds = gen_spirals(args.n, args.classes, args.noise, args.seed)
    else:
        ds = gen_blobs(args.n, args.classes, args.dim, args.separation, args.noise, args.seed)
    parts = ()
    if args.split:
        try:
            ratios = tuple(float(v) for v in args.split.split(","))
            parts = split(ds, ratios, args.seed)
        except ValueError as exc:
            raise UsageError(f"--split: {exc}") from None
    save_csv(ds, args.out)
    out = Path(args.out)
    for tag, part in zip(("train", "val", "test"), parts):
        save_csv(part, out.with_name(f"{out.stem}-{tag}{out.suffix}"))


def cmd_train_mode(args) -> None:
    config = load_config(args.config)
    seed = config["seed"] if args.seed is None else args.seed
    train = _data(args.train)
    a = config["arch"]
    arch = mlp_arch(train.dim, train.K, a["width"], a["blocks"], a["frn_eps"])
    params, log = train_network(arch, train, _opt(config, "mode", seed))
    net = Network(arch, params)
    report = None
    if args.val:
        val = _data(args.val)
        _check_data(arch, val, args.val)
        probs = compose_ensemble([net], val.X)
        report = metrics.evaluate(probs, val.y, probs, val.y, config["eval"]["n_bins"]).to_dict()
    save_checkpoint(mode_checkpoint(net, seed=seed, val_report=report), args.out)
    atomic_write(_log_path(args.out), _rows_csv(("step", "lr", "loss"), log))
    if report is not None:
        print(json.dumps(report, sort_keys=True))


def cmd_train_curve(args) -> None:
    config = load_config(args.config)
    seed = config["seed"] if args.seed is None else args.seed
    a, b = _load(args.mode_a, Network), _load(args.mode_b, Network)
    if a.arch != b.arch:
        raise UsageError("the two modes have different architectures")
    train = _data(args.train)
    _check_data(a.arch, train, args.train)
    curve, log = train_pinpoint(init_pinpoint(a.arch, a.params, b.params), train,
                                _opt(config, "curve", seed))
    save_checkpoint(curve_checkpoint(curve, seed=seed), args.out)
    atomic_write(_log_path(args.out), _rows_csv(("step", "r", "lr", "loss"), log))


def cmd_scan_curve(args) -> None:
    if args.grid < 2:
        raise UsageError("--grid must be >= 2")
    curve = _load(args.curve, BezierCurve)
    data = _data(args.data)
    _check_data(curve.arch, data, args.data)
    rows = scan_curve(curve, data, args.grid)
    atomic_write(args.out, scan_to_csv(rows))
    if args.plot:
        xs = [r.r for r in rows]
        svg = line_chart(
            xs,
            {"loss θ(r)": [r.loss for r in rows], "ens NLL": [r.ens_nll for r in rows],
             "ens ECE": [r.ens_ece for r in rows], "ens BS": [r.ens_bs for r in rows]},
            title="Bezier curve scan", xlabel="r", ylabel="metric",
        )
        atomic_write(args.plot, svg)


def cmd_train_bridge(args) -> None:
    config = load_config(args.config)
    seed = config["seed"] if args.seed is None else args.seed
    kind = BridgeKind.parse(args.type)
    curve = _load(args.curve, BezierCurve)
    bases = [_load(p, Network) for p in args.base or []]
    need = 2 if kind is BridgeKind.TYPE_II else 1
    if len(bases) != need:
        raise UsageError(f"a type {kind.value} bridge needs {need} --base checkpoint(s), got {len(bases)}")
    source = None
    if kind is BridgeKind.TYPE_II:
        if not (np.array_equal(bases[0].params, curve.theta_i) and np.array_equal(bases[1].params, curve.theta_j)):
            raise UsageError("--base checkpoints must be the curve endpoints (mode A then mode B)")
    elif np.array_equal(bases[0].params, curve.theta_i):
        source = "i"
    elif np.array_equal(bases[0].params, curve.theta_j):
        source = "j"
    else:
        raise UsageError("--base checkpoint is not an endpoint of the curve")
    b = config["bridge"]
    width = args.width if args.width is not None else b["width"]
    target_r = args.r if args.r is not None else b["target_r"]
    alpha = args.alpha if args.alpha is not None else config["mixup"]["alpha"]
    try:
        spec = BridgeSpec(kind, curve.arch.feature_dim, width, curve.arch.class_count, target_r, b["hidden"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if alpha < 0:
        raise UsageError("--alpha must be >= 0")
    train = _data(args.train)
    _check_data(curve.arch, train, args.train)
    opt = _opt(config, "bridge", seed)
    rng = np.random.default_rng(seed)
    bridge = new_bridge(spec, curve, source, rng)
    trained, log = train_bridge(bridge, bases[0], bases[1] if need == 2 else None, curve, train, opt, alpha, rng)
    save_checkpoint(bridge_checkpoint(trained, seed=seed, alpha=alpha,
                                      curve_pinpoint=curve_checkpoint(curve).metadata["pinpoint"]),
                    args.out)
    atomic_write(_log_path(args.out), _rows_csv(("step", "lr", "kl"), log))


def parse_member(spec: str):
    """Parse ``mode:<ckpt>``, ``bezier:<ckpt>[@r]`` or ``bridge:<ckpt>[,base=<ckpt>...]``."""
    kind, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise UsageError(f"bad member spec {spec!r}")
    if kind == "mode":
        return _load(rest, Network), []
    if kind == "bezier":
        path, at, r = rest.rpartition("@") if "@" in rest else (rest, "", "")
        try:
            rv = float(r) if at else 0.5
        except ValueError:
            raise UsageError(f"bad curve position in {spec!r}") from None
        if not 0.0 <= rv <= 1.0:
            raise UsageError(f"curve position {rv} outside [0, 1]")
        return BezierMember(_load(path, BezierCurve), rv), []
    if kind == "bridge":
        path, *attrs = rest.split(",")
        declared = []
        for attr in attrs:
            key, eq, value = attr.partition("=")
            if key != "base" or not eq:
                raise UsageError(f"unknown bridge attribute {attr!r}")
            declared.append(_load(value, Network))
        return _load(path, BridgeModel), declared
    raise UsageError(f"unknown member kind {kind!r}")


def _members(specs):
    members, declared = [], []
    for s in specs:
        m, d = parse_member(s)
        members.append(m)
        declared += d
    return members, declared


def _predict(members, declared, X):
    try:
        return compose_ensemble(members, X, declared)
    except ValueError as exc:
        if "neither a member nor a declared base" in str(exc):
            raise UsageError(str(exc)) from None
        raise


def _member_arch(m):
    if isinstance(m, Network):
        return m.arch
    if isinstance(m, BezierMember):
        return m.curve.arch
    return None


def read_baseline(path) -> metrics.DEEBaseline:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["m", "nll"]:
        raise UsageError(f"{path}: DEE baseline must have header 'm,nll'")
    try:
        return metrics.DEEBaseline.from_pairs((float(m), float(v)) for m, v in rows[1:] if m)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_eval(args) -> None:
    members, declared = _members(args.members)
    test = _data(args.test)
    val = _data(args.val) if args.val else None
    archs = [a for a in map(_member_arch, members) if a is not None] + [d.arch for d in declared]
    for arch in archs:
        _check_data(arch, test, args.test)
    baseline = read_baseline(args.dee_baseline) if args.dee_baseline else None
    probs = _predict(members, declared, test.X)
    val_probs = _predict(members, declared, val.X) if val is not None else None
    report = metrics.evaluate(probs, test.y, val_probs, None if val is None else val.y,
                              args.n_bins, baseline)
    # reference cost: one forward pass of the base network
    ref_arch = archs[0] if archs else None
    flops = ensemble_flops(members, declared,
                           count_flops(ref_arch) if ref_arch is not None else None)
    _write_json(args.out, report.to_dict())
    if args.flops_out:
        _write_json(args.flops_out, flops.to_dict())
    print(json.dumps({"report": report.to_dict(), "flops": flops.to_dict()}, sort_keys=True))


def cmd_dee_baseline(args) -> None:
    nets = [_load(p, Network) for p in args.modes]
    test = _data(args.test)
    val = _data(args.val) if args.val else None
    rows = []
    for m in range(1, len(nets) + 1):
        probs = compose_ensemble(nets[:m], test.X)
        T = 1.0
        if val is not None:
            T = metrics.fit_temperature(compose_ensemble(nets[:m], val.X), val.y)
        rows.append((m, metrics.nll(metrics.apply_temperature(probs, T), test.y)))
    atomic_write(args.out, _rows_csv(("m", "nll"), rows))


def _split_at(item: str, default: float = 0.5):
    if "@" in item:
        path, r = item.rsplit("@", 1)
        try:
            return path, float(r)
        except ValueError:
            raise UsageError(f"bad curve position in {item!r}") from None
    return item, default


def cmd_correspondence(args) -> None:
    path, r = _split_at(args.target_curve)
    target = _load(path, BezierCurve)
    test = _data(args.test)
    _check_data(target.arch, test, args.test)
    bridge = _load(args.bridge, BridgeModel)
    if bridge.endpoints != target.endpoint_ids:
        raise UsageError("--bridge was not trained on --target-curve")
    declared = [Network(target.arch, target.theta_i), Network(target.arch, target.theta_j)]
    declared += [_load(p, Network) for p in args.modes or []]
    others = []
    for item in args.others:
        p, rr = _split_at(item, r)
        obj = load_any(p)
        if isinstance(obj, BezierCurve):
            declared += [Network(obj.arch, obj.theta_i), Network(obj.arch, obj.theta_j)]
            others.append(("other Bezier", BezierMember(obj, rr)))
        elif isinstance(obj, BridgeModel):
            others.append(("other bridge", obj))
        else:
            raise UsageError(f"{p}: --others takes curve or bridge checkpoints")
    target_probs = compose_ensemble([BezierMember(target, r)], test.X)
    candidates = [("match bridge", _predict([bridge], declared, test.X))]
    candidates += [(label, _predict([m], declared, test.X)) for label, m in others]
    rows = metrics.correspondence_report(target_probs, candidates)
    atomic_write(args.out, metrics.correspondence_to_csv(rows))


def _cost(obj) -> FlopsReport:
    if isinstance(obj, Network):
        return count_flops(obj.arch)
    if isinstance(obj, BezierCurve):
        return count_flops(obj.arch)
    return count_flops(obj.spec.arch)


def cmd_flops(args) -> None:
    reference = _cost(load_any(args.relative)) if args.relative else None
    report = sum_reports([_cost(load_any(p)) for p in args.ckpt], reference)
    print(json.dumps(report.to_dict(), sort_keys=True))


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bridgenet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    p.add_argument("--kind", choices=("spirals", "blobs"), default="spirals")
    p.add_argument("--n", type=int, default=700, help="samples per class")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--dim", type=int, default=2, help="blob dimension")
    p.add_argument("--separation", type=float, default=3.0, help="minimum blob center distance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", help="also write <stem>-train/-val/-test files, e.g. 0.2,0.3,0.5")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-mode", help="train one base network from a fresh seed")
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_mode)

    p = sub.add_parser("train-curve", help="fit a Bezier pin-point between two modes")
    p.add_argument("--mode-a", required=True)
    p.add_argument("--mode-b", required=True)
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_curve)

    p = sub.add_parser("scan-curve", help="metrics along a curve")
    p.add_argument("--curve", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", type=int, default=11)
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_scan_curve)

    p = sub.add_parser("train-bridge", help="distill a curve point into a bridge network")
    p.add_argument("--type", required=True, choices=("1", "2", "I", "II"))
    p.add_argument("--curve", required=True)
    p.add_argument("--base", action="append", help="endpoint mode checkpoint(s) feeding the bridge")
    p.add_argument("--r", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--config")
    p.add_argument("--train", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_bridge)

    p = sub.add_parser("eval", help="evaluate an ensemble composition")
    p.add_argument("--members", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--val")
    p.add_argument("--dee-baseline")
    p.add_argument("--n-bins", type=int, default=15)
    p.add_argument("--flops-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dee-baseline", help="NLL of DE-1..DE-M over the given modes (prefix order)")
    p.add_argument("--modes", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--val", help="fit a temperature per DE-m on this set")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dee_baseline)

    p = sub.add_parser("correspondence", help="R^2 / KL of bridges and curves against a curve point")
    p.add_argument("--target-curve", required=True)
    p.add_argument("--bridge", required=True)
    p.add_argument("--others", nargs="+", required=True)
    p.add_argument("--modes", nargs="*", help="extra base networks for the other bridges")
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correspondence)

    p = sub.add_parser("flops", help="FLOPs / parameter report for one or more checkpoints")
    p.add_argument("--ckpt", nargs="+", required=True)
    p.add_argument("--relative")
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"bridgenet {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, CheckpointError, DivergenceError, ValueError) as exc:
        print(f"bridgenet {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
