"""Toy datasets, CSV I/O, seeded splits and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"MBNC" | u32 version (=1) | u32 header_len | header (UTF-8 JSON) | float64 payload

The header holds ``role``, ``arch``, ``dtype``, ``param_count`` and a free
``metadata`` map.  A curve checkpoint stores ``theta_i``, ``theta_j`` and
``theta_be`` back to back, so its payload is three parameter vectors long.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"MBNC"
FORMAT_VERSION = 1
DTYPE_TAG = "float64-le"
ROLES = ("mode", "curve_pinpoint", "bridge")
_VECTORS_PER_ROLE = {"mode": 1, "curve_pinpoint": 3, "bridge": 1}


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    K: int
    name: str = "data"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("X must be (N, D) and y must have N entries")
        if len(self.y) < 1:
            raise ValueError("dataset is empty")
        if np.any(self.y < 0) or np.any(self.y >= self.K):
            raise ValueError(f"labels must lie in [0, {self.K})")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx, name=None) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.K, name or self.name)


# -- generators ---------------------------------------------------------------

def spiral_point(t, cls: int, k: int, turns: float = 1.0) -> np.ndarray:
    """Noiseless point of spiral arm ``cls`` at parameter ``t`` in [0, 1]."""
    t = np.asarray(t, dtype=np.float64)
    angle = 2.0 * np.pi * (cls / k + turns * t)
    return np.stack([t * np.cos(angle), t * np.sin(angle)], axis=-1)


def gen_spirals(n_per_class: int, k_classes: int, noise_std: float, seed: int,
                turns: float = 1.0) -> Dataset:
    """``k_classes`` interleaved 2-D spiral arms, ``n_per_class`` points each."""
    if n_per_class < 1 or k_classes < 2 or noise_std < 0:
        raise ValueError("need n_per_class >= 1, k_classes >= 2 and noise_std >= 0")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(k_classes):
        t = rng.uniform(0.0, 1.0, size=n_per_class)
        pts = spiral_point(t, c, k_classes, turns)
        if noise_std > 0:
            pts = pts + rng.normal(0.0, noise_std, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(n_per_class, c))
    return Dataset(np.concatenate(xs), np.concatenate(ys), k_classes, "spirals")


def gen_blobs(n_per_class: int, k: int, d: int, separation: float, noise_std: float,
              seed: int) -> Dataset:
    """Gaussian clusters around seeded centers at least ``separation`` apart."""
    if n_per_class < 1 or k < 2 or d < 1 or noise_std < 0 or separation < 0:
        raise ValueError("invalid blob parameters")
    rng = np.random.default_rng(seed)
    box = max(separation, 1e-12) * k ** (1.0 / d)
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < k:
        cand = rng.uniform(-box, box, size=d)
        if all(np.linalg.norm(cand - c) >= separation for c in centers):
            centers.append(cand)
        attempts += 1
        if attempts % 1000 == 0:
            box *= 1.5
    xs, ys = [], []
    for c, center in enumerate(centers):
        xs.append(center + rng.normal(0.0, noise_std, size=(n_per_class, d)))
        ys.append(np.full(n_per_class, c))
    ds = Dataset(np.concatenate(xs), np.concatenate(ys), k, "blobs")
    ds.centers = np.array(centers)
    return ds


# -- CSV ----------------------------------------------------------------------

def atomic_write(path, data: bytes | str) -> None:
    """Write to a temporary sibling and rename, so failures leave no partial file."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_csv(ds: Dataset) -> str:
    lines = ["label," + ",".join(f"f{j}" for j in range(ds.dim))]
    for label, row in zip(ds.y, ds.X):
        lines.append(str(int(label)) + "," + ",".join("%.17g" % v for v in row))
    return "\n".join(lines) + "\n"


def save_csv(ds: Dataset, path) -> None:
    atomic_write(path, dataset_to_csv(ds))


def load_csv(path) -> Dataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "label" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
        raise ValueError(f"{path}:1: header must be 'label,f0,f1,...'")
    d = len(header) - 1
    if d < 1:
        raise ValueError(f"{path}:1: no feature columns")
    labels, feats = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            label = int(row[0])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: label {row[0]!r} is not an integer") from None
        if label < 0:
            raise ValueError(f"{path}:{lineno}: negative label {label}")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed feature value") from None
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"{path}:{lineno}: non-finite feature value")
        labels.append(label)
        feats.append(vals)
    if not labels:
        raise ValueError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    return Dataset(np.array(feats, dtype=np.float64), y, int(y.max()) + 1, path.stem)


def split(ds: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded permutation cut into train / val / test.

    Val and test sizes are ``floor(ratio * N)``; the remainder goes to train.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three positive numbers summing to 1")
    n = len(ds)
    n_val = int(math.floor(ratios[1] * n))
    n_test = int(math.floor(ratios[2] * n))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} samples by {ratios} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(ds.subset(p, f"{ds.name}-{tag}") for p, tag in zip(parts, ("train", "val", "test")))


# -- checkpoints ----------------------------------------------------------------

class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    role: str
    arch: dict[str, Any]
    params: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise CheckpointError(f"unknown role {self.role!r}")
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.ndim != 1:
            raise CheckpointError("payload must be a flat vector")

    @property
    def header(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "arch": self.arch,
            "dtype": DTYPE_TAG,
            "param_count": int(self.params.shape[0]),
            "metadata": self.metadata,
        }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps(ckpt.header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(ckpt.params, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + payload


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write(path, checkpoint_bytes(ckpt))


def parse_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: bad magic")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: version mismatch (file {version}, expected {FORMAT_VERSION})")
    if len(blob) < 12 + hlen:
        raise CheckpointError(f"{source}: truncated header")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: malformed header ({exc})") from None
    if header.get("dtype") != DTYPE_TAG:
        raise CheckpointError(f"{source}: unsupported dtype {header.get('dtype')!r}")
    count = header.get("param_count")
    payload = blob[12 + hlen:]
    if not isinstance(count, int) or count < 0:
        raise CheckpointError(f"{source}: param_count mismatch (header value {count!r})")
    if len(payload) < 8 * count:
        raise CheckpointError(
            f"{source}: truncated payload ({len(payload)} bytes, expected {8 * count})"
        )
    if len(payload) != 8 * count:
        raise CheckpointError(
            f"{source}: param_count mismatch (payload holds {len(payload) / 8:g} scalars, header says {count})"
        )
    role = header.get("role")
    if role not in ROLES:
        raise CheckpointError(f"{source}: unknown role {role!r}")
    expected = _expected_count(header["arch"], role)
    if expected is not None and expected != count:
        raise CheckpointError(
            f"{source}: param_count mismatch (architecture implies {expected}, header says {count})"
        )
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return Checkpoint(role, header["arch"], params, header.get("metadata", {}))


def _expected_count(arch: dict, role: str):
    from .nn.arch import ArchSpec

    try:
        spec = ArchSpec.from_dict(arch)
    except (KeyError, TypeError, ValueError):
        return None
    return spec.param_count * _VECTORS_PER_ROLE[role]


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    return parse_checkpoint(path.read_bytes(), str(path))
