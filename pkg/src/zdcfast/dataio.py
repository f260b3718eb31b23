"""Persistence formats: dataset directories and weight bundles.

Datasets are flat little-endian binaries plus a JSON manifest so real
detector data can be ingested by writing the same four files. Weight
bundles are a single file: magic, manifest length, canonical JSON
manifest, then all arrays as contiguous float32 little-endian bytes in
manifest order. Both formats round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detector import GRID_SIZE, N_PIXELS
from .errors import ValidationError

DATASET_FORMAT_VERSION = 1
WEIGHTS_FORMAT_VERSION = 1
WEIGHTS_MAGIC = b"ZDWB"
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class NormStats:
    """Standardization constants frozen at dataset-creation time."""

    cond_mean: tuple
    cond_std: tuple
    pixel_scale: float

    def to_dict(self) -> dict:
        return {"cond_mean": list(self.cond_mean), "cond_std": list(self.cond_std),
                "pixel_scale": self.pixel_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(cond_mean=tuple(d["cond_mean"]), cond_std=tuple(d["cond_std"]),
                   pixel_scale=float(d["pixel_scale"]))


def compute_norm_stats(particles: np.ndarray, responses: np.ndarray,
                       labels: np.ndarray, train_idx: np.ndarray) -> NormStats:
    """Attribute z-score stats over the training split; pixel scale is the
    99th percentile of log1p over the pixels of non-zero training responses
    (all-zero responses would drag the percentile to 0)."""
    tr = particles[train_idx].astype(np.float64)
    mean = tr.mean(axis=0)
    std = tr.std(axis=0)
    nonzero_train = train_idx[~labels[train_idx]]
    if nonzero_train.size > 0:
        pixels = np.log1p(np.asarray(responses[nonzero_train], dtype=np.float64))
        scale = float(np.percentile(pixels, 99.0))
    else:
        scale = 1.0
    return NormStats(cond_mean=tuple(float(v) for v in mean),
                     cond_std=tuple(float(v) for v in std),
                     pixel_scale=max(scale, STD_FLOOR))


@dataclass
class SampleSet:
    """In-memory dataset: particles [n,9], flattened responses [n,1936],
    zero-response labels, and the train/validation split."""

    particles: np.ndarray
    responses: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    norm: NormStats
    oracle_config: dict | None = None
    seed: int = 0

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    def response_grid(self, i: int) -> np.ndarray:
        return np.asarray(self.responses[i]).reshape(GRID_SIZE, GRID_SIZE)

    def nonzero_indices(self, subset: np.ndarray | None = None) -> np.ndarray:
        idx = np.arange(self.n) if subset is None else np.asarray(subset)
        return idx[~self.labels[idx]]

    def zero_fraction(self) -> float:
        return float(np.mean(self.labels))


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_dataset(ds: SampleSet, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    particles = np.ascontiguousarray(ds.particles, dtype="<f4")
    responses = np.ascontiguousarray(ds.responses, dtype="<f4")
    labels = np.ascontiguousarray(ds.labels, dtype=np.uint8)
    (out / "particles.f32").write_bytes(particles.tobytes())
    (out / "responses.f32").write_bytes(responses.tobytes())
    (out / "labels.u8").write_bytes(labels.tobytes())
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "n": int(ds.n),
        "seed": int(ds.seed),
        "split": {"rule": "seeded_shuffle", "train_fraction": 0.8, "seed": int(ds.seed)},
        "normalization": ds.norm.to_dict(),
        "oracle_config": ds.oracle_config,
        "zero_fraction": ds.zero_fraction(),
    }
    (out / "manifest.json").write_bytes(_canonical_json(manifest))
    return out


def load_dataset(data_dir: str | Path, mmap: bool = True) -> SampleSet:
    from .oracle import split_indices  # local import to avoid a cycle

    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValidationError(f"unsupported dataset format version {manifest.get('format_version')}")
    n = int(manifest["n"])
    particles_path = root / "particles.f32"
    responses_path = root / "responses.f32"
    labels_path = root / "labels.u8"
    for path, expected in ((particles_path, 4 * 9 * n), (responses_path, 4 * N_PIXELS * n),
                           (labels_path, n)):
        if not path.exists():
            raise ValidationError(f"missing dataset file {path}")
        actual = path.stat().st_size
        if actual != expected:
            raise ValidationError(f"{path.name}: expected {expected} bytes, found {actual}")
    particles = np.fromfile(particles_path, dtype="<f4").reshape(n, 9)
    if mmap:
        responses = np.memmap(responses_path, dtype="<f4", mode="r", shape=(n, N_PIXELS))
    else:
        responses = np.fromfile(responses_path, dtype="<f4").reshape(n, N_PIXELS)
    labels = np.fromfile(labels_path, dtype=np.uint8).astype(bool)
    train_idx, val_idx = split_indices(n, int(manifest["split"]["seed"]))
    return SampleSet(particles=particles, responses=responses, labels=labels,
                     train_idx=train_idx, val_idx=val_idx,
                     norm=NormStats.from_dict(manifest["normalization"]),
                     oracle_config=manifest.get("oracle_config"),
                     seed=int(manifest["seed"]))


@dataclass
class WeightsBundle:
    """A model checkpoint: kind, named float32 arrays, and metadata."""

    kind: str
    arrays: dict[str, np.ndarray]
    norm: NormStats
    train_config: dict = field(default_factory=dict)
    seed: int = 0
    calibration: dict | None = None

    def calibration_params(self) -> tuple[float, float]:
        """(c, sigma) to apply at inference; (1, 1) when uncalibrated."""
        if not self.calibration:
            return 1.0, 1.0
        return float(self.calibration["c_star"]), float(self.calibration["sigma_star"])


def save_weights(path: str | Path, kind: str, state_items: list[tuple[str, np.ndarray]],
                 norm: NormStats, train_config: dict | None = None, seed: int = 0,
                 calibration: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = []
    blobs = []
    offset = 0
    for name, arr in state_items:
        data = np.ascontiguousarray(arr, dtype="<f4")
        params.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    manifest = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "kind": kind,
        "params": params,
        "normalization": norm.to_dict(),
        "train_config": train_config or {},
        "seed": int(seed),
        "calibration": calibration,
    }
    mbytes = _canonical_json(manifest)
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        for blob in blobs:
            fh.write(blob)
    return path


def load_weights(path: str | Path) -> WeightsBundle:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no weights file at {path}")
    raw = path.read_bytes()
    if raw[:4] != WEIGHTS_MAGIC:
        raise ValidationError(f"{path.name}: not a weights bundle")
    (mlen,) = struct.unpack("<I", raw[4:8])
    manifest = json.loads(raw[8:8 + mlen].decode("utf-8"))
    if manifest.get("format_version") != WEIGHTS_FORMAT_VERSION:
        raise ValidationError(f"unsupported weights format version {manifest.get('format_version')}")
    blob = raw[8 + mlen:]
    arrays = {}
    total = 0
    for spec in manifest["params"]:
        shape = tuple(spec["shape"])
        nbytes = 4 * int(np.prod(shape)) if shape else 4
        start = spec["offset"]
        if start != total:
            raise ValidationError(f"{path.name}: non-contiguous parameter offsets")
        total += nbytes
        if start + nbytes > len(blob):
            raise ValidationError(f"{path.name}: truncated parameter blob")
        arrays[spec["name"]] = np.frombuffer(blob[start:start + nbytes], dtype="<f4").reshape(shape).copy()
    if total != len(blob):
        raise ValidationError(f"{path.name}: blob length {len(blob)} != expected {total}")
    return WeightsBundle(kind=manifest["kind"], arrays=arrays,
                         norm=NormStats.from_dict(manifest["normalization"]),
                         train_config=manifest.get("train_config", {}),
                         seed=int(manifest.get("seed", 0)),
                         calibration=manifest.get("calibration"))


def update_weights_calibration(path: str | Path, calibration: dict) -> Path:
    """Rewrite a bundle with the calibration block replaced."""
    bundle = load_weights(path)
    items = [(name, bundle.arrays[name]) for name in bundle.arrays]
    return save_weights(path, bundle.kind, items, bundle.norm,
                        train_config=bundle.train_config, seed=bundle.seed,
                        calibration=calibration)
