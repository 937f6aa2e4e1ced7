"""Feature files, manifests, label/truth records and the synthetic generator.

On-disk layout of a dataset directory::

    manifest.json   {"classes": C, "items": [{"id": ..., "features": "features/<id>.tdnf"}]}
    labels.jsonl    {"id": ..., "labels": [...]} per line
    truth.jsonl     {"id": ..., "cuts": [...], "segment_classes": [...]} per line (synthetic only)
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError

FEATURE_MAGIC = b"TDNF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")

MANIFEST = "manifest.json"
LABELS = "labels.jsonl"
TRUTH = "truth.jsonl"


# ---------------------------------------------------------------------------
# feature files


def encode_features(features: np.ndarray) -> bytes:
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"features must be a non-empty N x m matrix, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("features contain non-finite values")
    single = arr.astype("<f4")
    if not np.all(np.isfinite(single)):
        raise DataError("features overflow single precision")
    n, m = arr.shape
    return _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, m) + single.tobytes()


def decode_features(blob: bytes) -> np.ndarray:
    if len(blob) < _FEATURE_HEADER.size:
        raise FormatError(f"feature file truncated: {len(blob)} bytes, header needs {_FEATURE_HEADER.size}")
    magic, version, n, m = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad feature magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    if n < 1 or m < 1:
        raise FormatError(f"feature file declares empty shape {n} x {m}")
    want = _FEATURE_HEADER.size + 4 * n * m
    if len(blob) != want:
        raise FormatError(f"feature payload length mismatch: file has {len(blob)} bytes, header implies {want}")
    arr = np.frombuffer(blob, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(n, m)
    if not np.all(np.isfinite(arr)):
        raise FormatError("feature file contains non-finite values")
    return arr.astype(np.float64)


def write_features(features: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_features(features))


def read_features(path) -> np.ndarray:
    """Read a feature file, promoting the single-precision payload to float64."""
    return decode_features(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Video:
    id: str
    features: np.ndarray  # N x m, float64
    labels: frozenset[int]


@dataclass
class PlantedTruth:
    id: str
    cuts: list[int]
    segment_classes: list[int]


@dataclass
class Dataset:
    classes: int
    videos: list[Video] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def feature_dim(self) -> int:
        if not self.videos:
            raise DataError("dataset is empty")
        return self.videos[0].features.shape[1]

    def validate(self) -> None:
        seen = set()
        dims = {v.features.shape[1] for v in self.videos}
        if len(dims) > 1:
            raise DataError(f"inconsistent feature widths {sorted(dims)}")
        for v in self.videos:
            if v.id in seen:
                raise DataError(f"duplicate id {v.id!r}")
            seen.add(v.id)
            bad = [c for c in v.labels if not 0 <= c < self.classes]
            if bad:
                raise DataError(f"video {v.id!r}: labels {bad} outside [0, {self.classes})")


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def save_dataset(ds: Dataset, out_dir, truth: Sequence[PlantedTruth] | None = None) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    items = []
    for v in ds.videos:
        rel = f"features/{v.id}.tdnf"
        write_features(v.features, out / rel)
        items.append({"id": v.id, "features": rel})
    manifest = {"classes": ds.classes, "items": items}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (out / LABELS).write_text(_jsonl({"id": v.id, "labels": sorted(v.labels)} for v in ds.videos))
    if truth is not None:
        write_truth(truth, out / TRUTH)


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
        classes = int(manifest["classes"])
        items = manifest["items"]
    except FileNotFoundError as exc:
        raise DataError(f"no {MANIFEST} in {root}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed manifest: {exc}") from exc
    labels = {}
    try:
        lines = (root / LABELS).read_text().splitlines()
    except FileNotFoundError as exc:
        raise DataError(f"no {LABELS} next to the manifest") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            labels[rec["id"]] = frozenset(int(c) for c in rec["labels"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{LABELS}:{lineno}: {exc}") from exc
    videos = []
    for item in items:
        vid = item["id"]
        if vid not in labels:
            raise DataError(f"video {vid!r} has no label record")
        videos.append(Video(vid, read_features(root / item["features"]), labels[vid]))
    ds = Dataset(classes, videos)
    ds.validate()
    return ds


def write_truth(truth: Sequence[PlantedTruth], path) -> None:
    Path(path).write_text(_jsonl(
        {"id": t.id, "cuts": t.cuts, "segment_classes": t.segment_classes} for t in truth
    ))


def read_truth(path) -> list[PlantedTruth]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            out.append(PlantedTruth(rec["id"], list(rec["cuts"]), list(rec["segment_classes"])))
    return out


def split_by_hash(videos: Sequence[Video], val_frac: float) -> tuple[list[Video], list[Video]]:
    """Deterministic train/val split: the ``round(val_frac * n)`` ids with smallest SHA-256 go to val."""
    if not 0.0 <= val_frac < 1.0:
        raise DataError(f"val fraction must be in [0, 1), got {val_frac}")
    n_val = int(round(val_frac * len(videos)))
    ranked = sorted(range(len(videos)), key=lambda i: hashlib.sha256(videos[i].id.encode()).digest())
    val_idx = set(ranked[:n_val])
    train = [v for i, v in enumerate(videos) if i not in val_idx]
    val = [v for i, v in enumerate(videos) if i in val_idx]
    return train, val


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticSpec:
    """Generator settings. ``frames`` is a fixed count or an inclusive ``(lo, hi)`` range.

    Each segment's center mixes a per-class direction with a "scene" direction
    shared by consecutive segment pairs, so affinities have two nested levels.
    """

    videos: int = 200
    frames: int | tuple[int, int] = 64
    dim: int = 16
    classes: int = 8
    segments: int = 4
    noise: float = 0.1
    seed: int = 42
    scene_weight: float = 0.5

    @property
    def frame_range(self) -> tuple[int, int]:
        if isinstance(self.frames, int):
            return self.frames, self.frames
        lo, hi = self.frames
        return int(lo), int(hi)

    def validate(self) -> None:
        lo, hi = self.frame_range
        scenes = math.ceil(self.segments / 2)
        if self.videos < 1:
            raise DataError("need at least one video")
        if self.segments < 1 or self.classes < 1:
            raise DataError("segments and classes must be positive")
        if self.segments > self.classes:
            raise DataError(f"segments per video ({self.segments}) exceed classes ({self.classes})")
        if lo > hi or lo < self.segments:
            raise DataError(f"frames {self.frames} cannot hold {self.segments} segments")
        if self.dim < self.classes + scenes:
            raise DataError(
                f"dim {self.dim} too small for {self.classes} class and {scenes} scene directions"
            )
        if self.noise < 0 or not 0.0 <= self.scene_weight < 1.0:
            raise DataError("noise must be >= 0 and scene_weight in [0, 1)")


def _segment_lengths(rng: np.random.Generator, n: int, k: int) -> list[int]:
    min_len = max(1, n // (2 * k))
    extra = n - k * min_len
    # uniform composition of `extra` into k nonnegative parts
    bars = np.sort(rng.choice(extra + k - 1, size=k - 1, replace=False)) if k > 1 else np.array([], int)
    edges = np.concatenate(([-1], bars, [extra + k - 1]))
    return [min_len + int(d) - 1 for d in np.diff(edges)]


def synth_generate(spec: SyntheticSpec) -> tuple[Dataset, list[PlantedTruth]]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    basis, _ = np.linalg.qr(rng.standard_normal((spec.dim, spec.dim)))
    class_dirs = basis[:, :spec.classes].T
    scene_dirs = basis[:, spec.classes:].T
    beta = spec.scene_weight
    alpha = math.sqrt(1.0 - beta * beta)
    lo, hi = spec.frame_range
    width = len(str(spec.videos - 1))
    videos, truth = [], []
    for i in range(spec.videos):
        n = int(rng.integers(lo, hi + 1))
        lengths = _segment_lengths(rng, n, spec.segments)
        seg_classes = [int(c) for c in rng.choice(spec.classes, size=spec.segments, replace=False)]
        rows = []
        for s, (length, c) in enumerate(zip(lengths, seg_classes)):
            center = alpha * class_dirs[c] + beta * scene_dirs[s // 2]
            rows.append(np.tile(center, (length, 1)))
        x = np.vstack(rows) + spec.noise * rng.standard_normal((n, spec.dim))
        # keep in-memory values identical to what a feature file stores
        x = x.astype(np.float32).astype(np.float64)
        vid = f"vid{i:0{width}d}"
        videos.append(Video(vid, x, frozenset(seg_classes)))
        truth.append(PlantedTruth(vid, np.cumsum(lengths)[:-1].tolist(), seg_classes))
    return Dataset(spec.classes, videos), truth
