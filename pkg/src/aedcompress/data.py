"""Feature files, manifests, CMVN, stratified splits and a synthetic event corpus.

AEDF feature file layout (little endian)::

    offset 0   4 bytes  magic b"AEDF"
    offset 4   u32      version (1)
    offset 8   u32      rows T (frames)
    offset 12  u32      cols d (feature dimension)
    offset 16  T*d      float32, row-major

A manifest is a UTF-8 text file with one JSON object per line:
``{"id": ..., "feature_path": ..., "labels": [0, 1, ...]}``. Relative
feature paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

AEDF_MAGIC = b"AEDF"
AEDF_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FeatureFormatError(ValueError):
    """Malformed feature file or manifest."""


def write_features(path: str | os.PathLike, features: np.ndarray) -> None:
    x = np.asarray(features)
    if x.ndim != 2:
        raise ValueError(f"features must be a (T, d) matrix, got shape {x.shape}")
    payload = np.ascontiguousarray(x, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(AEDF_MAGIC, AEDF_VERSION, x.shape[0], x.shape[1]))
        fh.write(payload)


def load_features(path: str | os.PathLike, dim: int | None = None) -> np.ndarray:
    """Read an AEDF file into a float64 ``(T, d)`` array."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header at byte offset {len(raw)} (need {_HEADER.size})")
    magic, version, rows, cols = _HEADER.unpack_from(raw, 0)
    if magic != AEDF_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != AEDF_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version} at byte offset 4")
    if rows < 1 or cols < 1:
        raise FeatureFormatError(f"{path}: empty shape {rows}x{cols} at byte offset 8")
    if dim is not None and cols != dim:
        raise FeatureFormatError(f"{path}: feature dim {cols} at byte offset 12, expected {dim}")
    need = _HEADER.size + 4 * rows * cols
    if len(raw) != need:
        raise FeatureFormatError(
            f"{path}: payload ends at byte offset {len(raw)}, expected {need} for {rows}x{cols} float32"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float64)


@dataclass(frozen=True)
class ClipRecord:
    id: str
    feature_path: str
    labels: tuple[int, ...]


def write_manifest(path: str | os.PathLike, records: list[ClipRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "feature_path": r.feature_path, "labels": list(r.labels)}) + "\n")


def read_manifest(path: str | os.PathLike) -> list[ClipRecord]:
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                feature_path = str(obj["feature_path"])
                labels = tuple(int(v) for v in obj["labels"])
                rec = ClipRecord(str(obj["id"]), feature_path, labels)
            except (KeyError, TypeError, ValueError) as exc:
                raise FeatureFormatError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
            if any(v not in (0, 1) for v in labels):
                raise FeatureFormatError(f"{path}:{lineno}: labels must be 0/1")
            if not Path(feature_path).is_absolute():
                rec = replace(rec, feature_path=str(base / feature_path))
            records.append(rec)
    if not records:
        raise FeatureFormatError(f"{path}: manifest has no records")
    widths = {len(r.labels) for r in records}
    if len(widths) != 1:
        raise FeatureFormatError(f"{path}: records disagree on the number of classes {sorted(widths)}")
    return records


@dataclass
class Dataset:
    """Clips in memory. ``features[i]`` is ``(T_i, d)``; ``labels`` is ``(N, C)``."""

    ids: list[str]
    features: list[np.ndarray]
    labels: np.ndarray
    class_names: list[str] = field(default_factory=list)
    cmvn_applied: bool = False

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.float64)
        self.labels = labels if labels.ndim == 2 else labels.reshape(len(self.ids), -1)
        if len(self.labels) != len(self.ids) or len(self.features) != len(self.ids):
            raise ValueError("ids, features and labels differ in length")
        if not self.class_names:
            self.class_names = [f"class{c}" for c in range(self.labels.shape[1])]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    def subset(self, index) -> Dataset:
        index = np.asarray(index, dtype=np.intp)
        return Dataset(
            [self.ids[i] for i in index],
            [self.features[i] for i in index],
            self.labels[index],
            list(self.class_names),
            self.cmvn_applied,
        )

    def stacked(self) -> np.ndarray:
        """All clips as one ``(N, T, d)`` array; requires equal lengths."""
        return np.stack(self.features)


def load_dataset(records: list[ClipRecord], dim: int | None = None, class_names=None) -> Dataset:
    feats = [load_features(r.feature_path, dim) for r in records]
    dims = {f.shape[1] for f in feats}
    if len(dims) > 1:
        raise FeatureFormatError(f"feature files disagree on dimension: {sorted(dims)}")
    return Dataset([r.id for r in records], feats, np.array([r.labels for r in records]), list(class_names or []))


@dataclass(frozen=True)
class CmvnStats:
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def compute_cmvn(data: Dataset | list[np.ndarray], floor: float = 1e-8) -> CmvnStats:
    """Global per-dimension mean and std over every training frame pooled together."""
    feats = data.features if isinstance(data, Dataset) else list(data)
    if not feats:
        raise ValueError("cannot compute CMVN statistics from an empty training set")
    frames = np.concatenate([np.asarray(f, dtype=np.float64) for f in feats], axis=0)
    if frames.shape[0] < 2:
        raise ValueError("CMVN needs at least two training frames")
    mean = frames.mean(axis=0)
    std = np.maximum(frames.std(axis=0), floor)
    return CmvnStats(mean, std)


def apply_cmvn(data: Dataset, stats: CmvnStats) -> Dataset:
    """Normalize every clip with fixed statistics. Refuses a second application."""
    if data.cmvn_applied:
        raise ValueError("CMVN has already been applied to this dataset")
    out = data.subset(np.arange(len(data)))
    out.features = [stats.normalize(f) for f in data.features]
    out.cmvn_applied = True
    return out


def split_indices(labels: np.ndarray, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> list[np.ndarray]:
    """Stratified multi-label split by iterative stratification.

    Each class's positives are distributed in ``ratios``. Clips are taken
    label by label, rarest first, and each goes to the split with the
    largest remaining demand for that label. Negatives fill the remaining
    per-split totals. Multi-label clips can leave a class more than one clip
    off its target; a swap pass then fixes that where possible.
    """
    labels = np.asarray(labels) > 0.5
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.ndim != 1 or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {ratios.tolist()}")
    n, n_classes = labels.shape
    counts = labels.sum(axis=0)
    for c in range(n_classes):
        if counts[c] < 3:
            raise ValueError(f"class {c} has {int(counts[c])} positive clips; a split needs at least 3")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    want_total = ratios * n
    want_label = ratios[None, :] * counts[:, None]  # (C, S)
    assigned = np.full(n, -1)
    remaining = set(order.tolist())

    def pick(scores: list[np.ndarray]) -> int:
        cand = np.arange(len(ratios))
        for s in scores:
            best = s[cand].max()
            cand = cand[s[cand] == best]
        return int(cand[0])

    left = labels.copy()
    while True:
        open_counts = left[list(remaining)].sum(axis=0) if remaining else np.zeros(n_classes)
        active = np.flatnonzero(open_counts > 0)
        if active.size == 0:
            break
        c = int(active[np.argmin(open_counts[active])])
        for i in order:
            if i in remaining and labels[i, c]:
                s = pick([want_label[c], want_total])
                assigned[i] = s
                remaining.discard(i)
                want_label[labels[i], s] -= 1
                want_total[s] -= 1
    for i in order:
        if i in remaining:
            s = pick([want_total])
            assigned[i] = s
            want_total[s] -= 1
    _repair(labels.astype(np.float64), assigned, ratios)
    return [np.sort(np.flatnonzero(assigned == s)) for s in range(len(ratios))]


def _repair(y: np.ndarray, assigned: np.ndarray, ratios: np.ndarray, max_swaps: int = 10_000) -> None:
    """Swap clips between splits while some class is off its target by more than one.

    A swap keeps split sizes fixed; each accepted swap strictly lowers the
    summed squared deviation of per-class counts from their targets.
    """
    target = ratios[:, None] * y.sum(axis=0)[None, :]
    n_splits = len(ratios)
    for _ in range(max_swaps):
        dev = np.stack([y[assigned == s].sum(axis=0) for s in range(n_splits)]) - target
        if np.max(np.abs(dev)) <= 1.0 + 1e-9:
            return
        best = (0.0, None)
        for a in range(n_splits):
            for b in range(a + 1, n_splits):
                ia, ib = np.flatnonzero(assigned == a), np.flatnonzero(assigned == b)
                if ia.size == 0 or ib.size == 0:
                    continue
                # moving clip j (from b) into a and clip i (from a) into b changes a's counts by d = y_j - y_i
                d = y[ib][None, :, :] - y[ia][:, None, :]
                delta = 2.0 * (d @ (dev[a] - dev[b])) + 2.0 * np.sum(d * d, axis=2)
                k = int(np.argmin(delta))
                if delta.flat[k] < best[0] - 1e-12:
                    i, j = np.unravel_index(k, delta.shape)
                    best = (float(delta.flat[k]), (ia[i], ib[j], a, b))
        if best[1] is None:
            return
        i, j, a, b = best[1]
        assigned[i], assigned[j] = b, a


def split(data: Dataset, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> tuple[Dataset, ...]:
    """Disjoint train/validation/test subsets, stratified per class."""
    return tuple(data.subset(idx) for idx in split_indices(data.labels, ratios, seed))


@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale stand-in for a curated event corpus.

    Class c energizes its own band of feature dimensions from a
    class-specific onset to the end of the clip (onset jittered per clip, so
    some events stop a few frames early), on top of white Gaussian noise.
    Negatives are pure noise.
    """

    classes: int = 3
    clips_per_class: int = 300
    negatives: int = 900
    frames: int = 100
    dim: int = 16
    noise: float = 1.0
    amplitude: float = 0.3
    jitter: int = 10
    cooccurrence: float = 0.1
    seed: int = 0

    @property
    def class_names(self) -> list[str]:
        return [f"event{c}" for c in range(self.classes)]


def event_template(config: SynthConfig, c: int) -> tuple[np.ndarray, int, int]:
    """Band mask ``(d,)``, nominal onset and duration (frames) of class ``c``."""
    spacing = max(1, config.dim // config.classes)
    width = max(1, spacing - 1)
    band = np.zeros(config.dim)
    start = (c * spacing) % config.dim
    band[start : start + width] = 1.0
    t = config.frames
    onset = int(t * (0.5 + 0.1 * (c % 3)))
    return band, onset, t - onset


def synth_arrays(config: SynthConfig = SynthConfig()) -> Dataset:
    """Generate the synthetic corpus in memory (values rounded to float32 like AEDF files)."""
    if config.classes < 1:
        raise ValueError("synthetic corpus needs at least one class")
    rng = np.random.default_rng(config.seed)
    n_classes, t, d = config.classes, config.frames, config.dim
    labels = []
    for c in range(n_classes):
        for _ in range(config.clips_per_class):
            y = np.zeros(n_classes)
            y[c] = 1
            if n_classes > 1 and rng.random() < config.cooccurrence:
                y[(c + 1 + rng.integers(n_classes - 1)) % n_classes] = 1
            labels.append(y)
    labels += [np.zeros(n_classes)] * config.negatives
    labels = np.array(labels)

    feats = []
    for y in labels:
        x = config.noise * rng.standard_normal((t, d))
        for c in np.flatnonzero(y):
            band, onset, duration = event_template(config, int(c))
            shift = int(rng.integers(-config.jitter, config.jitter + 1)) if config.jitter else 0
            lo = int(np.clip(onset + shift, 0, t - 1))
            hi = min(t, lo + duration)
            x[lo:hi] += config.amplitude * band
        feats.append(x.astype(np.float32).astype(np.float64))
    ids = [f"clip{i:05d}" for i in range(len(labels))]
    return Dataset(ids, feats, labels, config.class_names)


def synth_dataset(config: SynthConfig, out_dir: str | os.PathLike) -> list[ClipRecord]:
    """Write the synthetic corpus as AEDF files plus ``manifest.jsonl`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    data = synth_arrays(config)
    records = []
    for clip_id, x, y in zip(data.ids, data.features, data.labels):
        rel = f"features/{clip_id}.aedf"
        write_features(out / rel, x)
        records.append(ClipRecord(clip_id, rel, tuple(int(v) for v in y)))
    write_manifest(out / "manifest.jsonl", records)
    return records


def load_synthetic_splits(config: SynthConfig = SynthConfig(), split_seed: int | None = None):
    """Synthetic corpus split 70/10/20 with CMVN fitted on the training part."""
    data = synth_arrays(config)
    train_set, val_set, test_set = split(data, seed=config.seed if split_seed is None else split_seed)
    stats = compute_cmvn(train_set)
    return apply_cmvn(train_set, stats), apply_cmvn(val_set, stats), apply_cmvn(test_set, stats)
