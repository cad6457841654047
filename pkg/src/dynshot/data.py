"""Feature datasets: synthetic clusters, CSV ingestion, class-level splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "heldout")


class DataError(ValueError):
    pass


@dataclass
class FeatureDataset:
    """Per-class feature matrices plus a train/heldout tag for each class."""

    s_v: int
    classes: dict[str, np.ndarray]
    splits: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for cid, x in self.classes.items():
            x = np.asarray(x, dtype=np.float64)
            if x.ndim != 2 or x.shape[1] != self.s_v:
                raise DataError(f"class {cid!r}: expected rows of length {self.s_v}")
            if x.shape[0] < 2:
                raise DataError(f"class {cid!r} has {x.shape[0]} examples; need >= 2")
            self.classes[cid] = x
        for cid in self.classes:
            self.splits.setdefault(cid, "train")
        unknown = set(self.splits) - set(self.classes)
        if unknown:
            raise DataError(f"split tags for unknown classes: {sorted(unknown)}")
        bad = {s for s in self.splits.values() if s not in SPLITS}
        if bad:
            raise DataError(f"unknown split values {sorted(bad)}")
        self._pools: dict = {}

    def class_ids(self, split: str | None = None) -> list[str]:
        return [c for c in self.classes if split is None or self.splits[c] == split]

    def pool(self, split: str | None) -> "ClassPool":
        if split not in self._pools:
            ids = self.class_ids(split)
            if not ids:
                raise DataError(f"no classes in split {split!r}")
            self._pools[split] = ClassPool.build([self.classes[c] for c in ids])
        return self._pools[split]

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (self.s_v == other.s_v
                and list(self.classes) == list(other.classes)
                and self.splits == other.splits
                and all(np.array_equal(self.classes[c], other.classes[c]) for c in self.classes))


@dataclass
class ClassPool:
    """Classes padded into one ``[C, M, s_v]`` array for vectorised sampling."""

    data: np.ndarray
    counts: np.ndarray

    @classmethod
    def build(cls, mats):
        m = max(x.shape[0] for x in mats)
        data = np.zeros((len(mats), m, mats[0].shape[1]))
        for k, x in enumerate(mats):
            data[k, :x.shape[0]] = x
        return cls(data, np.array([x.shape[0] for x in mats]))

    @property
    def num_classes(self) -> int:
        return self.data.shape[0]


@dataclass
class SynthConfig:
    num_classes: int = 28
    examples_per_class: int = 20
    s_v: int = 32
    center_scale: float = 1.0
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.examples_per_class < 2 or self.s_v < 1:
            raise ValueError("need num_classes >= 1, examples_per_class >= 2, s_v >= 1")
        if not (self.noise_scale > 0 and self.center_scale > 0):
            raise ValueError("noise_scale and center_scale must be positive")


def box_muller(rng: np.random.Generator, count: int) -> np.ndarray:
    """Standard normals from pairs of PCG64 uniforms via the Box-Muller transform."""
    pairs = (count + 1) // 2
    u1 = rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    theta = 2.0 * math.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(theta)
    z[1::2] = radius * np.sin(theta)
    return z[:count]


def gen_synthetic(cfg: SynthConfig) -> FeatureDataset:
    """Isotropic Gaussian clusters: center ~ N(0, center_scale^2 I), example = center + N(0, noise_scale^2 I).

    Draw order is fixed (all centers, then each class's examples in class
    order) from ``numpy.random.Generator(PCG64(seed))``.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    centers = cfg.center_scale * box_muller(rng, cfg.num_classes * cfg.s_v).reshape(
        cfg.num_classes, cfg.s_v)
    classes = {}
    width = max(3, len(str(cfg.num_classes - 1)))
    for k in range(cfg.num_classes):
        noise = box_muller(rng, cfg.examples_per_class * cfg.s_v).reshape(
            cfg.examples_per_class, cfg.s_v)
        classes[f"c{k:0{width}d}"] = centers[k] + cfg.noise_scale * noise
    ds = FeatureDataset(cfg.s_v, classes)
    ds.centers = dict(zip(classes, centers))
    return ds


def nearest_center_accuracy(dataset: FeatureDataset) -> float:
    """Leave-one-out nearest-class-mean accuracy over every example in the dataset."""
    ids = list(dataset.classes)
    sums = np.stack([dataset.classes[c].sum(axis=0) for c in ids])
    counts = np.array([dataset.classes[c].shape[0] for c in ids], dtype=np.float64)
    correct = total = 0
    for k, cid in enumerate(ids):
        x = dataset.classes[cid]
        means = sums / counts[:, None]
        d = ((x[:, None, :] - means[None]) ** 2).sum(axis=-1)
        own = (sums[k] - x) / (counts[k] - 1)
        d[:, k] = ((x - own) ** 2).sum(axis=-1)
        correct += int(np.sum(np.argmin(d, axis=1) == k))
        total += x.shape[0]
    return correct / total


def split_classes(dataset: FeatureDataset, heldout_fraction: float, seed: int) -> FeatureDataset:
    """Tag a random ``round(fraction * C)`` of the classes as heldout."""
    if not 0 < heldout_fraction < 1:
        raise ValueError("heldout_fraction must lie strictly between 0 and 1")
    ids = list(dataset.classes)
    n_held = int(round(heldout_fraction * len(ids)))
    if n_held < 2 or len(ids) - n_held < 2:
        raise DataError(f"too few classes ({len(ids)}) for a split with >= 2 classes per side")
    rng = np.random.default_rng(seed)
    held = {ids[i] for i in rng.permutation(len(ids))[:n_held]}
    splits = {c: ("heldout" if c in held else "train") for c in ids}
    out = FeatureDataset(dataset.s_v, dict(dataset.classes), splits)
    if hasattr(dataset, "centers"):
        out.centers = dataset.centers
    return out


def save_features(dataset: FeatureDataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "split"] + [f"f{k}" for k in range(dataset.s_v)])
        for cid, x in dataset.classes.items():
            split = dataset.splits[cid]
            for row in x:
                w.writerow([cid, split] + [format(v, ".17g") for v in row])


def load_features(path: str | Path) -> FeatureDataset:
    classes: dict[str, list] = {}
    splits: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (header is None or len(header) < 3 or header[:2] != ["class_id", "split"]
                or header[2:] != [f"f{k}" for k in range(len(header) - 2)]):
            raise DataError(f"{path}: malformed header; expected class_id,split,f0,f1,...")
        s_v = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != s_v + 2:
                raise DataError(f"{path}:{lineno}: expected {s_v} features, got {len(row) - 2}")
            cid, split = row[0], row[1]
            if split not in SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {split!r}")
            if splits.setdefault(cid, split) != split:
                raise DataError(f"{path}:{lineno}: class {cid!r} tagged with two splits")
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite feature")
            classes.setdefault(cid, []).append(values)
    if not classes:
        raise DataError(f"{path}: no rows")
    return FeatureDataset(s_v, {c: np.array(v) for c, v in classes.items()}, splits)
