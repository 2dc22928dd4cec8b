"""Manifest-driven datasets, corpus composition, and the synthetic generator.

A manifest is a CSV file with header ``relative_path,label,split``; paths are
relative to the manifest's directory, labels come from a declared class list
(or the literal ``unlabeled``), and split is one of train/test/pretrain.
Oversampling a corpus component is literal list repetition, so an "epoch"
over the composed list is well-defined and counts are exactly reproducible.
"""

from __future__ import annotations

import colorsys
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .seeding import rng_for

SPLITS = ("train", "test", "pretrain")
UNLABELED = "unlabeled"
MANIFEST_HEADER = ["relative_path", "label", "split"]


class ManifestError(ValueError):
    """Malformed or inconsistent manifest content."""


@dataclass(frozen=True)
class Sample:
    path: str
    label: str | None
    split: str


@dataclass
class Dataset:
    """An ordered list of samples with a declared class list."""

    samples: list[Sample]
    classes: tuple[str, ...]
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, name: str) -> "Dataset":
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return Dataset([s for s in self.samples if s.split == name], self.classes)

    def labels(self) -> list[str]:
        return [s.label for s in self.samples]

    def class_index(self, label: str) -> int:
        return self.classes.index(label)

    def targets(self) -> np.ndarray:
        return np.array([self.classes.index(s.label) for s in self.samples], dtype=np.int64)

    def load_image(self, index: int, size: int | None = None) -> np.ndarray:
        return load_image_file(self.samples[index].path, size)

    def load_all(self, size: int | None = None) -> np.ndarray:
        """Decode every image once and cache the stacked array."""
        key = ("all", size)
        if key not in self._cache:
            self._cache[key] = np.stack([self.load_image(i, size) for i in range(len(self))])
        return self._cache[key]

    def paths(self) -> set[str]:
        return {s.path for s in self.samples}


def load_image_file(path: str | Path, size: int | None = None) -> np.ndarray:
    """Decode a PNG/JPEG to a float HxWx3 array in [0,1], optionally resized
    (bilinear) to size x size. Same bytes in, same array out."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def load_manifest(path: str | Path, classes: Sequence[str] | None = None) -> Dataset:
    """Read and validate a manifest CSV.

    Rows are checked for arity, split validity, label membership, duplicate
    (path, split) pairs, and file existence; violations are reported with
    their line number. An empty manifest is an error.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    samples: list[Sample] = []
    seen: set[tuple[str, str]] = set()
    labels_present: set[str] = set()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise ManifestError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            rel, label, split = row
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
            if classes is not None and label != UNLABELED and label not in classes:
                raise ManifestError(f"{path}:{lineno}: unknown label {label!r}")
            key = (rel, split)
            if key in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate entry {key}")
            seen.add(key)
            full = root / rel
            if not full.exists():
                raise ManifestError(f"{path}:{lineno}: file not found: {full}")
            if label != UNLABELED:
                labels_present.add(label)
            samples.append(Sample(str(full), None if label == UNLABELED else label, split))
    if not samples:
        raise ManifestError(f"{path}: empty manifest")
    cls = tuple(classes) if classes is not None else tuple(sorted(labels_present))
    return Dataset(samples, cls)


def write_manifest(path: str | Path, rows: Sequence[tuple[str, str, str]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)


@dataclass(frozen=True)
class CorpusSpec:
    """Named components with integer multiplicities, e.g. two copies of one
    pool plus one copy of another."""

    components: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("corpus needs at least one component")
        for name, mult in self.components:
            if mult < 1:
                raise ValueError(f"component {name!r} multiplicity must be >= 1")

    def total(self, sizes: Mapping[str, int]) -> int:
        """Pure count arithmetic: sum of multiplicity x component size."""
        return sum(mult * sizes[name] for name, mult in self.components)


def compose_corpus(spec: CorpusSpec, manifests: Mapping[str, Dataset]) -> Dataset:
    """Concatenate components with multiplicities applied, in declared order.

    Every emitted sample is re-tagged split='pretrain'. Total length equals
    ``spec.total`` over the component sizes exactly.
    """
    missing = [name for name, _ in spec.components if name not in manifests]
    if missing:
        raise KeyError(f"missing corpus components: {missing}")
    samples: list[Sample] = []
    classes: set[str] = set()
    for name, mult in spec.components:
        ds = manifests[name]
        classes.update(ds.classes)
        for _ in range(mult):
            samples.extend(replace(s, split="pretrain") for s in ds.samples)
    return Dataset(samples, tuple(sorted(classes)))


def check_no_test_leakage(pretrain: Dataset, test: Dataset) -> None:
    """Raise if any pre-training sample path appears in the test set.

    Overlap with the train split is expected and allowed; only the test
    split must stay disjoint.
    """
    overlap = pretrain.paths() & {s.path for s in test.samples if s.split == "test"}
    if overlap:
        some = sorted(overlap)[:5]
        raise ManifestError(f"{len(overlap)} pre-training samples leak into the test set, e.g. {some}")


def _class_counts(total: int, num_classes: int, weights: Sequence[float] | None) -> list[int]:
    if weights is None:
        weights = [1.0] * num_classes
    if len(weights) != num_classes:
        raise ValueError("imbalance weights must have one entry per class")
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("imbalance weights must be positive")
    exact = w / w.sum() * total
    counts = np.floor(exact).astype(int)
    # largest remainder rounding keeps the total exact
    shortfall = total - counts.sum()
    order = np.argsort(-(exact - counts))
    for i in range(shortfall):
        counts[order[i]] += 1
    return [int(c) for c in counts]


def _synth_image(rng: np.random.Generator, cls: int, num_classes: int, size: int) -> np.ndarray:
    """One procedural sample: class-specific hue and stripe pattern under
    heavy nuisance variation (phase, brightness, blob, noise)."""
    hue = cls / num_classes
    angle = math.pi * cls / num_classes
    freq = 3.0 + 2.0 * (cls % 4)
    color = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95), dtype=np.float32)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32) / size
    phase = rng.uniform(0.0, 2.0 * math.pi)
    grating = 0.5 + 0.5 * np.sin(2.0 * math.pi * freq * (xs * math.cos(angle) + ys * math.sin(angle)) + phase)
    img = (0.15 + 0.75 * grating)[:, :, None] * color[None, None, :]

    # low-saturation nuisance blob at a random spot
    cy, cx = rng.uniform(0.2, 0.8, size=2)
    radius = rng.uniform(0.08, 0.2)
    mask = (ys - cy) ** 2 + (xs - cx) ** 2 < radius**2
    blob_val = rng.uniform(0.6, 0.95)
    img[mask] = 0.5 * img[mask] + 0.5 * blob_val

    img *= rng.uniform(0.6, 1.0)
    img += rng.normal(0.0, 0.05, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def synth_generate(
    out_dir: str | Path,
    num_classes: int = 8,
    n_train: int = 512,
    n_test: int = 2048,
    image_size: int = 32,
    imbalance: Sequence[float] | None = None,
    seed: int = 0,
) -> Path:
    """Write a deterministic procedural image corpus and its manifest.

    Images land under ``out_dir/images/<class>/``; the manifest lists every
    train image twice, once as split=train and once as split=pretrain, plus
    the test rows, so one file drives both protocols. Returns the manifest
    path. Regeneration with the same arguments is byte-identical.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    out_dir = Path(out_dir)
    rows: list[tuple[str, str, str]] = []
    for split, total in (("train", n_train), ("test", n_test)):
        counts = _class_counts(total, num_classes, imbalance)
        for cls, count in enumerate(counts):
            label = f"class{cls}"
            cls_dir = out_dir / "images" / label
            cls_dir.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                rng = rng_for(seed, "synth", split, cls, i)
                img = _synth_image(rng, cls, num_classes, image_size)
                arr8 = np.round(img * 255.0).astype(np.uint8)
                name = f"{split}_{i:05d}.png"
                Image.fromarray(arr8).save(cls_dir / name)
                rel = str(Path("images") / label / name)
                rows.append((rel, label, split))
                if split == "train":
                    rows.append((rel, label, "pretrain"))
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
