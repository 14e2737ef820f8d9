"""Dataset loading and deterministic low-data subsetting.

Datasets live on disk as ``<root>/<split>/<class_name>/<image>.{png,jpg}``.
Loading records the file listing only; pixels are decoded on demand so
ingestion stays cheap and augmentation-agnostic. Low-data subsets are drawn
stratified per class and recorded in a SubsetManifest, a small text artifact
that can be stored next to experiment outputs and re-applied bit-for-bit.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    EmptyClass,
    FingerprintMismatch,
    MissingRoot,
    NoClassesFound,
    PercentOutOfRange,
    UnreadableImage,
)
from .rng import derive_rng

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class ImageSample:
    """One decoded image: HxWx3 float pixels in [0, 1] plus its class index."""

    pixels: np.ndarray
    label: int

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise UnreadableImage(f"expected HxWx3 pixels, got shape {self.pixels.shape}")
        if self.pixels.shape[0] < 8 or self.pixels.shape[1] < 8:
            raise UnreadableImage(f"image smaller than 8x8: shape {self.pixels.shape}")


@dataclass(frozen=True)
class Dataset:
    """Immutable listing of one split of a labeled image dataset."""

    root_path: Path
    classes: tuple[str, ...]
    samples: tuple[tuple[Path, int], ...]
    split: str

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.samples)

    def class_indices(self, class_index: int) -> list[int]:
        """Global sample indices belonging to one class."""
        return [i for i, (_, c) in enumerate(self.samples) if c == class_index]

    def load_image(self, index: int) -> ImageSample:
        """Decode one sample to float32 RGB in [0, 1]."""
        path, label = self.samples[index]
        try:
            with Image.open(path) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        except OSError as exc:
            raise UnreadableImage(f"cannot decode {path}: {exc}") from exc
        return ImageSample(pixels=pixels, label=label)

    def load_images(self, indices=None, workers: int | None = None) -> list[ImageSample]:
        """Decode many samples, optionally across worker threads.

        Worker count defaults to the ADNET_NUM_WORKERS environment variable
        (serial when unset). Output order always follows ``indices``.
        """
        if indices is None:
            indices = range(len(self.samples))
        indices = list(indices)
        if workers is None:
            workers = int(os.environ.get("ADNET_NUM_WORKERS", "1"))
        if workers <= 1 or len(indices) <= 1:
            return [self.load_image(i) for i in indices]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.load_image, indices))

    def fingerprint(self) -> str:
        """Hash of the file listing; identifies the dataset for manifests."""
        h = hashlib.sha256()
        h.update(f"split={self.split}\n".encode())
        for path, class_index in self.samples:
            h.update(f"{self.classes[class_index]}/{path.name}\n".encode())
        return h.hexdigest()


@dataclass
class SubsetManifest:
    """Reproducible record of one stratified low-data draw.

    ``selected`` maps class index -> sorted global sample indices. The same
    (dataset, percent, seed) always re-derives identical content.
    """

    percent: float
    seed: int
    selected: dict[int, list[int]] = field(default_factory=dict)
    source_fingerprint: str = ""

    def all_indices(self) -> list[int]:
        out: list[int] = []
        for c in sorted(self.selected):
            out.extend(self.selected[c])
        return sorted(out)

    def to_text(self) -> str:
        lines = [f"percent={self.percent!r} seed={self.seed} fingerprint={self.source_fingerprint}"]
        pairs = [(c, i) for c in sorted(self.selected) for i in sorted(self.selected[c])]
        lines.extend(f"{c}\t{i}" for c, i in pairs)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SubsetManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("percent="):
            raise FingerprintMismatch("not a subset manifest: missing header line")
        fields = dict(part.split("=", 1) for part in lines[0].split())
        manifest = cls(
            percent=float(fields["percent"]),
            seed=int(fields["seed"]),
            source_fingerprint=fields["fingerprint"],
        )
        for ln in lines[1:]:
            c_str, i_str = ln.split("\t")
            manifest.selected.setdefault(int(c_str), []).append(int(i_str))
        for c in manifest.selected:
            manifest.selected[c].sort()
        return manifest

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "SubsetManifest":
        return cls.from_text(Path(path).read_text())


def _subset_count(percent: float, class_size: int) -> int:
    """Per-class draw size: round-half-up of percent, clamped to [1, size]."""
    k = int(np.floor(percent / 100.0 * class_size + 0.5))
    return max(1, min(class_size, k))


def load_dataset(root, split: str) -> Dataset:
    """Scan ``<root>/<split>/<class>/<image>`` into a Dataset.

    Class names are sorted so class indices are stable across machines and
    runs. Raises MissingRoot / NoClassesFound on layout problems.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingRoot(f"dataset root does not exist: {root}")
    split_dir = root / split
    if not split_dir.is_dir():
        raise MissingRoot(f"split directory does not exist: {split_dir}")
    class_dirs = sorted(p for p in split_dir.iterdir() if p.is_dir())
    if not class_dirs:
        raise NoClassesFound(f"no class subdirectories under {split_dir}")
    classes = tuple(p.name for p in class_dirs)
    samples: list[tuple[Path, int]] = []
    for class_index, class_dir in enumerate(class_dirs):
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        samples.extend((p, class_index) for p in files)
    return Dataset(root_path=root, classes=classes, samples=tuple(samples), split=split)


def sample_subset(dataset: Dataset, percent: float, seed: int) -> SubsetManifest:
    """Draw a stratified percent subset of a training split.

    Each class contributes round-half-up(percent/100 * class size) samples,
    never fewer than one, drawn without replacement from an independent
    per-class stream of ``seed``.
    """
    if not (0.0 < percent <= 100.0):
        raise PercentOutOfRange(f"percent must lie in (0, 100], got {percent}")
    manifest = SubsetManifest(
        percent=float(percent), seed=int(seed), source_fingerprint=dataset.fingerprint()
    )
    for class_index in range(dataset.num_classes):
        members = dataset.class_indices(class_index)
        if not members:
            raise EmptyClass(f"class {dataset.classes[class_index]!r} has no samples")
        k = _subset_count(percent, len(members))
        rng = derive_rng(seed, "subset", class_index)
        chosen = rng.choice(len(members), size=k, replace=False)
        manifest.selected[class_index] = sorted(members[i] for i in chosen)
    return manifest


def materialize(dataset: Dataset, manifest: SubsetManifest) -> Dataset:
    """Restrict a dataset to the samples a manifest selected."""
    if manifest.source_fingerprint != dataset.fingerprint():
        raise FingerprintMismatch(
            "manifest was derived from a different dataset "
            f"(manifest {manifest.source_fingerprint[:12]}..., "
            f"dataset {dataset.fingerprint()[:12]}...)"
        )
    keep = manifest.all_indices()
    samples = tuple(dataset.samples[i] for i in keep)
    return Dataset(
        root_path=dataset.root_path,
        classes=dataset.classes,
        samples=samples,
        split=dataset.split,
    )
