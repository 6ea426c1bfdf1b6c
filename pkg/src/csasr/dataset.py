"""UCMerced-style directory indexing with stratified splits and patch batches."""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import SUPPORTED_SUFFIXES, ImageError, SamplePair, degrade, load_image, to_float

log = logging.getLogger(__name__)

UCMERCED_CLASSES = 21
UCMERCED_PER_CLASS = 100
SPLIT_NAMES = ("train", "val", "test")


class DatasetError(Exception):
    pass


@dataclass
class DatasetIndex:
    root: Path
    entries: list[tuple[str, Path]]
    class_names: list[str]

    def __len__(self) -> int:
        return len(self.entries)

    def key(self, i: int) -> str:
        cls, path = self.entries[i]
        return f"{cls}/{path.name}"


@dataclass
class SplitSpec:
    seed: int
    train: list[int] = field(default_factory=list)
    val: list[int] = field(default_factory=list)
    test: list[int] = field(default_factory=list)

    def get(self, name: str) -> list[int]:
        if name not in SPLIT_NAMES:
            raise DatasetError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}")
        return getattr(self, name)


def scan_dataset(root: str | Path, verify: bool = True) -> DatasetIndex:
    """Index ``root/<class>/<image>`` in lexicographic order, skipping unreadable files."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist or is not a directory")
    entries: list[tuple[str, Path]] = []
    for cls_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for path in sorted(p for p in cls_dir.iterdir() if p.is_file()):
            if path.suffix.lower() not in SUPPORTED_SUFFIXES:
                continue
            if verify:
                try:
                    load_image(path)
                except ImageError as exc:
                    log.warning("skipping unreadable image %s: %s", path, exc)
                    continue
            entries.append((cls_dir.name, path))
    if not entries:
        raise DatasetError(f"no usable images under {root}")
    classes = sorted({c for c, _ in entries})
    if len(entries) != UCMERCED_CLASSES * UCMERCED_PER_CLASS or len(classes) != UCMERCED_CLASSES:
        log.warning("partial corpus: %d images in %d classes (full UCMerced is %d x %d)",
                    len(entries), len(classes), UCMERCED_CLASSES, UCMERCED_PER_CLASS)
    return DatasetIndex(root, entries, classes)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_splits(index: DatasetIndex, seed: int) -> SplitSpec:
    """Per class: half to test, then 20% of the remaining train share to validation."""
    rng = np.random.default_rng(seed)
    spec = SplitSpec(seed)
    by_class: dict[str, list[int]] = {c: [] for c in index.class_names}
    for i, (cls, _) in enumerate(index.entries):
        by_class[cls].append(i)
    for cls in index.class_names:
        members = by_class[cls]
        if len(members) < 2:
            raise DatasetError(f"class {cls!r} has {len(members)} image(s); at least 2 are needed to split")
        order = [members[j] for j in rng.permutation(len(members))]
        n_test = len(order) // 2
        n_train = len(order) - n_test
        n_val = _round_half_up(0.2 * n_train)
        if n_train >= 5:
            n_val = max(1, n_val)
        n_val = min(n_val, n_train - 1)
        spec.test.extend(order[:n_test])
        spec.val.extend(order[n_test:n_test + n_val])
        spec.train.extend(order[n_test + n_val:])
    for name in SPLIT_NAMES:
        spec.get(name).sort()
    return spec


def write_split_file(index: DatasetIndex, spec: SplitSpec, path: str | Path) -> None:
    lines = []
    for name in SPLIT_NAMES:
        lines.extend(f"{name}\t{index.key(i)}" for i in spec.get(name))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split_file(index: DatasetIndex, path: str | Path, seed: int = -1) -> SplitSpec:
    lookup = {index.key(i): i for i in range(len(index))}
    spec = SplitSpec(seed)
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, key = line.split("\t")
            spec.get(name).append(lookup[key])
        except (ValueError, KeyError, DatasetError) as exc:
            raise DatasetError(f"{path}:{lineno}: bad split line {line!r}") from exc
    return spec


class ImageCache:
    """Bounded LRU of decoded float images keyed by path."""

    def __init__(self, capacity: int = 256):
        self.capacity = capacity
        self._items: OrderedDict[Path, np.ndarray] = OrderedDict()

    def get(self, path: Path) -> np.ndarray:
        if path in self._items:
            self._items.move_to_end(path)
            return self._items[path]
        img = to_float(load_image(path))
        self._items[path] = img
        if len(self._items) > self.capacity:
            self._items.popitem(last=False)
        return img


def _augment(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    k = int(rng.integers(4))
    img = np.rot90(img, k, axes=(1, 2))
    if rng.integers(2):
        img = img[:, :, ::-1]
    return np.ascontiguousarray(img)


def next_batch(index: DatasetIndex, split: list[int], scale: int, patch_hr: int, batch: int,
               rng: np.random.Generator, patch_multiple: int = 1, augment: bool = False,
               cache: ImageCache | None = None) -> list[SamplePair]:
    """``batch`` random HR crops from images of ``split``, each degraded to an (LR, HR) pair."""
    if patch_hr % scale or patch_hr % patch_multiple:
        raise DatasetError(f"patch_hr {patch_hr} must be divisible by scale {scale} and by {patch_multiple}")
    if not split:
        raise DatasetError("cannot sample from an empty split")
    cache = cache or ImageCache(capacity=batch)
    pairs = []
    for pick in rng.integers(len(split), size=batch):
        cls, path = index.entries[split[int(pick)]]
        img = cache.get(path)
        _, h, w = img.shape
        if patch_hr > h or patch_hr > w:
            raise DatasetError(f"patch {patch_hr} larger than image {path} ({h}x{w})")
        top = int(rng.integers(h - patch_hr + 1))
        left = int(rng.integers(w - patch_hr + 1))
        crop = img[:, top:top + patch_hr, left:left + patch_hr]
        if augment:
            crop = _augment(crop, rng)
        pair = degrade(np.ascontiguousarray(crop), scale)
        pair.provenance = (str(path), (top, left))
        pairs.append(pair)
    return pairs


def stack_pairs(pairs: list[SamplePair]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.lr for p in pairs]), np.stack([p.hr for p in pairs])
