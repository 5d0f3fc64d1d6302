"""Labeled image datasets: indexing class directories, preprocessing, stratified splits and batching."""
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ltcnn.errors import DatasetError, ShapeError
from ltcnn.imaging import SUPPORTED_SUFFIXES, apply_op, decode_image, encode_png, match_channels, verify_image, resize_bilinear
from ltcnn.logs import get_logger
from ltcnn.network import NetworkSpec
from ltcnn.tensor import DTYPE, Rng, Tensor, make_rng

ORIGINAL = "original"

log = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class DatasetItem:
    """One labeled image. Augmented items point at their original plus the op to apply."""

    label: int
    source: Optional[Path] = None
    image: Optional[np.ndarray] = None  # in-memory H x W x C, used when there is no file
    op: Optional[str] = None
    param: float = 0.0

    @property
    def origin(self) -> str:
        return ORIGINAL if self.op is None else f"augmented:{self.op}"

    @property
    def stem(self) -> str:
        return self.source.stem if self.source is not None else "item"


@dataclass
class LabeledDataset:
    items: List[DatasetItem]
    class_names: List[str]
    root: Optional[Path] = None

    def __post_init__(self):
        n = len(self.class_names)
        for item in self.items:
            if not 0 <= item.label < n:
                raise DatasetError(f"label {item.label} outside the {n} classes")

    def __len__(self) -> int:
        return len(self.items)

    def class_counts(self) -> List[int]:
        counts = [0] * len(self.class_names)
        for item in self.items:
            counts[item.label] += 1
        return counts

    def labels(self) -> List[int]:
        return [item.label for item in self.items]

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset([self.items[i] for i in indices], list(self.class_names), self.root)


@dataclass
class SplitPair:
    train: LabeledDataset
    test: LabeledDataset
    ratio: float
    seed: int
    val: Optional[LabeledDataset] = field(default=None)


def _class_dirs(root: Path) -> List[Path]:
    if not root.is_dir():
        raise DatasetError(f"dataset root '{root}' does not exist")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_dirs:
        raise DatasetError(f"dataset root '{root}' has no class directories")
    return class_dirs


def class_names_of(root_dir: Union[str, Path]) -> List[str]:
    """Class names of a dataset tree without touching the files."""
    return [d.name for d in _class_dirs(Path(root_dir))]


def load_dataset(root_dir: Union[str, Path]) -> LabeledDataset:
    """Index `<root>/<class_name>/<file>`; classes and files sorted by name."""
    root = Path(root_dir)
    class_dirs = _class_dirs(root)

    items = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and not p.name.startswith(".") and p.suffix.lower() in SUPPORTED_SUFFIXES
        )
        if not files:
            raise DatasetError(f"class directory '{class_dir.name}' is empty")
        for path in files:
            verify_image(path)
            items.append(DatasetItem(label=label, source=path))

    log.info("dataset_loaded", root=str(root), classes=len(class_dirs), items=len(items))
    return LabeledDataset(items, [d.name for d in class_dirs], root)


def load_item_image(item: DatasetItem) -> Tensor:
    base = item.image if item.image is not None else decode_image(item.source)
    if item.op is None:
        return base
    return apply_op(base, item.op, item.param)


def preprocess(image: Tensor, spec: NetworkSpec) -> Tensor:
    """H x W x C in [0, 1] -> C x H x W network input in [-1, 1].

    Bilinear resize to the spec size, then per-channel (v - 0.5) / 0.5.
    """
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or 0 in image.shape:
        raise DatasetError(f"zero-dimension image: {image.shape}")
    image = match_channels(np.asarray(image, dtype=DTYPE), spec.input_channels)
    resized = resize_bilinear(image, spec.input_height, spec.input_width)
    normalized = (np.clip(resized, 0.0, 1.0) - DTYPE(0.5)) / DTYPE(0.5)
    return np.ascontiguousarray(normalized.transpose(2, 0, 1), dtype=DTYPE)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _test_counts(counts: List[int], class_names: List[str], ratio: float) -> List[int]:
    """Per-class test sizes: rounded share, both sides non-empty, total pulled to round(N * ratio)."""
    targets = []
    for name, n in zip(class_names, counts):
        if n < 2:
            raise DatasetError(f"class '{name}' has {n} item(s); a stratified split needs at least 2")
        targets.append(min(max(_round_half_up(n * ratio), 1), n - 1))

    diff = sum(targets) - _round_half_up(sum(counts) * ratio)
    order = sorted(range(len(counts)), key=lambda c: (-counts[c], class_names[c]))
    adjusted = set()
    while diff != 0:
        step = -1 if diff > 0 else 1
        candidates = [
            c for c in order
            if c not in adjusted
            and 1 <= targets[c] + step <= counts[c] - 1
            and (targets[c] - counts[c] * ratio) * step < 0
        ]
        if not candidates:
            log.warning("split_total_not_reached", remaining=diff)
            break
        targets[candidates[0]] += step
        adjusted.add(candidates[0])
        diff += step
    return targets


def stratified_split(ds: LabeledDataset, ratio: float, seed: int, stream: str = "split") -> SplitPair:
    """Shuffle each class with the seeded rng and send its first share to the test side."""
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    by_class: List[List[int]] = [[] for _ in ds.class_names]
    for idx, item in enumerate(ds.items):
        by_class[item.label].append(idx)

    targets = _test_counts([len(members) for members in by_class], ds.class_names, ratio)
    rng = make_rng(seed, stream)
    test_idx = []
    for members, n_test in zip(by_class, targets):
        order = rng.permutation(len(members))
        test_idx.extend(members[i] for i in order[:n_test])

    test_set = set(test_idx)
    train_idx = [i for i in range(len(ds)) if i not in test_set]
    return SplitPair(train=ds.subset(train_idx), test=ds.subset(sorted(test_idx)), ratio=ratio, seed=seed)


def three_way_split(ds: LabeledDataset, test_ratio: float, val_ratio: float, seed: int) -> SplitPair:
    """Stratified train/val/test. Both ratios are fractions of the whole dataset."""
    if not 0 < test_ratio + val_ratio < 1:
        raise ValueError(f"test_ratio + val_ratio must be in (0, 1), got {test_ratio + val_ratio}")
    outer = stratified_split(ds, test_ratio, seed)
    inner = stratified_split(outer.train, val_ratio / (1 - test_ratio), seed, stream="split-val")
    return SplitPair(train=inner.train, test=outer.test, val=inner.test, ratio=test_ratio, seed=seed)


def _resolve_workers(workers: Optional[int]) -> int:
    if workers is not None:
        return max(1, workers)
    from ltcnn.config import get_settings
    return get_settings().threads


def batch_iterator(ds: LabeledDataset, batch_size: int, rng: Optional[Rng], shuffle: bool,
                   spec: NetworkSpec, workers: Optional[int] = None) -> Iterator[Tuple[Tensor, np.ndarray]]:
    """Yield (B x C x H x W, labels) batches; the last batch may be partial.

    Images are decoded and preprocessed lazily by a thread pool whose size
    never changes the batch order or contents.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        if rng is None:
            raise ValueError("shuffling needs an rng")
        order = rng.permutation(len(ds))
    else:
        order = np.arange(len(ds))

    def load(index: int) -> Tensor:
        return preprocess(load_item_image(ds.items[index]), spec)

    with ThreadPoolExecutor(max_workers=_resolve_workers(workers)) as pool:
        for start in range(0, len(order), batch_size):
            chunk = [int(i) for i in order[start:start + batch_size]]
            x = np.stack(list(pool.map(load, chunk)))
            yield x, np.array([ds.items[i].label for i in chunk], dtype=np.int64)


def check_classes(ds: LabeledDataset, spec: NetworkSpec) -> None:
    if list(ds.class_names) != list(spec.class_names):
        raise DatasetError(f"classes do not match: dataset {ds.class_names}, network {spec.class_names}")


def export_dataset(ds: LabeledDataset, out_dir: Union[str, Path]) -> List[Tuple[str, str, str, str, float]]:
    """Write `<out>/<class>/<file>`: originals copied byte for byte, augmented items as
    `<stem>__<op>.png`. Returns manifest rows (class, file, origin, op, param)."""
    out = Path(out_dir)
    written = set()
    rows = []
    for item in ds.items:
        class_name = ds.class_names[item.label]
        target_dir = out / class_name
        target_dir.mkdir(parents=True, exist_ok=True)
        if item.op is None and item.source is not None:
            name = item.source.name
            if (class_name, name) in written:
                raise DatasetError(f"two items would be written to '{class_name}/{name}'")
            shutil.copyfile(item.source, target_dir / name)
        else:
            name = f"{item.stem}__{item.op or ORIGINAL}.png"
            if (class_name, name) in written:
                raise DatasetError(f"two items would be written to '{class_name}/{name}'")
            encode_png(load_item_image(item), target_dir / name)
        written.add((class_name, name))
        rows.append((class_name, name, item.origin, item.op or "", item.param))
    return rows


def materialize_split(pair: SplitPair, out_dir: Union[str, Path]) -> None:
    """Copy a split into `<out>/train`, `<out>/test` (and `<out>/val`)."""
    out = Path(out_dir)
    sides = [("train", pair.train), ("test", pair.test)]
    if pair.val is not None:
        sides.append(("val", pair.val))
    for side, subset in sides:
        export_dataset(subset, out / side)
        log.info("split_written", side=side, items=len(subset))


def in_memory_dataset(images: Sequence[np.ndarray], labels: Sequence[int], class_names: Sequence[str]) -> LabeledDataset:
    """Dataset over arrays already in memory (H x W x C in [0, 1])."""
    if len(images) != len(labels):
        raise ShapeError(f"{len(images)} images but {len(labels)} labels")
    items = [DatasetItem(label=int(label), image=np.asarray(img, dtype=DTYPE)) for img, label in zip(images, labels)]
    return LabeledDataset(items, list(class_names))


def with_op(item: DatasetItem, op: str, param: float) -> DatasetItem:
    return replace(item, op=op, param=float(param))
