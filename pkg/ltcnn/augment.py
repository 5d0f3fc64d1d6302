"""Offline geometric augmentation: one derived image per op per original."""
import csv
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from ltcnn.data import LabeledDataset, export_dataset, with_op
from ltcnn.imaging import AUGMENT_OPS
from ltcnn.logs import get_logger
from ltcnn.tensor import Rng, make_rng

MANIFEST_NAME = "augment_manifest.csv"
MANIFEST_HEADER = ("class", "file", "origin", "op", "param")
OP_ALIASES = {"flip": "hflip"}

log = get_logger(__name__)


class AugmentSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_rotation_deg: float = Field(15.0, ge=0.0)
    max_shear: float = Field(0.15, ge=0.0)


def normalize_ops(ops: Union[str, Iterable[str]]) -> Tuple[str, ...]:
    """Accept "rotate,flip,shear" or a list; return canonical names in canonical order."""
    if isinstance(ops, str):
        ops = [op for op in ops.split(",")]
    names = set()
    for op in ops:
        op = OP_ALIASES.get(op.strip(), op.strip())
        if op not in AUGMENT_OPS:
            raise ValueError(f"unknown augmentation op '{op}', expected one of {', '.join(AUGMENT_OPS)}")
        names.add(op)
    if not names:
        raise ValueError("at least one augmentation op is required")
    return tuple(op for op in AUGMENT_OPS if op in names)


def _draw_param(op: str, rng: Rng, settings: AugmentSettings) -> float:
    if op == "rotate":
        return float(rng.uniform(-settings.max_rotation_deg, settings.max_rotation_deg))
    if op == "shear":
        return float(rng.uniform(-settings.max_shear, settings.max_shear))
    return 0.0


def augment(ds: LabeledDataset, ops: Union[str, Iterable[str]], rng: Rng,
            settings: Optional[AugmentSettings] = None) -> LabeledDataset:
    """Each original is followed by its derived items (rotate, hflip, shear order).

    Derived items are lazy: they keep the original's source and the drawn
    parameter, and are rendered when loaded or exported. Items that are
    already augmented pass through without spawning more.
    """
    ops = normalize_ops(ops)
    settings = settings or AugmentSettings()
    items = []
    for item in ds.items:
        items.append(item)
        if item.op is not None:
            continue
        for op in ops:
            items.append(with_op(item, op, _draw_param(op, rng, settings)))
    log.info("augmented", originals=len(ds), ops=list(ops), items=len(items))
    return LabeledDataset(items, list(ds.class_names), ds.root)


def write_augment_manifest(rows: List[Tuple[str, str, str, str, float]], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for class_name, file_name, origin, op, param in rows:
            writer.writerow([class_name, file_name, origin, op, f"{param:.6g}"])


def augment_tree(ds: LabeledDataset, out_dir: Union[str, Path], ops: Union[str, Iterable[str]], seed: int,
                 settings: Optional[AugmentSettings] = None) -> LabeledDataset:
    """Augment and write `<out>/<class>/...` plus the manifest next to the classes."""
    out = Path(out_dir)
    augmented = augment(ds, ops, make_rng(seed, "augment"), settings)
    rows = export_dataset(augmented, out)
    write_augment_manifest(rows, out / MANIFEST_NAME)
    return augmented
