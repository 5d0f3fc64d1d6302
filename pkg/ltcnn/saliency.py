"""Vanilla-gradient saliency: |d logit_target / d input|, max over channels."""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from ltcnn.errors import ShapeError
from ltcnn.layers import EVAL
from ltcnn.metrics import predict_labels
from ltcnn.network import Network
from ltcnn.tensor import DTYPE, Tensor, save_tensor

AUTO = "auto"


@dataclass
class SaliencyMap:
    values: Tensor  # H x W, non-negative
    target: int
    target_logit: float
    source: Optional[str] = None


def resolve_target(net: Network, target: Union[int, str, None]) -> Optional[int]:
    """Class index from an index, a class name, or None / "auto" (argmax)."""
    if target is None or target == AUTO:
        return None
    if isinstance(target, str):
        if target in net.spec.class_names:
            return net.spec.class_names.index(target)
        if not target.lstrip("-").isdigit():
            raise ValueError(f"unknown class '{target}', expected one of {net.spec.class_names}")
        target = int(target)
    if not 0 <= target < net.spec.n_classes:
        raise ValueError(f"target class {target} out of range [0, {net.spec.n_classes})")
    return int(target)


def saliency_map(net: Network, image: Tensor, target: Union[int, str, None] = AUTO,
                 source: Optional[str] = None) -> SaliencyMap:
    """Backpropagate the target class logit to a single C x H x W input in eval mode."""
    expected = (net.spec.input_channels, net.spec.input_height, net.spec.input_width)
    if tuple(image.shape) != expected:
        raise ShapeError(f"shape mismatch: image {image.shape}, network expects {expected}")
    target_index = resolve_target(net, target)

    logits, contexts = net.forward(np.asarray(image, dtype=DTYPE)[None], EVAL)
    if target_index is None:
        target_index = int(predict_labels(logits)[0])
    grad_logits = np.zeros_like(logits)
    grad_logits[0, target_index] = 1.0
    grad_x, _ = net.backward(grad_logits, contexts)
    values = np.abs(grad_x[0]).max(axis=0)
    return SaliencyMap(values=values, target=target_index, target_logit=float(logits[0, target_index]), source=source)


def quantize_map(values: Tensor) -> np.ndarray:
    """Min-max scale to 0..255; a constant map becomes all zeros."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (values.astype(np.float64) - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8)


def normalize_and_export(smap: SaliencyMap, path: Union[str, Path], raw_path: Union[str, Path, None] = None) -> np.ndarray:
    """Write the map as a binary PGM (P5, maxval 255); optionally dump the raw floats as LTT1."""
    quantized = quantize_map(smap.values)
    Image.fromarray(quantized).save(path, format="PPM")
    if raw_path is not None:
        save_tensor(smap.values.astype(DTYPE), raw_path)
    return quantized


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)
