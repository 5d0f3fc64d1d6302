"""Image decoding, bilinear resampling and the geometric transforms used for augmentation.

Images are float32 H x W x C arrays with values in [0, 1].
"""
import math
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ltcnn.errors import DatasetError
from ltcnn.tensor import DTYPE, Tensor, load_tensor

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
TENSOR_SUFFIXES = {".ltt"}
SUPPORTED_SUFFIXES = IMAGE_SUFFIXES | TENSOR_SUFFIXES

AUGMENT_OPS = ("rotate", "hflip", "shear")


def _to_hwc(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr[:, :, None]
    return arr


def decode_image(path: Union[str, Path]) -> Tensor:
    """Decode PNG/JPEG (RGB, alpha dropped, grayscale replicated) or an LTT1 tensor.

    LTT1 files hold H x W or C x H x W values already in [0, 1].
    """
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix in TENSOR_SUFFIXES:
            arr = load_tensor(path)
            if arr.ndim == 3:
                arr = arr.transpose(1, 2, 0)
            elif arr.ndim != 2:
                raise ValueError(f"expected 2 or 3 dimensions, got {arr.ndim}")
            return np.ascontiguousarray(_to_hwc(arr), dtype=DTYPE)
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=DTYPE) / DTYPE(255)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DatasetError(f"cannot decode '{path}': {e}") from e


def verify_image(path: Union[str, Path]) -> None:
    """Cheap decodability check used while indexing a dataset."""
    path = Path(path)
    if path.suffix.lower() in TENSOR_SUFFIXES:
        decode_image(path)
        return
    try:
        with Image.open(path) as img:
            img.verify()
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DatasetError(f"cannot decode '{path}': {e}") from e


def match_channels(img: Tensor, channels: int) -> Tensor:
    c = img.shape[2]
    if c == channels:
        return img
    if c == 4:
        return match_channels(img[:, :, :3], channels)
    if c == 1:
        return np.repeat(img, channels, axis=2)
    if channels == 1 and c == 3:
        luma = img @ np.array([0.299, 0.587, 0.114], dtype=img.dtype)
        return luma[:, :, None]
    raise DatasetError(f"cannot map {c} channels onto {channels}")


def _bilinear_sample(img: Tensor, src_y: np.ndarray, src_x: np.ndarray) -> Tensor:
    """Sample img at fractional coordinates; out-of-range coordinates replicate the border."""
    h, w = img.shape[:2]
    src_y = np.clip(src_y, 0.0, h - 1)
    src_x = np.clip(src_x, 0.0, w - 1)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0)[..., None]
    fx = (src_x - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return (top * (1 - fy) + bottom * fy).astype(img.dtype)


def resize_bilinear(img: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with the align-corners-false convention."""
    h, w = img.shape[:2]
    if h == 0 or w == 0 or out_h <= 0 or out_w <= 0:
        raise DatasetError(f"zero-dimension image: {img.shape} -> {out_h}x{out_w}")
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(img, grid_y, grid_x)


def warp_affine(img: Tensor, matrix: np.ndarray) -> Tensor:
    """Resample with a 2x3 matrix mapping output (x, y) to source (x, y)."""
    h, w = img.shape[:2]
    grid_y, grid_x = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    src_x = matrix[0, 0] * grid_x + matrix[0, 1] * grid_y + matrix[0, 2]
    src_y = matrix[1, 0] * grid_x + matrix[1, 1] * grid_y + matrix[1, 2]
    return _bilinear_sample(img, src_y, src_x)


def rotate(img: Tensor, degrees: float) -> Tensor:
    """Rotate about the image center."""
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    # inverse rotation: source = R(-theta) (dest - center) + center
    matrix = np.array([
        [cos, sin, cx - cos * cx - sin * cy],
        [-sin, cos, cy + sin * cx - cos * cy],
    ])
    return warp_affine(img, matrix)


def shear(img: Tensor, factor: float) -> Tensor:
    """Horizontal shear about the center row."""
    h = img.shape[0]
    cy = (h - 1) / 2.0
    matrix = np.array([
        [1.0, factor, -factor * cy],
        [0.0, 1.0, 0.0],
    ])
    return warp_affine(img, matrix)


def hflip(img: Tensor) -> Tensor:
    return np.ascontiguousarray(img[:, ::-1])


def apply_op(img: Tensor, op: str, param: float = 0.0) -> Tensor:
    if op == "rotate":
        return rotate(img, param)
    if op == "hflip":
        return hflip(img)
    if op == "shear":
        return shear(img, param)
    raise ValueError(f"unknown augmentation op '{op}'")


def encode_png(img: Tensor, path: Union[str, Path]) -> None:
    """Quantize [0, 1] values to 8 bits and write a PNG (RGB, or grayscale for one channel)."""
    quantized = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    if quantized.shape[2] == 1:
        Image.fromarray(quantized[:, :, 0]).save(path, format="PNG")
    else:
        Image.fromarray(np.ascontiguousarray(quantized[:, :, :3])).save(path, format="PNG")
