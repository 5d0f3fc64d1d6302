import numpy as np
import pytest
import structlog
from PIL import Image

from ltcnn.data import in_memory_dataset
from ltcnn.network import NetworkSpec


@pytest.fixture(autouse=True)
def _restore_structlog_config():
    """Undo per-test structlog configuration so loggers never keep a closed capture stream."""
    saved = structlog.get_config()
    yield
    structlog.configure(**saved)


def half_bright(size: int, side: str, level: float = 0.9) -> np.ndarray:
    """H x W x 3 image, bright on one half and dark on the other."""
    img = np.full((size, size, 3), 0.1, dtype=np.float32)
    if side == "left":
        img[:, : size // 2] = level
    else:
        img[:, size // 2:] = level
    return img


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path, format="PNG")


@pytest.fixture
def small_spec():
    """32x32 input: conv 28, pool 14, conv 10, pool 5, flatten 400."""
    return NetworkSpec.for_classes(["left", "right"], input_height=32, input_width=32)


@pytest.fixture
def tiny_spec():
    """16x16 input: flatten length 16."""
    return NetworkSpec.for_classes(["left", "right"], input_height=16, input_width=16)


@pytest.fixture
def halves_dataset():
    """8 in-memory images: class 0 bright left half, class 1 bright right half."""
    images, labels = [], []
    for i in range(4):
        level = 0.7 + 0.05 * i
        images.append(half_bright(32, "left", level))
        labels.append(0)
        images.append(half_bright(32, "right", level))
        labels.append(1)
    return in_memory_dataset(images, labels, ["left", "right"])


@pytest.fixture
def halves_tree(tmp_path):
    """The same 8-image set written as `<root>/<class>/<file>.png` at 16x16."""
    root = tmp_path / "halves"
    for class_name, side in (("left", "left"), ("right", "right")):
        (root / class_name).mkdir(parents=True)
        for i in range(4):
            write_png(root / class_name / f"img{i}.png", half_bright(16, side, 0.7 + 0.05 * i))
    return root


@pytest.fixture
def halves_val_dataset():
    """4 held-out in-memory images at a brightness level the training set does not use."""
    images = [half_bright(32, side, 0.8) for side in ("left", "right", "left", "right")]
    return in_memory_dataset(images, [0, 1, 0, 1], ["left", "right"])
