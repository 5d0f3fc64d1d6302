import numpy as np
import pytest
from PIL import Image

from ltcnn.errors import DatasetError
from ltcnn.imaging import (
    apply_op,
    decode_image,
    encode_png,
    hflip,
    match_channels,
    verify_image,
    resize_bilinear,
    rotate,
    shear,
)
from ltcnn.tensor import save_tensor


def ramp(h=5, w=7, c=3):
    return np.arange(h * w * c, dtype=np.float32).reshape(h, w, c) / (h * w * c)


class TestGeometry:
    """Test the augmentation transforms."""

    def test_hflip_is_an_involution(self):
        """Test that flipping twice restores the image."""
        img = ramp()
        assert np.array_equal(hflip(hflip(img)), img)
        assert np.array_equal(hflip(img)[:, 0], img[:, -1])

    def test_rotate_zero_is_identity(self):
        """Test that a 0 degree rotation changes nothing."""
        img = ramp()
        np.testing.assert_allclose(rotate(img, 0.0), img, atol=1e-7)

    def test_rotate_quarter_turn(self):
        """Test that +90 degrees matches a clockwise quarter turn of a square image."""
        img = ramp(4, 4, 1)
        np.testing.assert_allclose(rotate(img, 90.0), np.rot90(img, -1, axes=(0, 1)), atol=1e-5)

    def test_shear_keeps_center_row(self):
        """Test that shear is anchored on the middle row."""
        img = ramp(5, 7)
        out = shear(img, 0.15)
        np.testing.assert_allclose(out[2], img[2], atol=1e-7)
        assert not np.allclose(out[0], img[0])

    def test_shape_preserved(self):
        """Test that every op keeps H x W x C."""
        img = ramp()
        for op, param in (("rotate", 12.0), ("hflip", 0.0), ("shear", -0.1)):
            assert apply_op(img, op, param).shape == img.shape

    def test_unknown_op(self):
        """Test that an unknown op name is rejected."""
        with pytest.raises(ValueError):
            apply_op(ramp(), "zoom")


class TestResize:
    """Test bilinear resampling."""

    def test_upsample_2x2_to_4x4(self):
        """Test the half-pixel-center convention against a hand-computed grid."""
        img = np.array([[0.0, 1.0], [2.0, 3.0]], dtype=np.float32)[:, :, None]
        coords = np.array([0.0, 0.25, 0.75, 1.0])
        expected = 2 * coords[:, None] + coords[None, :]
        np.testing.assert_allclose(resize_bilinear(img, 4, 4)[:, :, 0], expected, atol=1e-6)

    def test_same_size_is_identity(self):
        """Test that resizing to the same size returns the same pixels."""
        img = ramp()
        np.testing.assert_allclose(resize_bilinear(img, 5, 7), img, atol=1e-7)

    def test_zero_target_rejected(self):
        """Test that a zero-sized target is an error."""
        with pytest.raises(DatasetError):
            resize_bilinear(ramp(), 0, 4)


class TestDecode:
    """Test image decoding."""

    def test_grayscale_replicated(self, tmp_path):
        """Test that an L-mode PNG decodes to three equal channels."""
        path = tmp_path / "g.png"
        Image.fromarray(np.full((3, 4), 128, np.uint8)).save(path)
        img = decode_image(path)
        assert img.shape == (3, 4, 3)
        assert np.all(img == img[:, :, :1])
        assert img[0, 0, 0] == pytest.approx(128 / 255)

    def test_alpha_dropped(self, tmp_path):
        """Test that RGBA decodes to RGB."""
        path = tmp_path / "a.png"
        Image.fromarray(np.zeros((2, 2, 4), np.uint8)).save(path)
        assert decode_image(path).shape == (2, 2, 3)

    def test_ltt_chw_tensor(self, tmp_path):
        """Test that a C x H x W LTT1 file is returned as H x W x C."""
        chw = np.random.default_rng(0).random((3, 4, 5)).astype(np.float32)
        save_tensor(chw, tmp_path / "x.ltt")
        np.testing.assert_array_equal(decode_image(tmp_path / "x.ltt"), chw.transpose(1, 2, 0))

    def test_png_roundtrip_within_quantization(self, tmp_path):
        """Test that encode then decode differs by at most half a level."""
        img = ramp(4, 4)
        encode_png(img, tmp_path / "r.png")
        np.testing.assert_allclose(decode_image(tmp_path / "r.png"), img, atol=0.5 / 255 + 1e-6)

    def test_garbage_file(self, tmp_path):
        """Test that an unreadable file raises 'cannot decode' naming the path."""
        path = tmp_path / "broken.png"
        path.write_bytes(b"not an image")
        with pytest.raises(DatasetError, match="cannot decode .*broken.png"):
            decode_image(path)
        with pytest.raises(DatasetError, match="cannot decode"):
            verify_image(path)


class TestChannels:
    """Test channel matching."""

    def test_rgb_to_gray(self):
        """Test the luma weights."""
        img = np.ones((1, 1, 3), np.float32) * np.array([1.0, 0.0, 0.0], np.float32)
        assert match_channels(img, 1)[0, 0, 0] == pytest.approx(0.299)

    def test_gray_to_rgb(self):
        """Test replication of a single channel."""
        assert match_channels(np.ones((2, 2, 1), np.float32), 3).shape == (2, 2, 3)
