import numpy as np
import pytest

from ltcnn.errors import ShapeError
from ltcnn.tensor import (
    DTYPE,
    check_finite,
    decode_tensor,
    elementwise,
    encode_tensor,
    flat_index,
    load_tensor,
    make_rng,
    matmul,
    sample_normal,
    save_tensor,
    tensor,
)


class TestConstruction:
    """Test tensor construction and indexing."""

    def test_tensor_is_contiguous_float32(self):
        """Test that tensor() returns a C-contiguous float32 array."""
        t = tensor([[1, 2], [3, 4]])
        assert t.dtype == DTYPE
        assert t.flags["C_CONTIGUOUS"]

    def test_zero_dimension_rejected(self):
        """Test that a zero-length dimension is an error."""
        with pytest.raises(ShapeError):
            tensor(np.zeros((2, 0)))

    def test_flat_index_is_row_major(self):
        """Test that the last dimension varies fastest."""
        assert flat_index((2, 3, 4), (1, 2, 3)) == 23
        assert flat_index((2, 3, 4), (0, 0, 1)) == 1

    def test_flat_index_out_of_range(self):
        """Test that out-of-range indices raise IndexError."""
        with pytest.raises(IndexError):
            flat_index((2, 3), (2, 0))


class TestElementwise:
    """Test elementwise ops."""

    def test_shape_mismatch_names_both_shapes(self):
        """Test that mismatched operands raise ShapeError with both shapes."""
        with pytest.raises(ShapeError, match=r"\(2, 3\) vs \(3, 2\)"):
            elementwise("add", np.zeros((2, 3), DTYPE), np.zeros((3, 2), DTYPE))

    def test_max_against_scalar(self):
        """Test that max with a scalar clamps from below."""
        out = elementwise("max", tensor([-1.0, 0.5]), 0.0)
        assert out.tolist() == [0.0, 0.5]

    def test_inputs_not_mutated(self):
        """Test that operands are left untouched."""
        a = tensor([1.0, 2.0])
        elementwise("mul", a, 3.0)
        assert a.tolist() == [1.0, 2.0]


class TestMatmul:
    """Test the deterministic matrix product."""

    def test_matches_naive_loop(self):
        """Test that matmul equals the triple-loop product."""
        rng = np.random.default_rng(3)
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5, 3))
        expected = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                expected[i, j] = sum(a[i, k] * b[k, j] for k in range(5))
        np.testing.assert_allclose(matmul(a, b), expected, rtol=1e-12)

    def test_inner_dimension_mismatch(self):
        """Test that incompatible operands raise ShapeError."""
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))


class TestRandomStreams:
    """Test seeded random streams."""

    def test_same_seed_and_stream_repeat(self):
        """Test that (seed, stream) fully determines the draws."""
        assert np.array_equal(make_rng(7, "init").random(5), make_rng(7, "init").random(5))

    def test_streams_are_independent(self):
        """Test that different stream names give different draws."""
        assert not np.array_equal(make_rng(7, "init").random(5), make_rng(7, "shuffle").random(5))

    def test_negative_seed_rejected(self):
        """Test that a negative seed is an error."""
        with pytest.raises(ValueError):
            make_rng(-1)

    def test_sample_normal_negative_stddev(self):
        """Test that stddev < 0 is an error."""
        with pytest.raises(ValueError):
            sample_normal(make_rng(0), (2,), stddev=-1.0)

    def test_sample_normal_zero_stddev_is_mean(self):
        """Test that stddev 0 returns the mean everywhere."""
        assert np.all(sample_normal(make_rng(0), (3, 2), mean=1.5, stddev=0.0) == 1.5)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_sample_normal_unit_variance(self, seed):
        """Test that 10^5 standard normal draws have variance within [0.97, 1.03]."""
        samples = sample_normal(make_rng(seed, "init"), (100_000,)).astype(np.float64)
        assert 0.97 <= samples.var() <= 1.03
        assert abs(samples.mean()) < 0.02


class TestLttFormat:
    """Test the LTT1 tensor file format."""

    def test_file_roundtrip(self, tmp_path):
        """Test that save then load reproduces the tensor bitwise."""
        x = sample_normal(make_rng(1), (2, 3, 4))
        save_tensor(x, tmp_path / "x.ltt")
        assert np.array_equal(load_tensor(tmp_path / "x.ltt"), x)

    def test_layout(self):
        """Test magic, rank and little-endian dims."""
        raw = encode_tensor(tensor([[1.0, 2.0, 3.0]]))
        assert raw[:4] == b"LTT1"
        assert raw[4] == 2
        assert raw[5:13] == b"\x01\x00\x00\x00\x03\x00\x00\x00"
        assert len(raw) == 13 + 12

    def test_truncated_payload(self):
        """Test that a short payload is rejected."""
        raw = encode_tensor(tensor([1.0, 2.0]))
        with pytest.raises(ValueError, match="truncated payload"):
            decode_tensor(raw[:-1])

    def test_bad_magic(self):
        """Test that foreign bytes are rejected."""
        with pytest.raises(ValueError, match="cannot decode"):
            decode_tensor(b"PNG\x00\x01")


class TestCheckFinite:
    """Test the non-finite guard."""

    def test_finite_passes_through(self):
        """Test that a finite tensor is returned unchanged."""
        x = np.array([1.0, -2.0], dtype=np.float32)
        assert check_finite(x, "x") is x

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_raises(self, bad):
        """Test that NaN and infinities raise FloatingPointError naming the value."""
        with pytest.raises(FloatingPointError, match="loss contains non-finite values"):
            check_finite(np.asarray(bad), "loss")
