import numpy as np
import pytest

from ltcnn.gradcheck import gradient_check, loss_gradient_check, numeric_gradient, relative_error
from ltcnn.layers import (
    EVAL,
    BatchNorm2d,
    BatchNormState,
    Conv2d,
    ConvParams,
    Dense,
    DenseParams,
    Dropout,
    Flatten,
    MaxPool2x2,
    ReLU,
)

SEEDS = range(10)


def _rng(seed):
    return np.random.default_rng(1000 + seed)


def away_from_zero(rng, shape):
    """Values with |v| >= 0.1 so a 1e-3 step never crosses the ReLU kink."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape)


def distinct_values(rng, shape):
    """Values at least 0.05 apart so a 1e-3 step never changes a pooling argmax."""
    return (rng.permutation(int(np.prod(shape))).reshape(shape) * 0.05).astype(np.float64)


class TestRelativeError:
    """Test the error measure."""

    def test_floor_for_tiny_values(self):
        """Test that the denominator never drops below 1e-8."""
        assert relative_error(np.array([0.0]), np.array([1e-10]))[0] == pytest.approx(1e-2)

    def test_numeric_gradient_of_quadratic(self):
        """Test central differences on sum(x^2)."""
        x = np.array([1.0, -2.0])
        grad = numeric_gradient(lambda: float(np.sum(x ** 2)), x)
        np.testing.assert_allclose(grad, [2.0, -4.0], rtol=1e-8)
        assert x.tolist() == [1.0, -2.0]


class TestLayerGradients:
    """Test every layer backward against float64 central differences."""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv(self, seed):
        """Test conv input, weight and bias gradients."""
        rng = _rng(seed)
        layer = Conv2d("conv", ConvParams(rng.standard_normal((3, 2, 3, 3)).astype(np.float32),
                                          rng.standard_normal(3).astype(np.float32)))
        report = gradient_check(layer, rng.standard_normal((2, 2, 5, 5)), seed=seed)
        assert report.passed, report.errors
        assert set(report.errors) == {"input", "w", "b"}

    @pytest.mark.parametrize("seed", SEEDS)
    def test_batchnorm_train(self, seed):
        """Test batch norm gradients through the batch statistics."""
        rng = _rng(seed)
        state = BatchNormState.initial(2)
        state.gamma[:] = rng.uniform(0.5, 1.5, 2)
        state.beta[:] = rng.standard_normal(2)
        report = gradient_check(BatchNorm2d("bn", state), rng.standard_normal((4, 2, 3, 3)) * 2 + 1, seed=seed)
        assert report.passed, report.errors
        assert set(report.errors) == {"input", "gamma", "beta"}

    @pytest.mark.parametrize("seed", SEEDS)
    def test_batchnorm_eval_input_gradient(self, seed):
        """Test the eval-mode input gradient used by saliency."""
        rng = _rng(seed)
        state = BatchNormState.initial(3)
        state.running_mean[:] = rng.standard_normal(3)
        state.running_var[:] = rng.uniform(0.5, 2.0, 3)
        report = gradient_check(BatchNorm2d("bn", state), rng.standard_normal((2, 3, 2, 2)), mode=EVAL, seed=seed)
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_relu(self, seed):
        """Test the ReLU gradient away from the kink."""
        rng = _rng(seed)
        report = gradient_check(ReLU("relu"), away_from_zero(rng, (2, 3, 4, 4)), seed=seed)
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_maxpool(self, seed):
        """Test max pooling gradient routing."""
        rng = _rng(seed)
        report = gradient_check(MaxPool2x2("pool"), distinct_values(rng, (2, 2, 4, 6)), seed=seed)
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_dense(self, seed):
        """Test dense input, weight and bias gradients."""
        rng = _rng(seed)
        layer = Dense("fc", DenseParams(rng.standard_normal((4, 6)).astype(np.float32),
                                        rng.standard_normal(4).astype(np.float32)))
        report = gradient_check(layer, rng.standard_normal((3, 6)), seed=seed)
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_dropout(self, seed):
        """Test dropout with the mask pinned across evaluations."""
        rng = _rng(seed)
        report = gradient_check(Dropout("drop", 0.5), rng.standard_normal((4, 8)), seed=seed)
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_flatten(self, seed):
        """Test that flatten routes gradients back to the original layout."""
        rng = _rng(seed)
        report = gradient_check(Flatten("flatten"), rng.standard_normal((2, 3, 2, 2)), seed=seed)
        assert report.passed, report.errors

    @pytest.mark.parametrize("seed", SEEDS)
    def test_softmax_cross_entropy(self, seed):
        """Test the loss gradient with respect to the logits."""
        rng = _rng(seed)
        report = loss_gradient_check(rng.standard_normal((4, 3)), rng.integers(0, 3, size=4))
        assert report.passed, report.errors

    def test_broken_backward_fails(self):
        """Test that a wrong gradient is reported as failing."""
        rng = _rng(0)

        class Doubled(ReLU):
            def backward(self, grad_out, ctx):
                grad_x, grads = super().backward(grad_out, ctx)
                return 2 * grad_x, grads

        report = gradient_check(Doubled("relu"), away_from_zero(rng, (2, 4)))
        assert not report.passed
        assert report.max_error == pytest.approx(0.5)

    def test_original_layer_untouched(self):
        """Test that the check runs on a float64 copy."""
        rng = _rng(0)
        weights = rng.standard_normal((2, 3)).astype(np.float32)
        layer = Dense("fc", DenseParams(weights.copy(), np.zeros(2, np.float32)))
        gradient_check(layer, rng.standard_normal((2, 3)))
        assert layer.params.weights.dtype == np.float32
        assert np.array_equal(layer.params.weights, weights)
