"""Finite-difference verification of layer backward passes."""
from typing import Callable, Dict

import numpy as np
from pydantic import BaseModel

from ltcnn.layers import TRAIN, Layer, softmax_cross_entropy
from ltcnn.tensor import Tensor, make_rng

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-4


class GradientCheckReport(BaseModel):
    layer: str
    tolerance: float
    max_error: float
    errors: Dict[str, float]  # tensor name -> max relative error
    passed: bool


def relative_error(analytic: Tensor, numeric: Tensor) -> Tensor:
    """|a - n| / max(|a|, |n|, 1e-8), element by element."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f: Callable[[], float], target: Tensor, h: float = DEFAULT_STEP) -> Tensor:
    """Central differences of scalar `f` w.r.t. every element of `target` (perturbed in place)."""
    grad = np.zeros_like(target, dtype=np.float64)
    flat = target.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = f()
        flat[i] = original - h
        f_minus = f()
        flat[i] = original
        out[i] = (f_plus - f_minus) / (2 * h)
    return grad


def gradient_check(layer: Layer, x: Tensor, tolerance: float = DEFAULT_TOLERANCE,
                   h: float = DEFAULT_STEP, mode: str = TRAIN, seed: int = 0) -> GradientCheckReport:
    """Compare `layer.backward` against central differences in float64.

    The scalar objective is sum(forward(x) * R) for a fixed random projection
    R, so backward is driven with grad_out = R. Every forward uses a fresh rng
    from `seed`, which pins dropout masks across evaluations.
    """
    layer64 = layer.astype(np.float64)
    x64 = np.array(x, dtype=np.float64)

    def run():
        return layer64.forward(x64, mode, rng=make_rng(seed, "dropout"))

    y, ctx = run()
    projection = make_rng(seed, "gradcheck").standard_normal(size=y.shape)
    grad_x, grads = layer64.backward(projection, ctx)

    def objective() -> float:
        out, _ = run()
        return float(np.sum(out * projection))

    errors = {"input": float(relative_error(grad_x, numeric_gradient(objective, x64, h)).max(initial=0.0))}
    for key, value in layer64.parameters().items():
        if key not in grads:
            continue
        numeric = numeric_gradient(objective, value, h)
        errors[key] = float(relative_error(grads[key], numeric).max(initial=0.0))

    max_error = max(errors.values())
    return GradientCheckReport(layer=layer.name, tolerance=tolerance, max_error=max_error,
                               errors=errors, passed=max_error < tolerance)


def loss_gradient_check(logits: Tensor, labels, tolerance: float = DEFAULT_TOLERANCE,
                        h: float = DEFAULT_STEP) -> GradientCheckReport:
    """Check the softmax cross-entropy gradient w.r.t. the logits."""
    z = np.array(logits, dtype=np.float64)
    _, grad, _ = softmax_cross_entropy(z, labels)
    numeric = numeric_gradient(lambda: softmax_cross_entropy(z, labels)[0], z, h)
    max_error = float(relative_error(grad, numeric).max(initial=0.0))
    return GradientCheckReport(layer="softmax_cross_entropy", tolerance=tolerance, max_error=max_error,
                               errors={"logits": max_error}, passed=max_error < tolerance)
