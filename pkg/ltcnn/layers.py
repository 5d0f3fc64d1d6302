"""Forward and backward passes for every layer type of the network.

The module-level functions are the numerical contracts; the `Layer` classes
bind them to parameter containers so the network and the gradient checker can
treat every stage alike. All functions are dtype-generic: float32 in training,
float64 under `gradient_check`.
"""
import copy
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ltcnn.errors import ShapeError
from ltcnn.tensor import Rng, Tensor, matmul

TRAIN = "train"
EVAL = "eval"
MODES = (TRAIN, EVAL)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ConvParams:
    weights: Tensor  # out_ch x in_ch x kh x kw
    bias: Tensor  # out_ch

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"conv weights must be out x in x k x k, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"conv bias shape {self.bias.shape} does not match {self.weights.shape[0]} filters")


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    def __post_init__(self):
        channels = self.gamma.shape
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != channels:
                raise ShapeError(f"batch norm {name} shape {getattr(self, name).shape} != gamma {channels}")
        if not 0 < self.momentum < 1:
            raise ValueError(f"momentum must be in (0, 1), got {self.momentum}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    @classmethod
    def initial(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


@dataclass
class DenseParams:
    weights: Tensor  # out x in
    bias: Tensor  # out

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"dense weights {self.weights.shape} and bias {self.bias.shape} do not agree")


@dataclass
class LayerContext:
    """What a backward pass needs from the forward pass that preceded it."""

    layer: str
    mode: str
    cache: Dict[str, Any] = field(default_factory=dict)


def _check_context(ctx: LayerContext, layer: str) -> None:
    if ctx.layer != layer:
        raise ShapeError(f"{layer}: backward received a context from '{ctx.layer}'")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be 'train' or 'eval', got '{mode}'")


# -- convolution -----------------------------------------------------------

def _im2col(sample: Tensor, k: int) -> Tensor:
    """C x H x W -> (Ho*Wo) x (C*k*k), rows in output raster order."""
    windows = sliding_window_view(sample, (k, k), axis=(1, 2))  # C x Ho x Wo x k x k
    c, ho, wo = windows.shape[:3]
    return np.ascontiguousarray(windows.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c * k * k)


def conv2d_forward(x: Tensor, p: ConvParams, name: str = "conv") -> Tuple[Tensor, LayerContext]:
    """Valid cross-correlation, stride 1, no kernel flip."""
    out_ch, in_ch, k, _ = p.weights.shape
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected B x C x H x W input, got {x.shape}")
    b, c, h, w = x.shape
    if c != in_ch:
        raise ShapeError(f"{name}: input has {c} channels, weights expect {in_ch}")
    if h < k or w < k:
        raise ShapeError(f"{name}: input {h}x{w} smaller than kernel {k}x{k}")

    ho, wo = h - k + 1, w - k + 1
    w_cols = p.weights.reshape(out_ch, in_ch * k * k).T
    out = np.empty((b, out_ch, ho, wo), dtype=x.dtype)
    for i in range(b):
        cols = _im2col(x[i], k)
        out[i] = matmul(cols, w_cols).T.reshape(out_ch, ho, wo)
    out += p.bias[None, :, None, None]
    return out, LayerContext(layer=name, mode=TRAIN, cache={"x": x})


def conv2d_backward(grad_out: Tensor, ctx: LayerContext, p: ConvParams, name: str = "conv"):
    _check_context(ctx, name)
    x = ctx.cache["x"]
    out_ch, in_ch, k, _ = p.weights.shape
    b, c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    if grad_out.shape != (b, out_ch, ho, wo):
        raise ShapeError(f"{name}: grad shape {grad_out.shape} != forward output {(b, out_ch, ho, wo)}")

    w_flat = p.weights.reshape(out_ch, in_ch * k * k)
    grad_w = np.zeros_like(w_flat)
    grad_x = np.zeros_like(x)
    for i in range(b):
        g = grad_out[i].reshape(out_ch, ho * wo)
        grad_w += matmul(g, _im2col(x[i], k))
        grad_cols = matmul(np.ascontiguousarray(g.T), w_flat).reshape(ho, wo, c, k, k)
        for u in range(k):
            for v in range(k):
                grad_x[i, :, u:u + ho, v:v + wo] += grad_cols[:, :, :, u, v].transpose(2, 0, 1)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return grad_x, grad_w.reshape(p.weights.shape), grad_b


# -- batch normalization ---------------------------------------------------

def batchnorm_forward(x: Tensor, s: BatchNormState, mode: str, name: str = "bn") -> Tuple[Tensor, LayerContext]:
    """Per-channel normalization over batch and spatial axes.

    Train mode normalizes with the biased batch variance and folds the
    unbiased batch variance into the running estimate; eval mode reads the
    running statistics and mutates nothing.
    """
    _check_mode(mode)
    if x.ndim != 4 or x.shape[1] != s.gamma.shape[0]:
        raise ShapeError(f"{name}: input {x.shape} does not have {s.gamma.shape[0]} channels")
    b, c, h, w = x.shape
    shape = (1, c, 1, 1)

    if mode == TRAIN:
        n = b * h * w
        if n < 2:
            raise ShapeError(f"{name}: train mode needs at least 2 values per channel, got {n}")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        s.running_mean[...] = (1 - s.momentum) * s.running_mean + s.momentum * mean
        s.running_var[...] = (1 - s.momentum) * s.running_var + s.momentum * var * (n / (n - 1))
    else:
        mean = s.running_mean
        var = s.running_var

    inv_std = 1.0 / np.sqrt(var + s.eps)
    x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = x_hat * s.gamma.reshape(shape) + s.beta.reshape(shape)
    return out.astype(x.dtype, copy=False), LayerContext(
        layer=name, mode=mode, cache={"x_hat": x_hat, "inv_std": inv_std}
    )


def batchnorm_backward(grad_out: Tensor, ctx: LayerContext, s: BatchNormState, name: str = "bn"):
    """Exact gradient of the train-mode forward, through the batch statistics."""
    _check_context(ctx, name)
    if ctx.mode != TRAIN:
        raise ValueError(f"{name}: batchnorm_backward needs a train-mode context")
    x_hat = ctx.cache["x_hat"]
    inv_std = ctx.cache["inv_std"]
    if grad_out.shape != x_hat.shape:
        raise ShapeError(f"{name}: grad shape {grad_out.shape} != forward output {x_hat.shape}")
    b, c, h, w = grad_out.shape
    n = b * h * w
    shape = (1, c, 1, 1)

    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))
    d_xhat = grad_out * s.gamma.reshape(shape)
    sum_d = d_xhat.sum(axis=(0, 2, 3)).reshape(shape)
    sum_dx = (d_xhat * x_hat).sum(axis=(0, 2, 3)).reshape(shape)
    grad_x = (inv_std.reshape(shape) / n) * (n * d_xhat - sum_d - x_hat * sum_dx)
    return grad_x.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def batchnorm_eval_backward(grad_out: Tensor, ctx: LayerContext, s: BatchNormState, name: str = "bn") -> Tensor:
    """Input gradient of the eval-mode forward (a fixed per-channel affine map)."""
    _check_context(ctx, name)
    if ctx.mode != EVAL:
        raise ValueError(f"{name}: batchnorm_eval_backward needs an eval-mode context")
    scale = (s.gamma * ctx.cache["inv_std"]).reshape(1, -1, 1, 1)
    return (grad_out * scale).astype(grad_out.dtype, copy=False)


# -- activations, pooling, dense, dropout ----------------------------------

def relu_forward(x: Tensor, name: str = "relu") -> Tuple[Tensor, LayerContext]:
    return np.maximum(x, 0).astype(x.dtype, copy=False), LayerContext(layer=name, mode=TRAIN, cache={"mask": x > 0})


def relu_backward(grad_out: Tensor, ctx: LayerContext, name: str = "relu") -> Tensor:
    """Gradient passes where x > 0; the subgradient at exactly 0 is 0."""
    _check_context(ctx, name)
    return np.where(ctx.cache["mask"], grad_out, 0).astype(grad_out.dtype, copy=False)


def maxpool2x2_forward(x: Tensor, name: str = "pool") -> Tuple[Tensor, LayerContext]:
    """2x2 max pool, stride 2. Odd trailing rows/columns are dropped.

    Ties resolve to the first element of the window in row-major order.
    """
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected B x C x H x W input, got {x.shape}")
    b, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"{name}: input {h}x{w} too small for 2x2 pooling")
    ho, wo = h // 2, w // 2
    windows = x[:, :, :2 * ho, :2 * wo].reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), LayerContext(layer=name, mode=TRAIN, cache={"argmax": argmax, "shape": x.shape})


def maxpool2x2_backward(grad_out: Tensor, ctx: LayerContext, name: str = "pool") -> Tensor:
    _check_context(ctx, name)
    argmax = ctx.cache["argmax"]
    b, c, h, w = ctx.cache["shape"]
    ho, wo = argmax.shape[2:]
    if grad_out.shape != argmax.shape:
        raise ShapeError(f"{name}: grad shape {grad_out.shape} != forward output {argmax.shape}")
    windows = np.zeros((b, c, ho, wo, 4), dtype=grad_out.dtype)
    np.put_along_axis(windows, argmax[..., None], grad_out[..., None], axis=-1)
    grad_x = np.zeros((b, c, h, w), dtype=grad_out.dtype)
    grad_x[:, :, :2 * ho, :2 * wo] = windows.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo)
    return grad_x


def dense_forward(x: Tensor, p: DenseParams, name: str = "dense") -> Tuple[Tensor, LayerContext]:
    """out = x . W^T + b"""
    if x.ndim != 2 or x.shape[1] != p.weights.shape[1]:
        raise ShapeError(f"{name}: input {x.shape} does not match weights {p.weights.shape}")
    out = matmul(x, p.weights.T) + p.bias[None, :]
    return out, LayerContext(layer=name, mode=TRAIN, cache={"x": x})


def dense_backward(grad_out: Tensor, ctx: LayerContext, p: DenseParams, name: str = "dense"):
    _check_context(ctx, name)
    x = ctx.cache["x"]
    if grad_out.shape != (x.shape[0], p.weights.shape[0]):
        raise ShapeError(f"{name}: grad shape {grad_out.shape} != forward output {(x.shape[0], p.weights.shape[0])}")
    grad_x = matmul(grad_out, p.weights)
    grad_w = matmul(np.ascontiguousarray(grad_out.T), x)
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def dropout_forward(x: Tensor, rate: float, mode: str, rng: Optional[Rng] = None,
                    name: str = "dropout") -> Tuple[Tensor, LayerContext]:
    """Inverted dropout: survivors are scaled by 1/(1-rate), eval mode is the identity."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    _check_mode(mode)
    if mode == EVAL or rate == 0:
        return x, LayerContext(layer=name, mode=mode, cache={"mask": None})
    if rng is None:
        raise ValueError(f"{name}: train-mode dropout needs an rng")
    keep = rng.random(size=x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, LayerContext(layer=name, mode=mode, cache={"mask": mask})


def dropout_backward(grad_out: Tensor, ctx: LayerContext, name: str = "dropout") -> Tensor:
    _check_context(ctx, name)
    mask = ctx.cache["mask"]
    return grad_out if mask is None else grad_out * mask


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tuple[float, Tensor, Tensor]:
    """Mean-reduced cross entropy of row-wise softmax.

    Returns (loss, grad_logits, probs) with grad_logits = (probs - one_hot) / B.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be B x N, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    b, n = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"labels must lie in [0, {n}), got {labels.tolist()}")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(b)
    loss = float(-log_probs[rows, labels].mean())
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= b
    return loss, grad.astype(logits.dtype, copy=False), probs.astype(logits.dtype, copy=False)


# -- layer objects ---------------------------------------------------------

class Layer(ABC):
    """One stage of the network: forward, backward and its tensors."""

    def __init__(self, name: str):
        self.name = name

    @abstractmethod
    def forward(self, x: Tensor, mode: str, rng: Optional[Rng] = None) -> Tuple[Tensor, LayerContext]:
        pass

    @abstractmethod
    def backward(self, grad_out: Tensor, ctx: LayerContext) -> Tuple[Tensor, Dict[str, Tensor]]:
        """Return the input gradient and gradients keyed like `parameters()`."""
        pass

    def parameters(self) -> Dict[str, Tensor]:
        """Trainable tensors, keyed by local name."""
        return {}

    def buffers(self) -> Dict[str, Tensor]:
        """Serialized, non-trainable tensors."""
        return {}

    def astype(self, dtype) -> "Layer":
        """Deep copy with every tensor cast to `dtype`."""
        clone = copy.deepcopy(self)
        for tensors in (clone.parameters(), clone.buffers()):
            for key, value in tensors.items():
                clone._set_tensor(key, value.astype(dtype))
        return clone

    def _set_tensor(self, key: str, value: Tensor) -> None:
        raise KeyError(f"{self.name} has no tensor '{key}'")


class Conv2d(Layer):
    def __init__(self, name: str, params: ConvParams):
        super().__init__(name)
        self.params = params

    def forward(self, x, mode, rng=None):
        return conv2d_forward(x, self.params, self.name)

    def backward(self, grad_out, ctx):
        grad_x, grad_w, grad_b = conv2d_backward(grad_out, ctx, self.params, self.name)
        return grad_x, {"w": grad_w, "b": grad_b}

    def parameters(self):
        return {"w": self.params.weights, "b": self.params.bias}

    def _set_tensor(self, key, value):
        if key == "w":
            self.params.weights = value
        elif key == "b":
            self.params.bias = value
        else:
            super()._set_tensor(key, value)


class BatchNorm2d(Layer):
    def __init__(self, name: str, state: BatchNormState):
        super().__init__(name)
        self.state = state

    def forward(self, x, mode, rng=None):
        return batchnorm_forward(x, self.state, mode, self.name)

    def backward(self, grad_out, ctx):
        if ctx.mode == EVAL:
            return batchnorm_eval_backward(grad_out, ctx, self.state, self.name), {}
        grad_x, grad_gamma, grad_beta = batchnorm_backward(grad_out, ctx, self.state, self.name)
        return grad_x, {"gamma": grad_gamma, "beta": grad_beta}

    def parameters(self):
        return {"gamma": self.state.gamma, "beta": self.state.beta}

    def buffers(self):
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def _set_tensor(self, key, value):
        if key in ("gamma", "beta", "running_mean", "running_var"):
            setattr(self.state, key, value)
        else:
            super()._set_tensor(key, value)


class ReLU(Layer):
    def forward(self, x, mode, rng=None):
        return relu_forward(x, self.name)

    def backward(self, grad_out, ctx):
        return relu_backward(grad_out, ctx, self.name), {}


class MaxPool2x2(Layer):
    def forward(self, x, mode, rng=None):
        return maxpool2x2_forward(x, self.name)

    def backward(self, grad_out, ctx):
        return maxpool2x2_backward(grad_out, ctx, self.name), {}


class Flatten(Layer):
    def forward(self, x, mode, rng=None):
        return x.reshape(x.shape[0], -1), LayerContext(layer=self.name, mode=mode, cache={"shape": x.shape})

    def backward(self, grad_out, ctx):
        _check_context(ctx, self.name)
        return grad_out.reshape(ctx.cache["shape"]), {}


class Dense(Layer):
    def __init__(self, name: str, params: DenseParams):
        super().__init__(name)
        self.params = params

    def forward(self, x, mode, rng=None):
        return dense_forward(x, self.params, self.name)

    def backward(self, grad_out, ctx):
        grad_x, grad_w, grad_b = dense_backward(grad_out, ctx, self.params, self.name)
        return grad_x, {"w": grad_w, "b": grad_b}

    def parameters(self):
        return {"w": self.params.weights, "b": self.params.bias}

    def _set_tensor(self, key, value):
        if key == "w":
            self.params.weights = value
        elif key == "b":
            self.params.bias = value
        else:
            super()._set_tensor(key, value)


class Dropout(Layer):
    def __init__(self, name: str, rate: float):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, mode, rng=None):
        return dropout_forward(x, self.rate, mode, rng, self.name)

    def backward(self, grad_out, ctx):
        return dropout_backward(grad_out, ctx, self.name), {}
