"""The lightweight CNN: declarative spec, assembly, forward/backward and parameter accounting."""
from collections import OrderedDict
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ltcnn.errors import ShapeError
from ltcnn.layers import (
    TRAIN,
    BatchNorm2d,
    BatchNormState,
    Conv2d,
    ConvParams,
    Dense,
    DenseParams,
    Dropout,
    Flatten,
    Layer,
    LayerContext,
    MaxPool2x2,
    ReLU,
)
from ltcnn.tensor import DTYPE, Rng, Tensor, sample_normal


class NetworkSpec(BaseModel):
    """Architecture description. The defaults are the published layer table."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    input_channels: int = Field(3, ge=1)
    input_height: int = Field(224, ge=1)
    input_width: int = Field(224, ge=1)
    conv1_filters: int = Field(6, ge=1)
    conv2_filters: int = Field(16, ge=1)
    kernel: int = Field(5, ge=1)
    fc1: int = Field(120, ge=1)
    fc2: int = Field(84, ge=1)
    dropout_rate: float = Field(0.2, ge=0.0, lt=1.0)
    fc_activation: bool = False
    n_classes: int = Field(ge=2)
    class_names: List[str]

    @model_validator(mode="after")
    def _check_classes(self) -> "NetworkSpec":
        if len(self.class_names) != self.n_classes:
            raise ValueError(f"n_classes is {self.n_classes} but {len(self.class_names)} class names were given")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")
        return self

    @classmethod
    def for_classes(cls, class_names: List[str], **overrides) -> "NetworkSpec":
        return cls(n_classes=len(class_names), class_names=list(class_names), **overrides)


class LayerShape(BaseModel):
    name: str
    kind: str
    output_shape: Tuple[int, ...]


def layer_shapes(spec: NetworkSpec) -> List[LayerShape]:
    """Output shape of every layer for a single sample, in forward order.

    Raises ShapeError naming the first layer the input is too small for.
    """
    k = spec.kernel
    c, h, w = spec.input_channels, spec.input_height, spec.input_width
    chain = []

    def conv(name, filters):
        nonlocal c, h, w
        if h < k or w < k:
            raise ShapeError(f"{name}: input {h}x{w} smaller than kernel {k}x{k}")
        c, h, w = filters, h - k + 1, w - k + 1
        chain.append(LayerShape(name=name, kind="conv", output_shape=(c, h, w)))

    def pool(name):
        nonlocal h, w
        if h < 2 or w < 2:
            raise ShapeError(f"{name}: input {h}x{w} too small for 2x2 pooling")
        h, w = h // 2, w // 2
        chain.append(LayerShape(name=name, kind="maxpool", output_shape=(c, h, w)))

    for block, filters in ((1, spec.conv1_filters), (2, spec.conv2_filters)):
        conv(f"conv{block}", filters)
        chain.append(LayerShape(name=f"bn{block}", kind="batchnorm", output_shape=(c, h, w)))
        chain.append(LayerShape(name=f"relu{block}", kind="relu", output_shape=(c, h, w)))
        pool(f"pool{block}")

    flat = c * h * w
    chain.append(LayerShape(name="flatten", kind="flatten", output_shape=(flat,)))
    for idx, units in ((1, spec.fc1), (2, spec.fc2)):
        chain.append(LayerShape(name=f"fc{idx}", kind="dense", output_shape=(units,)))
        if spec.fc_activation:
            chain.append(LayerShape(name=f"relu{idx + 2}", kind="relu", output_shape=(units,)))
        chain.append(LayerShape(name=f"drop{idx}", kind="dropout", output_shape=(units,)))
    chain.append(LayerShape(name="fc3", kind="dense", output_shape=(spec.n_classes,)))
    return chain


def flatten_length(spec: NetworkSpec) -> int:
    return next(s.output_shape[0] for s in layer_shapes(spec) if s.kind == "flatten")


def expected_tensor_shapes(spec: NetworkSpec) -> "OrderedDict[str, Tuple[int, ...]]":
    """Every serialized tensor name with its shape, in checkpoint order."""
    k = spec.kernel
    flat = flatten_length(spec)
    shapes = OrderedDict()
    shapes["conv1.w"] = (spec.conv1_filters, spec.input_channels, k, k)
    shapes["conv1.b"] = (spec.conv1_filters,)
    for key in ("gamma", "beta", "running_mean", "running_var"):
        shapes[f"bn1.{key}"] = (spec.conv1_filters,)
    shapes["conv2.w"] = (spec.conv2_filters, spec.conv1_filters, k, k)
    shapes["conv2.b"] = (spec.conv2_filters,)
    for key in ("gamma", "beta", "running_mean", "running_var"):
        shapes[f"bn2.{key}"] = (spec.conv2_filters,)
    for name, n_in, n_out in (("fc1", flat, spec.fc1), ("fc2", spec.fc1, spec.fc2), ("fc3", spec.fc2, spec.n_classes)):
        shapes[f"{name}.w"] = (n_out, n_in)
        shapes[f"{name}.b"] = (n_out,)
    return shapes


class Network:
    """Ordered layer stack with named tensors ("conv1.w", "bn1.running_var", ...)."""

    def __init__(self, spec: NetworkSpec, layers: List[Layer]):
        self.spec = spec
        self.layers = layers

    def forward(self, x: Tensor, mode: str = "eval", rng: Optional[Rng] = None) -> Tuple[Tensor, List[LayerContext]]:
        expected = (self.spec.input_channels, self.spec.input_height, self.spec.input_width)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"shape mismatch: input {x.shape}, network expects B x {' x '.join(map(str, expected))}")
        if mode == TRAIN and rng is None and self.spec.dropout_rate > 0:
            raise ValueError("train-mode forward needs an rng for dropout")
        contexts = []
        out = x
        for layer in self.layers:
            out, ctx = layer.forward(out, mode, rng)
            contexts.append(ctx)
        return out, contexts

    def backward(self, grad_logits: Tensor, contexts: List[LayerContext]) -> Tuple[Tensor, Dict[str, Tensor]]:
        """Backpropagate to the input. Returns (grad_input, gradients keyed like named_parameters)."""
        if len(contexts) != len(self.layers):
            raise ShapeError(f"got {len(contexts)} contexts for {len(self.layers)} layers")
        grads: Dict[str, Tensor] = {}
        grad = grad_logits
        for layer, ctx in zip(reversed(self.layers), reversed(contexts)):
            grad, local = layer.backward(grad, ctx)
            for key, value in local.items():
                grads[f"{layer.name}.{key}"] = value
        return grad, grads

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(
            (f"{layer.name}.{key}", value) for layer in self.layers for key, value in layer.parameters().items()
        )

    def named_buffers(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(
            (f"{layer.name}.{key}", value) for layer in self.layers for key, value in layer.buffers().items()
        )

    def state_tensors(self) -> "OrderedDict[str, Tensor]":
        """Parameters and buffers in checkpoint order."""
        live = {**self.named_parameters(), **self.named_buffers()}
        return OrderedDict((name, live[name]) for name in expected_tensor_shapes(self.spec))

    def load_tensors(self, tensors: Dict[str, Tensor]) -> None:
        by_name = {layer.name: layer for layer in self.layers}
        for name, shape in expected_tensor_shapes(self.spec).items():
            if name not in tensors:
                raise ShapeError(f"missing tensor '{name}'")
            value = np.ascontiguousarray(tensors[name], dtype=DTYPE)
            if value.shape != shape:
                raise ShapeError(f"shape mismatch for '{name}': {value.shape} vs expected {shape}")
            layer_name, key = name.split(".", 1)
            by_name[layer_name]._set_tensor(key, value.copy())


def _he_normal(rng: Rng, shape, fan_in: int) -> Tensor:
    return sample_normal(rng, shape, 0.0, float(np.sqrt(2.0 / fan_in)))


def build_network(spec: NetworkSpec, rng: Rng) -> Network:
    """Assemble the layer stack with He-normal weights, zero biases and fresh batch-norm state."""
    shapes = expected_tensor_shapes(spec)
    k = spec.kernel
    layers: List[Layer] = []
    in_ch = spec.input_channels
    for block, filters in ((1, spec.conv1_filters), (2, spec.conv2_filters)):
        weights = _he_normal(rng, shapes[f"conv{block}.w"], in_ch * k * k)
        layers.append(Conv2d(f"conv{block}", ConvParams(weights, np.zeros(filters, dtype=DTYPE))))
        layers.append(BatchNorm2d(f"bn{block}", BatchNormState.initial(filters)))
        layers.append(ReLU(f"relu{block}"))
        layers.append(MaxPool2x2(f"pool{block}"))
        in_ch = filters

    layers.append(Flatten("flatten"))
    for idx in (1, 2):
        out_units, in_units = shapes[f"fc{idx}.w"]
        weights = _he_normal(rng, (out_units, in_units), in_units)
        layers.append(Dense(f"fc{idx}", DenseParams(weights, np.zeros(out_units, dtype=DTYPE))))
        if spec.fc_activation:
            layers.append(ReLU(f"relu{idx + 2}"))
        layers.append(Dropout(f"drop{idx}", spec.dropout_rate))
    out_units, in_units = shapes["fc3.w"]
    weights = _he_normal(rng, (out_units, in_units), in_units)
    layers.append(Dense("fc3", DenseParams(weights, np.zeros(out_units, dtype=DTYPE))))
    return Network(spec, layers)


class LayerParameters(BaseModel):
    name: str
    kind: str
    output_shape: Tuple[int, ...]
    params: int
    buffers: int


class ParameterTable(BaseModel):
    rows: List[LayerParameters]
    total: int
    total_buffers: int

    @property
    def params_millions(self) -> str:
        return f"{self.total / 1e6:.2f}"


def count_parameters(spec: NetworkSpec) -> ParameterTable:
    """Closed-form trainable-parameter count per layer.

    conv: out*in*k^2 + out; batch norm: 2*C learnable (running stats are
    reported as buffers); dense: out*in + out.
    """
    rows = []
    in_ch = spec.input_channels
    in_units = None
    for shape in layer_shapes(spec):
        params = buffers = 0
        if shape.kind == "conv":
            out_ch = shape.output_shape[0]
            params = out_ch * in_ch * spec.kernel ** 2 + out_ch
            in_ch = out_ch
        elif shape.kind == "batchnorm":
            params = 2 * shape.output_shape[0]
            buffers = 2 * shape.output_shape[0]
        elif shape.kind == "flatten":
            in_units = shape.output_shape[0]
        elif shape.kind == "dense":
            out_units = shape.output_shape[0]
            params = out_units * in_units + out_units
            in_units = out_units
        rows.append(LayerParameters(name=shape.name, kind=shape.kind, output_shape=shape.output_shape,
                                    params=params, buffers=buffers))
    return ParameterTable(rows=rows, total=sum(r.params for r in rows), total_buffers=sum(r.buffers for r in rows))


def format_parameter_table(table: ParameterTable) -> str:
    lines = [f"{'layer':<10}{'type':<11}{'output shape':<16}{'params':>12}"]
    for row in table.rows:
        shape = " x ".join(str(d) for d in row.output_shape)
        lines.append(f"{row.name:<10}{row.kind:<11}{shape:<16}{row.params:>12,}")
    lines.append(f"{'total':<37}{table.total:>12,}")
    lines.append(f"Params (M): {table.params_millions} M")
    lines.append(f"batch-norm buffers: {table.total_buffers:,}")
    return "\n".join(lines)


# Published complexity figures for the comparison architectures. Constants only;
# none of these models is built here.
PUBLISHED_REFERENCE = [
    {"model": "ResNet-50", "params_m": 25.6, "size_mb": 98.0},
    {"model": "VGG-19", "params_m": 143.7, "size_mb": 548.0},
    {"model": "VGG-16", "params_m": 138.4, "size_mb": 528.0},
    {"model": "MobileNetV1", "params_m": 4.2, "size_mb": 16.0},
]
PUBLISHED_CUSTOM = {"params_m": 1.3, "size_mb": 5.1, "params_m_alt": 5.41}


def published_discrepancy(table: ParameterTable, size_bytes: int) -> List[str]:
    """Notes where the published figures for this network disagree with the derived ones."""
    notes = []
    params_m = round(table.total / 1e6, 2)
    size_mb = round(size_bytes / 1e6, 2)
    if params_m != PUBLISHED_CUSTOM["params_m"]:
        notes.append(f"published 'Parameters (M)' {PUBLISHED_CUSTOM['params_m']} does not match derived {params_m}")
    if size_mb != PUBLISHED_CUSTOM["size_mb"]:
        notes.append(f"published 'Model Size (MB)' {PUBLISHED_CUSTOM['size_mb']} does not match derived {size_mb}")
    return notes
