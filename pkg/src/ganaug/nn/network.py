"""Declarative layer stacks and their parameter storage.

A :class:`NetworkSpec` is a list of :class:`LayerSpec` descriptors plus the
per-sample input shape.  The shape chain is validated when the spec is
constructed; parameters only exist after :func:`init_params`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from ..errors import InvalidConfig, ShapeMismatch
from ..tensor import Rng, Tensor, get_dtype
from . import functional as F

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid")
LEARNABLE = ("conv", "conv_t", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    bias: bool = True
    alpha: float = 0.2
    momentum: float = 0.1
    eps: float = 1e-5

    def out_shape(self, shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample input shape."""
        k = self.kind
        if k in ACTIVATIONS:
            return shape
        if k == "flatten":
            return (int(np.prod(shape)),)
        if k == "dense":
            if len(shape) != 1 or shape[0] != self.in_features:
                raise ShapeMismatch(f"dense expects ({self.in_features},), got {shape}")
            return (self.out_features,)
        if len(shape) != 3:
            raise ShapeMismatch(f"{k} expects a (C, H, W) input, got {shape}")
        c, h, w = shape
        if k == "batchnorm":
            if c != self.in_features:
                raise ShapeMismatch(f"batchnorm over {self.in_features} channels got {c}")
            return shape
        if k == "maxpool":
            ho = F.conv_output_size(h, self.kernel, self.stride, 0)
            wo = F.conv_output_size(w, self.kernel, self.stride, 0)
            if ho < 1 or wo < 1:
                raise ShapeMismatch(f"maxpool output {ho}x{wo} from {h}x{w}")
            return (c, ho, wo)
        if k in ("conv", "conv_t"):
            if c != self.in_features:
                raise ShapeMismatch(f"{k} expects {self.in_features} channels, got {c}")
            size = F.conv_output_size if k == "conv" else F.conv_transpose_output_size
            ho = size(h, self.kernel, self.stride, self.padding)
            wo = size(w, self.kernel, self.stride, self.padding)
            if ho < 1 or wo < 1:
                raise ShapeMismatch(f"{k} output {ho}x{wo} from {h}x{w}")
            return (self.out_features, ho, wo)
        raise InvalidConfig(f"unknown layer kind {k!r}")


def conv(cin, cout, kernel, stride=1, padding=0, bias=True) -> LayerSpec:
    return LayerSpec("conv", cin, cout, kernel, stride, padding, bias)


def conv_t(cin, cout, kernel, stride=1, padding=0, bias=True) -> LayerSpec:
    return LayerSpec("conv_t", cin, cout, kernel, stride, padding, bias)


def batchnorm(ch, momentum=0.1, eps=1e-5) -> LayerSpec:
    return LayerSpec("batchnorm", ch, ch, momentum=momentum, eps=eps)


def act(kind: str, alpha: float = 0.2) -> LayerSpec:
    if kind not in ACTIVATIONS:
        raise InvalidConfig(f"unknown activation {kind!r}")
    return LayerSpec(kind, alpha=alpha)


def maxpool(kernel=2, stride=2) -> LayerSpec:
    return LayerSpec("maxpool", kernel=kernel, stride=stride)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(fin, fout, bias=True) -> LayerSpec:
    return LayerSpec("dense", fin, fout, bias=bias)


class NetworkSpec:
    """An ordered layer stack with named parameters and batch-norm buffers."""

    def __init__(self, input_shape, layers, name: str = "net", meta: dict | None = None):
        self.name = name
        self.meta = dict(meta or {})
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers: list[LayerSpec] = list(layers)
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(layer.out_shape(shapes[-1]))
            except ShapeMismatch as e:
                raise ShapeMismatch(f"layer {i} ({layer.kind}): {e}") from None
        self.shapes = shapes
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    @property
    def initialized(self) -> bool:
        return bool(self.params) or not any(layer.kind in LEARNABLE + ("batchnorm",) for layer in self.layers)

    def count(self, kind: str) -> int:
        return sum(1 for layer in self.layers if layer.kind == kind)

    @property
    def learnable_layers(self) -> int:
        """Layers with weights of their own (conv, transposed conv, dense)."""
        return sum(1 for layer in self.layers if layer.kind in LEARNABLE)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        """All persistent arrays, parameters first then buffers."""
        out = {k: p.data for k, p in self.params.items()}
        out.update(self.buffers)
        return out

    def train(self) -> "NetworkSpec":
        self.training = True
        return self

    def eval(self) -> "NetworkSpec":
        self.training = False
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def forward(self, x: Tensor) -> Tensor:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"{self.name} expects (N, {self.input_shape}), got {x.shape}")
        if not self.initialized:
            raise InvalidConfig(f"{self.name} has no parameters; call init_params first")
        for i, layer in enumerate(self.layers):
            x = self._apply(i, layer, x)
        return x

    __call__ = forward

    def activations(self, x: Tensor) -> Iterator[Tensor]:
        """Yield the output of every layer in turn."""
        for i, layer in enumerate(self.layers):
            x = self._apply(i, layer, x)
            yield x

    def _apply(self, i: int, layer: LayerSpec, x: Tensor) -> Tensor:
        k = layer.kind
        p = self.params
        if k == "conv":
            return F.conv2d(x, p[f"{i}.weight"], p.get(f"{i}.bias"), layer.stride, layer.padding)
        if k == "conv_t":
            return F.conv_transpose2d(x, p[f"{i}.weight"], p.get(f"{i}.bias"),
                                      layer.stride, layer.padding)
        if k == "batchnorm":
            return F.batch_norm(x, p[f"{i}.gamma"], p[f"{i}.beta"],
                                self.buffers[f"{i}.running_mean"], self.buffers[f"{i}.running_var"],
                                self.training, layer.momentum, layer.eps)
        if k == "dense":
            return F.dense(x, p[f"{i}.weight"], p.get(f"{i}.bias"))
        if k == "maxpool":
            return F.max_pool2d(x, layer.kernel, layer.stride)
        if k == "flatten":
            return F.flatten(x)
        return F.activation(k, x, layer.alpha)

    # serialization of the layer plan
    def describe(self) -> str:
        """JSON description sufficient to rebuild an empty spec."""
        return json.dumps({
            "name": self.name,
            "meta": self.meta,
            "input_shape": list(self.input_shape),
            "layers": [asdict(layer) for layer in self.layers],
        }, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_description(cls, text: str) -> "NetworkSpec":
        d = json.loads(text)
        names = {f.name for f in fields(LayerSpec)}
        layers = [LayerSpec(**{k: v for k, v in entry.items() if k in names}) for entry in d["layers"]]
        return cls(d["input_shape"], layers, d.get("name", "net"), d.get("meta"))

    def __repr__(self) -> str:
        return f"NetworkSpec({self.name!r}, {len(self.layers)} layers, {self.parameter_count()} params)"


INIT_SCHEMES = ("dcgan", "he")


def init_params(spec: NetworkSpec, rng: Rng, scheme: str = "dcgan") -> NetworkSpec:
    """Allocate and draw every parameter of ``spec`` in layer order.

    ``dcgan``: conv/dense weights ~ N(0, 0.02), batch-norm scale ~ N(1, 0.02).
    ``he``: weights ~ N(0, 2/fan_in).  Biases and batch-norm shifts start at 0.
    """
    if scheme not in INIT_SCHEMES:
        raise InvalidConfig(f"unknown init scheme {scheme!r}")
    dt = get_dtype()
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    for i, layer in enumerate(spec.layers):
        k = layer.kind
        if k in LEARNABLE:
            if k == "conv":
                shape = (layer.out_features, layer.in_features, layer.kernel, layer.kernel)
                fan_in = layer.in_features * layer.kernel ** 2
            elif k == "conv_t":
                shape = (layer.in_features, layer.out_features, layer.kernel, layer.kernel)
                fan_in = layer.in_features * layer.kernel ** 2
            else:
                shape = (layer.out_features, layer.in_features)
                fan_in = layer.in_features
            std = 0.02 if scheme == "dcgan" else float(np.sqrt(2.0 / fan_in))
            params[f"{i}.weight"] = Tensor(rng.normal(shape, 0.0, std), requires_grad=True)
            if layer.bias:
                params[f"{i}.bias"] = Tensor(np.zeros(layer.out_features, dt), requires_grad=True)
        elif k == "batchnorm":
            ch = layer.in_features
            gamma = rng.normal((ch,), 1.0, 0.02) if scheme == "dcgan" else np.ones(ch, dt)
            params[f"{i}.gamma"] = Tensor(gamma, requires_grad=True)
            params[f"{i}.beta"] = Tensor(np.zeros(ch, dt), requires_grad=True)
            buffers[f"{i}.running_mean"] = np.zeros(ch, dt)
            buffers[f"{i}.running_var"] = np.ones(ch, dt)
    spec.params = params
    spec.buffers = buffers
    return spec


def load_state(spec: NetworkSpec, state: dict[str, np.ndarray]) -> NetworkSpec:
    """Populate ``spec`` from arrays keyed like :meth:`NetworkSpec.state`."""
    probe = init_params(NetworkSpec(spec.input_shape, spec.layers, spec.name), Rng(0))
    for key, ref in probe.state().items():
        if key not in state:
            raise ShapeMismatch(f"state is missing {key!r}")
        if tuple(state[key].shape) != ref.shape:
            raise ShapeMismatch(f"{key}: stored shape {state[key].shape}, expected {ref.shape}")
    spec.params = {k: Tensor(state[k], requires_grad=True) for k in probe.params}
    spec.buffers = {k: np.array(state[k], dtype=get_dtype()) for k in probe.buffers}
    return spec
