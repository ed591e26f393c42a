"""Layer kernels and network containers."""

from . import functional
from .functional import (
    activation,
    batch_norm,
    conv2d,
    conv_transpose2d,
    dense,
    flatten,
    log_softmax,
    max_pool2d,
    softmax,
)
from .network import (
    LayerSpec,
    NetworkSpec,
    act,
    batchnorm,
    conv,
    conv_t,
    init_params,
    load_state,
    maxpool,
)
from .network import dense as dense_layer
from .network import flatten as flatten_layer

# functional aliases using the names of the layer operations
conv2d_forward = conv2d
conv_transpose2d_forward = conv_transpose2d
batchnorm_forward = batch_norm
maxpool2d = max_pool2d
dense_forward = dense

__all__ = [
    "functional", "activation", "batch_norm", "conv2d", "conv_transpose2d", "dense",
    "flatten", "log_softmax", "max_pool2d", "softmax", "LayerSpec", "NetworkSpec",
    "act", "batchnorm", "conv", "conv_t", "init_params", "load_state", "maxpool",
    "dense_layer", "flatten_layer", "conv2d_forward", "conv_transpose2d_forward",
    "batchnorm_forward", "maxpool2d", "dense_forward",
]
