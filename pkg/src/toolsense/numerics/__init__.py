"""Foundational numerics: tensors, layers, optimizers, eigensolver, oracles.

All arrays are 64-bit float, row-major numpy ndarrays. Public operations
validate shapes and reject non-finite results.
"""

from .tensor import NumericsError, as_tensor, ensure_finite
from .seeding import child_seed, spawn_rng
from .layers import (
    apply_activation,
    conv2d_forward,
    conv2d_backward,
    deconv2d_forward,
    deconv2d_backward,
    fc_forward,
    fc_backward,
    conv_output_extent,
    deconv_output_extent,
)
from .optim import sgd_step
from .gradcheck import finite_diff_grad
from .eig import symmetric_eig

__all__ = [
    "NumericsError",
    "as_tensor",
    "ensure_finite",
    "child_seed",
    "spawn_rng",
    "apply_activation",
    "conv2d_forward",
    "conv2d_backward",
    "deconv2d_forward",
    "deconv2d_backward",
    "fc_forward",
    "fc_backward",
    "conv_output_extent",
    "deconv_output_extent",
    "sgd_step",
    "finite_diff_grad",
    "symmetric_eig",
]
