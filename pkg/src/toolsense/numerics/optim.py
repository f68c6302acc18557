"""Plain stochastic gradient descent."""

from __future__ import annotations

import numpy as np

from .tensor import NumericsError, ensure_finite


def sgd_step(params: np.ndarray, grads: np.ndarray, learning_rate: float) -> np.ndarray:
    """Return ``params - learning_rate * grads`` as a fresh array.

    Pure: neither argument is modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise NumericsError(f"sgd_step: params shape {params.shape} != grads shape {grads.shape}")
    if learning_rate <= 0.0:
        raise NumericsError(f"sgd_step: learning rate must be positive, got {learning_rate}")
    out = params - learning_rate * grads
    return ensure_finite("sgd_step", out)
