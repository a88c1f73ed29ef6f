"""Finite-difference gradient checking for layers."""

from typing import Callable, Optional

import numpy as np

from app.core.logging_config import get_logger
from app.neural.layers import Layer

logger = get_logger(__name__)

DEFAULT_STEP = 1e-5


def numerical_gradient(
    fn: Callable[[], float],
    array: np.ndarray,
    h: float = DEFAULT_STEP,
    coords: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Central-difference gradient of a scalar function w.r.t. `array`.

    `array` is perturbed in place and restored after each probe; `fn` must
    read it. Only `coords` (flat indices) are probed when given, the rest of
    the result stays zero.
    """
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    flat_grad = grad.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    for index in indices:
        original = flat[index]
        flat[index] = original + h
        plus = fn()
        flat[index] = original - h
        minus = fn()
        flat[index] = original
        flat_grad[index] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def grad_check(
    layer: Layer,
    x: np.ndarray,
    tolerance: float = 1e-4,
    h: float = DEFAULT_STEP,
    max_coords: int = 60,
    seed: int = 0,
) -> float:
    """
    Compare a layer's analytic gradients with central finite differences.

    The scalar probed is sum(layer(x) * R) for a fixed random R, so every
    output element contributes. Up to `max_coords` coordinates of the input
    and of each parameter are sampled. Use float64 inputs and parameters.

    Returns:
        Max relative error |a - n| / max(|a|, |n|, 1e-8) over sampled coordinates
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    probe = rng.standard_normal(layer.forward(x, training=True).shape)

    def loss() -> float:
        return float(np.sum(layer.forward(x, training=True) * probe))

    layer.forward(x, training=True)
    analytic_x = layer.backward(probe)
    analytic_params = {name: g.copy() for name, g in layer.gradients().items()}

    def sample(size: int) -> np.ndarray:
        return rng.choice(size, size=min(size, max_coords), replace=False)

    coords = sample(x.size)
    worst = float(relative_error(analytic_x.reshape(-1)[coords], numerical_gradient(loss, x, h, coords).reshape(-1)[coords]).max())

    for name, param in layer.parameters().items():
        coords = sample(param.size)
        numeric = numerical_gradient(loss, param, h, coords).reshape(-1)[coords]
        error = relative_error(analytic_params[name].reshape(-1)[coords], numeric)
        worst = max(worst, float(error.max()))

    if worst > tolerance:
        logger.warning(f"{layer.name}: gradient check error {worst:.2e} exceeds {tolerance:.0e}")
    return worst
