"""Adam optimizer over named parameter arrays."""

from typing import Optional

import numpy as np

from app.utils.error_handler import ShapeError


class AdamState:
    """First/second moments per parameter name plus the shared step counter."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: Optional[AdamState] = None
) -> AdamState:
    """
    Apply one bias-corrected Adam update to `params` in place.

    Args:
        params: Named parameter arrays (updated in place)
        grads: Gradients with the same names and shapes
        state: Optimizer state, created with defaults when omitted

    Returns:
        The advanced state
    """
    state = state or AdamState()
    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t

    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter has {param.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param, dtype=np.float64)
            state.v[name] = np.zeros_like(param, dtype=np.float64)
        v = state.v[name]

        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(grad)

        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param -= update.astype(param.dtype)
    return state


class Adam:
    """Binds an AdamState to a fixed set of named parameters."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.state)
