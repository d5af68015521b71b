"""Adam optimiser in functional form: state in, state out."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import ShapeMismatchError


@dataclass(frozen=True)
class AdamState:
    """Moment estimates for one parameter array."""

    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, shape, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> "AdamState":
        return cls(
            step_count=0,
            first_moment=np.zeros(shape, dtype=np.float64),
            second_moment=np.zeros(shape, dtype=np.float64),
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns (new param, new state)."""
    if lr <= 0.0:
        raise ValueError(f"adam_step: lr must be positive, got {lr}")
    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise ShapeMismatchError(
            f"adam_step: param {param.shape}, grad {grad.shape}, "
            f"moments {state.first_moment.shape} must all match"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_param, replace(state, step_count=t, first_moment=m, second_moment=v)
