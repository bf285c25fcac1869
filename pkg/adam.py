from typing import Dict, Tuple

import numpy as np

from autodiff import Tensor
from nica_errors import DimensionError, NumericError

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("adam")


class AdamState:
    '''first/second moments per named parameter plus the step counter'''
    first_moments: Dict[str, Tensor]
    second_moments: Dict[str, Tensor]
    step: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float

    def __init__(self, first_moments: Dict[str, Tensor], second_moments: Dict[str, Tensor], step: int = 0,
                 learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.first_moments = first_moments
        self.second_moments = second_moments
        self.step = step
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    @classmethod
    def create(cls, params: Dict[str, Tensor], learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        zeros = {name: np.zeros_like(value) for name, value in params.items()}
        return cls(zeros, {name: z.copy() for name, z in zeros.items()}, 0, learning_rate, **kwargs)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Tensor],
              state: AdamState) -> Tuple[Dict[str, Tensor], AdamState]:
    '''
    One bias-corrected Adam descent step. Returns new parameter and state
    objects; the inputs are left untouched. Parameters without a gradient
    entry are passed through unchanged.
    '''
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params = {}
    new_m = {}
    new_v = {}
    for name, value in params.items():
        if name not in grads:
            new_params[name] = value
            new_m[name] = state.first_moments[name]
            new_v[name] = state.second_moments[name]
            continue
        grad = grads[name]
        if grad.shape != value.shape or state.first_moments[name].shape != value.shape:
            raise DimensionError(f"ERROR: adam_step shape mismatch for {name}: {value.shape} vs {grad.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"ERROR: non-finite gradient for {name}")
        m = b1 * state.first_moments[name] + (1.0 - b1) * grad
        v = b2 * state.second_moments[name] + (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        updated = value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        if not np.all(np.isfinite(updated)):
            raise NumericError(f"ERROR: non-finite weights after step {step} for {name}")
        new_params[name] = updated
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(new_m, new_v, step, state.learning_rate, b1, b2, state.epsilon)
    return new_params, new_state
