"""RMSprop: per-parameter moving average of squared gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RmsPropState:
    """Optimizer hyperparameters plus the per-parameter accumulators.

    mean_square entries are created lazily (zero-initialized) the first
    time a parameter is stepped and stay non-negative forever.
    """

    learning_rate: float = 1e-3
    decay_rho: float = 0.9
    epsilon: float = 1e-8
    mean_square: dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: RmsPropState,
) -> tuple[dict[str, np.ndarray], RmsPropState]:
    """One update: ms <- rho*ms + (1-rho)*g^2; p <- p - lr*g/(sqrt(ms)+eps).

    Parameter arrays and the state are updated in place and returned.
    """
    for name, value in params.items():
        grad = grads[name]
        ms = state.mean_square.get(name)
        if ms is None:
            ms = state.mean_square[name] = np.zeros_like(value)
        ms *= state.decay_rho
        ms += (1.0 - state.decay_rho) * grad * grad
        value -= state.learning_rate * grad / (np.sqrt(ms) + state.epsilon)
    return params, state
