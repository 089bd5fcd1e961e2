"""Adam: gradient steps scaled by bias-corrected moment estimates.

One state per parameter vector. Updates are deterministic, so identical
gradient sequences reproduce identical trajectories bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


@dataclass
class AdamState:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None)  # first moment
    v: np.ndarray = field(default=None)  # second moment
    t: int = 0


def adam_init(dim: int, alpha: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    if dim < 1:
        raise ValueError("dim must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
        raise ValueError("decay rates must lie in [0, 1)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return AdamState(alpha, beta1, beta2, eps, np.zeros(dim), np.zeros(dim), 0)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One descent step along grad; mutates state, returns new parameters."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != state.m.shape or grad.shape != state.m.shape:
        raise ValueError("params and grad must match the state dimension")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericError(f"non-finite gradient entry at index {bad}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
