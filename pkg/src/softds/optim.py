"""Minimal AdamW: adaptive-moment steps with decoupled weight decay for
minimizing a scalar loss over a flat parameter vector.

Written functionally: ``adamw_step`` returns new parameter and state
arrays instead of mutating, and identical inputs always produce bitwise
identical outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AdamState", "adamw_step"]


@dataclass
class AdamState:
    step: int
    m: np.ndarray  # first-moment estimate
    v: np.ndarray  # second-moment estimate, entrywise >= 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(0, np.zeros(n_params), np.zeros(n_params))


def adamw_step(params, grad, state: AdamState, lr, beta1=0.9, beta2=0.999,
               eps=1e-8, weight_decay=0.0):
    """One decoupled-weight-decay Adam update, minimizing the loss whose
    gradient is ``grad``:

        m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
        params' = params - lr * m_hat / (sqrt(v_hat) + eps)
                         - lr * weight_decay * params

    with the usual bias-corrected moments.  Returns ``(params', state')``.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("params, grad, and state must have matching shapes")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient entry")
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * params
    return new_params, AdamState(step, m, v)
