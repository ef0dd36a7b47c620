"""Adam and plain SGD updates over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ContractViolation("parameter, gradient and moment shapes differ")
    b1, b2 = betas
    step = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads**2
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, step)


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    if params.shape != grads.shape:
        raise ContractViolation("parameter and gradient shapes differ")
    return params - lr * grads


def clip_by_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grads))
    if max_norm > 0 and norm > max_norm:
        return grads * (max_norm / norm)
    return grads
