"""EMA-gradient adapter producing per-head weight/feature scaling coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class EmaGradState:
    """One smoothed Q/K/V gradient per attention layer, each (3, h, D, D')."""

    grads: list[np.ndarray]
    gamma: float = 0.9
    initialized: bool = False

    @classmethod
    def zeros(cls, n_layers: int, h: int, D: int, Dp: int, gamma: float = 0.9) -> "EmaGradState":
        return cls([np.zeros((3, h, D, Dp)) for _ in range(n_layers)], gamma)


def ema_update(state: EmaGradState, grads_t) -> EmaGradState:
    if len(grads_t) != len(state.grads):
        raise ShapeError(f"{len(grads_t)} layer gradients for {len(state.grads)} EMA slots")
    new = []
    for old, g in zip(state.grads, grads_t):
        if old.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != EMA shape {old.shape}")
        new.append(state.gamma * old + (1.0 - state.gamma) * g)
    return EmaGradState(new, state.gamma, True)


def ema_initialize(state: EmaGradState, grads_t) -> EmaGradState:
    """Warm start: the first observed gradient becomes the average."""
    return EmaGradState([np.array(g, dtype=np.float64) for g in grads_t], state.gamma, True)


def coeff_shape(ema_grad: np.ndarray) -> tuple[int, int, int]:
    _, h, _, Dp = ema_grad.shape
    return 3, h, Dp


def compute_coeffs(ema_grad: np.ndarray, W: np.ndarray, b: np.ndarray):
    """[alpha, beta] = 1 + Linear(flatten(ema_grad)); each returned as (3, h, D')."""
    shape = coeff_shape(ema_grad)
    out = 1.0 + ema_grad.ravel() @ W + b
    n = int(np.prod(shape))
    return out[:n].reshape(shape), out[n:].reshape(shape)


def coeffs_backward(ema_grad: np.ndarray, dalpha: np.ndarray, dbeta: np.ndarray):
    """Gradients of the adapter map; the EMA gradient itself is a constant input."""
    dout = np.concatenate([dalpha.ravel(), dbeta.ravel()])
    return np.outer(ema_grad.ravel(), dout), dout


def adapt(W: np.ndarray, E: np.ndarray, alpha: np.ndarray, beta: np.ndarray):
    """Scale projection W (D x D') per output column by alpha and embeddings E (N x D') by beta."""
    if W.shape[-1] != alpha.shape[-1] or E.shape[-1] != beta.shape[-1]:
        raise ShapeError("coefficient length must match the projection width D'")
    return W * alpha[None, :], E * beta[None, :]
