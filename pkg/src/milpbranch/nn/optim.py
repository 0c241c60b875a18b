from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        if p.data.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


@dataclass
class PlateauState:
    """Reduce-on-plateau bookkeeping: after ``patience`` epochs without an
    improvement of at least ``threshold`` the rate is multiplied by ``factor``."""

    lr: float = 1e-3
    factor: float = 0.2
    patience: int = 10
    threshold: float = 1e-6
    min_lr: float = 1e-6
    best: float = float("inf")
    bad_epochs: int = 0


def plateau_schedule(state: PlateauState, val_loss: float):
    if val_loss < state.best - state.threshold:
        state.best = val_loss
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= state.patience:
            state.lr = max(state.lr * state.factor, state.min_lr)
            state.bad_epochs = 0
    return state, state.lr
