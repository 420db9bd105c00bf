"""Adam optimizer and exponential moving averages over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Pure: returns fresh params and state."""
    t = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_state = AdamState(step=t)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
        m = beta1 * state.m.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(p)) + (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
        new_state.m[name] = m.astype(np.float32)
        new_state.v[name] = v.astype(np.float32)
    return new_params, new_state


class Adam:
    """Stateful wrapper that updates Tensor parameters in place.

    The parameter dict is the designated mutable state of a training loop;
    everything else in the tape layer stays pure.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        raw = {k: t.data for k, t in self.params.items()}
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in self.params.items()}
        new, self.state = adam_step(raw, grads, self.state, self.lr,
                                    self.beta1, self.beta2, self.eps)
        for k, t in self.params.items():
            t.data = new[k]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


def ema_update(ema_params: dict[str, np.ndarray],
               live_params: dict[str, np.ndarray],
               decay: float) -> dict[str, np.ndarray]:
    """ema <- decay * ema + (1 - decay) * live, elementwise, pure."""
    out = {}
    for name, live in live_params.items():
        ema = ema_params[name]
        if ema.shape != live.shape:
            raise ShapeError(f"EMA shape {ema.shape} != live shape {live.shape} for {name!r}")
        out[name] = (decay * ema + (1.0 - decay) * live).astype(np.float32)
    return out
