from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ModelState, Moments


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(state: ModelState, grads: dict[str, np.ndarray], hp: AdamConfig) -> ModelState:
    """Adam update with bias correction, in place; returns ``state``.

    Parameters without a gradient entry (heads of other tasks) are left alone,
    and each parameter keeps its own step count for bias correction so that
    heads created mid-run start from t = 0.
    """
    params = state.named_parameters()
    for name in sorted(grads):
        g = grads[name]
        w = params[name]
        slot = state.moments.get(name)
        if slot is None:
            slot = state.moments[name] = Moments(np.zeros_like(w), np.zeros_like(w), 0)
        slot.t += 1
        slot.m *= hp.beta1
        slot.m += (1.0 - hp.beta1) * g
        slot.v *= hp.beta2
        slot.v += (1.0 - hp.beta2) * (g * g)
        m_hat = slot.m / (1.0 - hp.beta1**slot.t)
        v_hat = slot.v / (1.0 - hp.beta2**slot.t)
        w -= hp.lr * m_hat / (np.sqrt(v_hat) + hp.eps)
    state.step_count += 1
    return state


def drop_moments(state: ModelState, head_name: str) -> None:
    prefix = f"head.{head_name}."
    for key in [k for k in state.moments if k.startswith(prefix)]:
        del state.moments[key]
