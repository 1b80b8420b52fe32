"""Adam with bias correction and the cosine-annealing learning-rate schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from metatrend.errors import ModelError
from metatrend.nn.network import ModelParams

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators congruent with the trainable keys."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ModelParams, grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One in-place Adam update over the keys present in ``grads``."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for key, grad in grads.items():
        value = params.values.get(key)
        if value is None or value.shape != grad.shape:
            raise ModelError(f"adam_step: gradient for {key} not congruent")
        if key not in state.m:
            state.m[key] = np.zeros_like(value)
            state.v[key] = np.zeros_like(value)
        m = state.m[key]
        v = state.v[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(grad)
        m_hat = m / bc1
        v_hat = v / bc2
        value -= (lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(value.dtype)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * (1 + cos(pi * step / total_steps)) / 2, floored at 0."""
    if total_steps <= 0:
        return base_lr
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return max(0.0, base_lr * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0)
