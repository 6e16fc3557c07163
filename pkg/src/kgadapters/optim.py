"""Adam optimizer state and the linear warmup learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamSet


@dataclass
class AdamState:
    """First/second moment buffers per trainable parameter plus a step count."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: ParamSet) -> AdamState:
    state = AdamState()
    for name in params.trainable_names():
        arr = params.get(name)
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(params: ParamSet, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[ParamSet, AdamState]:
    """One Adam update over the trainable parameters, in place.

    Only trainable parameters change; the step counter increments by one.
    A trainable parameter without a gradient entry is an error.
    """
    trainable = params.trainable_names()
    missing = [n for n in trainable if n not in grads]
    if missing:
        raise KeyError(f"adam_step: missing gradients for {missing}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in trainable:
        g = grads[name]
        p = params.get(name)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / p.dtype.type(bc1)
        vhat = v / p.dtype.type(bc2)
        upd = p - p.dtype.type(lr) * mhat / (np.sqrt(vhat) + p.dtype.type(eps))
        if not np.isfinite(upd).all():
            raise FloatingPointError(f"adam_step: non-finite update for {name!r}")
        params.set_data(name, upd)
    return params, state


def warmup_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear ramp from 0 to base_lr over warmup_steps, constant afterwards."""
    if warmup_steps < 1:
        raise ValueError(f"warmup_steps must be >= 1, got {warmup_steps}")
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return base_lr * min(1.0, step / warmup_steps)
