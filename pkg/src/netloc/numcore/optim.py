"""Optimizers as pure state transitions over named parameter dicts."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update with bias correction.

    Returns (new_params, new_state); inputs are not mutated, so identical
    (params, grads, state) always produce bit-identical outputs.
    """
    t = state.step + 1
    new = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, {}, {})
    out = {}
    b1t = 1.0 - state.beta1 ** t
    b2t = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new.m[name] = m
        new.v[name] = v
        out[name] = p - state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps)
    return out, new


def sgd_step(params, grads, lr):
    """Plain gradient descent; returns new params, inputs untouched."""
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
        out[name] = p - lr * g
    return out
