"""Bias-corrected Adam over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor


class Adam:
    """Standard Adam; step() consumes the .grad buffers of its parameters.

    Defaults follow the usual beta1=0.9, beta2=0.999, epsilon=1e-8 with the
    learning rate supplied by the caller.
    """

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = 0.0
            elif g.shape != p.data.shape:
                raise DimensionError(f"grad shape {g.shape} != param shape {p.data.shape} for '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def adam_step(params: dict, state: Adam) -> Adam:
    """Functional spelling of one update; grads ride on the tensors."""
    state.step()
    return state


def scale_grads(params: dict, factor: float) -> None:
    """In-place gradient scaling (mean-loss reduction over a batch)."""
    for p in params.values():
        if p.grad is not None:
            p.grad *= factor


__all__ = ["Adam", "adam_step", "scale_grads", "Tensor"]
