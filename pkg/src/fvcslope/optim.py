"""AdamW: Adam with decoupled (multiplicative) weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamWState", "adamw_step", "AdamW"]


@dataclass
class AdamWState:
    """Optimizer state for a fixed parameter list."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs) -> "AdamWState":
        state = cls(**kwargs)
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
        return state


def _validate(state: AdamWState, n_params: int):
    if state.learning_rate <= 0:
        raise ValueError(f"learning rate must be > 0, got {state.learning_rate}")
    for name, b in (("beta1", state.beta1), ("beta2", state.beta2)):
        if not 0.0 < b < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {b}")
    if state.epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {state.epsilon}")
    if state.weight_decay < 0:
        raise ValueError(f"weight decay must be >= 0, got {state.weight_decay}")
    if len(state.first_moment) != n_params or len(state.second_moment) != n_params:
        raise ValueError("moment arrays do not match the parameter list")


def adamw_step(params, grads, state: AdamWState):
    """One in-place update of ``params`` from ``grads``.

    Bias-corrected Adam moments drive the gradient term; the weight-decay
    term multiplies the parameter directly (p *= 1 - lr*wd) and never touches
    the moments, so decay is independent of the gradient value.
    """
    params = list(params)
    grads = list(grads)
    _validate(state, len(params))
    if len(grads) != len(params):
        raise ValueError(f"{len(grads)} grads for {len(params)} params")
    for i, g in enumerate(grads):
        if g is None:
            raise ValueError(f"missing gradient for parameter {i}")
        if g.shape != params[i].shape:
            raise ValueError(
                f"grad shape {g.shape} does not match param shape {params[i].shape}"
            )

    state.step_count += 1
    t = state.step_count
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        p -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


class AdamW:
    """Convenience wrapper binding AdamW state to named parameter tensors."""

    def __init__(self, params: dict[str, Tensor], **kwargs):
        self._names = list(params)
        self._params = [params[n] for n in self._names]
        self.state = AdamWState.for_params([p.data for p in self._params], **kwargs)

    def step(self):
        grads = []
        for name, p in zip(self._names, self._params):
            if p.grad is None:
                raise ValueError(f"parameter '{name}' has no gradient")
            grads.append(p.grad)
        adamw_step([p.data for p in self._params], grads, self.state)

    def zero_grad(self):
        for p in self._params:
            p.grad = None
