"""Adam with bias correction and per-parameter learning-rate overrides."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ConfigurationError, TrainingAbort


def adam_update(value, grad, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step on raw arrays; returns (new_value, new_m, new_v).

    `step` is 1-based. eps sits outside the square root.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    value = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return value, m, v


class Adam:
    """Adam over a dict of named Tensors.

    `lr_overrides` maps parameter names to their own learning rate; the
    log-partition scalar usually trains on a separate rate from the network.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 lr_overrides: dict[str, float] | None = None,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        lr_overrides = dict(lr_overrides or {})
        for name, rate in lr_overrides.items():
            if name not in params:
                raise ConfigurationError(f"lr override for unknown parameter {name!r}")
            if rate <= 0:
                raise ConfigurationError(f"lr override for {name!r} must be positive")
        self.params = params
        self.lr = {name: lr_overrides.get(name, lr) for name in params}
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                grad = np.zeros_like(p.data)
            if not np.all(np.isfinite(grad)):
                raise TrainingAbort(f"non-finite gradient in parameter {name!r}")
            new, self.m[name], self.v[name] = adam_update(
                p.data, grad, self.m[name], self.v[name], self.step_count,
                self.lr[name], self.beta1, self.beta2, self.eps)
            p.data = new

    # -- checkpoint support ------------------------------------------------
    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {name: arr.copy() for name, arr in self.m.items()},
            "v": {name: arr.copy() for name, arr in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        if set(state["m"]) != set(self.params) or set(state["v"]) != set(self.params):
            raise ConfigurationError("optimizer state does not match parameter names")
        for name in self.params:
            if state["m"][name].shape != self.m[name].shape:
                raise ConfigurationError(f"optimizer state for {name!r} has wrong shape")
        self.step_count = int(state["step_count"])
        self.m = {name: np.asarray(arr, dtype=np.float64).copy() for name, arr in state["m"].items()}
        self.v = {name: np.asarray(arr, dtype=np.float64).copy() for name, arr in state["v"].items()}
