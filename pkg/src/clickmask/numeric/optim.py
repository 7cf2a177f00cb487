"""Adam with bias correction, plus a small multi-parameter wrapper."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ClickmaskError, FrozenParameterError, ShapeError
from .tensor import Parameter


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Parameter, lr: float = 5e-5,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        z = np.zeros_like(param.data)
        return cls(z.copy(), z.copy(), 0, lr, beta1, beta2, eps)


def adam_step(param: Parameter, state: AdamState) -> tuple[Parameter, AdamState]:
    """One in-place Adam update; returns the mutated pair for convenience."""
    if not param.trainable:
        raise FrozenParameterError("adam_step on a frozen parameter")
    if param.grad is None:
        raise ClickmaskError("adam_step requires a populated gradient")
    if state.first_moment.shape != param.data.shape:
        raise ShapeError(
            f"moment shape {state.first_moment.shape} != parameter shape {param.data.shape}"
        )
    g = param.grad
    state.step_count += 1
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * g
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * (g * g)
    m_hat = state.first_moment / (1.0 - state.beta1 ** state.step_count)
    v_hat = state.second_moment / (1.0 - state.beta2 ** state.step_count)
    param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    return param, state


@dataclass
class Adam:
    """Optimizer over a named parameter dict; non-trainable entries are
    excluded at construction (the frozen-backbone contract)."""

    params: dict[str, Parameter]
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(init=False)

    def __post_init__(self):
        self.params = {k: p for k, p in self.params.items() if p.trainable}
        self.states = {
            k: AdamState.for_param(p, self.lr, self.beta1, self.beta2, self.eps)
            for k, p in self.params.items()
        }

    @property
    def param_names(self) -> list[str]:
        return sorted(self.params)

    def set_lr(self, lr: float) -> None:
        self.lr = lr
        for s in self.states.values():
            s.lr = lr

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None:
                adam_step(p, self.states[name])

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, s in self.states.items():
            out[f"{name}.m"] = s.first_moment
            out[f"{name}.v"] = s.second_moment
            out[f"{name}.t"] = np.asarray(s.step_count, dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, s in self.states.items():
            if f"{name}.m" in arrays:
                s.first_moment = arrays[f"{name}.m"].copy()
                s.second_moment = arrays[f"{name}.v"].copy()
                s.step_count = int(arrays[f"{name}.t"])
