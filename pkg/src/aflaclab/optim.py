"""RMSprop with a running second-moment accumulator per parameter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradientError, ShapeMismatchError


@dataclass
class OptimizerState:
    acc: dict[str, np.ndarray]
    rho: float = 0.99
    eps: float = 1e-8
    lr: float = 5e-4

    @classmethod
    def for_store(cls, store, lr: float, rho: float = 0.99, eps: float = 1e-8):
        return cls(acc={k: np.zeros_like(v) for k, v in store.items()},
                   rho=rho, eps=eps, lr=lr)

    def copy(self) -> "OptimizerState":
        return OptimizerState(acc={k: v.copy() for k, v in self.acc.items()},
                              rho=self.rho, eps=self.eps, lr=self.lr)


def rmsprop_update(store, grads: dict[str, np.ndarray], state: OptimizerState,
                   lr: float | None = None):
    """s' = rho*s + (1-rho)*g^2;  theta' = theta - lr*g/sqrt(s'+eps).

    Returns a new (store, state) pair; inputs are left untouched.
    """
    lr = state.lr if lr is None else lr
    new_params: dict[str, np.ndarray] = {}
    new_acc: dict[str, np.ndarray] = {}
    for name, theta in store.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeMismatchError(
                f"gradient for {name!r} has shape {g.shape}, expected {theta.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name!r}")
        g = g.astype(theta.dtype, copy=False)
        s = state.rho * state.acc[name] + (1.0 - state.rho) * g * g
        new_acc[name] = s
        new_params[name] = theta - lr * g / np.sqrt(s + state.eps)
    next_state = OptimizerState(acc=new_acc, rho=state.rho, eps=state.eps, lr=state.lr)
    return store.replaced(new_params), next_state


@dataclass
class LrSchedule:
    """Optional exponential step decay: lr * rate**(#milestones passed)."""

    base_lr: float
    decay_steps: tuple[int, ...] = field(default_factory=tuple)
    decay_rate: float = 0.1

    def at(self, step: int) -> float:
        k = sum(1 for s in self.decay_steps if step >= s)
        return self.base_lr * self.decay_rate**k
