from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from attnvo.nn.model import ParameterSet

ADAGRAD_EPS = 1e-10


@dataclass
class OptimizerState:
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)
    epsilon: float = ADAGRAD_EPS
    steps: int = 0

    @classmethod
    def for_params(cls, params: ParameterSet, epsilon: float = ADAGRAD_EPS) -> "OptimizerState":
        return cls({n: np.zeros_like(params[n]) for n in params.trainable()}, epsilon)

    def copy(self) -> "OptimizerState":
        return OptimizerState({k: v.copy() for k, v in self.accumulators.items()}, self.epsilon, self.steps)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm <= 0 or total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * g.dtype.type(scale) for k, g in grads.items()}


def adagrad_step(params: ParameterSet, grads: dict[str, np.ndarray], state: OptimizerState, lr: float):
    """In-place Adagrad update: ``acc += g**2; p -= lr * g / (sqrt(acc) + eps)``."""
    for name, g in grads.items():
        acc = state.accumulators[name]
        p = params.tensors[name]
        if acc.shape != g.shape or p.shape != g.shape:
            raise ValueError(f"{name}: shape mismatch {p.shape} / {acc.shape} / {g.shape}")
        acc += g * g
        p -= p.dtype.type(lr) * g / (np.sqrt(acc) + acc.dtype.type(state.epsilon))
    state.steps += 1
    return params, state
