from dataclasses import dataclass

import numpy as np


def sgd_step(params, grads, lr, velocities=None, momentum=0.9, weight_decay=0.0005):
    """One SGD-with-momentum update, returning ``(new_params, new_velocities)``.

    ``v <- momentum * v + (g + weight_decay * p)`` then ``p <- p - lr * v``.
    Inputs are sequences of arrays; nothing is modified in place.
    """
    if velocities is None:
        velocities = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
    if not (len(params) == len(grads) == len(velocities)):
        raise ValueError("params, grads and velocities must have equal length")
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocities):
        p, g, v = (np.asarray(a, dtype=np.float64) for a in (p, g, v))
        if not (p.shape == g.shape == v.shape):
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v = momentum * v + (g + weight_decay * p)
        new_v.append(v)
        new_p.append(p - lr * v)
    return new_p, new_v


class SGD:
    """Stateful wrapper around :func:`sgd_step` for a list of tensors."""

    def __init__(self, params, momentum=0.9, weight_decay=0.0005):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            v = self.velocities[i]
            v *= self.momentum
            v += g + self.weight_decay * p.data
            p.data -= lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass(frozen=True)
class PolySchedule:
    base_lr: float
    max_iter: int
    power: float = 0.9

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def poly_lr(iteration, schedule: PolySchedule):
    """``base_lr * (1 - iter/max_iter) ** power`` for ``0 <= iter <= max_iter``."""
    if not 0 <= iteration <= schedule.max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {schedule.max_iter}]")
    return schedule.base_lr * (1.0 - iteration / schedule.max_iter) ** schedule.power
