"""SGD with momentum and a cosine-decayed learning rate."""

import math

import numpy as np


def cosine_lr(step, total_steps, base_lr):
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps)), clamped past the end."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if step < 0:
        raise ValueError("step must be non-negative")
    if step > total_steps:
        step = total_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class SgdMomentum:
    """Heavy-ball SGD: v <- mu*v + g; p <- p - lr(step)*v.

    With mu=0 this is plain gradient descent. The schedule is cosine decay
    over `total_steps`; the pre-increment step counter selects the rate, so
    the first step uses the base learning rate.
    """

    def __init__(self, params, base_lr, momentum=0.9, total_steps=1, schedule="cosine"):
        self.params = list(params)
        self.base_lr = base_lr
        self.momentum = momentum
        self.total_steps = total_steps
        self.schedule = schedule
        self.step_count = 0
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self):
        if self.schedule == "cosine":
            return cosine_lr(self.step_count, self.total_steps, self.base_lr)
        return self.base_lr

    def step(self, grads):
        """Apply one update. `grads` maps each parameter tensor to its gradient."""
        lr = self.current_lr()
        for i, p in enumerate(self.params):
            g = grads[p]
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter shape {p.data.shape}"
                )
            v = self.velocities[i]
            v *= self.momentum
            v += g
            p.data = p.data - lr * v
        self.step_count += 1
        return lr
