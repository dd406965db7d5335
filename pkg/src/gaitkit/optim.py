"""SGD with momentum and weight decay, plus the milestone learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class ParamSet:
    """Named trainable parameters with per-parameter momentum buffers."""

    def __init__(self, params=None):
        self.params = dict(params) if params else {}
        self.momentum = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def __len__(self):
        return len(self.params)

    def __iter__(self):
        return iter(self.params.items())

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def add(self, name, tensor):
        if name in self.params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        self.params[name] = tensor
        self.momentum[name] = np.zeros_like(tensor.data)

    def check(self):
        for name, p in self.params.items():
            if self.momentum[name].shape != p.data.shape:
                raise ShapeError(f"momentum buffer shape mismatch for {name!r}")


def sgd_step(params: ParamSet, grads, lr, momentum=0.9, weight_decay=5e-4):
    """One in-place SGD update: v <- momentum*v + (g + wd*p); p <- p - lr*v."""
    for name, p in params.params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape mismatch for {name!r}: {g.shape} vs {p.data.shape}")
        v = params.momentum[name]
        v *= momentum
        v += g + weight_decay * p.data
        p.data -= lr * v
    return params


class MilestoneSchedule:
    """Learning rate multiplied by 0.1 at each milestone step."""

    def __init__(self, base_lr, milestones):
        milestones = list(milestones)
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ValueError("milestones must be strictly increasing")
        self.base_lr = base_lr
        self.milestones = milestones

    def lr_at(self, step):
        decays = sum(1 for m in self.milestones if step >= m)
        return self.base_lr * (0.1 ** decays)
