"""Adam, step-decay learning-rate schedule, and early stopping.

All state lives in plain numpy buffers so training trajectories are
bit-reproducible for a fixed seed and config.
"""

import numpy as np

from . import kernels
from .errors import DimensionError


class Adam:
    """Adam with bias correction over a list of parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            if p.grad.shape != p.value.shape:
                raise DimensionError(
                    f"gradient shape {p.grad.shape} does not match parameter {p.value.shape}")
            kernels.adam_update(p.value, p.grad, m, v,
                                self.lr, self.beta1, self.beta2, self.eps, self.t)


class StepDecaySchedule:
    """lr(epoch) = max(floor, lr0 * factor**(epoch // period)) while enabled.

    Disabled schedules hold lr0; homotopy stages before the final one train
    with the schedule disabled.
    """

    def __init__(self, lr0, period=100, factor=0.1, floor=1e-5, enabled=True):
        self.lr0 = lr0
        self.period = period
        self.factor = factor
        self.floor = floor
        self.enabled = enabled

    def lr_at(self, epoch):
        if not self.enabled:
            return self.lr0
        return max(self.floor, self.lr0 * self.factor ** (epoch // self.period))


class EarlyStopping:
    """Patience-based stopping with a best-weights snapshot.

    Improvement is tracked only once ``warmup`` epochs have elapsed; the
    stop signal fires when more than ``patience`` consecutive tracked
    epochs fail to improve the best validation loss. The snapshot always
    holds the weights that achieved the recorded best loss (or the initial
    weights if nothing was ever tracked).
    """

    def __init__(self, warmup=50, patience=200, initial_weights=None):
        self.warmup = warmup
        self.patience = patience
        self.best_loss = np.inf
        self.best_weights = None if initial_weights is None \
            else [w.copy() for w in initial_weights]
        self.stale = 0

    def update(self, epoch, val_loss, weights):
        """Record this epoch; returns True when training should stop."""
        if epoch < self.warmup:
            return False
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_weights = [w.copy() for w in weights]
            self.stale = 0
            return False
        self.stale += 1
        return self.stale > self.patience
