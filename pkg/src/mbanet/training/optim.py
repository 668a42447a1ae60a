"""Adam over named parameter groups, with L2 weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mbanet.tensor_core.module import Parameter


@dataclass
class TrainState:
    """Optimizer bookkeeping; ``first``/``second`` are keyed by ``id(param)``."""

    step: int = 0
    epoch: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    rng_state: dict | None = None
    best_checkpoint: str | None = None
    best_val_acc: float = -1.0


class Adam:
    def __init__(self, groups, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if not isinstance(groups, dict):
            groups = {"default": list(groups)}
        self.groups = {name: list(params) for name, params in groups.items()}
        for name, params in self.groups.items():
            if not all(isinstance(p, Parameter) for p in params):
                raise TypeError(f"group {name!r} holds non-Parameter entries")
        self.lr = {}
        self.set_lr(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = TrainState()

    def set_lr(self, lr) -> None:
        if isinstance(lr, dict):
            missing = set(self.groups) - set(lr)
            if missing:
                raise KeyError(f"no learning rate for groups {sorted(missing)}")
            self.lr = {name: float(lr[name]) for name in self.groups}
        else:
            self.lr = {name: float(lr) for name in self.groups}

    def parameters(self):
        for params in self.groups.values():
            yield from params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def step(self) -> None:
        st = self.state
        st.step += 1
        bias1 = 1.0 - self.beta1 ** st.step
        bias2 = 1.0 - self.beta2 ** st.step
        for name, params in self.groups.items():
            lr = self.lr[name]
            for p in params:
                if p.grad is None or not p.requires_grad:
                    continue
                g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
                key = id(p)
                m = st.first.get(key)
                if m is None:
                    m = st.first[key] = np.zeros_like(p.data)
                    st.second[key] = np.zeros_like(p.data)
                v = st.second[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                if lr:
                    update = lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
                    p.data = (p.data - update).astype(p.dtype, copy=False)
