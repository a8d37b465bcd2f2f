"""Adam with an inverse-square-root warmup schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class InverseSqrtSchedule:
    peak_lr: float = 5e-4
    warmup: int = 4000

    def __call__(self, step: int) -> float:
        if step < 1:
            raise ValueError("step counts from 1")
        return self.peak_lr * min(step / self.warmup, (self.warmup / step) ** 0.5)


@dataclass
class Adam:
    schedule: InverseSqrtSchedule = field(default_factory=InverseSqrtSchedule)
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0

    def step(self, params, grads=None):
        """One update. ``grads`` defaults to each tensor's ``.grad``; returns the lr used."""
        self.step_count += 1
        t = self.step_count
        lr = self.schedule(t)
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = p.grad if grads is None else grads.get(name)
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.data.dtype)
        return lr

    def state_dict(self):
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state_dict(self, state):
        self.step_count = int(state["step"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}


def adam_step(params, grads, step, schedule, beta1=0.9, beta2=0.98, eps=1e-8, state=None):
    """Functional form: update ``params`` in place from explicit ``grads`` at ``step``.

    ``state`` holds the moment dicts between calls and is returned.
    """
    if state is None:
        state = Adam(schedule, beta1, beta2, eps)
    state.schedule = schedule
    state.step_count = step - 1
    state.step(params, grads)
    return state
