"""AdamW with decoupled weight decay and the milestone learning-rate
schedule used by both stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import StateError
from .tensor import Tensor


@dataclass
class LrSchedule:
    """Step schedule: lr = initial * decay_factor^(#milestones <= step)."""

    initial: float = 1e-4
    decay_factor: float = 0.5
    milestones: tuple[int, ...] = (4000, 8000, 12000, 16000, 20000)

    def __post_init__(self):
        if not (0.0 < self.decay_factor < 1.0):
            raise ValueError("decay_factor must lie in (0, 1)")
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must be ascending")
        self.milestones = tuple(int(m) for m in self.milestones)

    def at(self, step: int) -> float:
        drops = sum(1 for m in self.milestones if m <= step)
        return self.initial * self.decay_factor**drops


@dataclass
class LossWeights:
    """Per-term loss weights. The hue-stage set defaults to
    (0.1, 1.0, 5.0, 1.0, 0.5); the latent L1 term defaults to 60."""

    pix: float = 0.1
    mask: float = 1.0
    per: float = 5.0
    adv: float = 1.0
    col: float = 0.5
    kl: float = 0.01
    feat_l1: float = 60.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


class AdamW:
    """Decoupled weight-decay Adam with bias correction.

    The learning rate is read from the schedule at the current step count
    before the step, so a milestone at N applies from iteration N on.
    """

    def __init__(
        self,
        params: list[Tensor],
        schedule: LrSchedule | None = None,
        beta1: float = 0.9,
        beta2: float = 0.99,
        weight_decay: float = 0.01,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.schedule = schedule or LrSchedule()
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def current_lr(self) -> float:
        return self.schedule.at(self.step_count)

    def step(self) -> None:
        lr = self.current_lr()
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise StateError(f"parameter {p.name or i} has no gradient")
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.values = p.values - lr * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.values
            )
        self.step_count += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise StateError("optimizer state does not match parameter count")
        self.step_count = int(state["step_count"])
        self.m = [np.array(m) for m in state["m"]]
        self.v = [np.array(v) for v in state["v"]]
