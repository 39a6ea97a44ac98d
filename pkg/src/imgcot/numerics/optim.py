"""AdamW with decoupled weight decay and a warmup + cosine-with-restarts schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from imgcot.errors import ContractError
from imgcot.numerics.tensor import Tensor


@dataclass
class CosineRestartSchedule:
    """Linear warmup over ``warmup_frac`` of the run, then cosine decay with hard restarts.

    ``restarts`` counts how many times the rate jumps back to ``base_lr``
    after warmup, so the cosine part is split into ``restarts + 1`` cycles.
    """

    base_lr: float
    total_steps: int
    warmup_frac: float = 0.15
    restarts: int = 1

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ContractError("total_steps must be positive")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ContractError("warmup_frac must lie in [0, 1]")
        if self.restarts < 0 or self.base_lr < 0:
            raise ContractError("restarts and base_lr must be non-negative")

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_frac * self.total_steps))

    @property
    def cycle_length(self) -> float:
        return (self.total_steps - self.warmup_steps) / (self.restarts + 1)

    def rate(self, step: int) -> float:
        if not 0 <= step <= self.total_steps:
            raise ContractError(f"step {step} outside [0, {self.total_steps}]")
        warm = self.warmup_steps
        if step < warm:
            return self.base_lr * step / warm
        span = self.total_steps - warm
        if span == 0:
            return self.base_lr
        progress = (step - warm) / span
        if progress >= 1.0:
            return 0.0
        phase = (progress * (self.restarts + 1)) % 1.0
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * phase))


def schedule_rate(schedule: CosineRestartSchedule, step: int) -> float:
    return schedule.rate(step)


class AdamW:
    """Adam moments with bias correction; weight decay applied directly to the weights."""

    def __init__(
        self,
        params: Sequence[Tensor],
        schedule: CosineRestartSchedule | None = None,
        lr: float = 1e-3,
        betas: tuple = (0.9, 0.95),
        eps: float = 1e-8,
        weight_decay: float = 0.1,
        no_decay: Sequence[Tensor] = (),
    ):
        self.params = list(params)
        self.schedule = schedule
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        skip = {id(p) for p in no_decay}
        self.decay = [id(p) not in skip for p in self.params]
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def current_lr(self, step: int) -> float:
        if self.schedule is None:
            return self.lr
        return self.schedule.rate(min(step, self.schedule.total_steps))

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad`` fields; returns the rate used."""
        self.step_count += 1
        t = self.step_count
        lr = self.current_lr(t)
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ContractError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m, v = self.m[i], self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.decay[i] and self.weight_decay:
                p.data -= (lr * self.weight_decay) * p.data
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
        return lr

    def state_arrays(self) -> dict:
        out = {"step": np.array([self.step_count], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out
