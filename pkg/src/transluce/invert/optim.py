"""Adam with a constant-then-linear learning-rate schedule."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    steps: int = 100
    decay: bool = True          # constant for the first half, then linear to zero
    init: str = "midpoint"      # midpoint | random | provided
    seed: int = 0
    divergence_factor: float = 10.0
    divergence_patience: int = 50

    def __post_init__(self):
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ValueError("lr must be finite and >= 0")
        for b in (self.beta1, self.beta2):
            if not 0 <= b < 1:
                raise ValueError("betas must lie in [0, 1)")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.init not in ("midpoint", "random", "provided"):
            raise ValueError(f"unknown init {self.init!r}")

    def lr_at(self, k: int) -> float:
        """Learning rate for update ``k`` (0-based)."""
        if not self.decay:
            return self.lr
        half = self.steps // 2
        if k < half:
            return self.lr
        return self.lr * (self.steps - k) / (self.steps - half)


class Adam:
    """Adam on a flat vector. ``step`` returns the updated copy."""

    def __init__(self, size: int, beta1=0.5, beta2=0.999, epsilon=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon

    def step(self, x, grad, lr: float) -> np.ndarray:
        g = np.asarray(grad, dtype=np.float64)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return np.asarray(x, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


@dataclass
class FitReport:
    losses: list                  # loss before the first step and after each step
    params: object                # best ParamVector (normalized)
    physical: dict                # best parameters in physical units
    best_loss: float
    best_step: int
    wall_clock: float = 0.0
    renders: int = 0
    mae: dict | None = None
    diverged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    def best_so_far(self) -> list:
        return list(np.minimum.accumulate(self.losses))

    def to_dict(self) -> dict:
        return _jsonable({
            "losses": self.losses, "best_loss": self.best_loss, "best_step": self.best_step,
            "params": {"values": self.params.values, "layout": [
                [n, list(s)] for n, s in self.params.layout.shapes]},
            "physical": self.physical, "wall_clock": self.wall_clock,
            "renders": self.renders, "mae": self.mae, "diverged": self.diverged,
            "extra": self.extra})

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "best_so_far"])
            for k, (a, b) in enumerate(zip(self.losses, self.best_so_far())):
                w.writerow([k, repr(float(a)), repr(float(b))])
