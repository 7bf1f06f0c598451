"""
Cost weights and the three-term cost breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass

from config.settings import BETA1, BETA2, GAMMA


@dataclass(frozen=True)
class CostWeights:
    beta1: float = BETA1
    beta2: float = BETA2
    gamma: float = GAMMA

    def __post_init__(self):
        if self.beta1 < 0.0 or self.beta2 < 0.0:
            raise ValueError(f"beta1, beta2 must be >= 0, got {self.beta1}, {self.beta2}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class CostBreakdown:
    tracking: float
    terminal: float
    control: float

    @property
    def total(self) -> float:
        return self.tracking + self.terminal + self.control
