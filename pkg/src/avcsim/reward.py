"""Voltage barrier penalties and the shared global reward.

Three barrier shapes encode the 0.95-1.05 pu constraint: an absolute-value
ramp, a square, and a bowl that glues a scaled Gaussian well inside the safe
band to linear walls outside it. The bowl keeps the exact printed form,
including its small jump at |v - v_ref| = 0.05 (inner branch ~0.004793 vs
outer 0.005); no re-smoothing is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

L1 = "l1"
L2 = "l2"
BOWL = "bowl"
BARRIER_SHAPES = (L1, L2, BOWL)

SAFETY_PENALTY = -200.0


@dataclass(frozen=True)
class BarrierSpec:
    shape: str = L1
    v_ref: float = 1.0
    safe_halfwidth: float = 0.05
    # Bowl shape hyperparameters (slope, offset, well depth, well lift).
    bowl_a: float = 2.0
    bowl_b: float = 0.095
    bowl_c: float = 0.01
    bowl_d: float = 0.04
    bowl_std: float = 0.1

    def __post_init__(self) -> None:
        if self.shape not in BARRIER_SHAPES:
            raise ValueError(f"unknown barrier shape '{self.shape}'")
        if self.safe_halfwidth <= 0:
            raise ValueError("safe_halfwidth must be positive")
        if min(self.bowl_a, self.bowl_b, self.bowl_c, self.bowl_d, self.bowl_std) <= 0:
            raise ValueError("bowl parameters must be positive")


@dataclass(frozen=True)
class RewardSpec:
    barrier: BarrierSpec = BarrierSpec()
    alpha: float = 0.1
    safety_penalty: float = SAFETY_PENALTY

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")


def _gauss_density(v: float, mean: float, std: float) -> float:
    z = (v - mean) / std
    return math.exp(-0.5 * z * z) / (std * math.sqrt(2.0 * math.pi))


def barrier_value(spec: BarrierSpec, v: float) -> float:
    """Penalty for one bus voltage; non-negative for all three shapes."""
    if v <= 0:
        raise ValueError("voltage must be positive")
    dev = abs(v - spec.v_ref)
    if spec.shape == L1:
        return dev
    if spec.shape == L2:
        return dev * dev
    # The branch test carries a hair of slack so boundary inputs like 1.05,
    # whose binary deviation exceeds 0.05 by ~4e-17, classify as inside.
    if dev > spec.safe_halfwidth + 1e-12:
        return spec.bowl_a * dev - spec.bowl_b
    return -spec.bowl_c * _gauss_density(v, spec.v_ref, spec.bowl_std) + spec.bowl_d


def barrier_values(spec: BarrierSpec, v: Iterable[float]) -> list[float]:
    return [barrier_value(spec, float(x)) for x in v]


def reactive_loss(q_pv: Iterable[float]) -> float:
    """Per-agent mean |q|: (1/|I|) Σ |q_i|."""
    q = list(q_pv)
    if not q:
        raise ValueError("empty agent set")
    return sum(abs(x) for x in q) / len(q)


def reward(spec: RewardSpec, v: Iterable[float], q_pv: Iterable[float]) -> float:
    """Global shared reward: -(mean barrier over buses) - alpha * (mean |q|)."""
    voltages = list(v)
    if not voltages:
        raise ValueError("empty voltage vector")
    voltage_term = sum(barrier_value(spec.barrier, x) for x in voltages) / len(voltages)
    return -voltage_term - spec.alpha * reactive_loss(q_pv)
