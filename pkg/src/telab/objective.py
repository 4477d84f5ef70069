"""Alpha-fairness utilities and the per-epoch scalar reward.

Inside the logarithms, throughput is expressed in Mbps and delay in
milliseconds. Log utilities are unit-sensitive only up to an additive
constant per session, which shifts every policy's reward equally; fixing the
units here keeps runs comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

MBPS = 1e6
MS = 1e-3


@dataclass(frozen=True)
class UtilityConfig:
    alpha1: float = 1.0   # throughput fairness exponent
    alpha2: float = 1.0   # delay exponent
    sigma: float = 1.0    # relative importance of delay vs. throughput

    def __post_init__(self):
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ValueError("alpha exponents must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def alpha_utility(x: float, alpha: float) -> float:
    """x^(1-alpha)/(1-alpha), with the exact log branch at alpha == 1."""
    if x <= 0:
        raise ValueError(f"alpha_utility needs x > 0, got {x}")
    if alpha == 1.0:
        return math.log(x)
    return x ** (1.0 - alpha) / (1.0 - alpha)


def session_utility(x: float, z: float, cfg: UtilityConfig) -> float:
    """Utility of one session with throughput x (bits/s) and delay z (s)."""
    if x <= 0 or z <= 0:
        raise ValueError(f"session_utility needs positive inputs, got x={x} z={z}")
    return alpha_utility(x / MBPS, cfg.alpha1) - cfg.sigma * alpha_utility(z / MS, cfg.alpha2)


def reward(obs, cfg: UtilityConfig) -> float:
    """Total utility over all sessions of one epoch observation."""
    return sum(session_utility(float(x), float(z), cfg)
               for x, z in zip(obs.throughput, obs.delay))
