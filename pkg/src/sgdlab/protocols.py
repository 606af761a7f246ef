"""Learning-rate protocols: constant, uniformly random, and cyclic cosine.

Every protocol is anchored to a mean rate l and emits two signals:

- a per-step multiplier alpha, drawn fresh for every mini-batch update
  (uniform on [1 - delta, 1 + delta] for the random protocol, exactly 1
  otherwise), and
- a per-epoch rate l_tau, constant except for the cyclic protocol, where
  l_tau = l * (1 + cos(pi * tau / period)).

Both modulations time-average back to l: E[alpha] = 1 for the random
protocol, and the cosine sums to zero over any window of 2 * period whole
epochs.  The random multiplier has variance delta**2 / 3.

All randomness flows through an explicitly passed numpy Generator, so
concurrent replicas are safe as long as each owns its own stream.  A
degenerate random protocol (delta = 0) consumes no draws at all, which
makes it reproduce the constant protocol exactly under a shared seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, MisuseError


class ProtocolKind(str, Enum):
    CONSTANT = "constant"
    RANDOM_UNIFORM = "random"
    CYCLIC_COSINE = "cyclic"


@dataclass(frozen=True)
class ProtocolSpec:
    """Which schedule is in force and its parameters.

    base_rate is the mean learning rate l; half_width is delta in [0, 1]
    (random protocol only); period is the cosine period in whole epochs
    (cyclic protocol only).
    """

    kind: ProtocolKind
    base_rate: float
    half_width: float = 0.0
    period: int = 1

    def __post_init__(self):
        if self.base_rate <= 0.0 or not math.isfinite(self.base_rate):
            raise ConfigError(f"base_rate must be positive, got {self.base_rate}")
        if not 0.0 <= self.half_width <= 1.0:
            raise ConfigError(f"half_width must lie in [0, 1], got {self.half_width}")
        if int(self.period) != self.period or self.period < 1:
            raise ConfigError(f"period must be a positive integer, got {self.period}")

    @classmethod
    def constant(cls, base_rate: float) -> "ProtocolSpec":
        return cls(ProtocolKind.CONSTANT, base_rate)

    @classmethod
    def random(cls, base_rate: float, half_width: float = 1.0) -> "ProtocolSpec":
        return cls(ProtocolKind.RANDOM_UNIFORM, base_rate, half_width=half_width)

    @classmethod
    def cyclic(cls, base_rate: float, period: int) -> "ProtocolSpec":
        return cls(ProtocolKind.CYCLIC_COSINE, base_rate, period=period)

    def label(self) -> str:
        """Short stable name used in CSV tables and file names."""
        if self.kind is ProtocolKind.CONSTANT:
            return "constant"
        if self.kind is ProtocolKind.RANDOM_UNIFORM:
            return f"random_d{self.half_width:g}"
        return f"cyclic_p{self.period}"


def sample_alpha(spec: ProtocolSpec, rng: np.random.Generator) -> float:
    """Draw the per-step rate multiplier for a constant or random protocol.

    The constant protocol (and the degenerate random protocol with
    half_width 0) returns exactly 1.0 without consuming any randomness.
    """
    if spec.kind is ProtocolKind.CYCLIC_COSINE:
        raise MisuseError("sample_alpha is undefined for the cyclic protocol; "
                          "its modulation lives in rate_at_epoch")
    if spec.kind is ProtocolKind.CONSTANT or spec.half_width == 0.0:
        return 1.0
    return float(rng.uniform(1.0 - spec.half_width, 1.0 + spec.half_width))


def sample_alphas(spec: ProtocolSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized multiplier draws, for Monte Carlo estimation."""
    if spec.kind is ProtocolKind.CYCLIC_COSINE:
        raise MisuseError("sample_alphas is undefined for the cyclic protocol")
    if spec.kind is ProtocolKind.CONSTANT or spec.half_width == 0.0:
        return np.ones(count)
    return rng.uniform(1.0 - spec.half_width, 1.0 + spec.half_width, size=count)


def alpha_variance(half_width: float) -> float:
    """Exact variance of the uniform multiplier: delta**2 / 3."""
    return half_width * half_width / 3.0


def rate_at_epoch(spec: ProtocolSpec, epoch: int) -> float:
    """Rate l_tau in force during the given completed-epoch count.

    Constant and random protocols keep l_tau = l; the cyclic protocol
    emits l * (1 + cos(pi * tau / period)), non-negative and periodic
    with period 2 * period epochs.
    """
    if spec.kind is ProtocolKind.CYCLIC_COSINE:
        return spec.base_rate * (1.0 + math.cos(math.pi * epoch / spec.period))
    return spec.base_rate


def rate_trace(spec: ProtocolSpec, epochs: int) -> np.ndarray:
    """Rates for epochs 0 .. epochs-1 as an array."""
    return np.array([rate_at_epoch(spec, tau) for tau in range(epochs)])
