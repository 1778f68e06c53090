"""Stochastic models for the delay sources along the broadcast path.

The transmitter side lumps send + channel access + transmission into one
Gaussian (the quantity the beacon itself measures between FIFO load and the
transmit-done interrupt).  The receiver side is a base constant plus an
exponential tail plus occasional spikes, covering everything between air
arrival and the driver-level timestamp.  Propagation is a deterministic
sub-microsecond constant; the shared advertising channel loses frames at a
configured rate and destructively on time overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cheepsync.timebase import MICROSECOND, MILLISECOND, round_half_even

# transmitter defaults: measured Gaussian, mean 0.201829 us, var 5.19537e-7 us^2
DEFAULT_TX_MEAN_NS = 201.829
DEFAULT_TX_VARIANCE_US2 = 5.19537e-07

DEFAULT_RX_BASE_NS = MILLISECOND
DEFAULT_RX_TAIL_MEAN_NS = 1_200 * MICROSECOND
DEFAULT_RX_SPIKE_PROB = 0.02
DEFAULT_RX_SPIKE_EXTRA_NS = 5 * MILLISECOND

DEFAULT_PROPAGATION_NS = 500  # fixed, < 1 us for sub-300 m links


@dataclass
class TxDelayModel:
    """Gaussian send+access+transmission delay, clamped non-negative."""

    mean_ns: float = DEFAULT_TX_MEAN_NS
    variance_us2: float = DEFAULT_TX_VARIANCE_US2
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.mean_ns < 0 or self.variance_us2 < 0:
            raise ValueError("mean and variance must be non-negative")
        self._rng = np.random.default_rng(self.rng_seed)

    @property
    def sigma_ns(self) -> float:
        return float(np.sqrt(self.variance_us2)) * MICROSECOND

    def sample_ns(self) -> float:
        """One delay draw; negative draws are resampled."""
        if self.variance_us2 == 0.0:
            return self.mean_ns
        while True:
            value = self._rng.normal(self.mean_ns, self.sigma_ns)
            if value >= 0.0:
                return value


@dataclass
class RxLatencyModel:
    """Receiver-side delivery latency: base + Exp(tail) + Bernoulli spike.

    Defaults are calibrated to the multi-millisecond application-layer
    delivery scale; study scenarios override them with the much smaller
    driver-level timestamping latencies (see the bundled configs).
    """

    base_ns: int = DEFAULT_RX_BASE_NS
    tail_mean_ns: float = DEFAULT_RX_TAIL_MEAN_NS
    spike_prob: float = DEFAULT_RX_SPIKE_PROB
    spike_extra_ns: float = DEFAULT_RX_SPIKE_EXTRA_NS
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.base_ns < 0 or self.tail_mean_ns < 0 or self.spike_extra_ns < 0:
            raise ValueError("latency components must be non-negative")
        if not 0.0 <= self.spike_prob <= 1.0:
            raise ValueError("spike_prob must be in [0, 1]")
        self._rng = np.random.default_rng(self.rng_seed)

    @property
    def mean_ns(self) -> float:
        """Model mean, the constant a calibrated pipeline subtracts out."""
        return self.base_ns + self.tail_mean_ns + self.spike_prob * self.spike_extra_ns

    def sample_ns(self) -> int:
        value = float(self.base_ns)
        if self.tail_mean_ns:
            value += self._rng.exponential(self.tail_mean_ns)
        if self.spike_prob and self._rng.random() < self.spike_prob:
            value += self._rng.exponential(self.spike_extra_ns) if self.spike_extra_ns else 0.0
        return round_half_even(value)


@dataclass
class Delivered:
    delay_ns: int


class Lost:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Lost()"


LOST = Lost()


@dataclass
class ChannelModel:
    """Shared advertising channel: fixed propagation, erasures, collisions."""

    propagation_ns: int = DEFAULT_PROPAGATION_NS
    loss_prob: float = 0.0
    collisions_enabled: bool = True
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.propagation_ns < 0:
            raise ValueError("propagation must be non-negative")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")
        self._rng = np.random.default_rng(self.rng_seed)

    def transmit_outcome(self, overlapping: bool = False):
        """Channel verdict for one transmission attempt.

        Overlapping frames are destroyed pairwise when collisions are
        enabled; surviving frames are erased with ``loss_prob`` and
        otherwise delivered after the propagation delay.
        """
        if overlapping and self.collisions_enabled:
            return LOST
        if self.loss_prob and self._rng.random() < self.loss_prob:
            return LOST
        return Delivered(self.propagation_ns)
