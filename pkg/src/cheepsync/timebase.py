"""Simulated clocks on an integer-nanosecond timeline.

All instants and durations in this package are plain Python ints counting
nanoseconds (instants since the simulation epoch, durations signed).  Rate
errors (ppm) are applied in exact rational arithmetic and rounded to the
nearest nanosecond (ties to even), so clock sequences replay identically on
any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

NANOSECOND = 1
MICROSECOND = 1_000
MILLISECOND = 1_000_000
SECOND = 1_000_000_000

MAX_ABS_SKEW_PPM = 10_000.0


class InvalidWidth(ValueError):
    """Counter width outside [1, 64]."""


class InvalidCount(ValueError):
    """Counter value does not fit the configured width."""


def round_half_even(x: float) -> int:
    """Round a float to the nearest integer, ties to even (IEEE default)."""
    return int(np.rint(x))


def _round_fraction(f: Fraction) -> int:
    q, r = divmod(f.numerator, f.denominator)
    twice = 2 * r
    if twice > f.denominator or (twice == f.denominator and q % 2):
        q += 1
    return q


def counter_capacity(width_bits: int, interval_ns: int) -> int:
    """Total time span representable by a wrapping interval counter.

    A ``width_bits``-wide counter incremented every ``interval_ns`` covers
    ``2**width_bits * interval_ns`` before rolling over (e.g. 24 bits at
    100 ms is about 19 days).
    """
    if not 1 <= width_bits <= 64:
        raise InvalidWidth(f"width_bits must be in [1, 64], got {width_bits}")
    if interval_ns <= 0:
        raise ValueError(f"interval must be positive, got {interval_ns}")
    return (1 << width_bits) * interval_ns


def counter_elapsed(prev_count: int, curr_count: int, width_bits: int) -> int:
    """Intervals elapsed between two counter readings, resolving one rollover.

    Contract: at most one rollover may have occurred between the readings;
    more than that is indistinguishable (the counter span must be revisited
    within its capacity, about 19 days at the default configuration).
    """
    if not 1 <= width_bits <= 64:
        raise InvalidWidth(f"width_bits must be in [1, 64], got {width_bits}")
    span = 1 << width_bits
    if not 0 <= prev_count < span:
        raise InvalidCount(f"prev_count {prev_count} out of range for width {width_bits}")
    if not 0 <= curr_count < span:
        raise InvalidCount(f"curr_count {curr_count} out of range for width {width_bits}")
    return (curr_count - prev_count) % span


@dataclass
class OscillatorModel:
    """Frequency error and per-tick jitter of a free-running oscillator.

    ``skew_ppm`` is the constant deviation from nominal rate; ``jitter_sigma_ns``
    is white Gaussian noise added independently to every tick period.  Equal
    seeds give identical tick sequences.
    """

    skew_ppm: float = 0.0
    jitter_sigma_ns: int = 0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if abs(self.skew_ppm) >= MAX_ABS_SKEW_PPM:
            raise ValueError(f"|skew_ppm| must be < {MAX_ABS_SKEW_PPM}, got {self.skew_ppm}")
        if self.jitter_sigma_ns < 0:
            raise ValueError("jitter_sigma_ns must be non-negative")

    def rate(self, interval_ns: int) -> Fraction:
        """True duration of one nominal ``interval_ns`` period, exact."""
        return Fraction(interval_ns) * (1 + Fraction(self.skew_ppm) / 1_000_000)


@dataclass
class CounterClock:
    """A beacon's wrapping interval-timer counter under an oscillator model.

    The counter increments once per tick; true tick times follow
    ``origin + i * interval * (1 + skew_ppm * 1e-6) + cumulative jitter``,
    with the deterministic part accumulated exactly so rounding never drifts.
    """

    width_bits: int = 24
    interval_ns: int = 100 * MILLISECOND
    count: int = 0
    oscillator: OscillatorModel = field(default_factory=OscillatorModel)
    origin_ns: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.width_bits <= 64:
            raise InvalidWidth(f"width_bits must be in [1, 64], got {self.width_bits}")
        if self.interval_ns <= 0:
            raise ValueError("interval_ns must be positive")
        if not 0 <= self.count < (1 << self.width_bits):
            raise InvalidCount(f"count {self.count} out of range for width {self.width_bits}")
        self._rng = np.random.default_rng(self.oscillator.rng_seed)
        self._rate = self.oscillator.rate(self.interval_ns)
        self._ticks = 0
        self._jitter_acc = 0
        self._next_ns = self._schedule(1)

    def _schedule(self, tick_index: int) -> int:
        nominal = _round_fraction(self._rate * tick_index)
        if self.oscillator.jitter_sigma_ns:
            self._jitter_acc += round_half_even(
                self._rng.normal(0.0, self.oscillator.jitter_sigma_ns)
            )
        return self.origin_ns + nominal + self._jitter_acc

    @property
    def capacity_ns(self) -> int:
        return counter_capacity(self.width_bits, self.interval_ns)

    @property
    def next_tick_ns(self) -> int:
        """True time of the next scheduled tick."""
        return self._next_ns

    def tick(self, now_true_ns: int) -> int:
        """Advance the counter at its scheduled tick time.

        ``now_true_ns`` must be the scheduled tick time (owner-driven
        simulation contract).  Returns the next scheduled tick time.
        """
        self.count = (self.count + 1) % (1 << self.width_bits)
        self._ticks += 1
        self._next_ns = self._schedule(self._ticks + 1)
        return self._next_ns


@dataclass
class DisciplinedWallClock:
    """A receiver wall clock periodically snapped toward true time.

    Discipline events occur every ``ntp_period_ns`` (0 disables them); each
    snap leaves a Gaussian residual ``N(ntp_bias_ns, ntp_residual_sigma_ns)``.
    Between snaps the reading drifts linearly at ``skew_ppm``.  ``ntp_bias_ns``
    models a constant per-device offset of the reference (distinct time
    servers/paths); it is what makes two disciplined receivers disagree on
    average.
    """

    skew_ppm: float = 0.0
    ntp_period_ns: int = 30 * SECOND
    ntp_residual_sigma_ns: int = MILLISECOND
    ntp_bias_ns: int = 0
    last_discipline_ns: int = 0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if abs(self.skew_ppm) >= MAX_ABS_SKEW_PPM:
            raise ValueError(f"|skew_ppm| must be < {MAX_ABS_SKEW_PPM}")
        if self.ntp_period_ns < 0 or self.ntp_residual_sigma_ns < 0:
            raise ValueError("NTP period and residual sigma must be non-negative")
        self._rng = np.random.default_rng(self.rng_seed)
        self._residual_ns = self._draw_residual()

    def _draw_residual(self) -> int:
        if self.ntp_residual_sigma_ns == 0:
            return self.ntp_bias_ns
        return round_half_even(self._rng.normal(self.ntp_bias_ns, self.ntp_residual_sigma_ns))

    def read(self, now_true_ns: int) -> int:
        """Wall-clock value at a true instant, applying due discipline first."""
        if now_true_ns < self.last_discipline_ns:
            raise ValueError("clock read before last discipline event")
        if self.ntp_period_ns:
            while now_true_ns - self.last_discipline_ns >= self.ntp_period_ns:
                self.last_discipline_ns += self.ntp_period_ns
                self._residual_ns = self._draw_residual()
        drift = round_half_even(
            (now_true_ns - self.last_discipline_ns) * self.skew_ppm * 1e-6
        )
        return now_true_ns + self._residual_ns + drift
