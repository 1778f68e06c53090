import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cheepsync.timebase import (
    MICROSECOND,
    MILLISECOND,
    SECOND,
    CounterClock,
    DisciplinedWallClock,
    InvalidCount,
    InvalidWidth,
    OscillatorModel,
    counter_capacity,
    counter_elapsed,
)


def step_counter(prev, curr, width):
    """Oracle: walk the counter one increment at a time until it reads curr."""
    span = 1 << width
    c = prev
    steps = 0
    while c != curr:
        c += 1
        if c == span:
            c = 0
        steps += 1
        assert steps <= span, "oracle ran past a full span"
    return steps


class TestCounterCapacity:
    def test_paper_configuration_runs_19_days(self):
        cap = counter_capacity(24, 100 * MILLISECOND)
        assert cap == 16_777_216 * 100 * MILLISECOND
        assert cap == 1_677_721_600_000_000  # 1_677_721.6 s
        assert 19.0 < cap / (86_400 * SECOND) < 19.5

    def test_one_bit(self):
        assert counter_capacity(1, 100 * MILLISECOND) == 200 * MILLISECOND

    def test_sixteen_bit_fast_timer(self):
        assert counter_capacity(16, 200 * MICROSECOND) == 65_536 * 200 * MICROSECOND

    def test_doubles_per_extra_bit(self):
        for b in range(2, 65):
            assert counter_capacity(b, 777) == 2 * counter_capacity(b - 1, 777)

    @pytest.mark.parametrize("width", [0, -3, 65, 1000])
    def test_invalid_width(self, width):
        with pytest.raises(InvalidWidth):
            counter_capacity(width, MILLISECOND)

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            counter_capacity(8, 0)


class TestCounterElapsed:
    def test_identical_readings(self):
        assert counter_elapsed(5, 5, 24) == 0

    def test_rollover(self):
        assert counter_elapsed(16_777_213, 5, 24) == step_counter(16_777_213, 5, 24) == 8

    def test_full_span_no_rollover(self):
        assert counter_elapsed(0, 16_777_215, 24) == 16_777_215

    def test_out_of_range_counts(self):
        with pytest.raises(InvalidCount):
            counter_elapsed(1 << 24, 0, 24)
        with pytest.raises(InvalidCount):
            counter_elapsed(0, 1 << 24, 24)
        with pytest.raises(InvalidCount):
            counter_elapsed(-1, 0, 24)

    @given(
        prev=st.integers(min_value=0, max_value=255),
        curr=st.integers(min_value=0, max_value=255),
    )
    def test_matches_stepping_oracle_width8(self, prev, curr):
        assert counter_elapsed(prev, curr, 8) == step_counter(prev, curr, 8)

    def test_exhaustive_width6(self):
        for prev in range(64):
            for curr in range(64):
                assert counter_elapsed(prev, curr, 6) == step_counter(prev, curr, 6)


class TestCounterClock:
    def test_wraparound(self):
        clk = CounterClock(count=16_777_215)
        clk.tick(clk.next_tick_ns)
        assert clk.count == 0

    def test_ideal_oscillator_spacing(self):
        clk = CounterClock()
        assert clk.next_tick_ns == 100 * MILLISECOND
        nxt = clk.tick(clk.next_tick_ns)
        assert nxt == 200 * MILLISECOND

    def test_skewed_oscillator_spacing(self):
        # 100 ms * (1 + 50e-6) = 100.005 ms exactly
        clk = CounterClock(oscillator=OscillatorModel(skew_ppm=50.0))
        assert clk.next_tick_ns == 100_005_000

    def test_negative_skew_accumulates_exactly(self):
        clk = CounterClock(oscillator=OscillatorModel(skew_ppm=-50.0))
        last = 0
        for i in range(1, 1001):
            last = clk.tick(clk.next_tick_ns)
        # from-origin accumulation: no per-tick rounding drift
        assert last == round(1001 * 100 * MILLISECOND * (1 - 50e-6))

    def test_determinism_same_seed(self):
        osc = dict(skew_ppm=12.5, jitter_sigma_ns=300, rng_seed=99)
        a = CounterClock(oscillator=OscillatorModel(**osc))
        b = CounterClock(oscillator=OscillatorModel(**osc))
        seq_a = [a.tick(a.next_tick_ns) for _ in range(500)]
        seq_b = [b.tick(b.next_tick_ns) for _ in range(500)]
        assert seq_a == seq_b

    def test_different_seed_differs(self):
        a = CounterClock(oscillator=OscillatorModel(jitter_sigma_ns=300, rng_seed=1))
        b = CounterClock(oscillator=OscillatorModel(jitter_sigma_ns=300, rng_seed=2))
        assert [a.tick(a.next_tick_ns) for _ in range(50)] != [
            b.tick(b.next_tick_ns) for _ in range(50)
        ]

    def test_rejects_oversized_count(self):
        with pytest.raises(InvalidCount):
            CounterClock(width_bits=8, count=256)

    def test_rejects_extreme_skew(self):
        with pytest.raises(ValueError):
            OscillatorModel(skew_ppm=10_000.0)


class TestDisciplinedWallClock:
    def test_perfect_clock(self):
        clk = DisciplinedWallClock(ntp_residual_sigma_ns=0)
        for t in (0, 123, 10 * SECOND, 3 * 365 * 86_400 * SECOND):
            assert clk.read(t) == t

    def test_constant_residual_offset(self):
        # zero-sigma residual pinned via bias: a constant +0.5 ms offset
        clk = DisciplinedWallClock(ntp_residual_sigma_ns=0, ntp_bias_ns=500 * MICROSECOND)
        assert clk.read(10 * SECOND) == 10 * SECOND + 500 * MICROSECOND

    def test_skew_drift_since_discipline(self):
        # 30 s * 100 ppm = 3 ms of drift just before the next discipline
        clk = DisciplinedWallClock(skew_ppm=100.0, ntp_residual_sigma_ns=0)
        t = 30 * SECOND - 1
        assert clk.read(t) == t + round(t * 100e-6)

    def test_discipline_resets_drift(self):
        clk = DisciplinedWallClock(skew_ppm=100.0, ntp_residual_sigma_ns=0)
        t = 30 * SECOND
        assert clk.read(t) == t  # snapped exactly at the period boundary

    def test_residual_bounded_after_discipline(self):
        sigma = MILLISECOND
        clk = DisciplinedWallClock(ntp_residual_sigma_ns=sigma, rng_seed=7)
        for j in range(1, 200):
            t = j * clk.ntp_period_ns
            err = clk.read(t) - t
            assert abs(err) <= 6 * sigma

    def test_memoryless_reset(self):
        # error right after a discipline event does not depend on prior drift
        a = DisciplinedWallClock(skew_ppm=500.0, ntp_residual_sigma_ns=MILLISECOND, rng_seed=3)
        b = DisciplinedWallClock(skew_ppm=0.0, ntp_residual_sigma_ns=MILLISECOND, rng_seed=3)
        t = 30 * SECOND
        assert a.read(t) - t == b.read(t) - t

    def test_determinism(self):
        mk = lambda: DisciplinedWallClock(
            skew_ppm=4.0, ntp_residual_sigma_ns=MILLISECOND, rng_seed=123
        )
        a, b = mk(), mk()
        times = np.linspace(0, 600 * SECOND, 997).astype(int).tolist()
        assert [a.read(t) for t in times] == [b.read(t) for t in times]

    def test_disabled_discipline_drifts_forever(self):
        clk = DisciplinedWallClock(skew_ppm=10.0, ntp_period_ns=0, ntp_residual_sigma_ns=0)
        t = 10_000 * SECOND
        assert clk.read(t) == t + round(t * 10e-6)
