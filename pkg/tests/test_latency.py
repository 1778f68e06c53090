import numpy as np
import pytest
from scipy import stats

from cheepsync.latency import (
    LOST,
    ChannelModel,
    Delivered,
    RxLatencyModel,
    TxDelayModel,
)
from cheepsync.timebase import MICROSECOND, MILLISECOND


class TestTxDelayModel:
    def test_degenerate_gaussian(self):
        model = TxDelayModel(mean_ns=500.0, variance_us2=0.0)
        assert all(model.sample_ns() == 500.0 for _ in range(100))

    def test_default_mean_matches_measured_value(self):
        model = TxDelayModel(rng_seed=42)
        samples = np.array([model.sample_ns() for _ in range(100_000)])
        assert 0.199 * MICROSECOND <= samples.mean() <= 0.205 * MICROSECOND

    def test_default_variance_within_ten_percent(self):
        model = TxDelayModel(rng_seed=42)
        samples = np.array([model.sample_ns() for _ in range(100_000)])
        var_us2 = samples.var(ddof=1) / MICROSECOND**2
        assert abs(var_us2 - 5.19537e-07) <= 0.1 * 5.19537e-07

    def test_samples_non_negative(self):
        # mean near zero forces the resampling path
        model = TxDelayModel(mean_ns=0.5, variance_us2=1e-5, rng_seed=3)
        assert all(model.sample_ns() >= 0.0 for _ in range(20_000))

    def test_reproducible_stream(self):
        a = TxDelayModel(rng_seed=7)
        b = TxDelayModel(rng_seed=7)
        assert [a.sample_ns() for _ in range(1000)] == [b.sample_ns() for _ in range(1000)]

    def test_kolmogorov_smirnov_against_configured_gaussian(self):
        model = TxDelayModel(rng_seed=11)
        samples = np.array([model.sample_ns() for _ in range(10_000)])
        result = stats.kstest(samples, "norm", args=(model.mean_ns, model.sigma_ns))
        assert result.pvalue > 0.01


class TestRxLatencyModel:
    def test_deterministic_limit(self):
        model = RxLatencyModel(base_ns=MILLISECOND, tail_mean_ns=0.0, spike_prob=0.0)
        assert all(model.sample_ns() == MILLISECOND for _ in range(100))

    def test_forced_spike(self):
        model = RxLatencyModel(
            base_ns=MILLISECOND, tail_mean_ns=0.0, spike_prob=1.0, spike_extra_ns=0.0
        )
        assert all(model.sample_ns() == MILLISECOND for _ in range(100))

    def test_default_tail_probability(self):
        model = RxLatencyModel(rng_seed=5)
        samples = np.array([model.sample_ns() for _ in range(100_000)])
        p_over_8ms = (samples > 8 * MILLISECOND).mean()
        assert 0.0 < p_over_8ms < 0.1

    def test_samples_non_negative(self):
        model = RxLatencyModel(rng_seed=1)
        assert min(model.sample_ns() for _ in range(50_000)) >= 0

    def test_reproducible_stream(self):
        a = RxLatencyModel(rng_seed=9)
        b = RxLatencyModel(rng_seed=9)
        assert [a.sample_ns() for _ in range(1000)] == [b.sample_ns() for _ in range(1000)]

    def test_model_mean(self):
        model = RxLatencyModel(base_ns=100, tail_mean_ns=200.0, spike_prob=0.5, spike_extra_ns=40.0)
        assert model.mean_ns == 100 + 200 + 20

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            RxLatencyModel(spike_prob=1.5)
        with pytest.raises(ValueError):
            RxLatencyModel(base_ns=-1)


class TestChannelModel:
    def test_clean_channel(self):
        channel = ChannelModel(loss_prob=0.0)
        outcome = channel.transmit_outcome(overlapping=False)
        assert outcome == Delivered(500)

    def test_collision_is_destructive(self):
        channel = ChannelModel(loss_prob=0.0, collisions_enabled=True)
        assert channel.transmit_outcome(overlapping=True) is LOST

    def test_collisions_disabled(self):
        channel = ChannelModel(loss_prob=0.0, collisions_enabled=False)
        assert channel.transmit_outcome(overlapping=True) == Delivered(500)

    def test_dead_channel(self):
        channel = ChannelModel(loss_prob=1.0)
        assert all(channel.transmit_outcome() is LOST for _ in range(100))

    def test_loss_rate(self):
        channel = ChannelModel(loss_prob=0.25, rng_seed=13)
        losses = sum(channel.transmit_outcome() is LOST for _ in range(20_000))
        assert 0.23 < losses / 20_000 < 0.27
