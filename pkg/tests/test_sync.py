import math
import random

import numpy as np
import pytest

from cheepsync.sync import (
    BeaconMismatch,
    CounterRegression,
    DegenerateAbscissa,
    InsufficientPoints,
    RegistryParseError,
    RegistryRecord,
    SkewEstimate,
    SyncPoint,
    SyncPointStore,
    beacon_to_global,
    estimate_skew,
    export_registry,
    import_registry,
    receiver_offset,
)
from cheepsync.timebase import MICROSECOND, MILLISECOND, SECOND


def ols_oracle(ts, os_):
    """Textbook centered normal equations, straight floats."""
    n = len(ts)
    tbar = sum(ts) / n
    obar = sum(os_) / n
    num = sum((t - tbar) * (o - obar) for t, o in zip(ts, os_))
    den = sum((t - tbar) ** 2 for t in ts)
    k = num / den
    return k, obar - k * tbar


def points_from(ts, os_):
    return [
        SyncPoint(beacon_id="b", beacon_elapsed_ns=t, receiver_wall_ns=t + o)
        for t, o in zip(ts, os_)
    ]


class TestEstimateSkew:
    def test_exact_line_recovery(self):
        ts = [i * SECOND for i in range(50)]
        os_ = [10 * MILLISECOND + int(1e-4 * t) for t in ts]
        est = estimate_skew(points_from(ts, os_))
        assert est.k == pytest.approx(1e-4, rel=1e-12)
        assert est.offset0_ns == pytest.approx(10 * MILLISECOND, rel=1e-12)
        assert est.rms_residual_ns == pytest.approx(0.0, abs=1e-6)

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(17)
        ts = [i * 100 * MILLISECOND for i in range(100)]
        noise = rng.normal(0, 100, size=100)  # small: the 5*rms trim stays idle
        os_ = [5 * MILLISECOND + int(round(2e-5 * t + e)) for t, e in zip(ts, noise)]
        est = estimate_skew(points_from(ts, os_))
        k_ref, off_ref = ols_oracle(ts, os_)
        assert est.k == pytest.approx(k_ref, rel=1e-12)
        assert est.offset0_ns == pytest.approx(off_ref, rel=1e-12)

    def test_two_points_finite_difference(self):
        ts = [0, 10 * SECOND]
        os_ = [MILLISECOND, MILLISECOND + 30 * MICROSECOND]
        est = estimate_skew(points_from(ts, os_))
        assert est.k == pytest.approx((os_[1] - os_[0]) / (ts[1] - ts[0]), rel=1e-12)

    def test_insufficient_points(self):
        with pytest.raises(InsufficientPoints):
            estimate_skew(points_from([0], [0]))

    def test_degenerate_abscissa(self):
        with pytest.raises(DegenerateAbscissa):
            estimate_skew(points_from([5, 5, 5], [1, 2, 3]))

    def test_skew_recovery_without_noise(self):
        # +50 ppm / -50 ppm injected, exact data: recovered well inside 0.01 ppm
        for ppm in (50.0, -50.0):
            ts = [i * SECOND for i in range(100)]
            os_ = [int(round(ppm * 1e-6 * t)) for t in ts]
            est = estimate_skew(points_from(ts, os_))
            assert abs(est.k - ppm * 1e-6) < 0.01e-6

    def test_constant_shift_moves_offset0_only(self):
        rng = np.random.default_rng(3)
        ts = [i * 100 * MILLISECOND for i in range(64)]
        os_ = [int(round(1e-5 * t + e)) for t, e in zip(ts, rng.normal(0, 500, 64))]
        base = estimate_skew(points_from(ts, os_))
        shift = 7 * MILLISECOND
        shifted = estimate_skew(points_from(ts, [o + shift for o in os_]))
        assert shifted.k == base.k  # integer moments cancel the shift exactly
        assert shifted.offset0_ns == pytest.approx(base.offset0_ns + shift, rel=1e-12)

    def test_trim_drops_latency_spike(self):
        ts = [i * 100 * MILLISECOND for i in range(64)]
        os_ = [MILLISECOND] * 64
        os_[40] += 40 * MILLISECOND  # one wild spike
        est = estimate_skew(points_from(ts, os_))
        assert est.window_len == 63
        assert abs(est.k) < 1e-9
        assert est.offset0_ns == pytest.approx(MILLISECOND, rel=1e-9)

    def test_implausible_skew_rejected(self):
        ts = [0, SECOND]
        os_ = [0, SECOND // 10]  # slope 0.1
        with pytest.raises(ValueError, match="implausible"):
            estimate_skew(points_from(ts, os_))


class TestBeaconToGlobal:
    def test_identity_mapping(self):
        est = SkewEstimate(k=0.0, offset0_ns=0.0, window_len=2, rms_residual_ns=0.0)
        assert beacon_to_global(est, 123_456_789) == 123_456_789

    def test_arithmetic(self):
        est = SkewEstimate(k=1e-4, offset0_ns=10 * MILLISECOND, window_len=2, rms_residual_ns=0.0)
        assert beacon_to_global(est, 10 * SECOND) == 10 * SECOND + 10 * MILLISECOND + MILLISECOND


class TestSyncPointStore:
    def test_first_point_is_origin(self):
        store = SyncPointStore()
        p = store.add_sync_point("b", counter=77, prev_tx_delay_us=3, matched_ts_ns=10)
        assert p.beacon_elapsed_ns == 0

    def test_counter_product(self):
        store = SyncPointStore()
        store.add_sync_point("b", counter=0, prev_tx_delay_us=0, matched_ts_ns=0)
        p = store.add_sync_point("b", counter=10, prev_tx_delay_us=0, matched_ts_ns=0)
        assert p.beacon_elapsed_ns == SECOND

    def test_rollover_delta(self):
        store = SyncPointStore()
        store.add_sync_point("b", counter=(1 << 24) - 2, prev_tx_delay_us=0, matched_ts_ns=0)
        p = store.add_sync_point("b", counter=3, prev_tx_delay_us=0, matched_ts_ns=0)
        assert p.beacon_elapsed_ns == 500 * MILLISECOND

    def test_prev_delay_compensation(self):
        store = SyncPointStore()
        store.add_sync_point("b", counter=0, prev_tx_delay_us=0, matched_ts_ns=0)
        p = store.add_sync_point("b", counter=1, prev_tx_delay_us=2, matched_ts_ns=0)
        assert p.beacon_elapsed_ns == 100 * MILLISECOND - 2 * MICROSECOND

    def test_counter_regression_detected(self):
        # a 255 us delay jump exceeds one 200 us interval: elapsed would reverse
        store = SyncPointStore(interval_ns=200 * MICROSECOND)
        store.add_sync_point("b", counter=0, prev_tx_delay_us=0, matched_ts_ns=0)
        with pytest.raises(CounterRegression):
            store.add_sync_point("b", counter=1, prev_tx_delay_us=255, matched_ts_ns=0)

    def test_window_eviction(self):
        store = SyncPointStore(window=4)
        for i in range(6):
            store.add_sync_point("b", counter=i, prev_tx_delay_us=0, matched_ts_ns=i)
        pts = list(store.points("b"))
        assert len(pts) == 4
        assert pts[0].beacon_elapsed_ns == 2 * 100 * MILLISECOND

    def test_elapsed_monotone_per_beacon(self):
        store = SyncPointStore()
        rng = random.Random(9)
        counter = 0
        last = -1
        for _ in range(500):
            counter = (counter + rng.randint(1, 4)) % (1 << 24)
            p = store.add_sync_point("b", counter, rng.randint(0, 5), matched_ts_ns=0)
            assert p.beacon_elapsed_ns >= last
            last = p.beacon_elapsed_ns


class TestReceiverOffset:
    def rec(self, counter, wall, k=1e-5, beacon="b", receiver="r"):
        return RegistryRecord(beacon, counter, receiver, wall, k)

    def test_identical_observations(self):
        a = self.rec(100, 5 * SECOND)
        assert receiver_offset(a, self.rec(100, 5 * SECOND)) == 0

    def test_pure_phone_offset(self):
        a = self.rec(100, 5 * SECOND + 2 * MILLISECOND)
        b = self.rec(100, 5 * SECOND)
        assert receiver_offset(a, b) == 2 * MILLISECOND

    def test_elapsed_conversion(self):
        # b reads 300 counters (30 s) later; both clocks ideal, k = 0
        a = self.rec(0, 10 * SECOND, k=0.0)
        b = self.rec(300, 40 * SECOND, k=0.0)
        assert receiver_offset(a, b) == 0

    def test_skew_scales_elapsed(self):
        a = self.rec(0, 10 * SECOND, k=5e-5)
        b = self.rec(300, 40 * SECOND + round(30 * SECOND * 5e-5), k=5e-5)
        assert receiver_offset(a, b) == 0

    def test_antisymmetry(self):
        rng = random.Random(21)
        for _ in range(200):
            a = self.rec(rng.randrange(1 << 24), rng.randrange(10**14), k=rng.uniform(-1e-4, 1e-4))
            b = self.rec(rng.randrange(1 << 24), rng.randrange(10**14), k=a.k)
            if abs(counter_delta := (b.beacon_counter - a.beacon_counter) % (1 << 24)) == (1 << 23):
                continue  # half-span delta has no unique sign
            assert receiver_offset(a, b) == -receiver_offset(b, a)

    def test_signed_delta_through_rollover(self):
        a = self.rec((1 << 24) - 10, 100 * SECOND, k=0.0)
        b = self.rec(10, 102 * SECOND, k=0.0)  # 20 counters after a, wrapped
        assert receiver_offset(a, b) == -2 * SECOND + 20 * 100 * MILLISECOND

    def test_beacon_mismatch(self):
        a = RegistryRecord("b1", 0, "r1", 0, 0.0)
        b = RegistryRecord("b2", 0, "r2", 0, 0.0)
        with pytest.raises(BeaconMismatch):
            receiver_offset(a, b)


class TestRegistryFormat:
    def random_records(self, n, seed=5):
        rng = random.Random(seed)
        return [
            RegistryRecord(
                beacon_id=f"beacon-{rng.randrange(16)}",
                beacon_counter=rng.randrange(1 << 24),
                receiver_id=f"rx {rng.randrange(4)}",
                receiver_wall_ns=rng.randrange(10**18),
                k=rng.uniform(-1e-3, 1e-3),
            )
            for _ in range(n)
        ]

    def test_round_trip_1000(self):
        records = self.random_records(1000)
        assert import_registry(export_registry(records)) == records

    def test_empty_round_trip(self):
        assert import_registry(export_registry([])) == []

    def test_malformed_line_number(self):
        text = export_registry(self.random_records(5))
        lines = text.splitlines()
        lines[2] = lines[2].replace("\t", " ", 1)  # break field count on line 3
        with pytest.raises(RegistryParseError) as err:
            import_registry("\n".join(lines) + "\n")
        assert err.value.line == 3

    def test_bad_header(self):
        with pytest.raises(RegistryParseError) as err:
            import_registry("not a registry\n")
        assert err.value.line == 1

    def test_non_numeric_field(self):
        text = export_registry(self.random_records(2))
        broken = text.replace("\n", "\nb\tx\tr\t0\t0.0\n", 1)
        with pytest.raises(RegistryParseError):
            import_registry(broken)
