import itertools

import pytest

from cheepsync import packet
from cheepsync.latency import RxLatencyModel, TxDelayModel
from cheepsync.node import (
    BeaconNode,
    EmptyQueue,
    RawReception,
    ReceiverNode,
    match_timestamp,
)
from cheepsync.timebase import (
    MICROSECOND,
    MILLISECOND,
    CounterClock,
    DisciplinedWallClock,
    OscillatorModel,
    counter_elapsed,
)


def perfect_receiver(rid="rx"):
    return ReceiverNode(
        id=rid,
        wall=DisciplinedWallClock(ntp_residual_sigma_ns=0),
        rx_model=RxLatencyModel(base_ns=0, tail_mean_ns=0.0, spike_prob=0.0),
    )


def match_oracle(entries, interval_ns, width_bits=24):
    """Exhaustive candidate/prior evaluation, independently coded."""
    newest = entries[-1]
    priors = [e for e in entries[:-1] if e.adv_a == newest.adv_a]
    if not priors:
        return newest.lowlevel_ts_ns
    scores = {}
    for cand, prior in itertools.product(entries, priors):
        expected = counter_elapsed(prior.counter, newest.counter, width_bits) * interval_ns
        diff = cand.lowlevel_ts_ns - prior.lowlevel_ts_ns
        scores[cand.lowlevel_ts_ns] = scores.get(cand.lowlevel_ts_ns, 0) + abs(diff - expected)
    return min(scores.items(), key=lambda kv: (kv[1], kv[0]))[0]


def reception(ts, adv_a=b"\x00" * 6, counter=0, true_rx=None):
    return RawReception(
        lowlevel_ts_ns=ts,
        frame_bytes=b"",
        true_rx_time_ns=ts if true_rx is None else true_rx,
        adv_a=adv_a,
        counter=counter,
    )


class TestBeaconAdvertise:
    def test_first_frame_carries_zero_prev_delay(self):
        beacon = BeaconNode(id="b0", adv_a=bytes(6))
        event = beacon.advertise(0)
        payload = packet.extract_payload(packet.parse_frame(event.frame))
        assert payload.prev_tx_delay == 0

    def test_submicrosecond_delay_rounds_to_zero(self):
        # the measured 0.2 us mean rounds to 0 whole microseconds
        beacon = BeaconNode(
            id="b0", adv_a=bytes(6), tx_model=TxDelayModel(mean_ns=200.0, variance_us2=0.0)
        )
        beacon.advertise(0)
        event = beacon.advertise(100 * MILLISECOND)
        payload = packet.extract_payload(packet.parse_frame(event.frame))
        assert payload.prev_tx_delay == 0

    def test_prev_delay_tracks_previous_transmission(self):
        beacon = BeaconNode(
            id="b0",
            adv_a=bytes(6),
            tx_model=TxDelayModel(mean_ns=3 * MICROSECOND, variance_us2=1e-2, rng_seed=5),
        )
        delays = []
        carried = []
        for i in range(50):
            event = beacon.advertise(i * 100 * MILLISECOND)
            payload = packet.extract_payload(packet.parse_frame(event.frame))
            carried.append(payload.prev_tx_delay)
            delays.append(event.tx_delay_ns)
        for i in range(1, 50):
            assert carried[i] == min(255, round(delays[i - 1] / MICROSECOND))

    def test_saturates_at_255(self):
        beacon = BeaconNode(
            id="b0", adv_a=bytes(6), tx_model=TxDelayModel(mean_ns=MILLISECOND, variance_us2=0.0)
        )
        beacon.advertise(0)
        event = beacon.advertise(100 * MILLISECOND)
        payload = packet.extract_payload(packet.parse_frame(event.frame))
        assert payload.prev_tx_delay == 255

    def test_counter_advances_one_per_aligned_interval(self):
        clock = CounterClock()
        beacon = BeaconNode(id="b0", adv_a=bytes(6), clock=clock)
        counters = []
        now = 0
        for _ in range(5):
            counters.append(beacon.advertise(now).counter)
            now = clock.next_tick_ns
            clock.tick(now)
        assert counters == [0, 1, 2, 3, 4]

    def test_air_time_is_send_plus_delay(self):
        beacon = BeaconNode(
            id="b0", adv_a=bytes(6), tx_model=TxDelayModel(mean_ns=250.0, variance_us2=0.0)
        )
        event = beacon.advertise(10 * MILLISECOND)
        assert event.air_true_ns == 10 * MILLISECOND + 250


class TestReceiverIngest:
    def test_ideal_receiver(self):
        rx = perfect_receiver()
        frame = BeaconNode(id="b0", adv_a=bytes(6)).advertise(0).frame
        rec = rx.ingest(frame, arrival_true_ns=12345)
        assert rec.lowlevel_ts_ns == 12345

    def test_constant_latency_shift(self):
        rx = ReceiverNode(
            id="rx",
            wall=DisciplinedWallClock(ntp_residual_sigma_ns=0),
            rx_model=RxLatencyModel(base_ns=2 * MILLISECOND, tail_mean_ns=0.0, spike_prob=0.0),
        )
        frame = BeaconNode(id="b0", adv_a=bytes(6)).advertise(0).frame
        rec = rx.ingest(frame, arrival_true_ns=1000)
        assert rec.lowlevel_ts_ns == 1000 + 2 * MILLISECOND

    def test_queue_eviction_matches_ring_buffer_model(self):
        rx = perfect_receiver()
        frame = BeaconNode(id="b0", adv_a=bytes(6)).advertise(0).frame
        pushed = []
        for i in range(20):
            rx.ingest(frame, arrival_true_ns=i * 1000)
            pushed.append(i * 1000)
            expected = pushed[-8:]  # reference ring buffer: keep the newest 8
            assert [r.lowlevel_ts_ns for r in rx.raw_queue] == expected


class TestMatchTimestamp:
    def test_empty_queue(self):
        with pytest.raises(EmptyQueue):
            match_timestamp([], 100 * MILLISECOND)

    def test_single_entry_returns_own(self):
        assert match_timestamp([reception(777)], 100 * MILLISECOND) == 777

    def test_no_prior_for_beacon_returns_own(self):
        entries = [reception(100, adv_a=b"A" * 6), reception(250, adv_a=b"B" * 6)]
        assert match_timestamp(entries, 100 * MILLISECOND) == 250

    def test_perturbed_own_timestamp_loses_to_clean_candidate(self):
        ms = MILLISECOND
        a, b = b"A" * 6, b"B" * 6
        entries = [
            reception(0, adv_a=a, counter=0),
            reception(100 * ms, adv_a=a, counter=1),
            reception(200 * ms, adv_a=a, counter=2),
            reception(300 * ms + 500 * MICROSECOND, adv_a=b, counter=9),
            reception(305 * ms, adv_a=a, counter=3),  # +5 ms latency spike
        ]
        picked = match_timestamp(entries, 100 * ms)
        assert picked == 300 * ms + 500 * MICROSECOND
        assert picked == match_oracle(entries, 100 * ms)

    def test_clean_own_timestamp_wins(self):
        ms = MILLISECOND
        a, b = b"A" * 6, b"B" * 6
        entries = [
            reception(0, adv_a=a, counter=0),
            reception(42 * ms, adv_a=b, counter=7),
            reception(100 * ms, adv_a=a, counter=1),
            reception(200 * ms + 30 * MICROSECOND, adv_a=a, counter=2),
        ]
        picked = match_timestamp(entries, 100 * ms)
        assert picked == 200 * ms + 30 * MICROSECOND
        assert picked == match_oracle(entries, 100 * ms)

    def test_equidistant_candidates_take_earlier(self):
        ms = MILLISECOND
        a, b, c = b"A" * 6, b"B" * 6, b"C" * 6
        entries = [
            reception(0, adv_a=a, counter=0),
            reception(99 * ms, adv_a=b, counter=5),
            reception(101 * ms, adv_a=c, counter=6),
            reception(150 * ms, adv_a=a, counter=1),  # own is 50 ms off the grid
        ]
        assert match_timestamp(entries, 100 * ms) == 99 * ms

    def test_never_returns_absent_timestamp(self):
        import random

        rng = random.Random(4)
        for _ in range(300):
            entries = []
            count = {a: rng.randrange(50) for a in (b"A" * 6, b"B" * 6, b"C" * 6)}
            t = 0
            for _ in range(rng.randint(1, 8)):
                adv_a = rng.choice(list(count))
                t += rng.randint(1, 120 * MILLISECOND)
                count[adv_a] += rng.randint(0, 3)
                entries.append(reception(t, adv_a=adv_a, counter=count[adv_a]))
            picked = match_timestamp(entries, 100 * MILLISECOND)
            assert picked in {e.lowlevel_ts_ns for e in entries}
            assert picked == match_oracle(entries, 100 * MILLISECOND)

    def test_rollover_aware_expected_multiple(self):
        ms = MILLISECOND
        a = b"A" * 6
        entries = [
            reception(0, adv_a=a, counter=(1 << 24) - 1),
            reception(100 * ms, adv_a=a, counter=0),  # rollover between packets
        ]
        assert match_timestamp(entries, 100 * ms) == 100 * ms

    def test_zero_latency_matching_is_exact(self):
        # with no receiver latency and perfect clocks, the matched timestamp
        # equals the true arrival for every packet of a well-behaved beacon
        rx = perfect_receiver()
        beacon = BeaconNode(
            id="b0",
            adv_a=bytes(6),
            clock=CounterClock(),
            tx_model=TxDelayModel(mean_ns=0.0, variance_us2=0.0),
        )
        clock = beacon.clock
        now = 0
        for _ in range(30):
            event = beacon.advertise(now)
            rx.ingest(event.frame, event.air_true_ns)
            picked = match_timestamp(rx.raw_queue, 100 * MILLISECOND)
            assert picked - event.air_true_ns == 0
            now = clock.next_tick_ns
            clock.tick(now)

    def test_selected_timestamps_monotone(self):
        rx = ReceiverNode(
            id="rx",
            wall=DisciplinedWallClock(ntp_residual_sigma_ns=0),
            rx_model=RxLatencyModel(
                base_ns=50 * MICROSECOND, tail_mean_ns=200_000.0, spike_prob=0.0, rng_seed=2
            ),
        )
        beacon = BeaconNode(id="b0", adv_a=bytes(6))
        clock = beacon.clock
        now = 0
        picked = []
        for _ in range(200):
            event = beacon.advertise(now)
            rx.ingest(event.frame, event.air_true_ns)
            picked.append(match_timestamp(rx.raw_queue, 100 * MILLISECOND))
            now = clock.next_tick_ns
            clock.tick(now)
        assert picked == sorted(picked)
