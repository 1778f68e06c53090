"""Beacon and listener state machines.

The beacon reads its interval counter when it initiates a send, measures the
actual send+access+transmission delay, and carries that measurement in the
*next* packet.  The listener timestamps receptions at the driver level,
keeps a small bounded queue of raw events, and picks the timestamp that best
fits the beacon's counter-implied cadence (the driver's event list mixes
events from every nearby advertiser, so the newest packet's own timestamp is
not always the best estimate of its arrival).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from cheepsync import packet
from cheepsync.latency import RxLatencyModel, TxDelayModel
from cheepsync.timebase import (
    MICROSECOND,
    MILLISECOND,
    CounterClock,
    DisciplinedWallClock,
    counter_elapsed,
    round_half_even,
)

RAW_QUEUE_CAPACITY = 8


class EmptyQueue(ValueError):
    pass


@dataclass
class TransmissionEvent:
    """One advertisement leaving a beacon."""

    beacon_id: str
    frame: bytes
    send_true_ns: int  # counter read / FIFO load instant
    air_true_ns: int   # send + access + transmission later
    counter: int
    tx_delay_ns: float


@dataclass
class BeaconNode:
    """A broadcast-only advertiser."""

    id: str
    adv_a: bytes
    clock: CounterClock = field(default_factory=CounterClock)
    tx_model: TxDelayModel = field(default_factory=TxDelayModel)
    adv_interval_ns: int = 100 * MILLISECOND
    short_name: str = "CHEEP"
    flags: int = packet.DEFAULT_FLAGS
    tx_power_dbm: int = -20  # metadata only
    pending_prev_delay_us: int = 0

    def advertise(self, now_true_ns: int) -> TransmissionEvent:
        """Emit one advertisement at the node's scheduled instant.

        The frame carries the counter value read at send initiation and the
        delay measured for the previous transmission; this transmission's
        own delay is rounded to whole microseconds (saturating at 255) and
        kept for the next frame.
        """
        tx_delay = self.tx_model.sample_ns()
        payload = packet.AdvertisementPayload(
            ts_counter=self.clock.count,
            prev_tx_delay=self.pending_prev_delay_us,
            short_name=self.short_name,
            flags=self.flags,
        )
        frame = packet.build_frame(payload, self.adv_a)
        self.pending_prev_delay_us = min(255, round_half_even(tx_delay / MICROSECOND))
        return TransmissionEvent(
            beacon_id=self.id,
            frame=frame,
            send_true_ns=now_true_ns,
            air_true_ns=now_true_ns + round_half_even(tx_delay),
            counter=payload.ts_counter,
            tx_delay_ns=tx_delay,
        )


@dataclass
class RawReception:
    """A driver-level reception event.

    ``true_rx_time_ns`` is simulation ground truth and must never feed the
    estimator; the estimator sees only the frame and ``lowlevel_ts_ns``.
    """

    lowlevel_ts_ns: int
    frame_bytes: bytes
    true_rx_time_ns: int
    adv_a: bytes = b""
    counter: int = 0
    prev_tx_delay: int = 0


@dataclass
class ReceiverNode:
    """A passive listener with a disciplined wall clock."""

    id: str
    wall: DisciplinedWallClock = field(default_factory=DisciplinedWallClock)
    rx_model: RxLatencyModel = field(default_factory=RxLatencyModel)
    queue_capacity: int = RAW_QUEUE_CAPACITY
    raw_queue: deque = field(init=False)

    def __post_init__(self) -> None:
        self.raw_queue = deque(maxlen=self.queue_capacity)

    def ingest(self, frame_bytes: bytes, arrival_true_ns: int) -> RawReception:
        """Record a delivered frame with its driver-level wall timestamp."""
        latency = self.rx_model.sample_ns()
        lowlevel = self.wall.read(arrival_true_ns + latency)
        frame = packet.parse_frame(frame_bytes)
        decoded = packet.extract_payload(frame)
        reception = RawReception(
            lowlevel_ts_ns=lowlevel,
            frame_bytes=bytes(frame_bytes),
            true_rx_time_ns=arrival_true_ns,
            adv_a=frame.adv_a,
            counter=decoded.ts_counter,
            prev_tx_delay=decoded.prev_tx_delay,
        )
        self.raw_queue.append(reception)  # deque drops the oldest when full
        return reception


def match_timestamp(
    queue,
    expected_interval_ns: int,
    width_bits: int = packet.COUNTER_BITS,
) -> int:
    """Best-fit driver timestamp for the newest queued packet.

    Every queued timestamp is a candidate.  Older receptions of the same
    beacon are the priors: for each candidate, sum over priors the deviation
    of (candidate - prior timestamp) from the counter-implied multiple of
    ``expected_interval_ns``.  The candidate with the least total deviation
    wins; ties go to the earlier timestamp.  With no prior for the beacon
    (a single-entry queue in particular) the newest packet keeps its own
    timestamp.
    """
    entries = list(queue)
    if not entries:
        raise EmptyQueue("no receptions queued")
    newest = entries[-1]
    priors = [e for e in entries[:-1] if e.adv_a == newest.adv_a]
    if not priors:
        return newest.lowlevel_ts_ns
    best_ts = newest.lowlevel_ts_ns
    best_score = None
    for cand in entries:
        score = 0
        for prior in priors:
            mult = counter_elapsed(prior.counter, newest.counter, width_bits)
            score += abs((cand.lowlevel_ts_ns - prior.lowlevel_ts_ns) - mult * expected_interval_ns)
        if (
            best_score is None
            or score < best_score
            or (score == best_score and cand.lowlevel_ts_ns < best_ts)
        ):
            best_score = score
            best_ts = cand.lowlevel_ts_ns
    return best_ts
