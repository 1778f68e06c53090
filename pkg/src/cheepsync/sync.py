"""Skew estimation and multi-receiver synchronization.

A sync point pairs the beacon's elapsed time (counter deltas times the
interval, rollover-resolved, relative to the first observation) with the
receiver's matched wall timestamp.  The offset of a point is wall minus
elapsed; a windowed least-squares fit of offset against elapsed yields the
skew ``k`` and intercept ``offset0`` that map beacon time onto the
receiver's wall timeline.  Fits accumulate exact integer moments, so results
are identical on every platform and to the simulation kernel.

Receivers share (beacon counter, wall time, k) records through a
line-oriented registry file; two receivers that saw the same beacon can then
compute their mutual clock offset without ever talking to each other.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from cheepsync.timebase import MICROSECOND, MILLISECOND, counter_elapsed, round_half_even

DEFAULT_WINDOW = 512
TRIM_FACTOR = 5.0
MAX_PLAUSIBLE_SKEW = 0.01


class InsufficientPoints(ValueError):
    pass


class DegenerateAbscissa(ValueError):
    pass


class CounterRegression(ValueError):
    pass


class BeaconMismatch(ValueError):
    pass


class RegistryParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class SyncPoint:
    beacon_id: str
    beacon_elapsed_ns: int
    receiver_wall_ns: int
    prev_tx_delay_ns: int = 0

    @property
    def offset_ns(self) -> int:
        return self.receiver_wall_ns - self.beacon_elapsed_ns


@dataclass
class SkewEstimate:
    """Result of a windowed offset-vs-elapsed regression.

    ``k`` is dimensionless (ppm-scale); ``offset0_ns`` the intercept at
    elapsed zero; ``rms_residual_ns`` the fit quality over the points kept
    after outlier trimming.
    """

    k: float
    offset0_ns: float
    window_len: int
    rms_residual_ns: float

    def __post_init__(self) -> None:
        if not abs(self.k) < MAX_PLAUSIBLE_SKEW:
            raise ValueError(f"implausible skew {self.k} (|k| must be < {MAX_PLAUSIBLE_SKEW})")
        if self.window_len < 2:
            raise ValueError("a slope needs at least 2 points")


def _ols(n: int, st: int, so: int, stt: int, sto: int):
    den = n * stt - st * st
    if den <= 0:
        raise DegenerateAbscissa("all beacon elapsed values are equal")
    k = float(n * sto - st * so) / float(den)
    off0 = (float(so) - k * float(st)) / n
    return k, off0


def estimate_skew(points, trim_factor: float = TRIM_FACTOR) -> SkewEstimate:
    """Least-squares skew/offset over a window of sync points.

    Points whose residual against the first fit exceeds ``trim_factor``
    times the rms are excluded once and the fit recomputed (latency spikes
    from the receiver tail would otherwise drag the slope).
    """
    pts = list(points)
    if len(pts) < 2:
        raise InsufficientPoints(f"need at least 2 sync points, got {len(pts)}")
    ts = [p.beacon_elapsed_ns for p in pts]
    os_ = [p.offset_ns for p in pts]
    n = len(pts)
    st = sum(ts)
    so = sum(os_)
    stt = sum(t * t for t in ts)
    sto = sum(t * o for t, o in zip(ts, os_))
    k, off0 = _ols(n, st, so, stt, sto)
    resid = [o - (off0 + k * t) for t, o in zip(ts, os_)]
    rms = math.sqrt(sum(r * r for r in resid) / n)
    kept = n
    thresh = trim_factor * rms
    keep = [abs(r) <= thresh for r in resid]
    if 2 <= sum(keep) < n:
        kn = sum(keep)
        kst = sum(t for t, m in zip(ts, keep) if m)
        kso = sum(o for o, m in zip(os_, keep) if m)
        kstt = sum(t * t for t, m in zip(ts, keep) if m)
        ksto = sum(t * o for t, o, m in zip(ts, os_, keep) if m)
        try:
            k, off0 = _ols(kn, kst, kso, kstt, ksto)
        except DegenerateAbscissa:
            pass  # trimmed set collapsed; keep the first fit
        else:
            ssr = sum(
                (o - (off0 + k * t)) ** 2 for t, o, m in zip(ts, os_, keep) if m
            )
            rms = math.sqrt(ssr / kn)
            kept = kn
    return SkewEstimate(k=k, offset0_ns=off0, window_len=kept, rms_residual_ns=rms)


def beacon_to_global(estimate: SkewEstimate, beacon_elapsed_ns: int) -> int:
    """Map a beacon elapsed time onto the receiver's wall timeline."""
    return beacon_elapsed_ns + round_half_even(
        estimate.offset0_ns + estimate.k * float(beacon_elapsed_ns)
    )


@dataclass
class _BeaconWindow:
    interval_ns: int
    width_bits: int
    points: deque
    last_counter: int = -1
    cum_elapsed_ns: int = 0
    first_adj_ns: int = 0
    last_elapsed_ns: int = 0


class SyncPointStore:
    """Bounded per-beacon sync-point windows with rollover accounting."""

    def __init__(self, interval_ns: int = 100 * MILLISECOND, width_bits: int = 24,
                 window: int = DEFAULT_WINDOW):
        self.interval_ns = interval_ns
        self.width_bits = width_bits
        self.window = window
        self._beacons: dict[str, _BeaconWindow] = {}

    def register_beacon(self, beacon_id: str, interval_ns: int | None = None,
                        width_bits: int | None = None) -> None:
        """Override the default interval/width for one beacon."""
        self._beacons[beacon_id] = _BeaconWindow(
            interval_ns=interval_ns or self.interval_ns,
            width_bits=width_bits or self.width_bits,
            points=deque(maxlen=self.window),
        )

    def points(self, beacon_id: str):
        return self._beacons[beacon_id].points

    def add_sync_point(self, beacon_id: str, counter: int, prev_tx_delay_us: int,
                       matched_ts_ns: int) -> SyncPoint:
        """Convert a decoded payload plus matched timestamp into a sync point.

        The beacon's elapsed time is the cumulative counter delta times the
        interval, minus the carried previous-transmission delay (normalized
        so the first point sits at elapsed zero).  An elapsed value that
        moves backwards violates the one-rollover contract and is rejected.
        """
        if beacon_id not in self._beacons:
            self.register_beacon(beacon_id)
        st = self._beacons[beacon_id]
        delay_ns = prev_tx_delay_us * MICROSECOND
        if st.last_counter < 0:
            st.last_counter = counter
            st.cum_elapsed_ns = 0
            st.first_adj_ns = delay_ns
            elapsed = 0
            st.last_elapsed_ns = 0
        else:
            delta = counter_elapsed(st.last_counter, counter, st.width_bits)
            st.cum_elapsed_ns += delta * st.interval_ns
            st.last_counter = counter
            elapsed = st.cum_elapsed_ns - delay_ns + st.first_adj_ns
            if elapsed < st.last_elapsed_ns:
                raise CounterRegression(
                    f"beacon {beacon_id}: elapsed moved backwards "
                    f"({elapsed} < {st.last_elapsed_ns})"
                )
            st.last_elapsed_ns = elapsed
        point = SyncPoint(
            beacon_id=beacon_id,
            beacon_elapsed_ns=elapsed,
            receiver_wall_ns=matched_ts_ns,
            prev_tx_delay_ns=delay_ns,
        )
        st.points.append(point)
        return point

    def estimate(self, beacon_id: str) -> SkewEstimate:
        return estimate_skew(self.points(beacon_id))


@dataclass
class RegistryRecord:
    """A shared observation: one beacon counter seen by one receiver."""

    beacon_id: str
    beacon_counter: int
    receiver_id: str
    receiver_wall_ns: int
    k: float


def receiver_offset(a: RegistryRecord, b: RegistryRecord,
                    interval_ns: int = 100 * MILLISECOND, width_bits: int = 24) -> int:
    """Mutual clock offset of two receivers from a shared beacon.

    The beacon elapsed between the two readings (signed, counters within one
    rollover) is converted to receiver time through the shared skew and
    removed, leaving receiver A's clock minus receiver B's:
    ``tau_a - tau_b + delta_ab * (1 + k)``.  Both records' k values are
    averaged so the result is antisymmetric in (a, b).
    """
    if a.beacon_id != b.beacon_id:
        raise BeaconMismatch(f"records reference beacons {a.beacon_id!r} and {b.beacon_id!r}")
    span = 1 << width_bits
    delta = counter_elapsed(a.beacon_counter, b.beacon_counter, width_bits)
    if delta > span >> 1:
        delta -= span  # b's reading predates a's
    k = (a.k + b.k) / 2.0
    elapsed_ns = delta * interval_ns
    return (
        a.receiver_wall_ns
        - b.receiver_wall_ns
        + elapsed_ns
        + round_half_even(k * float(elapsed_ns))
    )


REGISTRY_HEADER = "#cheepsync-registry v1"


def export_registry(records) -> str:
    """Serialize records to the tab-separated exchange format."""
    lines = [REGISTRY_HEADER]
    for r in records:
        for ident in (r.beacon_id, r.receiver_id):
            if "\t" in ident or "\n" in ident:
                raise ValueError(f"identifier {ident!r} may not contain tabs or newlines")
        lines.append(
            f"{r.beacon_id}\t{r.beacon_counter:d}\t{r.receiver_id}\t"
            f"{r.receiver_wall_ns:d}\t{r.k:.17e}"
        )
    return "\n".join(lines) + "\n"


def import_registry(text: str):
    """Parse the exchange format; malformed input names the offending line."""
    lines = text.split("\n")
    if not lines or lines[0] != REGISTRY_HEADER:
        raise RegistryParseError(1, f"expected header {REGISTRY_HEADER!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            continue  # trailing newline / blank line
        parts = line.split("\t")
        if len(parts) != 5:
            raise RegistryParseError(lineno, f"expected 5 tab-separated fields, got {len(parts)}")
        beacon_id, counter_s, receiver_id, wall_s, k_s = parts
        try:
            counter = int(counter_s)
            wall = int(wall_s)
            k = float(k_s)
        except ValueError as exc:
            raise RegistryParseError(lineno, str(exc)) from None
        if not 0 <= counter < (1 << 24):
            raise RegistryParseError(lineno, f"counter {counter} does not fit 24 bits")
        records.append(RegistryRecord(beacon_id, counter, receiver_id, wall, k))
    return records
