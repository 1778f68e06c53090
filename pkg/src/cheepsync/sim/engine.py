"""Deterministic scenario execution.

The run is organized as vectorized pre-sampling stages feeding a sequential
per-receiver kernel:

1. per beacon: advertisement schedule (oscillator skew applied exactly from
   the origin, per-tick jitter batched per advertisement gap), transmitter
   delays, counters, and the actual frame octets (built and decoded in bulk,
   cross-checked against the scalar codec);
2. shared channel: time-sorted air events, pairwise-destructive overlap
   collisions, independent erasures, fixed propagation;
3. per receiver: coverage filter, driver latency draws, wall-clock mapping,
   then the sequential kernel (queue matching, windowed trimmed fits, error
   samples) from either the compiled or the pure-Python implementation.

Every random draw comes from numpy generators spawned in a fixed order from
the scenario seed, and the kernels are bit-identical, so a config+seed pair
always produces the same trace regardless of which kernel runs.

Per-packet synchronization error is measured on the receiver's wall
timeline: the estimator's mapping of the packet's beacon-elapsed time is
compared against the wall reading at the true send instant plus the known
constant pipeline delay (mean transmitter delay + propagation + mean
receiver latency).  The estimator absorbs that constant into its intercept,
so the metric isolates synchronization quality from the fixed delivery
delay, which any calibrated deployment removes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cheepsync import _core, packet
from cheepsync.sim.config import ScenarioConfig
from cheepsync.sync import RegistryRecord
from cheepsync.timebase import MICROSECOND

FRAME_AIR_NS = packet.FRAME_OCTETS * 8 * MICROSECOND  # 1 Mbps PHY: 8 us per octet

KINDS = ("tx", "rx", "sync_point", "estimate", "error_sample")

_CRC_TABLE = np.array(_core.CRC24_TABLE, dtype=np.uint32)
_REV8 = np.array(_core.REV8, dtype=np.uint8)

# kernel flag bits
FLAG_SYNC = 1
FLAG_ERR = 2
FLAG_OUT_OF_ORDER = 4


@dataclass
class _BeaconSchedule:
    send: np.ndarray       # int64, true send-initiation instants
    air: np.ndarray        # int64, send + tx delay
    counter: np.ndarray    # int64
    prev_delay_ns: np.ndarray  # int64, carried previous-tx delay
    tx_delay_ns: np.ndarray    # int64, this packet's delay (trace value)


@dataclass
class Trace:
    """Column-oriented event record of one run."""

    beacon_ids: list
    receiver_ids: list
    columns: dict = field(default_factory=dict)  # kind -> dict of arrays
    tx_delivered: np.ndarray | None = None       # aligned with the tx kind

    def merged_rows(self):
        """All records sorted by (time, kind, beacon, receiver); generator of tuples."""
        chunks = []
        for kind_code, kind in enumerate(KINDS):
            cols = self.columns.get(kind)
            if cols is None or len(cols["time"]) == 0:
                continue
            n = len(cols["time"])
            chunks.append((
                cols["time"],
                np.full(n, kind_code, dtype=np.int8),
                cols["beacon"],
                cols["receiver"],
                cols["value"],
            ))
        if not chunks:
            return
        time = np.concatenate([c[0] for c in chunks])
        kindc = np.concatenate([c[1] for c in chunks])
        beacon = np.concatenate([c[2] for c in chunks])
        receiver = np.concatenate([c[3] for c in chunks])
        value = np.concatenate([c[4] for c in chunks])
        order = np.lexsort((receiver, beacon, kindc, time))
        bnames = ["" ] + list(self.beacon_ids)
        rnames = [""] + list(self.receiver_ids)
        time_l = time[order].tolist()
        kind_l = kindc[order].tolist()
        beacon_l = (beacon[order] + 1).tolist()
        receiver_l = (receiver[order] + 1).tolist()
        value_l = value[order].tolist()
        for t, k, b, r, v in zip(time_l, kind_l, beacon_l, receiver_l, value_l):
            yield t, KINDS[k], bnames[b], rnames[r], v

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("kind,time_true_ns,beacon_id,receiver_id,value_ns\n")
            buf = []
            for t, k, b, r, v in self.merged_rows():
                buf.append(f"{k},{t},{b},{r},{v}")
                if len(buf) >= 200_000:
                    fh.write("\n".join(buf))
                    fh.write("\n")
                    buf.clear()
            if buf:
                fh.write("\n".join(buf))
                fh.write("\n")


@dataclass
class SimResult:
    """Error samples, registries, and (optionally) the full trace."""

    config: ScenarioConfig
    beacon_ids: list
    receiver_ids: list
    err_value: np.ndarray     # int64, signed prediction errors
    err_time: np.ndarray      # int64
    err_beacon: np.ndarray    # int16 codes into beacon_ids
    err_receiver: np.ndarray  # int16 codes into receiver_ids
    registries: dict          # receiver_id -> [RegistryRecord, ...]
    kernel_name: str
    out_of_order: dict = field(default_factory=dict)  # receiver_id -> skipped count
    trace: Trace | None = None

    def error_samples(self, beacon_id=None, receiver_id=None) -> np.ndarray:
        mask = np.ones(len(self.err_value), dtype=bool)
        if beacon_id is not None:
            mask &= self.err_beacon == self.beacon_ids.index(beacon_id)
        if receiver_id is not None:
            mask &= self.err_receiver == self.receiver_ids.index(receiver_id)
        return self.err_value[mask]


def _spawn_rngs(config: ScenarioConfig):
    nb, nr = len(config.beacons), len(config.receivers)
    children = np.random.SeedSequence(config.seed).spawn(2 + 2 * nb + 2 * nr)
    rngs = {
        "phase": np.random.default_rng(children[0]),
        "channel": np.random.default_rng(children[1]),
    }
    for i in range(nb):
        rngs[f"jitter{i}"] = np.random.default_rng(children[2 + 2 * i])
        rngs[f"tx{i}"] = np.random.default_rng(children[3 + 2 * i])
    for j in range(nr):
        rngs[f"lat{j}"] = np.random.default_rng(children[2 + 2 * nb + 2 * j])
        rngs[f"ntp{j}"] = np.random.default_rng(children[3 + 2 * nb + 2 * j])
    return rngs


def _beacon_schedule(bcfg, phase_ns: int, duration_ns: int, rng_jitter, rng_tx):
    ticks_per_adv = bcfg.adv_interval_ns // bcfg.interval_ns
    if phase_ns >= duration_ns:
        empty = np.zeros(0, dtype=np.int64)
        return _BeaconSchedule(empty, empty, empty, empty, empty)
    n_guess = int((duration_ns - phase_ns) / (bcfg.adv_interval_ns * (1 - 2e-3))) + 4
    i = np.arange(n_guess, dtype=np.int64)
    nominal_ticks = i * ticks_per_adv
    nominal_ns = nominal_ticks * bcfg.interval_ns
    skew_ns = np.rint(nominal_ns.astype(np.float64) * (bcfg.skew_ppm * 1e-6)).astype(np.int64)
    if bcfg.jitter_sigma_ns:
        sigma_gap = bcfg.jitter_sigma_ns * float(np.sqrt(ticks_per_adv))
        gap_jitter = np.rint(rng_jitter.normal(0.0, sigma_gap, n_guess)).astype(np.int64)
        gap_jitter[0] = 0  # the first advertisement defines the phase
        jitter = np.cumsum(gap_jitter)
    else:
        jitter = np.zeros(n_guess, dtype=np.int64)
    send = phase_ns + nominal_ns + skew_ns + jitter
    keep = send < duration_ns
    send = send[keep]
    n = len(send)

    sigma_tx = float(np.sqrt(bcfg.tx_variance_us2)) * MICROSECOND
    if sigma_tx > 0.0:
        tx = rng_tx.normal(bcfg.tx_mean_ns, sigma_tx, n_guess)[keep]
        while True:  # non-negative delays: resample negative draws
            neg = tx < 0.0
            if not neg.any():
                break
            tx[neg] = rng_tx.normal(bcfg.tx_mean_ns, sigma_tx, int(neg.sum()))
    else:
        tx = np.full(n, float(bcfg.tx_mean_ns))

    tx_ns = np.rint(tx).astype(np.int64)
    prev_us = np.minimum(np.rint(tx / MICROSECOND), 255.0).astype(np.int64)
    prev_delay_ns = np.empty(n, dtype=np.int64)
    if n:
        prev_delay_ns[0] = 0  # nothing measured before the first packet
        prev_delay_ns[1:] = prev_us[:-1] * MICROSECOND
    counter = (bcfg.start_count + nominal_ticks[keep]) % (1 << bcfg.counter_width)
    return _BeaconSchedule(
        send=send,
        air=send + tx_ns,
        counter=counter.astype(np.int64),
        prev_delay_ns=prev_delay_ns,
        tx_delay_ns=tx_ns,
    )


def _crc_step(state, data_byte):
    idx = ((state >> np.uint32(16)) ^ _REV8[data_byte].astype(np.uint32)) & np.uint32(0xFF)
    return ((state << np.uint32(8)) & np.uint32(0xFFFFFF)) ^ _CRC_TABLE[idx]


def _frames_roundtrip(bcfg, sched: _BeaconSchedule) -> None:
    """Build every frame of a beacon in bulk and decode it back.

    The decoded counter/delay must equal the scheduled values and the CRC
    recomputed over the assembled PDU must match the emitted octets; a few
    frames also go through the scalar codec.  Chunked to bound memory.
    """
    n = len(sched.send)
    if n == 0:
        return
    template = bytearray(
        packet.build_frame(
            packet.AdvertisementPayload(ts_counter=0, prev_tx_delay=0), bcfg.adv_a
        )
    )
    tpl = np.frombuffer(bytes(template), dtype=np.uint8)
    prev_us = sched.prev_delay_ns // MICROSECOND
    for lo in range(0, n, 1 << 18):
        hi = min(n, lo + (1 << 18))
        counters = sched.counter[lo:hi]
        delays = prev_us[lo:hi]
        frames = np.tile(tpl, (hi - lo, 1))
        frames[:, 25] = counters & 0xFF
        frames[:, 26] = (counters >> 8) & 0xFF
        frames[:, 27] = (counters >> 16) & 0xFF
        frames[:, 28] = delays
        state = np.full(hi - lo, _core.CRC24_INIT, dtype=np.uint32)
        for col in range(5, 29):
            state = _crc_step(state, frames[:, col])
        frames[:, 29] = _REV8[(state >> 16) & 0xFF]
        frames[:, 30] = _REV8[(state >> 8) & 0xFF]
        frames[:, 31] = _REV8[state & 0xFF]
        # decode: structural fields, CRC, payload values
        assert (frames[:, 0] == 0xAA).all() and (frames[:, 5] & 0x0F == 0x02).all()
        got_counter = (
            frames[:, 25].astype(np.int64)
            | (frames[:, 26].astype(np.int64) << 8)
            | (frames[:, 27].astype(np.int64) << 16)
        )
        if not (got_counter == counters).all() or not (frames[:, 28] == delays).all():
            raise AssertionError("bulk frame build/decode mismatch")
        for probe in (0, (hi - lo) // 2, hi - lo - 1):
            raw = frames[probe].tobytes()
            decoded = packet.extract_payload(packet.parse_frame(raw))
            if decoded.ts_counter != int(counters[probe]) or decoded.prev_tx_delay != int(
                delays[probe]
            ):
                raise AssertionError("scalar codec disagrees with bulk frame builder")


def _wall_map(t, skew_ppm: float, period_ns: int, residuals):
    """Vectorized disciplined-wall-clock reading (same law as the scalar clock)."""
    t = np.asarray(t, dtype=np.int64)
    if period_ns:
        j = np.minimum(t // period_ns, len(residuals) - 1)
        last = j * period_ns
        res = residuals[j]
    else:
        last = np.int64(0)
        res = residuals[0]
    drift = np.rint((t - last).astype(np.float64) * (skew_ppm * 1e-6)).astype(np.int64)
    return t + res + drift


def run_scenario(config: ScenarioConfig, collect_trace: bool = True, kernel=None) -> SimResult:
    """Execute a scenario; identical config+seed gives a byte-identical trace."""
    config.validate()
    impl = kernel if kernel is not None else _core
    kernel_name = "pure-python" if not getattr(impl, "COMPILED", True) else _core.KERNEL
    rngs = _spawn_rngs(config)
    nb = len(config.beacons)
    nr = len(config.receivers)
    duration = config.duration_ns

    # stage 1: beacon schedules and frames
    phases = []
    for b in config.beacons:
        draw = int(rngs["phase"].integers(0, b.adv_interval_ns))  # always drawn: fixed stream use
        phases.append(b.start_phase_ns if b.start_phase_ns is not None else draw)
    schedules = [
        _beacon_schedule(b, phases[i], duration, rngs[f"jitter{i}"], rngs[f"tx{i}"])
        for i, b in enumerate(config.beacons)
    ]
    for b, sched in zip(config.beacons, schedules):
        _frames_roundtrip(b, sched)

    # stage 2: shared channel
    tx_beacon = np.concatenate(
        [np.full(len(s.send), i, dtype=np.int16) for i, s in enumerate(schedules)]
    ) if schedules else np.zeros(0, dtype=np.int16)
    tx_send = np.concatenate([s.send for s in schedules])
    tx_air = np.concatenate([s.air for s in schedules])
    tx_counter = np.concatenate([s.counter for s in schedules])
    tx_prev_ns = np.concatenate([s.prev_delay_ns for s in schedules])
    tx_delay = np.concatenate([s.tx_delay_ns for s in schedules])
    order = np.lexsort((tx_beacon, tx_air))
    tx_beacon = tx_beacon[order]
    tx_send = tx_send[order]
    tx_air = tx_air[order]
    tx_counter = tx_counter[order]
    tx_prev_ns = tx_prev_ns[order]
    tx_delay = tx_delay[order]
    n_tx = len(tx_air)

    lost = np.zeros(n_tx, dtype=bool)
    if config.channel.collisions and n_tx > 1:
        overlap = tx_air[1:] < tx_air[:-1] + FRAME_AIR_NS
        lost[1:] |= overlap
        lost[:-1] |= overlap
    erasure = rngs["channel"].random(n_tx)
    if config.channel.loss_prob > 0.0:
        lost |= erasure < config.channel.loss_prob
    delivered = ~lost
    arrival = tx_air + config.channel.propagation_ns

    # constant pipeline delay per (beacon, receiver): mean tx + propagation + mean rx
    rx_means = [
        r.rx_base_ns + r.rx_tail_ns + r.rx_spike_prob * r.rx_spike_ns for r in config.receivers
    ]

    interval_arr = np.array([b.interval_ns for b in config.beacons], dtype=np.int64)
    width_arr = np.array([b.counter_width for b in config.beacons], dtype=np.int64)

    err_chunks = []
    trace = Trace(
        beacon_ids=[b.id for b in config.beacons],
        receiver_ids=[r.id for r in config.receivers],
    ) if collect_trace else None
    if trace is not None:
        trace.columns["tx"] = {
            "time": tx_send,
            "beacon": tx_beacon,
            "receiver": np.full(n_tx, -1, dtype=np.int16),
            "value": tx_delay,
        }
        trace.tx_delivered = delivered.copy()

    registries = {}
    cov_by_pair = {(c.receiver, c.beacon): c.windows_ns for c in config.coverage}

    for j, rcfg in enumerate(config.receivers):
        rng_lat = rngs[f"lat{j}"]
        rng_ntp = rngs[f"ntp{j}"]

        mask = delivered.copy()
        for i, bcfg in enumerate(config.beacons):
            windows = cov_by_pair.get((rcfg.id, bcfg.id))
            if windows is None:
                continue
            in_cov = np.zeros(n_tx, dtype=bool)
            sel = tx_beacon == i
            for lo, hi in windows:
                in_cov |= sel & (arrival >= lo) & (arrival < hi)
            mask &= in_cov | ~sel
        idx = np.flatnonzero(mask)
        nd = len(idx)

        lat = np.full(nd, float(rcfg.rx_base_ns))
        if rcfg.rx_tail_ns > 0.0:
            lat += rng_lat.exponential(rcfg.rx_tail_ns, nd)
        if rcfg.rx_spike_prob > 0.0:
            spike_hit = rng_lat.random(nd) < rcfg.rx_spike_prob
            if rcfg.rx_spike_ns > 0.0:
                lat += np.where(spike_hit, rng_lat.exponential(rcfg.rx_spike_ns, nd), 0.0)
        lat_ns = np.rint(lat).astype(np.int64)
        lowlevel_true = arrival[idx] + lat_ns

        if rcfg.ntp_period_ns:
            n_res = int(duration // rcfg.ntp_period_ns) + 3
        else:
            n_res = 1
        if rcfg.ntp_sigma_ns:
            residuals = np.rint(
                rng_ntp.normal(float(rcfg.ntp_bias_ns), float(rcfg.ntp_sigma_ns), n_res)
            ).astype(np.int64)
        else:
            residuals = np.full(n_res, rcfg.ntp_bias_ns, dtype=np.int64)

        proc = np.lexsort((idx, tx_beacon[idx], lowlevel_true))
        ts = _wall_map(lowlevel_true[proc], rcfg.skew_ppm, rcfg.ntp_period_ns, residuals)
        b_idx = tx_beacon[idx][proc].astype(np.int32)
        counters = tx_counter[idx][proc]
        prev_ns = tx_prev_ns[idx][proc]
        k_pair = np.array(
            [
                int(round(b.tx_mean_ns + config.channel.propagation_ns + rx_means[j]))
                for b in config.beacons
            ],
            dtype=np.int64,
        )
        wall_ref = _wall_map(
            tx_send[idx][proc], rcfg.skew_ppm, rcfg.ntp_period_ns, residuals
        ) + k_pair[b_idx]

        matched, elapsed, offset, err, flags, est_k, est_off0, est_rms = impl.run_receiver_loop(
            ts,
            b_idx,
            counters,
            prev_ns,
            wall_ref,
            interval_arr,
            width_arr,
            config.estimator.queue_capacity,
            config.estimator.window,
            config.estimator.trim_factor,
            config.estimator.drift_compensation,
            0.01,
        )

        has_err = (flags & FLAG_ERR) != 0
        err_chunks.append((
            err[has_err],
            lowlevel_true[proc][has_err],
            b_idx[has_err].astype(np.int16),
            np.full(int(has_err.sum()), j, dtype=np.int16),
        ))

        if config.registry_exchange:
            records = []
            bounds = np.arange(
                config.registry_interval_ns, duration + 1, config.registry_interval_ns,
                dtype=np.int64,
            )
            proc_times = lowlevel_true[proc]
            for i, bcfg in enumerate(config.beacons):
                sel = np.flatnonzero((b_idx == i) & has_err)
                if len(sel) == 0:
                    continue
                pos = np.searchsorted(proc_times[sel], bounds, side="right") - 1
                last = -1
                for p in pos:
                    if p < 0 or p == last:
                        continue
                    last = int(p)
                    s = sel[p]
                    records.append(RegistryRecord(
                        beacon_id=bcfg.id,
                        beacon_counter=int(counters[s]),
                        receiver_id=rcfg.id,
                        receiver_wall_ns=int(matched[s]),
                        k=float(est_k[s]),
                    ))
            registries[rcfg.id] = records

        if trace is not None:
            has_sync = (flags & FLAG_SYNC) != 0
            trace.columns.setdefault("rx", {"time": [], "beacon": [], "receiver": [], "value": []})
            rx_cols = trace.columns["rx"]
            rx_cols["time"].append(arrival[idx][proc])
            rx_cols["beacon"].append(b_idx.astype(np.int16))
            rx_cols["receiver"].append(np.full(nd, j, dtype=np.int16))
            rx_cols["value"].append(lat_ns[proc])
            trace.columns.setdefault(
                "sync_point", {"time": [], "beacon": [], "receiver": [], "value": []}
            )
            sp = trace.columns["sync_point"]
            sp["time"].append(lowlevel_true[proc][has_sync])
            sp["beacon"].append(b_idx[has_sync].astype(np.int16))
            sp["receiver"].append(np.full(int(has_sync.sum()), j, dtype=np.int16))
            sp["value"].append(offset[has_sync])
            # estimates are traced at the publish cadence, k in parts-per-billion
            trace.columns.setdefault(
                "estimate", {"time": [], "beacon": [], "receiver": [], "value": []}
            )
            est_cols = trace.columns["estimate"]
            pub = config.estimator.publish_interval_ns
            if pub:
                bounds = np.arange(pub, duration + 1, pub, dtype=np.int64)
                proc_times = lowlevel_true[proc]
                for i in range(nb):
                    sel = np.flatnonzero((b_idx == i) & has_err)
                    if len(sel) == 0:
                        continue
                    pos = np.searchsorted(proc_times[sel], bounds, side="right") - 1
                    ok = pos >= 0
                    est_cols["time"].append(bounds[ok])
                    est_cols["beacon"].append(np.full(int(ok.sum()), i, dtype=np.int16))
                    est_cols["receiver"].append(np.full(int(ok.sum()), j, dtype=np.int16))
                    est_cols["value"].append(
                        np.rint(est_k[sel[pos[ok]]] * 1e9).astype(np.int64)
                    )
            trace.columns.setdefault(
                "error_sample", {"time": [], "beacon": [], "receiver": [], "value": []}
            )
            ec = trace.columns["error_sample"]
            ec["time"].append(lowlevel_true[proc][has_err])
            ec["beacon"].append(b_idx[has_err].astype(np.int16))
            ec["receiver"].append(np.full(int(has_err.sum()), j, dtype=np.int16))
            ec["value"].append(err[has_err])

    if trace is not None:
        for kind in ("rx", "sync_point", "estimate", "error_sample"):
            cols = trace.columns.get(kind)
            if cols is None:
                continue
            for key in cols:
                cols[key] = (
                    np.concatenate(cols[key]) if cols[key] else np.zeros(0, dtype=np.int64)
                )

    if err_chunks:
        err_value = np.concatenate([c[0] for c in err_chunks])
        err_time = np.concatenate([c[1] for c in err_chunks])
        err_beacon = np.concatenate([c[2] for c in err_chunks])
        err_receiver = np.concatenate([c[3] for c in err_chunks])
    else:
        err_value = np.zeros(0, dtype=np.int64)
        err_time = np.zeros(0, dtype=np.int64)
        err_beacon = np.zeros(0, dtype=np.int16)
        err_receiver = np.zeros(0, dtype=np.int16)

    return SimResult(
        config=config,
        beacon_ids=[b.id for b in config.beacons],
        receiver_ids=[r.id for r in config.receivers],
        err_value=err_value,
        err_time=err_time,
        err_beacon=err_beacon,
        err_receiver=err_receiver,
        registries=registries,
        kernel_name=kernel_name,
        trace=trace,
    )
