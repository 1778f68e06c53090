"""Scenario configuration: TOML dialect, validation, and defaults.

A scenario file is TOML: top-level keys plus ``[channel]``, ``[estimator]``,
one ``[[beacons]]`` table per advertiser, one ``[[receivers]]`` table per
listener, and optional ``[[coverage]]`` tables restricting when a receiver
hears a beacon (absent means always covered).  Times in the file use the
unit named by the key suffix (``_s``, ``_ms``, ``_us``, ``_ns``); internally
everything is integer nanoseconds.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

from cheepsync.latency import (
    DEFAULT_PROPAGATION_NS,
    DEFAULT_RX_BASE_NS,
    DEFAULT_RX_SPIKE_EXTRA_NS,
    DEFAULT_RX_SPIKE_PROB,
    DEFAULT_RX_TAIL_MEAN_NS,
    DEFAULT_TX_MEAN_NS,
    DEFAULT_TX_VARIANCE_US2,
)
from cheepsync.sync import DEFAULT_WINDOW, TRIM_FACTOR
from cheepsync.timebase import MAX_ABS_SKEW_PPM, MICROSECOND, MILLISECOND, SECOND

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigInvalid(ValueError):
    """A scenario config failed validation; ``path`` names the bad field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class BeaconConfig:
    id: str
    adv_a: bytes
    interval_ns: int = 100 * MILLISECOND
    adv_interval_ns: int = 100 * MILLISECOND
    counter_width: int = 24
    start_count: int = 0
    skew_ppm: float = 0.0
    jitter_sigma_ns: int = 0
    start_phase_ns: int | None = None  # None: seeded uniform in [0, adv_interval)
    tx_mean_ns: float = DEFAULT_TX_MEAN_NS
    tx_variance_us2: float = DEFAULT_TX_VARIANCE_US2


@dataclass
class ReceiverConfig:
    id: str
    skew_ppm: float = 0.0
    ntp_period_ns: int = 30 * SECOND  # 0 disables discipline
    ntp_sigma_ns: int = MILLISECOND
    ntp_bias_ns: int = 0
    rx_base_ns: int = DEFAULT_RX_BASE_NS
    rx_tail_ns: float = DEFAULT_RX_TAIL_MEAN_NS
    rx_spike_prob: float = DEFAULT_RX_SPIKE_PROB
    rx_spike_ns: float = DEFAULT_RX_SPIKE_EXTRA_NS


@dataclass
class ChannelConfig:
    propagation_ns: int = DEFAULT_PROPAGATION_NS
    loss_prob: float = 0.0
    collisions: bool = True


@dataclass
class EstimatorConfig:
    window: int = DEFAULT_WINDOW
    queue_capacity: int = 8
    drift_compensation: bool = True
    trim_factor: float = TRIM_FACTOR
    publish_interval_ns: int = 10 * SECOND


@dataclass
class CoverageConfig:
    receiver: str
    beacon: str
    windows_ns: list  # [(start_ns, end_ns), ...]


@dataclass
class ScenarioConfig:
    duration_ns: int
    beacons: list
    receivers: list
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    coverage: list = field(default_factory=list)
    seed: int = 0
    registry_exchange: bool = False
    registry_interval_ns: int = 30 * SECOND

    def validate(self) -> None:
        if self.duration_ns <= 0:
            raise ConfigInvalid("duration_s", "must be positive")
        if not self.beacons:
            raise ConfigInvalid("beacons", "at least one beacon required")
        if not self.receivers:
            raise ConfigInvalid("receivers", "at least one receiver required")
        ids = [b.id for b in self.beacons] + [r.id for r in self.receivers]
        if len(set(ids)) != len(ids):
            raise ConfigInvalid("beacons/receivers", "ids must be unique")
        for i, b in enumerate(self.beacons):
            path = f"beacons[{i}]"
            if len(b.adv_a) != 6:
                raise ConfigInvalid(f"{path}.adv_a", "must be 6 octets")
            if b.interval_ns <= 0:
                raise ConfigInvalid(f"{path}.interval_ms", "must be positive")
            if not 8 <= b.counter_width <= 32:
                raise ConfigInvalid(f"{path}.counter_width", "must be in [8, 32]")
            if not 0 <= b.start_count < (1 << b.counter_width):
                raise ConfigInvalid(f"{path}.start_count", "does not fit counter_width")
            if b.adv_interval_ns % b.interval_ns:
                raise ConfigInvalid(
                    f"{path}.adv_interval_ms",
                    "advertising interval must be a multiple of the counter interval",
                )
            if abs(b.skew_ppm) >= MAX_ABS_SKEW_PPM:
                raise ConfigInvalid(f"{path}.skew_ppm", f"|skew| must be < {MAX_ABS_SKEW_PPM}")
            if b.jitter_sigma_ns < 0:
                raise ConfigInvalid(f"{path}.jitter_sigma_ns", "must be non-negative")
            if b.start_phase_ns is not None and not 0 <= b.start_phase_ns < b.adv_interval_ns:
                raise ConfigInvalid(f"{path}.start_phase_ms", "must lie within one interval")
            if b.tx_mean_ns < 0 or b.tx_variance_us2 < 0:
                raise ConfigInvalid(f"{path}.tx_mean_ns", "tx model values must be non-negative")
        for i, r in enumerate(self.receivers):
            path = f"receivers[{i}]"
            if abs(r.skew_ppm) >= MAX_ABS_SKEW_PPM:
                raise ConfigInvalid(f"{path}.skew_ppm", f"|skew| must be < {MAX_ABS_SKEW_PPM}")
            if r.ntp_period_ns < 0 or r.ntp_sigma_ns < 0:
                raise ConfigInvalid(f"{path}.ntp_period_s", "must be non-negative")
            if r.rx_base_ns < 0 or r.rx_tail_ns < 0 or r.rx_spike_ns < 0:
                raise ConfigInvalid(f"{path}.rx_base_us", "latency values must be non-negative")
            if not 0.0 <= r.rx_spike_prob <= 1.0:
                raise ConfigInvalid(f"{path}.rx_spike_prob", "must be in [0, 1]")
        if not 0.0 <= self.channel.loss_prob <= 1.0:
            raise ConfigInvalid("channel.loss_prob", "must be in [0, 1]")
        if self.channel.propagation_ns < 0:
            raise ConfigInvalid("channel.propagation_ns", "must be non-negative")
        if self.estimator.window < 2:
            raise ConfigInvalid("estimator.window", "must be at least 2")
        if self.estimator.queue_capacity < 1:
            raise ConfigInvalid("estimator.queue_capacity", "must be at least 1")
        if self.estimator.trim_factor <= 0:
            raise ConfigInvalid("estimator.trim_factor", "must be positive")
        if self.registry_interval_ns <= 0:
            raise ConfigInvalid("registry_interval_s", "must be positive")
        known = {b.id for b in self.beacons}, {r.id for r in self.receivers}
        for i, c in enumerate(self.coverage):
            path = f"coverage[{i}]"
            if c.beacon not in known[0]:
                raise ConfigInvalid(f"{path}.beacon", f"unknown beacon {c.beacon!r}")
            if c.receiver not in known[1]:
                raise ConfigInvalid(f"{path}.receiver", f"unknown receiver {c.receiver!r}")
            for lo, hi in c.windows_ns:
                if lo < 0 or hi <= lo:
                    raise ConfigInvalid(f"{path}.windows_s", "windows must be ordered ranges")


def _parse_adv_a(text: str, path: str) -> bytes:
    cleaned = text.replace(":", "").replace("-", "")
    try:
        raw = bytes.fromhex(cleaned)
    except ValueError:
        raise ConfigInvalid(path, f"not a hex device address: {text!r}") from None
    if len(raw) != 6:
        raise ConfigInvalid(path, "device address must be 6 octets")
    return raw


def _ns(value, unit_ns) -> int:
    return int(round(float(value) * unit_ns))


def _take(table: dict, path: str, known: set):
    unknown = set(table) - known
    if unknown:
        raise ConfigInvalid(f"{path}.{sorted(unknown)[0]}", "unknown key")


def loads(text: str) -> ScenarioConfig:
    """Parse a TOML scenario description and validate it."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid("<toml>", str(exc)) from None

    _take(doc, "<top>", {
        "seed", "duration_s", "registry_exchange", "registry_interval_s",
        "channel", "estimator", "beacons", "receivers", "coverage",
    })

    beacons = []
    for i, tb in enumerate(doc.get("beacons", [])):
        path = f"beacons[{i}]"
        _take(tb, path, {
            "id", "adv_a", "interval_ms", "adv_interval_ms", "counter_width",
            "start_count", "skew_ppm", "jitter_sigma_ns", "start_phase_ms",
            "tx_mean_ns", "tx_variance_us2",
        })
        if "id" not in tb:
            raise ConfigInvalid(f"{path}.id", "required")
        interval_ns = _ns(tb.get("interval_ms", 100.0), MILLISECOND)
        adv_interval_ns = (
            _ns(tb["adv_interval_ms"], MILLISECOND) if "adv_interval_ms" in tb else interval_ns
        )
        beacons.append(BeaconConfig(
            id=str(tb["id"]),
            adv_a=_parse_adv_a(tb.get("adv_a", "00:00:00:00:00:00"), f"{path}.adv_a"),
            interval_ns=interval_ns,
            adv_interval_ns=adv_interval_ns,
            counter_width=int(tb.get("counter_width", 24)),
            start_count=int(tb.get("start_count", 0)),
            skew_ppm=float(tb.get("skew_ppm", 0.0)),
            jitter_sigma_ns=int(tb.get("jitter_sigma_ns", 0)),
            start_phase_ns=_ns(tb["start_phase_ms"], MILLISECOND) if "start_phase_ms" in tb else None,
            tx_mean_ns=float(tb.get("tx_mean_ns", DEFAULT_TX_MEAN_NS)),
            tx_variance_us2=float(tb.get("tx_variance_us2", DEFAULT_TX_VARIANCE_US2)),
        ))

    receivers = []
    for i, tr in enumerate(doc.get("receivers", [])):
        path = f"receivers[{i}]"
        _take(tr, path, {
            "id", "skew_ppm", "ntp_period_s", "ntp_sigma_ms", "ntp_bias_ms",
            "rx_base_us", "rx_tail_us", "rx_spike_prob", "rx_spike_ms",
        })
        if "id" not in tr:
            raise ConfigInvalid(f"{path}.id", "required")
        receivers.append(ReceiverConfig(
            id=str(tr["id"]),
            skew_ppm=float(tr.get("skew_ppm", 0.0)),
            ntp_period_ns=_ns(tr.get("ntp_period_s", 30.0), SECOND),
            ntp_sigma_ns=_ns(tr.get("ntp_sigma_ms", 1.0), MILLISECOND),
            ntp_bias_ns=_ns(tr.get("ntp_bias_ms", 0.0), MILLISECOND),
            rx_base_ns=_ns(tr.get("rx_base_us", DEFAULT_RX_BASE_NS / MICROSECOND), MICROSECOND),
            rx_tail_ns=float(tr.get("rx_tail_us", DEFAULT_RX_TAIL_MEAN_NS / MICROSECOND))
            * MICROSECOND,
            rx_spike_prob=float(tr.get("rx_spike_prob", DEFAULT_RX_SPIKE_PROB)),
            rx_spike_ns=float(tr.get("rx_spike_ms", DEFAULT_RX_SPIKE_EXTRA_NS / MILLISECOND))
            * MILLISECOND,
        ))

    tc = doc.get("channel", {})
    _take(tc, "channel", {"propagation_ns", "loss_prob", "collisions"})
    channel = ChannelConfig(
        propagation_ns=int(tc.get("propagation_ns", DEFAULT_PROPAGATION_NS)),
        loss_prob=float(tc.get("loss_prob", 0.0)),
        collisions=bool(tc.get("collisions", True)),
    )

    te = doc.get("estimator", {})
    _take(te, "estimator", {
        "window", "queue_capacity", "drift_compensation", "trim_factor", "publish_interval_s",
    })
    estimator = EstimatorConfig(
        window=int(te.get("window", DEFAULT_WINDOW)),
        queue_capacity=int(te.get("queue_capacity", 8)),
        drift_compensation=bool(te.get("drift_compensation", True)),
        trim_factor=float(te.get("trim_factor", TRIM_FACTOR)),
        publish_interval_ns=_ns(te.get("publish_interval_s", 10.0), SECOND),
    )

    coverage = []
    for i, tcov in enumerate(doc.get("coverage", [])):
        path = f"coverage[{i}]"
        _take(tcov, path, {"receiver", "beacon", "windows_s"})
        for key in ("receiver", "beacon", "windows_s"):
            if key not in tcov:
                raise ConfigInvalid(f"{path}.{key}", "required")
        windows = []
        for w in tcov["windows_s"]:
            if not isinstance(w, list) or len(w) != 2:
                raise ConfigInvalid(f"{path}.windows_s", "each window is [start_s, end_s]")
            windows.append((_ns(w[0], SECOND), _ns(w[1], SECOND)))
        coverage.append(CoverageConfig(
            receiver=str(tcov["receiver"]), beacon=str(tcov["beacon"]), windows_ns=windows
        ))

    if "duration_s" not in doc:
        raise ConfigInvalid("duration_s", "required")
    config = ScenarioConfig(
        duration_ns=_ns(doc["duration_s"], SECOND),
        beacons=beacons,
        receivers=receivers,
        channel=channel,
        estimator=estimator,
        coverage=coverage,
        seed=int(doc.get("seed", 0)),
        registry_exchange=bool(doc.get("registry_exchange", False)),
        registry_interval_ns=_ns(doc.get("registry_interval_s", 30.0), SECOND),
    )
    config.validate()
    return config


def load(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())
