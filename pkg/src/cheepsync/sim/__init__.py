"""Deterministic discrete-event simulation of CheepSync scenarios."""

from cheepsync.sim.config import (
    BeaconConfig,
    ChannelConfig,
    ConfigInvalid,
    CoverageConfig,
    EstimatorConfig,
    ReceiverConfig,
    ScenarioConfig,
    load,
    loads,
)
from cheepsync.sim.engine import FRAME_AIR_NS, SimResult, Trace, run_scenario
from cheepsync.sim.metrics import (
    EmptySamples,
    MetricsReport,
    NoSamples,
    PairMetrics,
    cdf_to_csv,
    compute_metrics,
    metrics_to_csv,
    percentile,
)

__all__ = [
    "BeaconConfig",
    "ChannelConfig",
    "ConfigInvalid",
    "CoverageConfig",
    "EstimatorConfig",
    "ReceiverConfig",
    "ScenarioConfig",
    "load",
    "loads",
    "FRAME_AIR_NS",
    "SimResult",
    "Trace",
    "run_scenario",
    "EmptySamples",
    "MetricsReport",
    "NoSamples",
    "PairMetrics",
    "cdf_to_csv",
    "compute_metrics",
    "metrics_to_csv",
    "percentile",
]
