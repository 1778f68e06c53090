"""Error statistics over a run: mean, variance, percentiles, CDF."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CDF_BOUNDS_NS = np.logspace(2, 8, 200)  # 100 ns .. 100 ms, log-spaced


class NoSamples(ValueError):
    pass


class EmptySamples(ValueError):
    pass


def percentile(samples, q: float) -> int:
    """Lower-interpolation order statistic at rank ``ceil(q * n)``."""
    arr = np.sort(np.asarray(samples))
    if arr.size == 0:
        raise EmptySamples("no samples")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    rank = max(math.ceil(q * arr.size), 1)
    return int(arr[rank - 1])


@dataclass
class PairMetrics:
    sample_count: int
    mean_abs_ns: float
    variance_ns2: float
    p95_ns: int


@dataclass
class MetricsReport:
    per_pair: dict      # (beacon_id, receiver_id) -> PairMetrics
    aggregate: PairMetrics
    cdf: list           # [(bound_ns, cumulative_fraction), ...] over all samples


def _pair_metrics(abs_errors: np.ndarray) -> PairMetrics:
    n = int(abs_errors.size)
    mean = float(abs_errors.mean())
    var = float(abs_errors.var(ddof=1)) if n > 1 else 0.0
    return PairMetrics(
        sample_count=n,
        mean_abs_ns=mean,
        variance_ns2=var,
        p95_ns=percentile(abs_errors, 0.95),
    )


def compute_metrics(result) -> MetricsReport:
    """Per-(beacon, receiver) and aggregate statistics of absolute errors.

    ``result`` needs ``err_value``/``err_beacon``/``err_receiver`` arrays and
    the id lists (a ``SimResult`` fits).
    """
    values = np.abs(np.asarray(result.err_value, dtype=np.int64))
    if values.size == 0:
        raise NoSamples("the run produced no error samples")
    per_pair = {}
    for bi, bid in enumerate(result.beacon_ids):
        for ri, rid in enumerate(result.receiver_ids):
            mask = (np.asarray(result.err_beacon) == bi) & (np.asarray(result.err_receiver) == ri)
            if mask.any():
                per_pair[(bid, rid)] = _pair_metrics(values[mask])
    sorted_vals = np.sort(values)
    fractions = np.searchsorted(sorted_vals, CDF_BOUNDS_NS, side="right") / values.size
    cdf = list(zip(CDF_BOUNDS_NS.tolist(), fractions.tolist()))
    return MetricsReport(per_pair=per_pair, aggregate=_pair_metrics(values), cdf=cdf)


def metrics_to_csv(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("beacon_id,receiver_id,n,mean_abs_ns,variance_ns2,p95_ns\n")
        for (bid, rid), m in sorted(report.per_pair.items()):
            fh.write(
                f"{bid},{rid},{m.sample_count},{m.mean_abs_ns:.3f},"
                f"{m.variance_ns2:.3f},{m.p95_ns}\n"
            )
        a = report.aggregate
        fh.write(f"*,*,{a.sample_count},{a.mean_abs_ns:.3f},{a.variance_ns2:.3f},{a.p95_ns}\n")


def cdf_to_csv(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("error_ns,cum_fraction\n")
        for bound, frac in report.cdf:
            fh.write(f"{bound:.6f},{frac:.9f}\n")
