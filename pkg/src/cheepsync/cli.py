"""Command-line interface.

Subcommands: ``encode`` and ``decode`` for the advertising frame codec,
``run`` to execute a scenario config, ``report`` to recompute metrics from
an existing trace, and ``registry-merge`` to derive receiver-to-receiver
offsets from exchanged registry files.

Exit codes: 0 success, 1 domain error (bad frame, unusable registry),
2 usage/config error, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

from cheepsync import packet
from cheepsync.sim import (
    ConfigInvalid,
    cdf_to_csv,
    compute_metrics,
    metrics_to_csv,
    run_scenario,
)
from cheepsync.sim import config as simconfig
from cheepsync.sync import (
    RegistryParseError,
    export_registry,
    import_registry,
    receiver_offset,
)
from cheepsync.timebase import MILLISECOND

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _bundled_config(name: str) -> Path | None:
    here = Path(__file__).parent / "configs" / name
    return here if here.exists() else None


def cmd_encode(args) -> int:
    try:
        adv_a = bytes.fromhex(args.adv_a.replace(":", ""))
        payload = packet.AdvertisementPayload(
            ts_counter=args.counter,
            prev_tx_delay=args.delay,
            short_name=args.name,
            flags=args.flags,
        )
        frame = packet.build_frame(payload, adv_a)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(packet.frame_to_hex(frame))
    return EXIT_OK


def cmd_decode(args) -> int:
    try:
        raw = packet.frame_from_hex(args.hex)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        frame = packet.parse_frame(raw)
        payload = packet.extract_payload(frame)
    except packet.FrameError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    adv_a = ":".join(f"{b:02x}" for b in frame.adv_a)
    print(f"pdu_type      ADV_NONCONN_IND ({frame.pdu_type:#06b})")
    print(f"length        {frame.length}")
    print(f"adv_a         {adv_a}")
    print(f"flags         {payload.flags:#04x}")
    print(f"short_name    {payload.short_name}")
    print(f"ts_counter    {payload.ts_counter}")
    print(f"prev_tx_delay {payload.prev_tx_delay} us")
    print(f"crc           {frame.crc.hex()}")
    print(
        f"payload counter={payload.ts_counter} delay_us={payload.prev_tx_delay} "
        f"name={payload.short_name} flags={payload.flags:#04x} adv_a={frame.adv_a.hex()}"
    )
    return EXIT_OK


def _run_once(config, out_dir: Path, with_trace: bool) -> str:
    result = run_scenario(config, collect_trace=with_trace)
    report = compute_metrics(result)
    out_dir.mkdir(parents=True, exist_ok=True)
    if with_trace:
        result.trace.to_csv(out_dir / "trace.csv")
    metrics_to_csv(report, out_dir / "metrics.csv")
    cdf_to_csv(report, out_dir / "cdf.csv")
    if config.registry_exchange:
        for receiver_id, records in result.registries.items():
            path = out_dir / f"registry-{receiver_id}.tsv"
            path.write_text(export_registry(records), encoding="utf-8")
    agg = report.aggregate
    return f"mean={round(agg.mean_abs_ns)} p95={agg.p95_ns} n={agg.sample_count}"


def cmd_run(args) -> int:
    path = Path(args.config)
    if not path.exists():
        bundled = _bundled_config(path.name)
        if bundled is None:
            print(f"error: config {args.config} not found", file=sys.stderr)
            return EXIT_USAGE
        path = bundled
    try:
        config = simconfig.load(path)
    except ConfigInvalid as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.seed is not None:
        config.seed = args.seed
    out = Path(args.out)
    try:
        if args.reps == 1:
            print(_run_once(config, out, not args.no_trace))
        else:
            for rep in range(args.reps):
                rep_config = simconfig.load(path)
                rep_config.seed = (args.seed if args.seed is not None else config.seed) + rep
                summary = _run_once(rep_config, out / f"rep{rep:02d}", not args.no_trace)
                print(f"rep{rep:02d} {summary}")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_report(args) -> int:
    import csv

    import numpy as np

    path = Path(args.trace)
    if not path.exists():
        print(f"error: trace {args.trace} not found", file=sys.stderr)
        return EXIT_USAGE
    values, beacons, receivers = [], [], []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                if row["kind"] != "error_sample":
                    continue
                values.append(int(row["value_ns"]))
                beacons.append(row["beacon_id"])
                receivers.append(row["receiver_id"])
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not values:
        print("error: trace contains no error samples", file=sys.stderr)
        return EXIT_DOMAIN

    class _Samples:
        beacon_ids = sorted(set(beacons))
        receiver_ids = sorted(set(receivers))
        err_value = np.array(values, dtype=np.int64)
        err_beacon = np.array([beacon_ids.index(b) for b in beacons], dtype=np.int16)
        err_receiver = np.array([receiver_ids.index(r) for r in receivers], dtype=np.int16)

    report = compute_metrics(_Samples)
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            metrics_to_csv(report, out / "metrics.csv")
            cdf_to_csv(report, out / "cdf.csv")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
    agg = report.aggregate
    print(f"mean={round(agg.mean_abs_ns)} p95={agg.p95_ns} n={agg.sample_count}")
    return EXIT_OK


def cmd_registry_merge(args) -> int:
    by_receiver = {}
    merged = []
    for path in args.registries:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        try:
            records = import_registry(text)
        except RegistryParseError as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_DOMAIN
        merged.extend(records)
        for r in records:
            by_receiver.setdefault(r.receiver_id, []).append(r)
    if args.out:
        try:
            Path(args.out).write_text(export_registry(merged), encoding="utf-8")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO

    interval_ns = int(round(args.interval_ms * MILLISECOND))
    any_shared = False
    for rx_a, rx_b in itertools.combinations(sorted(by_receiver), 2):
        recs_a = by_receiver[rx_a]
        recs_b = by_receiver[rx_b]
        beacons_a = {r.beacon_id for r in recs_a}
        beacons_b = {r.beacon_id for r in recs_b}
        offsets = []
        span = 1 << 24
        for beacon in sorted(beacons_a & beacons_b):
            from_a = [r for r in recs_a if r.beacon_id == beacon]
            from_b = [r for r in recs_b if r.beacon_id == beacon]
            per_pair = []
            for rec_a in from_a:  # average over all a-records, nearest b each
                def _gap(r):
                    d = (r.beacon_counter - rec_a.beacon_counter) % span
                    return min(d, span - d)
                nearest_b = min(from_b, key=_gap)
                per_pair.append(receiver_offset(rec_a, nearest_b, interval_ns=interval_ns))
            off = round(sum(per_pair) / len(per_pair))
            offsets.append(off)
            print(f"pair {rx_a}/{rx_b} beacon {beacon}: offset_ns={off} (n={len(per_pair)})")
        if offsets:
            any_shared = True
            mean = round(sum(offsets) / len(offsets))
            print(f"pair {rx_a}/{rx_b} mean offset_ns={mean}")
    if not any_shared:
        print("no shared beacons", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cheepsync",
        description="BLE broadcast time synchronization: codec, simulator, registry tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="build an advertising frame, print it as hex")
    enc.add_argument("--counter", type=int, required=True, help="24-bit interval count")
    enc.add_argument("--delay", type=int, default=0, help="previous tx delay, whole us (0-255)")
    enc.add_argument("--name", default="CHEEP", help="5-character shortened local name")
    enc.add_argument("--adv-a", dest="adv_a", default="c0ee00000001",
                     help="6-octet device address, hex")
    enc.add_argument("--flags", type=lambda s: int(s, 0), default=packet.DEFAULT_FLAGS)
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="decode a hex frame and dump its fields")
    dec.add_argument("hex", help="frame as hex text")
    dec.set_defaults(func=cmd_decode)

    run = sub.add_parser("run", help="execute a scenario config")
    run.add_argument("--config", required=True,
                     help="scenario file (bundled names like study1.cfg resolve too)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--reps", type=int, default=1,
                     help="independent repetitions with derived seeds")
    run.add_argument("--no-trace", action="store_true",
                     help="skip trace.csv (metrics/cdf only)")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="recompute metrics from an existing trace.csv")
    rep.add_argument("--trace", required=True)
    rep.add_argument("--out", default=None, help="directory for metrics.csv/cdf.csv")
    rep.set_defaults(func=cmd_report)

    merge = sub.add_parser("registry-merge",
                           help="merge registry files, print pairwise receiver offsets")
    merge.add_argument("registries", nargs="+", help="two or more registry files")
    merge.add_argument("--interval-ms", type=float, default=100.0,
                       help="beacon counter interval the records refer to")
    merge.add_argument("--out", default=None, help="write the merged registry here")
    merge.set_defaults(func=cmd_registry_merge)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "registry-merge" and len(args.registries) < 2:
        parser.error("registry-merge needs at least two registry files")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
