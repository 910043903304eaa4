"""Command-line interface: ``dcdmimo {ber,converge,bench}``.

Settings can also come from an INI file given with ``--config``. Keys in its
``[sweep]`` section mirror the long flag names without the leading dashes,
for example::

    [sweep]
    direction = uplink
    users = 8
    cluster-size = 32
    clusters = 4
    mod = qam16
    snr = 0:1:10
    tmax = 2,3,4
    precision = fp16
    precision-scope = full
    fusion = optimal
    min-bits = 1000000
    seed = 1

Flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys

import numpy as np

from dcdmimo.harness import (
    METHODS,
    SweepSpec,
    bench_csv,
    convergence_csv,
    run_ber_sweep,
    run_convergence_study,
    run_throughput_bench,
)
from dcdmimo.numerics import PrecisionMode

MODULATIONS = {"qam4": 4, "qam16": 16, "qam64": 64}

DEFAULTS = {
    "direction": "uplink",
    "users": "8",
    "cluster-size": "32",
    "clusters": "4",
    "mod": "qam16",
    "snr": "0:1:10",
    "tmax": "2,3,4",
    "precision": "fp64",
    "precision-scope": "messages",
    "fusion": "optimal",
    "min-bits": "1000000",
    "max-trials": "10000000",
    "seed": "0",
    "methods": ",".join(METHODS),
    "batch": "2000",
}


class ConfigError(ValueError):
    pass


def parse_snr(text: str) -> tuple[float, ...]:
    """``start:step:stop`` (inclusive) or a single value."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return (float(parts[0]),)
        if len(parts) != 3:
            raise ValueError
        start, step, stop = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad SNR grid {text!r}; expected start:step:stop") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"bad SNR grid {text!r}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


def parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [sweep] section")
    common.add_argument("--direction", choices=["uplink", "downlink"])
    common.add_argument("--users", type=int)
    common.add_argument("--cluster-size", type=int)
    common.add_argument("--clusters", type=int)
    common.add_argument("--mod", choices=sorted(MODULATIONS))
    common.add_argument("--snr", help="start:step:stop in dB, inclusive")
    common.add_argument("--tmax", help="comma-separated sweep counts")
    common.add_argument("--precision", choices=["fp64", "fp32", "fp16"])
    common.add_argument("--precision-scope", choices=["messages", "full"])
    common.add_argument("--fusion", choices=["optimal", "uniform"])
    common.add_argument("--min-bits", type=int)
    common.add_argument("--max-trials", type=int)
    common.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    common.add_argument("--batch", type=int, help="subcarriers per Monte Carlo batch")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="dcdmimo",
        description="Decentralized coordinate-descent MU-MIMO detection and precoding experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ber", parents=[common], help="Monte Carlo BER sweep")
    conv = sub.add_parser("converge", parents=[common], help="distance to the exact solution per sweep")
    conv.add_argument("--instances", type=int, default=200)
    bench = sub.add_parser("bench", parents=[common], help="per-cluster rate and interconnect load")
    bench.add_argument("--subcarriers", type=int, default=1200)
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--cluster-counts", help="comma-separated C values to compare")
    return parser


def _settings(args: argparse.Namespace) -> dict[str, str]:
    merged = dict(DEFAULTS)
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise ConfigError(f"cannot read config file {args.config!r}")
        if "sweep" not in cp:
            raise ConfigError(f"{args.config}: missing [sweep] section")
        for key, value in cp["sweep"].items():
            if key not in DEFAULTS:
                raise ConfigError(f"{args.config}: unknown key {key!r}")
            merged[key] = value
    for key in DEFAULTS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            merged[key] = str(value)
    return merged


def spec_from_settings(s: dict[str, str]) -> SweepSpec:
    if s["mod"] not in MODULATIONS:
        raise ConfigError(f"unknown modulation {s['mod']!r}")
    try:
        return SweepSpec(
            direction=s["direction"],
            methods=tuple(m.strip() for m in s["methods"].split(",") if m.strip()),
            users=int(s["users"]),
            cluster_size=int(s["cluster-size"]),
            clusters=int(s["clusters"]),
            order=MODULATIONS[s["mod"]],
            snr_db=parse_snr(s["snr"]),
            t_max=parse_int_list(s["tmax"]),
            precision=PrecisionMode.parse(s["precision"], s["precision-scope"]),
            fusion=s["fusion"],
            min_bits=int(s["min-bits"]),
            max_trials=int(s["max-trials"]),
            seed=int(s["seed"]),
            batch=int(s["batch"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        spec = spec_from_settings(_settings(args))
        if args.command == "ber":
            progress = logging.getLogger("dcdmimo").info
            text = run_ber_sweep(spec, progress=progress).to_csv()
        elif args.command == "converge":
            text = convergence_csv(spec, run_convergence_study(spec, args.instances))
        else:
            counts = parse_int_list(args.cluster_counts) if args.cluster_counts else None
            rows = run_throughput_bench(spec, args.subcarriers, args.repeats, counts)
            text = bench_csv(spec, rows)
    except ConfigError as exc:
        print(f"dcdmimo: configuration error: {exc}", file=sys.stderr)
        return 2
    _emit(text, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
