"""Command-line entry point.

Exit codes: 0 clean or corrected, 1 usage/config error, 2 uncorrectable
corruption, 3 persistent error after rollback.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import tomli

from . import campaign as cp
from .errors import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_UNCORRECTABLE, EXIT_PERSISTENT = 0, 1, 2, 3

_DTYPE_ALIASES = {"f32": "f32", "float32": "f32", "f64": "f64", "float64": "f64"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_tile(text) -> tuple[int, int, int]:
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = str(text).lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"tile must look like 64x64x8, got {text!r}") from None
    if len(dims) != 3:
        raise ConfigError(f"tile must have three extents, got {text!r}")
    return dims


def parse_deltas(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"deltas must be a comma separated list of integers, got {text!r}") from None


def load_config_file(path) -> dict:
    """Read a TOML file whose keys mirror :class:`CampaignConfig`."""
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from None
    known = set(cp.CampaignConfig.field_names())
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "tile" in data:
        data["tile"] = parse_tile(data["tile"])
    if "dtype" in data:
        data["dtype"] = _DTYPE_ALIASES.get(data["dtype"], data["dtype"])
    return data


# flag dest -> CampaignConfig field
_FLAG_FIELDS = {"mode": "mode", "tile": "tile", "iters": "iterations", "reps": "repetitions",
                "fault": "fault", "bit": "bit", "seed": "seed", "epsilon": "epsilon", "delta": "delta",
                "dtype": "dtype", "kernel": "kernel", "threads": "threads",
                "parallel_reps": "parallel_reps"}


def build_config(args: argparse.Namespace, require_mode: bool = False) -> cp.CampaignConfig:
    """Defaults, then the config file, then explicit flags."""
    values: dict = {}
    if getattr(args, "large", False):
        values.update(tile=(512, 512, 8), iterations=256, repetitions=100)
    if args.config:
        values.update(load_config_file(args.config))
    for dest, name in _FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = v
    if "tile" in values:
        values["tile"] = parse_tile(values["tile"])
    if values.get("bit") is not None and "fault" not in values:
        values["fault"] = "fixed"
    if require_mode and "mode" not in values:
        raise ConfigError("--mode is required (or set mode in the config file)")
    try:
        return cp.CampaignConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _add_common(p: argparse.ArgumentParser, modes: bool = True) -> None:
    p.add_argument("--config", help="TOML file with CampaignConfig keys")
    if modes:
        p.add_argument("--mode", choices=cp.MODES)
    p.add_argument("--tile", type=str, help="NXxNYxNZ, e.g. 64x64x8")
    p.add_argument("--iters", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--fault", choices=cp.FAULT_POLICIES)
    p.add_argument("--bit", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=int)
    p.add_argument("--dtype", choices=sorted(cp.DTYPES))
    p.add_argument("--kernel", choices=sorted(cp.KERNELS))
    p.add_argument("--threads", type=int)
    p.add_argument("--large", action="store_true", help="512x512x8 tile, 256 iterations, 100 reps")
    p.add_argument("--out", type=Path, help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stencilguard", description="Checksum-protected stencil sweeps and "
                                                      "fault-injection campaigns.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="one run, result as JSON on stdout")
    _add_common(p)
    p.add_argument("--rep", type=int, default=0, help="repetition index mixed into the seed")

    p = sub.add_parser("campaign", help="repeated runs, writes results.csv and summary.json")
    _add_common(p)
    p.add_argument("--parallel-reps", action="store_true", default=None,
                   help="spread repetitions over processes (no timing)")

    p = sub.add_parser("bitsweep", help="one fixed-bit campaign per bit position")
    _add_common(p)
    p.add_argument("--bits", type=str, help="comma separated subset of bit positions")
    p.add_argument("--parallel-reps", action="store_true", default=None)

    p = sub.add_parser("periodsweep", help="offline wall time against detection period")
    _add_common(p, modes=False)
    p.add_argument("--deltas", type=str, default=",".join(map(str, cp.PERIOD_DELTAS)))

    p = sub.add_parser("overhead", help="protected vs plain wall time, error-free")
    _add_common(p, modes=False)
    return parser


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_run(args) -> int:
    cfg = build_config(args, require_mode=True)
    cp.resolve_threads(cfg.threads)
    result = cp.run_single(cfg, args.rep)
    _emit(result.to_dict())
    if result.persistent:
        return EXIT_PERSISTENT
    if result.uncorrectable:
        return EXIT_UNCORRECTABLE
    return EXIT_OK


def cmd_campaign(args) -> int:
    cfg = build_config(args)
    summary, _ = cp.run_campaign(cfg, args.out or Path("results"))
    _emit(summary)
    return EXIT_OK


def cmd_bitsweep(args) -> int:
    cfg = build_config(args, require_mode=True)
    bits = parse_deltas(args.bits) if args.bits else None
    rows = cp.bit_position_sweep(cfg, bits, args.out)
    _emit(rows)
    return EXIT_OK


def cmd_periodsweep(args) -> int:
    cfg = replace(build_config(args), mode="offline")
    rows = cp.period_sweep(cfg, parse_deltas(args.deltas), args.out)
    _emit(rows)
    return EXIT_OK


def cmd_overhead(args) -> int:
    cfg = build_config(args)
    _emit(cp.measure_overhead(cfg, out_dir=args.out))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "campaign": cmd_campaign, "bitsweep": cmd_bitsweep,
            "periodsweep": cmd_periodsweep, "overhead": cmd_overhead}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.tile is not None:
        try:
            args.tile = parse_tile(args.tile)
        except ConfigError as exc:
            parser.error(str(exc))
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"stencilguard: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
