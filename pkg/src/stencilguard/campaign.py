"""Fault-injection campaigns: repeated runs, accuracy metric and sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _jit
from .errors import ConfigError, LengthMismatch
from .fault import FaultInjector, FaultSpec, schedule_random_fault
from .grid import Tile3D, run_unprotected
from .kernels import KERNELS, get_kernel
from .offline import DEFAULT_DELTA, MAX_DELTA, run_offline
from .online import DEFAULT_EPSILON, run_online

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("noabft", "online", "offline")
FAULT_POLICIES = ("none", "random", "fixed")
DTYPES = {"f32": np.float32, "f64": np.float64}
REFERENCE_OVERHEAD = 1.08
PERIOD_DELTAS = (1, 2, 4, 8, 16, 32, 64, 128)
THREADS_ENV = "STENCILGUARD_THREADS"


@dataclass
class CampaignConfig:
    tile: tuple[int, int, int] = (64, 64, 8)  # (nx, ny, nz)
    iterations: int = 128
    repetitions: int = 1000
    mode: str = "online"
    epsilon: float = DEFAULT_EPSILON
    delta: int = DEFAULT_DELTA
    kernel: str = "hotspot3d"
    seed: int = 0
    fault: str = "none"
    bit: Optional[int] = None
    dtype: str = "f32"
    threads: Optional[int] = None
    parallel_reps: bool = False

    @classmethod
    def large(cls, **overrides) -> "CampaignConfig":
        """The 512x512x8 / 256 iteration / 100 repetition configuration."""
        base = dict(tile=(512, 512, 8), iterations=256, repetitions=100)
        base.update(overrides)
        return cls(**base)

    def __post_init__(self):
        self.tile = tuple(int(v) for v in self.tile)
        self.validate()

    def validate(self) -> None:
        if len(self.tile) != 3 or min(self.tile) < 1:
            raise ConfigError(f"tile must be three positive extents, got {self.tile}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.fault not in FAULT_POLICIES:
            raise ConfigError(f"fault must be one of {FAULT_POLICIES}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if not 1 <= self.delta <= MAX_DELTA:
            raise ConfigError(f"delta must lie in 1..{MAX_DELTA}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.fault == "fixed":
            if self.bit is None:
                raise ConfigError("fixed fault policy needs a bit")
            if not 0 <= self.bit < self.element_width:
                raise ConfigError(f"bit {self.bit} outside 0..{self.element_width - 1}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def element_width(self) -> int:
        return 32 if self.dtype == "f32" else 64

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tile"] = list(self.tile)
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class RunResult:
    rep: int
    seed: int
    mode: str
    fault: Optional[FaultSpec]
    detections: int
    corrections: int
    rollbacks: int
    checksum_repairs: int
    uncorrectable: bool
    persistent: bool
    l2_error: float
    wall_ms: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fault"] = self.fault.to_dict() if self.fault else None
        return d


def l2_error(ref, comp) -> float:
    """Euclidean distance between two tiles, accumulated in float64."""
    r = np.asarray(getattr(ref, "data", ref)).ravel()
    c = np.asarray(getattr(comp, "data", comp)).ravel()
    if r.size != c.size:
        raise LengthMismatch(f"{r.size} vs {c.size} cells")
    with np.errstate(invalid="ignore", over="ignore"):
        d = r.astype(np.float64) - c.astype(np.float64)
    return math.sqrt(float(np.dot(d, d)))


def resolve_threads(requested: Optional[int]) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            requested = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if requested is None:
        return _jit.set_threads(_jit.numba.config.NUMBA_NUM_THREADS)
    return _jit.set_threads(requested)


_REFERENCES: dict[tuple, np.ndarray] = {}


def reference_output(kernel: str, tile: tuple[int, int, int], iterations: int, dtype: str) -> np.ndarray:
    """Single-threaded unprotected result, computed once per key."""
    key = (kernel, tuple(tile), iterations, dtype)
    if key not in _REFERENCES:
        spec = get_kernel(kernel, tile)
        prev = _jit.numba.get_num_threads()
        _jit.set_threads(1)
        try:
            out = run_unprotected(spec.initial_tile(tile, DTYPES[dtype]), spec, iterations)
        finally:
            _jit.set_threads(prev)
        out.data.setflags(write=False)
        _REFERENCES[key] = out.data
    return _REFERENCES[key]


def fault_for(config: CampaignConfig, seed: int) -> Optional[FaultSpec]:
    if config.fault == "none":
        return None
    fixed = config.bit if config.fault == "fixed" else None
    return schedule_random_fault(seed, config.tile, config.iterations, config.element_width, fixed)


def _execute(config: CampaignConfig, spec, tile: Tile3D, fault) -> tuple[Tile3D, dict, float]:
    """Run the selected mode; returns the final tile, counters and loop time in ms."""
    counts = dict(detections=0, corrections=0, rollbacks=0, checksum_repairs=0,
                  uncorrectable=False, persistent=False)
    t0 = time.perf_counter()
    if config.mode == "noabft":
        final = run_unprotected(tile, spec, config.iterations, fault)
    elif config.mode == "online":
        res = run_online(tile, spec, config.iterations, config.epsilon, fault)
        final = res.tile
        counts.update(detections=res.detections, corrections=res.corrections,
                      checksum_repairs=res.checksum_repairs, uncorrectable=res.uncorrectable > 0)
    else:
        res = run_offline(tile, spec, config.iterations, config.epsilon, config.delta, fault)
        final = res.tile
        counts.update(detections=res.detections, rollbacks=res.rollbacks, persistent=res.persistent)
    wall = (time.perf_counter() - t0) * 1e3
    return final, counts, wall


def run_single(config: CampaignConfig, rep_index: int, timed: bool = True) -> RunResult:
    seed = config.seed ^ rep_index
    spec = get_kernel(config.kernel, config.tile)
    tile = spec.initial_tile(config.tile, config.np_dtype)
    fspec = fault_for(config, seed)
    injector = FaultInjector(fspec, config.element_width) if fspec is not None else None
    final, counts, wall = _execute(config, spec, tile, injector)
    ref = reference_output(config.kernel, config.tile, config.iterations, config.dtype)
    err = l2_error(ref, final.data)
    if math.isnan(err):
        err = math.inf
    return RunResult(rep_index, seed, config.mode, fspec, l2_error=err,
                     wall_ms=wall if timed else math.nan, **counts)


def _run_untimed(args):
    config, rep = args
    resolve_threads(1)
    return run_single(config, rep, timed=False)


def run_results(config: CampaignConfig) -> list[RunResult]:
    """All repetitions of one configuration (warm-up discarded when timing)."""
    if config.parallel_reps:
        # forking after the OpenMP runtime has started is unsafe
        with ProcessPoolExecutor(mp_context=multiprocessing.get_context("spawn")) as pool:
            return list(pool.map(_run_untimed, [(config, r) for r in range(config.repetitions)],
                                 chunksize=8))
    resolve_threads(config.threads)
    run_single(replace(config, fault="none", bit=None), 0)
    return [run_single(config, r) for r in range(config.repetitions)]


def aggregate(results: Sequence[RunResult]) -> dict:
    errs = np.array([r.l2_error for r in results], dtype=np.float64)
    walls = np.array([r.wall_ms for r in results], dtype=np.float64)
    n = len(results)
    return {
        "repetitions": n,
        "l2_mean": float(np.mean(errs)),
        "l2_median": float(np.median(errs)),
        "l2_max": float(np.max(errs)),
        "wall_ms_mean": float(np.mean(walls)),
        "wall_ms_std": float(np.std(walls)),
        "detection_rate": sum(r.detections > 0 for r in results) / n,
        "correction_rate": sum(r.corrections > 0 or r.rollbacks > 0 or r.checksum_repairs > 0
                               for r in results) / n,
        "uncorrectable_runs": sum(r.uncorrectable for r in results),
        "persistent_runs": sum(r.persistent for r in results),
    }


CSV_FIELDS = ["rep", "seed", "mode", "fault_iteration", "fault_z", "fault_y", "fault_x", "fault_bit",
              "detections", "corrections", "rollbacks", "checksum_repairs", "uncorrectable",
              "persistent", "l2_error", "wall_ms"]


def _csv_row(r: RunResult) -> dict:
    f = r.fault
    row = {"rep": r.rep, "seed": r.seed, "mode": r.mode,
           "fault_iteration": f.iteration if f else "", "fault_z": f.z if f else "",
           "fault_y": f.y if f else "", "fault_x": f.x if f else "", "fault_bit": f.bit if f else "",
           "detections": r.detections, "corrections": r.corrections, "rollbacks": r.rollbacks,
           "checksum_repairs": r.checksum_repairs, "uncorrectable": int(r.uncorrectable),
           "persistent": int(r.persistent), "l2_error": repr(r.l2_error), "wall_ms": repr(r.wall_ms)}
    return row


def write_results_csv(path, results: Iterable[RunResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in results:
            w.writerow(_csv_row(r))


def read_results_csv(path) -> list[RunResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            fault = None
            if row["fault_iteration"] != "":
                fault = FaultSpec(int(row["fault_iteration"]), int(row["fault_z"]), int(row["fault_y"]),
                                  int(row["fault_x"]), int(row["fault_bit"]))
            out.append(RunResult(int(row["rep"]), int(row["seed"]), row["mode"], fault,
                                 int(row["detections"]), int(row["corrections"]), int(row["rollbacks"]),
                                 int(row["checksum_repairs"]), bool(int(row["uncorrectable"])),
                                 bool(int(row["persistent"])), float(row["l2_error"]),
                                 float(row["wall_ms"])))
    return out


def _write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def run_campaign(config: CampaignConfig, out_dir=None) -> tuple[dict, list[RunResult]]:
    """Run every repetition; optionally write ``results.csv`` and ``summary.json``."""
    results = run_results(config)
    summary = {"schema": SCHEMA_VERSION, "config": config.to_dict(), "aggregates": aggregate(results)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(out / "results.csv", results)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary, results


def _quartiles(values: np.ndarray) -> dict:
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    return {"l2_min": float(values.min()), "l2_q1": float(q1), "l2_median": float(med),
            "l2_q3": float(q3), "l2_max": float(values.max()), "l2_mean": float(values.mean())}


def bit_position_sweep(config: CampaignConfig, bits: Optional[Iterable[int]] = None,
                       out_dir=None) -> list[dict]:
    """One fixed-bit campaign per bit position; returns one row per bit."""
    if config.element_width != 32:
        raise ConfigError("the bit sweep is defined for 32-bit elements")
    rows = []
    for bit in (range(32) if bits is None else bits):
        results = run_results(replace(config, fault="fixed", bit=bit))
        errs = np.array([r.l2_error for r in results])
        row = {"bit": bit, "mode": config.mode, "repetitions": len(results),
               "detection_rate": sum(r.detections > 0 for r in results) / len(results)}
        row.update(_quartiles(errs))
        rows.append(row)
        log.info("bit %2d: detection rate %.3f, median l2 %.3g", bit, row["detection_rate"],
                 row["l2_median"])
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_rows(Path(out_dir) / "bitsweep.csv", rows)
    return rows


def period_sweep(config: CampaignConfig, deltas: Sequence[int] = PERIOD_DELTAS, out_dir=None) -> list[dict]:
    """Offline wall time against detection period, error-free and with one random fault.

    Within a scenario the deltas take turns repetition by repetition, so a
    drift in machine load does not favour whichever delta ran first.
    """
    resolve_threads(config.threads)
    rows = []
    for scenario, policy in (("error-free", "none"), ("single-fault", "random")):
        cfgs = {d: replace(config, mode="offline", delta=d, fault=policy, bit=None, parallel_reps=False)
                for d in deltas}
        for d in deltas:
            run_single(replace(cfgs[d], fault="none"), 0)
        results: dict[int, list[RunResult]] = {d: [] for d in deltas}
        for r in range(config.repetitions):
            for d in deltas:
                results[d].append(run_single(cfgs[d], r))
        for d in deltas:
            agg = aggregate(results[d])
            rows.append({"scenario": scenario, "delta": d, "repetitions": config.repetitions,
                         "wall_ms_mean": agg["wall_ms_mean"], "wall_ms_std": agg["wall_ms_std"],
                         "detections": sum(r.detections for r in results[d]),
                         "rollbacks": sum(r.rollbacks for r in results[d]),
                         "l2_median": agg["l2_median"]})
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_rows(Path(out_dir) / "periodsweep.csv", rows)
    return rows


def measure_overhead(config: CampaignConfig, modes: Sequence[str] = ("online", "offline"),
                     out_dir=None) -> dict:
    """Error-free wall time of each protected mode relative to plain sweeps.

    Modes are interleaved repetition by repetition so slow drifts in machine
    load hit all of them alike.
    """
    base = replace(config, fault="none", bit=None, parallel_reps=False)
    resolve_threads(config.threads)
    all_modes = ("noabft",) + tuple(modes)
    cfgs = {m: replace(base, mode=m) for m in all_modes}
    for m in all_modes:
        run_single(cfgs[m], 0)
    walls: dict[str, list[float]] = {m: [] for m in all_modes}
    for r in range(config.repetitions):
        for m in all_modes:
            walls[m].append(run_single(cfgs[m], r).wall_ms)
    plain = float(np.mean(walls["noabft"]))
    report = {"schema": SCHEMA_VERSION, "config": base.to_dict(), "reference_ratio": REFERENCE_OVERHEAD,
              "noabft_ms_mean": plain, "noabft_ms_std": float(np.std(walls["noabft"]))}
    for m in modes:
        report[f"{m}_ms_mean"] = float(np.mean(walls[m]))
        report[f"{m}_ms_std"] = float(np.std(walls[m]))
        report[f"{m}_ratio"] = float(np.mean(walls[m])) / plain
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "overhead.json").write_text(json.dumps(report, indent=2))
    return report
