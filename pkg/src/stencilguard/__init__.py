"""Checksum-based fault tolerance for 2D/3D stencil sweeps."""

from __future__ import annotations

from .campaign import (CampaignConfig, RunResult, aggregate, bit_position_sweep, l2_error,
                       measure_overhead, period_sweep, run_campaign, run_single)
from .checksum import (ChecksumPair, Which, compute_checksums, sweep_tile_with_checksum,
                       sweep_with_checksum)
from .errors import (BitOutOfRange, ConfigError, DimensionMismatch, InvalidParams, LengthMismatch,
                     MissingLedger, PersistentError, StencilGuardError, Uncorrectable)
from .fault import FaultInjector, FaultSchedule, FaultSpec, SplitMix64, flip_bit, schedule_random_fault
from .grid import (BounceBack, ConstantGhost, Grid2D, Periodic, PerCell, Stencil, StencilPoint,
                   Tile3D, Uniform, ZeroGhost, resolve, run_unprotected, sweep, sweep_tile)
from .kernels import KernelSpec, ThermalParams, get_kernel, make_five_point, make_hotspot3d_like
from .offline import (Checkpoint, DetectionOutcome, OfflineState, iterate_interpolation,
                      offline_step_block, rollback_and_recompute, run_offline)
from .online import (BoundaryLedger, CorrectionRecord, DetectionReport, ProtectedState, detect,
                     interpolate_checksums, locate_and_correct, online_step, record_boundary_ledger,
                     run_online)

__version__ = "0.1.0"
