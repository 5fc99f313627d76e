"""Periodic detection every ``delta`` sweeps with checkpoint/rollback recovery.

Row sums are still accumulated by every fused sweep; only the prediction and
the comparison are deferred. At the end of a block the checkpointed row sums
are pushed through ``delta`` interpolation steps and compared with the direct
ones. A clean block becomes the new checkpoint; a dirty one is thrown away and
recomputed from the previous checkpoint.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gridio
from .checksum import ChecksumPair, checksum_arrays
from .errors import MissingLedger, PersistentError
from .grid import BoundaryCondition, Stencil, Tile3D, sweep_array
from .online import (DEFAULT_EPSILON, BoundaryLedger, ProtectionContext, _layer_reports,
                     interpolate_checksums, ledger_layout)

log = logging.getLogger(__name__)

DEFAULT_DELTA = 16
MAX_DELTA = 128


class DetectionOutcome(enum.Enum):
    CLEAN = "clean"
    MISMATCH = "mismatch"


@dataclass
class Checkpoint:
    iteration: int
    tile: np.ndarray
    b: np.ndarray
    ledgers: list[Optional[BoundaryLedger]] = field(default_factory=list)

    def spill(self, path, epsilon: float, delta: int) -> None:
        """Write ``<path>`` as ABFTGRID plus ``<path>.json`` with the checksums."""
        path = Path(path)
        gridio.write_grid(path, Tile3D(self.tile, self.iteration))
        side = {"iteration": self.iteration, "epsilon": epsilon, "delta": delta,
                "checksums": {"b": self.b.astype(np.float64).tolist()}}
        path.with_name(path.name + ".json").write_text(json.dumps(side, indent=2))


def iterate_interpolation(cs: ChecksumPair, delta: int, stencil: Stencil, c_x, c_y,
                          ledgers: Sequence[Optional[BoundaryLedger]], bc: BoundaryCondition) -> ChecksumPair:
    """Apply the one-step interpolation ``delta`` times, one ledger per step."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    layout = ledger_layout(stencil, bc)
    needed = layout.needs_beta or (cs.a is not None and layout.needs_alpha)
    if needed and len(ledgers) < delta:
        raise MissingLedger(f"{delta} steps need {delta} ledgers, got {len(ledgers)}")
    out = cs
    for s in range(delta):
        out = interpolate_checksums(out, stencil, c_x, c_y, ledgers[s] if ledgers else None, bc)
    return out


@dataclass
class OfflineState:
    tile: Tile3D
    b: np.ndarray
    context: ProtectionContext
    checkpoint: Checkpoint
    epsilon: float = DEFAULT_EPSILON
    delta: int = DEFAULT_DELTA
    detections: int = 0
    rollbacks: int = 0
    blocks: int = 0
    last_reports: dict = field(default_factory=dict)
    _spare: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def start(cls, tile: Tile3D, kernel, epsilon: float = DEFAULT_EPSILON,
              delta: int = DEFAULT_DELTA) -> "OfflineState":
        if not 1 <= delta <= MAX_DELTA:
            raise ValueError(f"delta must lie in 1..{MAX_DELTA}")
        u = np.array(tile.data, copy=True)
        ctx = ProtectionContext.for_kernel(kernel, u.shape, u.dtype)
        _, b = checksum_arrays(u, want_a=False)
        ckpt = Checkpoint(tile.iteration, u.copy(), b.copy())
        return cls(Tile3D(u, tile.iteration), b, ctx, ckpt, epsilon, delta)


def _sweep_block(state: OfflineState, steps: int, fault) -> tuple[np.ndarray, np.ndarray, list]:
    ctx = state.context
    u = state.tile.data
    spare = state._spare if state._spare is not None else np.empty_like(u)
    b = np.empty_like(state.b)
    ledgers = []
    t0 = state.tile.iteration
    for t in range(t0, t0 + steps):
        ledgers.append(ctx.record(u, t))
        f = fault.take(t) if fault is not None else None
        sweep_array(u, ctx.plan, ctx.C, out=spare, bsum=b, fault=f)
        u, spare = spare, u
    state._spare = spare
    return u, b, ledgers


def _predict(state: OfflineState, ledgers) -> np.ndarray:
    ctx = state.context
    b = state.checkpoint.b
    for ledger in ledgers:
        b = ctx.interp_b(b, ledger)
    return b


def _commit(state: OfflineState, u: np.ndarray, b: np.ndarray, steps: int, ledgers) -> None:
    it = state.checkpoint.iteration + steps
    state.tile = Tile3D(u, it)
    state.b = b
    ck = state.checkpoint
    np.copyto(ck.tile, u)
    np.copyto(ck.b, b)
    ck.iteration = it
    ck.ledgers = []


def offline_step_block(state: OfflineState, delta: Optional[int] = None, fault=None
                       ) -> tuple[OfflineState, DetectionOutcome]:
    """Run one block of ``delta`` fused sweeps and check it.

    On a mismatch the block is rolled back and recomputed before returning,
    so the state handed back is always checkpointed and clean.
    """
    steps = delta or state.delta
    u, b, ledgers = _sweep_block(state, steps, fault)
    state.checkpoint.ledgers = ledgers
    flagged = _layer_reports(b, _predict(state, ledgers), state.epsilon)
    state.blocks += 1
    if not flagged:
        _commit(state, u, b, steps, ledgers)
        return state, DetectionOutcome.CLEAN
    state.detections += 1
    state.last_reports = flagged
    if u is not state.tile.data:
        state._spare = u
    log.info("mismatch after iteration %d in layers %s; rolling back to %d",
             state.checkpoint.iteration + steps, sorted(flagged), state.checkpoint.iteration)
    state = rollback_and_recompute(state, state.checkpoint, steps)
    return state, DetectionOutcome.MISMATCH


def rollback_and_recompute(state: OfflineState, checkpoint: Checkpoint,
                           steps: Optional[int] = None) -> OfflineState:
    """Restore ``checkpoint`` and redo the block without any fault.

    Raises :class:`PersistentError` when the recomputed block fails again.
    """
    steps = steps or state.delta
    state.rollbacks += 1
    restored = state.tile.data
    if state._spare is restored:
        state._spare = None
    np.copyto(restored, checkpoint.tile)
    state.tile = Tile3D(restored, checkpoint.iteration)
    state.b = checkpoint.b.copy()
    u, b, ledgers = _sweep_block(state, steps, None)
    flagged = _layer_reports(b, _predict(state, ledgers), state.epsilon)
    if flagged:
        raise PersistentError(f"block {checkpoint.iteration}..{checkpoint.iteration + steps} "
                              f"failed detection twice (layers {sorted(flagged)})")
    _commit(state, u, b, steps, ledgers)
    return state


@dataclass
class OfflineOutcome:
    tile: Tile3D
    detections: int
    rollbacks: int
    blocks: int
    persistent: bool = False


def run_offline(tile: Tile3D, kernel, iterations: int, epsilon: float = DEFAULT_EPSILON,
                delta: int = DEFAULT_DELTA, fault=None) -> OfflineOutcome:
    state = OfflineState.start(tile, kernel, epsilon, delta)
    done = 0
    while done < iterations:
        steps = min(delta, iterations - done)
        try:
            state, _ = offline_step_block(state, steps, fault)
        except PersistentError as exc:
            log.error("%s", exc)
            return OfflineOutcome(state.tile, state.detections, state.rollbacks, state.blocks, True)
        done += steps
    return OfflineOutcome(state.tile, state.detections, state.rollbacks, state.blocks)
