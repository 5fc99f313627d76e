"""Per-iteration protection: checksum interpolation, detection and correction.

One iteration of online protection:

1. sweep the tile while accumulating the new row sums ``b`` of every layer;
2. predict those row sums from the previous ones by running the stencil's 1D
   analogue over the checksum vectors (plus boundary terms, see
   :class:`BoundaryLedger`);
3. compare. Only when a layer disagrees are the column sums ``a`` (direct and
   predicted) computed, the damaged cell located and its value rebuilt.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from . import _jit
from .checksum import ChecksumPair, Which, checksum_arrays
from .errors import MissingLedger, Uncorrectable
from .grid import (BoundaryCondition, BounceBack, ConstantField, Grid2D, Periodic, Stencil,
                   StencilPlan, Tile3D, as_array3, ghost_value, make_plan, resolve, sweep_array)

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-5
REL_FLOOR = 1e-20
MAX_PAIRED_ERRORS = 7


# -- boundary ledger ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LedgerLayout:
    """Which offsets need recorded boundary sums, and the slot of every point.

    ``beta`` terms belong to the row sums ``b`` and are keyed by the x-offset;
    ``alpha`` terms belong to the column sums ``a`` and are keyed by the
    y-offset.
    """

    beta_offsets: tuple[int, ...]
    beta_slot: np.ndarray
    alpha_offsets: tuple[int, ...]
    alpha_slot: np.ndarray

    @property
    def needs_beta(self) -> bool:
        return bool(self.beta_offsets)

    @property
    def needs_alpha(self) -> bool:
        return bool(self.alpha_offsets)


def _clamped_terms_cancel(points, along: str) -> bool:
    """True when the clamped-edge terms of a group of points sum to zero exactly.

    With bounce-back reads every boundary term is a fixed linear combination
    of the first and last few cells of the line, so cancellation can be
    decided on the coefficients alone, independent of the data and the size.
    """
    coef: dict[tuple[str, int], Fraction] = {}
    for p in points:
        off = getattr(p, along)
        w = Fraction(p.w)
        m = abs(off)
        near, far = ("hi", "lo") if off > 0 else ("lo", "hi")
        coef[(near, 0)] = coef.get((near, 0), Fraction(0)) + w * m
        for kk in range(m):
            coef[(far, kk)] = coef.get((far, kk), Fraction(0)) - w
    return all(c == 0 for c in coef.values())


def _active_offsets(stencil: Stencil, bc: BoundaryCondition, along: str, across: str):
    if isinstance(bc, Periodic):
        return (), np.full(stencil.k, -1, dtype=np.int64)
    groups: dict[tuple[int, int], list] = {}
    for p in stencil.points:
        if getattr(p, along) != 0:
            groups.setdefault((getattr(p, across), p.dk), []).append(p)
    active = set()
    for pts in groups.values():
        if isinstance(bc, BounceBack) and _clamped_terms_cancel(pts, along):
            continue
        active.update(id(p) for p in pts)
    offsets = tuple(sorted({getattr(p, along) for p in stencil.points if id(p) in active}))
    slot = np.array([offsets.index(getattr(p, along)) if id(p) in active else -1
                     for p in stencil.points], dtype=np.int64)
    return offsets, slot


@lru_cache(maxsize=256)
def ledger_layout(stencil: Stencil, bc: BoundaryCondition) -> LedgerLayout:
    b_off, b_slot = _active_offsets(stencil, bc, "di", "dj")
    a_off, a_slot = _active_offsets(stencil, bc, "dj", "di")
    return LedgerLayout(b_off, b_slot, a_off, a_slot)


@dataclass
class BoundaryLedger:
    """Boundary sums recorded from the iteration-``t`` data.

    ``beta[i]`` has shape ``(nz, ny)``: for an x-offset ``i > 0`` it is the sum
    of the ``i`` values read past the right edge minus the first ``i`` cells of
    the row; for ``i < 0`` the reads past the left edge minus the last ``|i|``
    cells. ``alpha[j]`` is the same along ``y`` with shape ``(nz, nx)``.
    """

    iteration: int
    beta: dict[int, np.ndarray] = field(default_factory=dict)
    alpha: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.beta and not self.alpha

    def stacked(self, which: str, offsets: Sequence[int]) -> np.ndarray:
        table = self.beta if which == "beta" else self.alpha
        missing = [o for o in offsets if o not in table]
        if missing:
            raise MissingLedger(f"{which} terms for offsets {missing} were not recorded")
        return np.stack([table[o] for o in offsets])


def _edge_terms(u: np.ndarray, offset: int, axis: int, bc: BoundaryCondition) -> np.ndarray:
    """Boundary term for one offset along ``axis`` (2 = x, 1 = y) of ``u[z, y, x]``."""
    n = u.shape[axis]
    m = abs(offset)
    take = lambda idx: np.take(u, idx, axis=axis).astype(np.float64)
    if offset > 0:
        inside = take(np.arange(m)).sum(axis=axis)
        beyond = range(n, n + m)
    else:
        inside = take(np.arange(n - m, n)).sum(axis=axis)
        beyond = range(-m, 0)
    outside = np.zeros_like(inside)
    for idx in beyond:
        r = resolve(idx, n, bc)
        if hasattr(r, "index"):
            outside += take(r.index)
        else:
            outside += r.value
    return (outside - inside).astype(u.dtype)


def _record(u: np.ndarray, layout: LedgerLayout, bc, iteration: int, want_alpha: bool) -> BoundaryLedger:
    beta = {i: _edge_terms(u, i, 2, bc) for i in layout.beta_offsets}
    alpha = {j: _edge_terms(u, j, 1, bc) for j in layout.alpha_offsets} if want_alpha else {}
    return BoundaryLedger(iteration, beta, alpha)


def record_boundary_ledger(state: Union[Grid2D, Tile3D], stencil: Stencil, bc: BoundaryCondition,
                           which: Which = Which.BOTH) -> BoundaryLedger:
    """Record the boundary sums of the iteration-``t`` state, before sweeping it.

    Periodic reads, and bounce-back stencils whose edge terms cancel, need
    nothing and yield an empty ledger.
    """
    u = as_array3(state)
    return _record(u, ledger_layout(stencil, bc), bc, state.iteration, which is Which.BOTH)


# -- interpolation ------------------------------------------------------------------

_NO_LEDGER = {}


def _empty_ledger(dtype) -> np.ndarray:
    key = np.dtype(dtype).str
    if key not in _NO_LEDGER:
        _NO_LEDGER[key] = np.zeros((1, 1, 1), dtype=dtype)
    return _NO_LEDGER[key]


def _ghost_line_sum(bc: BoundaryCondition, length: int, dtype):
    g = ghost_value(bc)
    return np.dtype(dtype).type(0.0 if g is None else g * length)


def interpolate_b(b: np.ndarray, plan: StencilPlan, c_y: np.ndarray, layout: LedgerLayout,
                  ledger: Optional[BoundaryLedger]) -> np.ndarray:
    """Predicted row sums ``b'`` for all layers, shape ``(nz, ny)``."""
    dtype = b.dtype
    if layout.needs_beta:
        if ledger is None:
            raise MissingLedger("boundary conditions need beta terms but no ledger was given")
        stack = ledger.stacked("beta", layout.beta_offsets).astype(dtype, copy=False)
        slot = layout.beta_slot
    else:
        stack, slot = _empty_ledger(dtype), layout.beta_slot
    out = np.empty_like(b)
    _jit.interpolate_kernel(b, c_y, plan.w, plan.ymap, plan.zmap, stack, slot,
                            _ghost_line_sum(plan.bc, plan.shape[2], dtype), out)
    return out


def interpolate_a(a: np.ndarray, plan: StencilPlan, c_x: np.ndarray, layout: LedgerLayout,
                  ledger: Optional[BoundaryLedger]) -> np.ndarray:
    """Predicted column sums ``a'`` for all layers, shape ``(nz, nx)``."""
    dtype = a.dtype
    if layout.needs_alpha:
        if ledger is None:
            raise MissingLedger("boundary conditions need alpha terms but no ledger was given")
        stack = ledger.stacked("alpha", layout.alpha_offsets).astype(dtype, copy=False)
        slot = layout.alpha_slot
    else:
        stack, slot = _empty_ledger(dtype), layout.alpha_slot
    out = np.empty_like(a)
    _jit.interpolate_kernel(a, c_x, plan.w, plan.xmap, plan.zmap, stack, slot,
                            _ghost_line_sum(plan.bc, plan.shape[1], dtype), out)
    return out


def _as2(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return v[np.newaxis] if v.ndim == 1 else v


def interpolate_checksums(cs_t: ChecksumPair, stencil: Stencil, c_x: np.ndarray, c_y: np.ndarray,
                          ledger: Optional[BoundaryLedger], bc: BoundaryCondition) -> ChecksumPair:
    """Predict the checksums of iteration ``t+1`` from those of iteration ``t``.

    ``b'`` is always produced; ``a'`` only when ``cs_t`` carries ``a``.
    Out-of-range checksum indices are resolved with the same policy as the
    grid, a ghost line contributing its full length times the ghost value.
    """
    b = _as2(cs_t.b)
    c_x, c_y = _as2(c_x), _as2(c_y)
    nz, ny = b.shape
    nx = c_x.shape[1]
    plan = make_plan(stencil, bc, (nz, ny, nx), b.dtype)
    layout = ledger_layout(stencil, bc)
    b_new = interpolate_b(b, plan, c_y.astype(b.dtype, copy=False), layout, ledger)
    a_new = None
    if cs_t.a is not None:
        a = _as2(cs_t.a)
        a_new = interpolate_a(a, plan, c_x.astype(a.dtype, copy=False), layout, ledger)
    return ChecksumPair(a_new, b_new, cs_t.iteration + 1, cs_t.which)


# -- detection --------------------------------------------------------------------------

def relative_gaps(direct: np.ndarray, interp: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    """``|interp/direct - 1|`` in binary64; absolute gap where ``|direct| < floor``.

    Non-finite entries come back as ``inf``.
    """
    d = np.asarray(direct, dtype=np.float64)
    q = np.asarray(interp, dtype=np.float64)
    with np.errstate(all="ignore"):
        small = np.abs(d) < floor
        rel = np.where(small, np.abs(q - d), np.abs(q / np.where(small, 1.0, d) - 1.0))
    rel[~(np.isfinite(d) & np.isfinite(q)) | ~np.isfinite(rel)] = np.inf
    return rel


def detect(direct: np.ndarray, interp: np.ndarray, epsilon: float = DEFAULT_EPSILON,
           floor: float = REL_FLOOR) -> list[tuple[int, float]]:
    """Indices whose relative gap exceeds ``epsilon`` (or that are non-finite)."""
    if np.shape(direct) != np.shape(interp):
        raise ValueError("direct and interpolated checksums differ in length")
    rel = relative_gaps(direct, interp, floor)
    return [(int(i), float(rel[i])) for i in np.flatnonzero(rel > epsilon)]


@dataclass
class DetectionReport:
    err_x: list[tuple[int, float]]
    err_y: list[tuple[int, float]]
    any_nonfinite: bool = False
    layer: int = 0


@dataclass
class CorrectionRecord:
    ex: int
    ey: int
    observed: float
    corrected: float
    vx: float
    vy: float
    consistent: bool
    layer: int = 0
    iteration: int = 0

    def to_dict(self) -> dict:
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else repr(v))
                for k, v in self.__dict__.items()}


# -- correction ---------------------------------------------------------------------------

def _row_sum(values: np.ndarray):
    return _jit.row_sum(np.ascontiguousarray(values), values.dtype.type(0))


def _seq_sum(values: np.ndarray):
    """Left-to-right sum in the element type, matching the column-sum kernel."""
    if values.size == 0:
        return values.dtype.type(0)
    return np.cumsum(values, dtype=values.dtype)[-1]


def locate_and_correct(grid: Grid2D, direct_a: np.ndarray, direct_b: np.ndarray,
                       interp_a: np.ndarray, interp_b: np.ndarray, report: DetectionReport,
                       epsilon: float = DEFAULT_EPSILON) -> list[CorrectionRecord]:
    """Rebuild the flagged cells of one layer in place.

    Each candidate cell is rebuilt twice, once from its column and once from
    its row; a pairing of flagged columns with flagged rows is only accepted
    when both reconstructions agree to ``epsilon`` relative to the checksums
    involved. The partial sums that exclude the damaged cell are taken over
    the remaining cells directly, so a corrupted value of any magnitude
    (including inf and NaN) drops out without cancellation. The direct
    checksum entries touched are refreshed from the repaired data.
    """
    xs = [i for i, _ in report.err_x]
    ys = [i for i, _ in report.err_y]
    if not xs or not ys:
        raise Uncorrectable("mismatch found along only one axis", reports=[report])
    if len(xs) != len(ys):
        raise Uncorrectable(f"{len(xs)} flagged columns vs {len(ys)} flagged rows", reports=[report])
    m = len(xs)
    if m > MAX_PAIRED_ERRORS:
        raise Uncorrectable(f"{m} simultaneous errors exceed the pairing limit", reports=[report])

    data = grid.data
    with np.errstate(invalid="ignore", over="ignore"):
        u64 = data.astype(np.float64)
    col_tot = {ex: u64[:, ex] for ex in xs}
    row_tot = {ey: u64[ey, :] for ey in ys}

    def rebuild(ex, ey):
        rest_x = float(np.delete(col_tot[ex], ey).sum())
        rest_y = float(np.delete(row_tot[ey], ex).sum())
        ia, ib = float(interp_a[ex]), float(interp_b[ey])
        vx, vy = ia - rest_x, ib - rest_y
        tol = epsilon * max(abs(ia), abs(ib), 1.0)
        return vx, vy, tol

    with np.errstate(invalid="ignore", over="ignore"):
        cand = {(ex, ey): rebuild(ex, ey) for ex in xs for ey in ys}
    best = None
    for perm in itertools.permutations(range(m)):
        pairs = [(xs[i], ys[perm[i]]) for i in range(m)]
        gaps = []
        for pr in pairs:
            vx, vy, tol = cand[pr]
            gap = abs(vx - vy)
            if not (math.isfinite(vx) and math.isfinite(vy)) or gap > tol:
                break
            gaps.append(gap)
        else:
            score = sum(gaps)
            if best is None or score < best[0]:
                best = (score, pairs)
    if best is None:
        raise Uncorrectable("no consistent pairing of flagged rows and columns", reports=[report])

    records = []
    for ex, ey in best[1]:
        vx, vy, _ = cand[(ex, ey)]
        observed = data[ey, ex].item()
        corrected = data.dtype.type((vx + vy) / 2.0)
        data[ey, ex] = corrected
        records.append(CorrectionRecord(ex, ey, observed, corrected.item(), vx, vy, True, report.layer))
    for ex in xs:
        direct_a[ex] = _seq_sum(data[:, ex])
    for ey in ys:
        direct_b[ey] = _row_sum(data[ey, :])
    return records


# -- online driver ----------------------------------------------------------------------------

@dataclass(eq=False)
class ProtectionContext:
    """Everything derived once from a kernel and a tile shape."""

    stencil: Stencil
    bc: BoundaryCondition
    constant: ConstantField
    plan: StencilPlan
    C: np.ndarray
    c_x: np.ndarray
    c_y: np.ndarray
    layout: LedgerLayout

    @classmethod
    def build(cls, stencil: Stencil, bc: BoundaryCondition, constant: ConstantField,
              shape: tuple[int, int, int], dtype) -> "ProtectionContext":
        plan = make_plan(stencil, bc, shape, dtype)
        C = constant.array(shape, dtype)
        c_x, c_y = constant.sums(shape, dtype)
        return cls(stencil, bc, constant, plan, C, c_x, c_y, ledger_layout(stencil, bc))

    @classmethod
    def for_kernel(cls, kernel, shape, dtype) -> "ProtectionContext":
        return cls.build(kernel.tile_stencil(), kernel.bc, kernel.constant, shape, dtype)

    def record(self, u: np.ndarray, iteration: int, want_alpha: bool = False) -> Optional[BoundaryLedger]:
        if not self.layout.needs_beta and not (want_alpha and self.layout.needs_alpha):
            return None
        return _record(u, self.layout, self.bc, iteration, want_alpha)

    def interp_b(self, b: np.ndarray, ledger: Optional[BoundaryLedger]) -> np.ndarray:
        return interpolate_b(b, self.plan, self.c_y, self.layout, ledger)

    def interp_a(self, a: np.ndarray, ledger: Optional[BoundaryLedger]) -> np.ndarray:
        return interpolate_a(a, self.plan, self.c_x, self.layout, ledger)


@dataclass
class ProtectedState:
    tile: Tile3D
    b: np.ndarray  # direct row sums of ``tile``, shape (nz, ny)
    context: ProtectionContext
    epsilon: float = DEFAULT_EPSILON
    detections: int = 0
    corrections: int = 0
    checksum_repairs: int = 0
    uncorrectable: int = 0

    @classmethod
    def start(cls, tile: Tile3D, kernel, epsilon: float = DEFAULT_EPSILON) -> "ProtectedState":
        u = np.ascontiguousarray(tile.data)
        ctx = ProtectionContext.for_kernel(kernel, u.shape, u.dtype)
        _, b = checksum_arrays(u, want_a=False)
        return cls(Tile3D(u, tile.iteration), b, ctx, epsilon)


def _layer_reports(b_new, b_int, epsilon) -> dict[int, list]:
    if not _jit.any_gap_exceeds(b_new, b_int, epsilon, REL_FLOOR):
        return {}
    rel = relative_gaps(b_new, b_int)
    flagged = {}
    for z in np.flatnonzero((rel > epsilon).any(axis=1)):
        idx = np.flatnonzero(rel[z] > epsilon)
        flagged[int(z)] = [(int(i), float(rel[z, i])) for i in idx]
    return flagged


def online_step(state: ProtectedState, fault=None, out: Optional[np.ndarray] = None
                ) -> tuple[ProtectedState, list[CorrectionRecord]]:
    """Advance one protected iteration.

    ``fault`` is anything with ``take(iteration)`` (domain faults) and,
    optionally, ``take_checksum(iteration)`` (faults in the fused row sums).
    ``out`` may supply a scratch buffer for the new tile. Raises
    :class:`Uncorrectable` carrying the advanced state in ``.state`` when a
    mismatch cannot be repaired.
    """
    ctx = state.context
    u = state.tile.data
    t = state.tile.iteration
    ledger = ctx.record(u, t)
    if out is None:
        out = np.empty_like(u)
    b_new = np.empty_like(state.b)
    f = fault.take(t) if fault is not None else None
    sweep_array(u, ctx.plan, ctx.C, out=out, bsum=b_new, fault=f)
    if fault is not None and hasattr(fault, "take_checksum"):
        cf = fault.take_checksum(t)
        if cf is not None:
            z, y, mask = cf
            bits = b_new.view(_jit.bits_dtype(b_new.dtype))
            bits[z, y] ^= bits.dtype.type(mask)

    b_int = ctx.interp_b(state.b, ledger)
    flagged = _layer_reports(b_new, b_int, state.epsilon)
    new = replace(state, tile=Tile3D(out, t + 1), b=b_new)
    if not flagged:
        return new, []

    new.detections += 1
    full_ledger = ctx.record(u, t, want_alpha=True) if ctx.layout.needs_alpha else ledger
    a_t, _ = checksum_arrays(u, want_b=False)
    a_int = ctx.interp_a(a_t, full_ledger)
    a_new, _ = checksum_arrays(out, want_b=False)

    records: list[CorrectionRecord] = []
    failures: list[DetectionReport] = []
    for z, err_y in flagged.items():
        err_x = detect(a_new[z], a_int[z], state.epsilon)
        report = DetectionReport(err_x, err_y, any(not math.isfinite(r) for _, r in err_x + err_y), z)
        if not err_x:
            # nothing wrong along x: the row sums themselves may be the damaged copy
            for y, _ in err_y:
                b_new[z, y] = _row_sum(out[z, y, :])
            if not detect(b_new[z], b_int[z], state.epsilon):
                new.checksum_repairs += 1
                continue
        try:
            recs = locate_and_correct(Grid2D(out[z], t + 1), a_new[z], b_new[z], a_int[z], b_int[z],
                                      report, state.epsilon)
        except Uncorrectable as exc:
            log.warning("iteration %d layer %d: %s", t + 1, z, exc)
            failures.append(report)
            continue
        for r in recs:
            r.iteration = t + 1
        records.extend(recs)
    new.corrections += len(records)
    if failures:
        new.uncorrectable += 1
        raise Uncorrectable(f"{len(failures)} layer(s) left uncorrected at iteration {t + 1}",
                            state=new, reports=failures)
    return new, records


@dataclass
class OnlineOutcome:
    tile: Tile3D
    records: list[CorrectionRecord]
    detections: int
    corrections: int
    checksum_repairs: int
    uncorrectable: int


def run_online(tile: Tile3D, kernel, iterations: int, epsilon: float = DEFAULT_EPSILON,
               fault=None) -> OnlineOutcome:
    """Protected run; uncorrectable iterations are logged and the run goes on."""
    state = ProtectedState.start(Tile3D(np.array(tile.data, copy=True), tile.iteration), kernel, epsilon)
    spare = np.empty_like(state.tile.data)
    records: list[CorrectionRecord] = []
    for _ in range(iterations):
        prev = state.tile.data
        try:
            state, recs = online_step(state, fault, out=spare)
        except Uncorrectable as exc:
            state, recs = exc.state, []
        records.extend(recs)
        spare = prev
    return OnlineOutcome(state.tile, records, state.detections, state.corrections,
                         state.checksum_repairs, state.uncorrectable)
