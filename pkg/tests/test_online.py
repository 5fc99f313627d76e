from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stencilguard.checksum import ChecksumPair, Which, compute_checksums
from stencilguard.errors import MissingLedger, Uncorrectable
from stencilguard.fault import FaultInjector, FaultSpec
from stencilguard.grid import (BounceBack, ConstantGhost, Grid2D, PerCell, Periodic, Stencil,
                               StencilPoint, Tile3D, Uniform, ZeroGhost, run_unprotected, sweep,
                               sweep_tile)
from stencilguard.kernels import KernelSpec, get_kernel, make_five_point
from stencilguard.online import (DetectionReport, ProtectedState, detect, interpolate_checksums,
                                 ledger_layout, locate_and_correct, online_step,
                                 record_boundary_ledger, relative_gaps, run_online)

BCS = [BounceBack(), Periodic(), ZeroGhost(), ConstantGhost(0.75)]
FIG2 = make_five_point(0.5, 0.125, 0.125, 0.125, 0.125).stencil


def max_gap(direct, interp):
    return float(np.max(np.abs(np.asarray(interp) / np.asarray(direct) - 1.0)))


def interpolated_vs_direct(u, stencil, C, bc):
    """Both checksum pairs of the swept grid: interpolated and recomputed."""
    g = Grid2D(u)
    cs = compute_checksums(g)
    c_x, c_y = C.sums((1,) + u.shape, u.dtype)
    ledger = record_boundary_ledger(g, stencil, bc)
    interp = interpolate_checksums(cs, stencil, c_x, c_y, ledger, bc)
    direct = compute_checksums(sweep(g, stencil, C, bc))
    return interp, direct


def random_stencil(rng, k, reach=2):
    offs = [(0, 0)] + [(int(i), int(j)) for i in range(-reach, reach + 1)
                       for j in range(-reach, reach + 1) if (i, j) != (0, 0)]
    pick = rng.choice(len(offs) - 1, size=k - 1, replace=False) + 1
    chosen = [offs[0]] + [offs[i] for i in sorted(pick)]
    return Stencil(tuple(StencilPoint(i, j, float(rng.uniform(0.05, 1.0))) for i, j in chosen))


# -- interpolation ---------------------------------------------------------------------

def test_identity_interpolation_is_exact():
    u = np.random.default_rng(0).random((6, 7)).astype(np.float32)
    ident = Stencil.from_tuples([(0, 0, 1.0)])
    cs = compute_checksums(Grid2D(u))
    zero_x, zero_y = Uniform(0.0).sums((1, 6, 7), np.float32)
    out = interpolate_checksums(cs, ident, zero_x, zero_y, None, BounceBack())
    assert np.array_equal(out.a, cs.a) and np.array_equal(out.b, cs.b)
    assert out.iteration == cs.iteration + 1


@pytest.mark.parametrize("stencil,bc,shape", [
    (make_five_point(0.2, 0.2, 0.2, 0.2, 0.2).stencil, Periodic(), (8, 8)),
    (FIG2, BounceBack(), (16, 16)),
])
def test_equality_examples(stencil, bc, shape):
    u = np.random.default_rng(1).random(shape)
    interp, direct = interpolated_vs_direct(u, stencil, Uniform(0.0), bc)
    assert max_gap(direct.b, interp.b) <= 1e-12
    assert max_gap(direct.a, interp.a) <= 1e-12


@settings(max_examples=150)
@given(seed=st.integers(0, 2**32 - 1), nx=st.integers(3, 16), ny=st.integers(3, 16),
       k=st.integers(1, 9), bc=st.sampled_from(BCS))
def test_interpolation_equals_direct_float64(seed, nx, ny, k, bc):
    rng = np.random.default_rng(seed)
    s = random_stencil(rng, k)
    u = rng.uniform(0.5, 1.5, size=(ny, nx))
    C = PerCell(rng.uniform(0.0, 1.0, size=(ny, nx)))
    interp, direct = interpolated_vs_direct(u, s, C, bc)
    assert max_gap(direct.b, interp.b) <= 1e-12
    assert max_gap(direct.a, interp.a) <= 1e-12


@pytest.mark.parametrize("bc", BCS, ids=lambda b: type(b).__name__)
def test_interpolation_equals_direct_with_vertical_coupling(bc):
    rng = np.random.default_rng(7)
    base = random_stencil(rng, 6)
    k = KernelSpec("t", base, w_top=0.3, w_bottom=0.2, constant=Uniform(0.1), bc=bc)
    u = rng.uniform(0.5, 1.5, size=(4, 10, 12))
    t = Tile3D(u)
    c_x, c_y = k.constant.sums(u.shape, u.dtype)
    ledger = record_boundary_ledger(t, k.tile_stencil(), bc)
    interp = interpolate_checksums(compute_checksums(t), k.tile_stencil(), c_x, c_y, ledger, bc)
    direct = compute_checksums(sweep_tile(t, k))
    assert max_gap(direct.b, interp.b) <= 1e-12
    assert max_gap(direct.a, interp.a) <= 1e-12


# -- boundary ledger -------------------------------------------------------------------

@pytest.mark.parametrize("stencil,bc", [
    (FIG2, Periodic()),
    (FIG2, BounceBack()),
    (get_kernel("hotspot3d", (8, 8, 2)).tile_stencil(), BounceBack()),
])
def test_ledger_empty(stencil, bc):
    u = np.random.default_rng(2).random((6, 6))
    assert record_boundary_ledger(Grid2D(u), stencil, bc).is_empty


def test_zero_ghost_alpha_positive_offset():
    u = np.random.default_rng(3).random((6, 6))
    s = Stencil.from_tuples([(0, 0, 0.5), (0, 1, 0.5)])
    led = record_boundary_ledger(Grid2D(u), s, ZeroGhost())
    assert np.array_equal(led.alpha[1][0], -u[0, :])


def test_constant_ghost_alpha_negative_offset():
    v = 2.5
    u = np.random.default_rng(4).random((6, 6))
    s = Stencil.from_tuples([(0, 0, 0.5), (0, -1, 0.5)])
    led = record_boundary_ledger(Grid2D(u), s, ConstantGhost(v))
    np.testing.assert_array_equal(led.alpha[-1][0], v - u[5, :])
    interp, direct = interpolated_vs_direct(u, s, Uniform(0.0), ConstantGhost(v))
    assert max_gap(direct.a, interp.a) <= 1e-12


def test_asymmetric_bounce_back_needs_ledger():
    s = Stencil.from_tuples([(0, 0, 0.4), (-1, 0, 0.1), (1, 0, 0.3), (0, 1, 0.2)])
    layout = ledger_layout(s, BounceBack())
    assert layout.needs_beta and layout.needs_alpha
    u = np.random.default_rng(5).random((9, 9))
    interp, direct = interpolated_vs_direct(u, s, Uniform(0.0), BounceBack())
    assert max_gap(direct.b, interp.b) <= 1e-12
    assert max_gap(direct.a, interp.a) <= 1e-12


def test_radius_two_bounce_back_needs_ledger():
    s = Stencil.from_tuples([(0, 0, 0.5), (-2, 0, 0.25), (2, 0, 0.25)])
    assert ledger_layout(s, BounceBack()).needs_beta


def test_missing_ledger_raises():
    s = Stencil.from_tuples([(0, 0, 0.5), (1, 0, 0.5)])
    cs = compute_checksums(Grid2D(np.ones((4, 4))))
    c_x, c_y = Uniform(0.0).sums((1, 4, 4), np.float64)
    with pytest.raises(MissingLedger):
        interpolate_checksums(cs, s, c_x, c_y, None, ZeroGhost())


# -- detection -------------------------------------------------------------------------

def test_detect_examples():
    d = np.linspace(1, 2, 8)
    assert detect(d, d.copy(), 1e-5) == []
    q = d.copy()
    q[3] *= 1 + 1e-3
    hits = detect(d, q, 1e-5)
    assert [i for i, _ in hits] == [3]
    assert hits[0][1] == pytest.approx(1e-3, rel=1e-6)
    q = d.copy()
    q[5] = np.inf
    assert [i for i, _ in detect(d, q)] == [5]
    q[5] = np.nan
    assert [i for i, _ in detect(d, q)] == [5]


def test_detect_absolute_below_floor():
    d = np.array([0.0, 1.0])
    assert detect(d, np.array([1e-7, 1.0]), 1e-5) == []
    assert [i for i, _ in detect(d, np.array([1e-3, 1.0]), 1e-5)] == [0]
    assert relative_gaps(d, np.array([2e-6, 1.0]))[0] == pytest.approx(2e-6)


def test_detect_length_mismatch():
    with pytest.raises(ValueError):
        detect(np.ones(3), np.ones(4))


# -- correction ------------------------------------------------------------------------

def corrupted_layer(cells, shape=(10, 12), dtype=np.float32, seed=6):
    """Clean step t -> t+1 on one layer, then add deltas at ``cells``."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(1.0, 1.1, size=shape).astype(dtype)
    g = Grid2D(u)
    cs = compute_checksums(g)
    c_x, c_y = Uniform(0.0).sums((1,) + shape, dtype)
    interp = interpolate_checksums(cs, FIG2, c_x, c_y, None, BounceBack())
    clean = sweep(g, FIG2)
    bad = clean.data.copy()
    for (x, y), delta in cells.items():
        bad[y, x] += dtype(delta)
    direct = compute_checksums(Grid2D(bad))
    report = DetectionReport(detect(direct.layer_a(), interp.layer_a()),
                             detect(direct.layer_b(), interp.layer_b()))
    return clean.data, Grid2D(bad), direct, interp, report


def test_single_error_corrected():
    clean, bad, direct, interp, report = corrupted_layer({(7, 3): 0.25})
    recs = locate_and_correct(bad, direct.layer_a(), direct.layer_b(), interp.layer_a(),
                              interp.layer_b(), report, 1e-5)
    assert len(recs) == 1 and (recs[0].ex, recs[0].ey) == (7, 3)
    assert recs[0].consistent
    assert bad.data[3, 7] == pytest.approx(clean[3, 7], rel=1e-5)
    # repaired checksums no longer disagree with the prediction
    assert detect(direct.layer_a(), interp.layer_a()) == []
    assert detect(direct.layer_b(), interp.layer_b()) == []


def test_two_separated_errors_corrected():
    clean, bad, direct, interp, report = corrupted_layer({(1, 1): 0.5, (2, 2): -0.3})
    recs = locate_and_correct(bad, direct.layer_a(), direct.layer_b(), interp.layer_a(),
                              interp.layer_b(), report, 1e-5)
    assert sorted((r.ex, r.ey) for r in recs) == [(1, 1), (2, 2)]
    np.testing.assert_allclose(bad.data, clean, rtol=1e-5)


def test_anti_diagonal_pairing():
    clean, bad, direct, interp, report = corrupted_layer({(1, 2): 0.5, (2, 1): -0.3})
    recs = locate_and_correct(bad, direct.layer_a(), direct.layer_b(), interp.layer_a(),
                              interp.layer_b(), report, 1e-5)
    assert sorted((r.ex, r.ey) for r in recs) == [(1, 2), (2, 1)]
    np.testing.assert_allclose(bad.data, clean, rtol=1e-5)


def test_same_row_is_uncorrectable():
    _, bad, direct, interp, report = corrupted_layer({(1, 1): 0.5, (2, 1): 0.3})
    assert len(report.err_x) == 2 and len(report.err_y) == 1
    with pytest.raises(Uncorrectable):
        locate_and_correct(bad, direct.layer_a(), direct.layer_b(), interp.layer_a(),
                           interp.layer_b(), report, 1e-5)


def test_cancelling_pair_in_one_row_is_invisible_to_b():
    _, _, direct, interp, report = corrupted_layer({(2, 4): 0.5, (6, 4): -0.5}, dtype=np.float64)
    assert report.err_y == []
    assert len(report.err_x) == 2


def test_infinite_value_corrected():
    clean, bad, direct, interp, report = corrupted_layer({(4, 5): np.inf})
    assert report.err_x and report.err_y
    recs = locate_and_correct(bad, direct.layer_a(), direct.layer_b(), interp.layer_a(),
                              interp.layer_b(), report, 1e-5)
    assert recs[0].observed == np.inf
    assert bad.data[5, 4] == pytest.approx(clean[5, 4], rel=1e-5)


# -- online driver ---------------------------------------------------------------------

def thermal(dims=(16, 12, 3)):
    k = get_kernel("hotspot3d", dims)
    return k, k.initial_tile(dims)


def test_error_free_step_matches_unprotected():
    k, t = thermal()
    st_ = ProtectedState.start(t, k)
    new, recs = online_step(st_)
    assert recs == [] and new.detections == 0
    assert np.array_equal(new.tile.data, sweep_tile(t, k).data)
    assert new.tile.iteration == 1


def test_injected_flip_is_located_and_repaired():
    k, t = thermal()
    clean = run_unprotected(t, k, 3).data
    st_ = ProtectedState.start(t, k)
    # bit 16 of a value in [1, 2) is a relative change of about 1e-2
    inj = FaultInjector(FaultSpec(iteration=2, z=1, y=3, x=7, bit=16))
    recs_all = []
    for _ in range(3):
        st_, recs = online_step(st_, inj)
        recs_all += recs
    assert len(recs_all) == 1
    r = recs_all[0]
    assert (r.ex, r.ey, r.layer, r.iteration) == (7, 3, 1, 3)
    assert st_.tile.data[1, 3, 7] == pytest.approx(clean[1, 3, 7], rel=1e-5)
    # later iterations run clean
    for _ in range(5):
        st_, recs = online_step(st_)
        assert recs == []
    assert st_.detections == 1 and st_.corrections == 1


def test_checksum_resident_error_is_repaired():
    k, t = thermal()
    st_ = ProtectedState.start(t, k)
    inj = FaultInjector(FaultSpec(iteration=0, z=2, y=5, x=0, bit=22, target="checksum"))
    new, recs = online_step(st_, inj)
    assert recs == [] and new.checksum_repairs == 1
    assert np.array_equal(new.tile.data, sweep_tile(t, k).data)
    assert np.array_equal(new.b, compute_checksums(new.tile).b)


def test_run_online_reports_counts():
    k, t = thermal()
    inj = FaultInjector(FaultSpec(iteration=4, z=0, y=2, x=2, bit=30))
    out = run_online(t, k, 10, fault=inj)
    assert out.detections == 1 and out.corrections == 1 and out.uncorrectable == 0
    ref = run_unprotected(t, k, 10).data
    np.testing.assert_allclose(out.tile.data, ref, rtol=1e-5)


def test_input_tile_not_mutated():
    k, t = thermal()
    keep = t.data.copy()
    run_online(t, k, 4)
    assert np.array_equal(t.data, keep)


def test_checksum_pair_interpolation_needs_which():
    cs = ChecksumPair(None, np.ones((1, 4)), 0, Which.B_ONLY)
    c_x, c_y = Uniform(0.0).sums((1, 4, 4), np.float64)
    out = interpolate_checksums(cs, FIG2, c_x, c_y, None, BounceBack())
    assert out.a is None and out.which is Which.B_ONLY
