from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stencilguard.errors import BitOutOfRange
from stencilguard.fault import FaultInjector, FaultSpec, SplitMix64, flip_bit, schedule_random_fault


def test_sign_flip():
    assert flip_bit(np.float32(1.0), 31) == np.float32(-1.0)


def test_lowest_bit_of_zero():
    v = flip_bit(np.float32(0.0), 0)
    assert np.array([v], np.float32).view(np.uint32)[0] == 1


def test_exponent_flip_of_one_is_inf():
    assert np.isinf(flip_bit(np.float32(1.0), 30))


def test_float64_width():
    assert flip_bit(2.0, 63, width=64) == -2.0


@given(v=st.floats(width=32, allow_nan=False), bit=st.integers(0, 31))
def test_involution(v, bit):
    once = flip_bit(np.float32(v), bit)
    twice = flip_bit(once, bit)
    assert np.array([twice], np.float32).view(np.uint32)[0] == np.array([v], np.float32).view(np.uint32)[0]


@pytest.mark.parametrize("bit", [-1, 32])
def test_bit_out_of_range(bit):
    with pytest.raises(BitOutOfRange):
        flip_bit(np.float32(1.0), bit)
    with pytest.raises(BitOutOfRange):
        FaultInjector(FaultSpec(0, 0, 0, 0, bit))


def test_splitmix_known_stream():
    # first outputs for seed 0 from the reference C implementation
    r = SplitMix64(0)
    assert r.next_u64() == 0xE220A8397B1DCDAF
    assert r.next_u64() == 0x6E789E6AA1B965F4


def test_schedule_deterministic():
    a = schedule_random_fault(42, (64, 64, 8), 128)
    assert a == schedule_random_fault(42, (64, 64, 8), 128)
    assert 0 <= a.iteration < 128 and 0 <= a.z < 8 and 0 <= a.y < 64 and 0 <= a.x < 64
    assert schedule_random_fault(42, (64, 64, 8), 128, fixed_bit=7).bit == 7
    with pytest.raises(BitOutOfRange):
        schedule_random_fault(42, (64, 64, 8), 128, fixed_bit=40)


def test_draws_uniform_chi_square():
    n = 100_000
    dims = (64, 64, 8)
    bits = np.zeros(32)
    xs = np.zeros(64)
    its = np.zeros(128)
    for seed in range(n):
        f = schedule_random_fault(seed, dims, 128)
        bits[f.bit] += 1
        xs[f.x] += 1
        its[f.iteration] += 1
    # 0.999 quantiles of chi-square with 31, 63 and 127 degrees of freedom
    for counts, crit in ((bits, 61.1), (xs, 103.4), (its, 181.9)):
        e = n / len(counts)
        assert float(((counts - e) ** 2 / e).sum()) < crit


def test_injector_single_shot():
    inj = FaultInjector(FaultSpec(5, 1, 2, 3, 4))
    assert inj.take(4) is None and inj.armed
    assert inj.take(5) == (1, 2, 3, 16)
    assert not inj.armed and inj.fired_at == 5
    assert inj.take(5) is None


def test_disarmed_injector_is_noop():
    inj = FaultInjector(None)
    assert not inj.armed
    assert all(inj.take(i) is None for i in range(10))


def test_checksum_target_only_fires_on_checksum():
    inj = FaultInjector(FaultSpec(0, 0, 1, 0, 3, target="checksum"))
    assert inj.take(0) is None
    assert inj.take_checksum(0) == (0, 1, 8)


def test_spec_round_trip():
    f = FaultSpec(1, 2, 3, 4, 5)
    assert FaultSpec.from_dict(f.to_dict()) == f
