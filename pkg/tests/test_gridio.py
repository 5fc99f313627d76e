from __future__ import annotations

import numpy as np
import pytest

from stencilguard.gridio import from_bytes, read_csv, read_grid, to_bytes, write_csv, write_grid
from stencilguard.grid import Grid2D, Tile3D


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_binary_round_trip(tmp_path, dtype):
    u = np.random.default_rng(0).normal(size=(3, 5, 7)).astype(dtype)
    write_grid(tmp_path / "g.abft", Tile3D(u))
    back = read_grid(tmp_path / "g.abft")
    assert back.dtype == dtype and np.array_equal(back.data, u)


def test_header_layout():
    blob = to_bytes(Grid2D(np.zeros((2, 3), np.float32)))
    assert blob[:8] == b"ABFTGRID"
    assert len(blob) == 8 + 20 + 6 * 4
    assert int.from_bytes(blob[12:16], "little") == 3  # nx


def test_bad_magic_and_length():
    blob = to_bytes(Grid2D(np.ones((2, 2), np.float32)))
    with pytest.raises(ValueError):
        from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(ValueError):
        from_bytes(blob[:-1])


def test_csv_round_trip(tmp_path):
    u = np.random.default_rng(1).random((4, 6)).astype(np.float32)
    write_csv(tmp_path / "g.csv", Grid2D(u))
    assert np.array_equal(read_csv(tmp_path / "g.csv").data, u)


def test_csv_size_limit(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "g.csv", Grid2D(np.zeros((65, 2), np.float32)))
