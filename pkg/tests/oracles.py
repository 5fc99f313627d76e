"""Independent reference implementations used by the test suite.

Nothing here touches the compiled kernels. The scalar oracle spells out every
cell update with numpy scalars of the element type, in point order, so it
rounds exactly like the package does.
"""

from __future__ import annotations

import numpy as np

from stencilguard.grid import BounceBack, ConstantGhost, Periodic, ZeroGhost


def read(u, z, y, x, bc):
    nz, ny, nx = u.shape
    idx = []
    for i, n in ((z, nz), (y, ny), (x, nx)):
        if 0 <= i < n:
            idx.append(i)
        elif isinstance(bc, Periodic):
            idx.append(i % n)
        elif isinstance(bc, BounceBack):
            idx.append(min(max(i, 0), n - 1))
        elif isinstance(bc, ZeroGhost):
            return u.dtype.type(0.0)
        elif isinstance(bc, ConstantGhost):
            return u.dtype.type(bc.value)
        else:
            raise TypeError(bc)
    return u[idx[0], idx[1], idx[2]]


def scalar_sweep(u, points, C, bc):
    """``points`` are ``(di, dj, w, dk)``; ``u`` and ``C`` are ``(nz, ny, nx)``."""
    u = np.asarray(u)
    t = u.dtype.type
    out = np.empty_like(u)
    nz, ny, nx = u.shape
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                v = t(C[z, y, x])
                for di, dj, w, dk in points:
                    v = t(v + t(t(w) * read(u, z + dk, y + dj, x + di, bc)))
                out[z, y, x] = v
    return out


def shifted(u, di, dj, dk, bc):
    """Whole-array read at offset (di, dj, dk) for the vectorised oracle."""
    nz, ny, nx = u.shape
    g = None
    if isinstance(bc, ZeroGhost):
        g = 0.0
    elif isinstance(bc, ConstantGhost):
        g = bc.value

    def idx(n, d):
        i = np.arange(n) + d
        if isinstance(bc, Periodic):
            return i % n, np.ones(n, bool)
        if isinstance(bc, BounceBack):
            return np.clip(i, 0, n - 1), np.ones(n, bool)
        ok = (i >= 0) & (i < n)
        return np.where(ok, i, 0), ok

    iz, oz = idx(nz, dk)
    iy, oy = idx(ny, dj)
    ix, ox = idx(nx, di)
    out = u[np.ix_(iz, iy, ix)].copy()
    if g is not None:
        mask = ~(oz[:, None, None] & oy[None, :, None] & ox[None, None, :])
        out[mask] = u.dtype.type(g)
    return out


def vector_sweep(u, points, C, bc):
    """Same arithmetic as :func:`scalar_sweep`, one whole-array op per term."""
    t = u.dtype.type
    out = np.array(C, dtype=u.dtype, copy=True)
    for di, dj, w, dk in points:
        out = out + t(w) * shifted(u, di, dj, dk, bc)
    return out


def naive_checksums(u):
    """Column sums y-ascending and row sums x-ascending, binary64 accumulation."""
    u = np.asarray(u, dtype=np.float64)
    nz, ny, nx = u.shape
    a = np.zeros((nz, nx))
    b = np.zeros((nz, ny))
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                a[z, x] += u[z, y, x]
                b[z, y] += u[z, y, x]
    return a, b


def naive_column_sums(u):
    """Column sums in the element type, y-ascending."""
    nz, ny, nx = u.shape
    a = np.zeros((nz, nx), dtype=u.dtype)
    for z in range(nz):
        for y in range(ny):
            a[z] = a[z] + u[z, y]
    return a


def points_of(stencil):
    return [(p.di, p.dj, p.w, p.dk) for p in stencil.points]


def l2_naive(ref, comp):
    total = 0.0
    for r, c in zip(np.ravel(ref).tolist(), np.ravel(comp).tolist()):
        total += (float(r) - float(c)) ** 2
    return total ** 0.5
