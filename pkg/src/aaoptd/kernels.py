"""Hot inner loops: 5-point stencils and the Givens sweep of the QR window.

Each kernel has a numba loop implementation and a vectorized numpy
implementation with identical semantics. The public names dispatch to one
of them according to :data:`aaoptd._backend.USE_NUMBA`.
"""

import math

import numpy as np

from ._backend import USE_NUMBA, njit

__all__ = [
    "stencil_apply",
    "stencil_apply_numpy",
    "stencil_apply_numba",
    "givens_drop_first",
    "givens_drop_first_numpy",
    "givens_drop_first_numba",
]


def stencil_apply_numpy(u, n_side, conv):
    """Return ``A u + conv * (Dx + Dy) u`` on an ``n_side`` x ``n_side`` grid.

    ``A`` is the unscaled 5-point Laplacian (4 on the diagonal, -1 for each
    neighbour) and ``Dx``/``Dy`` are unscaled centered differences
    ``u[i+1] - u[i-1]``. Zero Dirichlet values surround the grid. Unknowns
    are row-major with the x index fastest.
    """
    grid = u.reshape(n_side, n_side)
    padded = np.zeros((n_side + 2, n_side + 2))
    padded[1:-1, 1:-1] = grid
    east = padded[1:-1, 2:]
    west = padded[1:-1, :-2]
    north = padded[2:, 1:-1]
    south = padded[:-2, 1:-1]
    out = 4.0 * grid - east - west - north - south
    if conv != 0.0:
        out += conv * ((east - west) + (north - south))
    return out.reshape(-1)


@njit(cache=True)
def _stencil_loop(u, n_side, conv):
    out = np.empty(n_side * n_side)
    for j in range(n_side):
        for i in range(n_side):
            p = j * n_side + i
            e = u[p + 1] if i < n_side - 1 else 0.0
            w = u[p - 1] if i > 0 else 0.0
            nn = u[p + n_side] if j < n_side - 1 else 0.0
            s = u[p - n_side] if j > 0 else 0.0
            out[p] = 4.0 * u[p] - e - w - nn - s + conv * ((e - w) + (nn - s))
    return out


def stencil_apply_numba(u, n_side, conv):
    return _stencil_loop(np.ascontiguousarray(u, dtype=np.float64), n_side, float(conv))


def givens_drop_first_numpy(q_rows, r, count):
    """Delete the first column of a thin QR factorization in place.

    ``q_rows`` holds the orthonormal basis as rows (``capacity x n``) and
    ``r`` is the ``capacity x capacity`` triangular factor; only the leading
    ``count`` rows/columns are live. On return the leading ``count - 1``
    rows/columns factor the old columns ``2..count``.
    """
    c = count
    r[:c, : c - 1] = r[:c, 1:c]
    r[:c, c - 1] = 0.0
    for i in range(c - 1):
        a = r[i, i]
        b = r[i + 1, i]
        rho = math.hypot(a, b)
        if rho == 0.0:
            continue
        cs, sn = a / rho, b / rho
        ri = r[i, i:c - 1].copy()
        r[i, i:c - 1] = cs * ri + sn * r[i + 1, i:c - 1]
        r[i + 1, i:c - 1] = -sn * ri + cs * r[i + 1, i:c - 1]
        r[i + 1, i] = 0.0
        qi = q_rows[i].copy()
        q_rows[i] = cs * qi + sn * q_rows[i + 1]
        q_rows[i + 1] = -sn * qi + cs * q_rows[i + 1]
    r[c - 1, :] = 0.0
    q_rows[c - 1] = 0.0


@njit(cache=True)
def _givens_drop_loop(q_rows, r, c):
    n = q_rows.shape[1]
    for i in range(c):
        for j in range(c - 1):
            r[i, j] = r[i, j + 1]
        r[i, c - 1] = 0.0
    for i in range(c - 1):
        a = r[i, i]
        b = r[i + 1, i]
        rho = math.hypot(a, b)
        if rho == 0.0:
            continue
        cs = a / rho
        sn = b / rho
        for j in range(i, c - 1):
            top = r[i, j]
            bot = r[i + 1, j]
            r[i, j] = cs * top + sn * bot
            r[i + 1, j] = -sn * top + cs * bot
        r[i + 1, i] = 0.0
        for t in range(n):
            top = q_rows[i, t]
            bot = q_rows[i + 1, t]
            q_rows[i, t] = cs * top + sn * bot
            q_rows[i + 1, t] = -sn * top + cs * bot
    for j in range(r.shape[1]):
        r[c - 1, j] = 0.0
    for t in range(n):
        q_rows[c - 1, t] = 0.0


def givens_drop_first_numba(q_rows, r, count):
    _givens_drop_loop(q_rows, r, count)


if USE_NUMBA:
    stencil_apply = stencil_apply_numba
    givens_drop_first = givens_drop_first_numba
else:
    stencil_apply = stencil_apply_numpy
    givens_drop_first = givens_drop_first_numpy
