"""Thin QR factorization of a sliding window of columns.

The window stores ``F = (v_1, ..., v_c)`` as ``F = Q R`` with orthonormal
``Q`` (n x c) and upper-triangular ``R`` (c x c, nonnegative diagonal).
New columns go on the right; the oldest column is removed from the left.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .errors import CapacityError, DimensionError, EmptyWindowError, SingularWindowError

DEPENDENCE_TOL = 1e-14


class QrWindow:
    """Incrementally updated thin QR of at most ``capacity`` columns.

    Parameters
    ----------
    dimension : int
        Length ``n`` of every column.
    capacity : int
        Maximum number of stored columns.
    """

    def __init__(self, dimension: int, capacity: int):
        if dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {dimension}")
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.dimension = int(dimension)
        self.capacity = int(capacity)
        self.count = 0
        # Basis vectors are stored as rows so each one is contiguous.
        self._q = np.zeros((self.capacity, self.dimension))
        self._r = np.zeros((self.capacity, self.capacity))
        self._dependent = np.zeros(self.capacity, dtype=bool)

    def __len__(self):
        return self.count

    def __repr__(self):
        return f"QrWindow(dimension={self.dimension}, capacity={self.capacity}, count={self.count})"

    @property
    def q_factor(self) -> np.ndarray:
        return self._q[: self.count].T

    @property
    def r_factor(self) -> np.ndarray:
        return self._r[: self.count, : self.count]

    @property
    def dependent_flags(self) -> np.ndarray:
        """Per-column flags set when a column was appended as (nearly) dependent."""
        return self._dependent[: self.count].copy()

    def columns(self) -> np.ndarray:
        """Reconstruct the stored columns as ``Q @ R`` (n x c)."""
        return self.q_factor @ self.r_factor

    def append_column(self, v) -> "QrWindow":
        """Append ``v`` as the newest column.

        Classical Gram-Schmidt with one full reorthogonalization pass. A
        column whose orthogonal remainder is below ``1e-14 * ||v||`` is kept
        with its tiny diagonal entry and flagged as dependent.
        """
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dimension,):
            raise DimensionError(f"expected vector of length {self.dimension}, got shape {v.shape}")
        if self.count == self.capacity:
            raise CapacityError(f"window is full ({self.capacity} columns)")
        c = self.count
        q = self._q[:c]
        vnorm = float(np.linalg.norm(v))
        if c:
            h = q @ v
            w = v - h @ q
            h2 = q @ w
            w -= h2 @ q
            h += h2
        else:
            h = np.zeros(0)
            w = v.copy()
        rnn = float(np.linalg.norm(w))
        dependent = rnn <= DEPENDENCE_TOL * vnorm
        if dependent:
            w = self._orthogonal_direction(w, rnn)
        else:
            w /= rnn
        self._q[c] = w
        self._r[:c, c] = h
        self._r[c, c] = rnn
        self._r[c, :c] = 0.0
        self._dependent[c] = dependent
        self.count = c + 1
        return self

    def _orthogonal_direction(self, w, wnorm):
        # The remainder of a dependent column is rounding noise; replace it by
        # a unit vector orthogonal to the basis so Q stays orthonormal.
        q = self._q[: self.count]
        trials = [w / wnorm] if wnorm > 0.0 else []
        trials += [np.eye(1, self.dimension, i).ravel() for i in range(self.dimension)]
        for u in trials:
            for _ in range(2):
                u = u - (q @ u) @ q
            nu = np.linalg.norm(u)
            if nu > 1e-3:
                return u / nu
        raise DimensionError("window already spans the whole space")

    def drop_oldest_column(self) -> "QrWindow":
        """Remove the oldest column and restore triangularity with Givens rotations."""
        if self.count == 0:
            raise EmptyWindowError("cannot drop from an empty window")
        if self.count == 1:
            self._q[0] = 0.0
            self._r[0, 0] = 0.0
        else:
            kernels.givens_drop_first(self._q, self._r, self.count)
        self._dependent[: self.count - 1] = self._dependent[1 : self.count]
        self._dependent[self.count - 1] = False
        self.count -= 1
        return self

    def clear(self) -> "QrWindow":
        self._q[: self.count] = 0.0
        self._r[: self.count, : self.count] = 0.0
        self._dependent[:] = False
        self.count = 0
        return self

    def project(self, rhs) -> np.ndarray:
        """Return ``Q^T rhs``."""
        return self._q[: self.count] @ np.asarray(rhs, dtype=float)

    def solve_least_squares(self, rhs, qtr=None) -> np.ndarray:
        """Return ``gamma`` minimizing ``||rhs - F gamma||_2``.

        ``qtr`` may pass a precomputed ``Q^T rhs``.
        """
        if self.count == 0:
            raise EmptyWindowError("least squares on an empty window")
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.dimension,):
            raise DimensionError(f"expected vector of length {self.dimension}, got shape {rhs.shape}")
        r = self.r_factor
        diag = np.abs(np.diag(r))
        if diag.min() <= DEPENDENCE_TOL * np.linalg.norm(r):
            raise SingularWindowError(
                f"negligible diagonal entry {diag.min():.3e} in R (count={self.count})"
            )
        if qtr is None:
            qtr = self.project(rhs)
        return solve_triangular(r, qtr, lower=False, check_finite=False)

    def condition_estimate(self) -> float:
        """Ratio of the largest to the smallest absolute diagonal entry of R."""
        if self.count == 0:
            raise EmptyWindowError("condition estimate of an empty window")
        diag = np.abs(np.diag(self.r_factor))
        lo = diag.min()
        if lo == 0.0:
            return float("inf")
        return float(diag.max() / lo)

    def orthonormality_error(self) -> float:
        q = self.q_factor
        return float(np.abs(q.T @ q - np.eye(self.count)).max()) if self.count else 0.0


def dense_qr(columns) -> tuple[np.ndarray, np.ndarray]:
    """Householder thin QR with the nonnegative-diagonal sign convention.

    Reference factorization for tests and for rebuilding a window from
    scratch.
    """
    a = np.asarray(columns, dtype=float)
    q, r = np.linalg.qr(a, mode="reduced")
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def window_from_columns(columns, capacity=None) -> QrWindow:
    """Build a window whose factors come from :func:`dense_qr`."""
    a = np.asarray(columns, dtype=float)
    n, c = a.shape
    w = QrWindow(n, capacity or max(c, 1))
    if c > w.capacity:
        raise CapacityError(f"{c} columns exceed capacity {w.capacity}")
    if c:
        q, r = dense_qr(a)
        w._q[:c] = q.T
        w._r[:c, :c] = r
        w.count = c
    return w
