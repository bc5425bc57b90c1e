"""Benchmark fixed-point problems.

* Bratu: ``Δu + λ e^u = 0`` on the unit square, zero Dirichlet data.
* Nonlinear convection-diffusion:
  ``-Δu + (u_x + u_y) + k u^2 = 2π² sin(πx) sin(πy)``, zero Dirichlet data.
* Tridiagonal linear system ``tridiag(-1, 2, -1) x = 1``.
* Chandrasekhar H-equation, composite midpoint rule.

The two PDEs use centered differences on ``n_side**2`` interior points with
``h = 1/(n_side + 1)``. Their fixed-point maps are Jacobi corrections
``g(u) = u - F(u)/4`` where ``4`` is the diagonal of the unscaled 5-point
Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .accelerator import FixedPointProblem
from .errors import DivergenceError, NotFoundError


@dataclass(frozen=True)
class Grid2D:
    n_side: int

    def __post_init__(self):
        if self.n_side < 2:
            raise ValueError(f"need at least 2 interior points per side, got {self.n_side}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n_side + 1)

    @property
    def size(self) -> int:
        return self.n_side * self.n_side

    def coordinates(self):
        """Return ``(x, y)`` of the unknowns in lexicographic order."""
        t = self.h * np.arange(1, self.n_side + 1)
        yy, xx = np.meshgrid(t, t, indexing="ij")
        return xx.reshape(-1), yy.reshape(-1)


def _as_grid(grid):
    return grid if isinstance(grid, Grid2D) else Grid2D(int(grid))


# -- Bratu ------------------------------------------------------------------


def bratu_residual(u, grid, lam):
    """``A u - λ h² exp(u)`` with the unscaled 5-point Laplacian ``A``."""
    grid = _as_grid(grid)
    with np.errstate(over="ignore", invalid="ignore"):
        return kernels.stencil_apply(u, grid.n_side, 0.0) - lam * grid.h**2 * np.exp(u)


def bratu_problem(grid, lam: float = 6.0) -> FixedPointProblem:
    grid = _as_grid(grid)
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")

    def evaluate(u):
        return u - 0.25 * bratu_residual(u, grid, lam)

    return FixedPointProblem(
        evaluate=evaluate,
        initial_guess=np.zeros(grid.size),
        known_solution=np.zeros(grid.size) if lam == 0 else None,
        name=f"bratu(n={grid.n_side}, lambda={lam:g})",
    )


# -- convection-diffusion ---------------------------------------------------


def convdiff_source(grid):
    grid = _as_grid(grid)
    x, y = grid.coordinates()
    return 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def convdiff_residual(u, grid, k, source=None):
    """``A u + (h/2)(Dx + Dy) u + k h² u² - h² f`` (equation scaled by ``h²``)."""
    grid = _as_grid(grid)
    h = grid.h
    if source is None:
        source = convdiff_source(grid)
    with np.errstate(over="ignore", invalid="ignore"):
        return kernels.stencil_apply(u, grid.n_side, 0.5 * h) + k * h * h * u * u - h * h * source


def convection_diffusion_problem(grid, k: float = 3.0, source=None) -> FixedPointProblem:
    """Jacobi fixed-point map of the convection-diffusion system.

    ``source`` overrides the default right-hand side (pass zeros for the
    homogeneous problem).
    """
    grid = _as_grid(grid)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    f = convdiff_source(grid) if source is None else np.asarray(source, dtype=float)
    homogeneous = k == 0 and not np.any(f)

    def evaluate(u):
        return u - 0.25 * convdiff_residual(u, grid, k, f)

    return FixedPointProblem(
        evaluate=evaluate,
        initial_guess=np.ones(grid.size),
        known_solution=np.zeros(grid.size) if homogeneous else None,
        name=f"convdiff(n={grid.n_side}, k={k:g})",
    )


# -- linear system ----------------------------------------------------------


def tridiagonal_solution(n: int) -> np.ndarray:
    """Closed form ``x_i = i(n + 1 - i)/2`` of ``tridiag(-1, 2, -1) x = 1``."""
    i = np.arange(1, n + 1, dtype=float)
    return 0.5 * i * (n + 1 - i)


def _tridiag_apply(x):
    y = 2.0 * x
    y[1:] -= x[:-1]
    y[:-1] -= x[1:]
    return y


def linear_problem(n: int) -> FixedPointProblem:
    """Richardson map ``g(x) = x - (Ax - b)`` for the tridiagonal system."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")

    def evaluate(x):
        return x - (_tridiag_apply(x) - 1.0)

    return FixedPointProblem(
        evaluate=evaluate,
        initial_guess=np.zeros(n),
        known_solution=tridiagonal_solution(n),
        name=f"linear(n={n})",
    )


# -- Chandrasekhar H-equation -----------------------------------------------


def chandrasekhar_nodes(n: int) -> np.ndarray:
    return (np.arange(1, n + 1) - 0.5) / n


def chandrasekhar_kernel(n: int) -> np.ndarray:
    """``K_ij = mu_i / (mu_i + mu_j)`` on the midpoint nodes."""
    mu = chandrasekhar_nodes(n)
    return mu[:, None] / (mu[:, None] + mu[None, :])


def chandrasekhar_problem(n: int = 500, c: float = 0.5) -> FixedPointProblem:
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"c must lie in [0, 1], got {c}")
    kernel = chandrasekhar_kernel(n) * (c / (2.0 * n))
    kernel.setflags(write=False)

    def evaluate(x):
        denom = 1.0 - kernel @ x
        if not np.all(denom > 0.0):
            raise DivergenceError("H-equation denominator is not positive")
        return 1.0 / denom

    return FixedPointProblem(
        evaluate=evaluate,
        initial_guess=np.ones(n),
        known_solution=np.ones(n) if c == 0 else None,
        contraction_bound=(1.0 - np.sqrt(1.0 - c)) if 0.0 < c < 1.0 else None,
        name=f"chandrasekhar(N={n}, c={c:g})",
    )


# -- catalog ----------------------------------------------------------------


@dataclass(frozen=True)
class CatalogEntry:
    """A named benchmark with its default experiment settings."""

    name: str
    builder: Callable[..., FixedPointProblem]
    params: dict = field(default_factory=dict)
    window: int = 5
    safeguard: str = "raw"
    eta: Optional[float] = None
    description: str = ""

    def build(self) -> FixedPointProblem:
        return self.builder(**self.params)


_ENTRIES = [
    CatalogEntry("bratu-32", bratu_problem, {"grid": 32, "lam": 6.0}, 10, "flip", 0.3,
                 "Bratu, lambda=6, 32x32 interior grid, zero initial guess"),
    CatalogEntry("bratu-64", bratu_problem, {"grid": 64, "lam": 6.0}, 30, "flip", 0.3,
                 "Bratu, lambda=6, 64x64 interior grid, zero initial guess"),
    CatalogEntry("bratu-128", bratu_problem, {"grid": 128, "lam": 6.0}, 40, "flip", 0.3,
                 "Bratu, lambda=6, 128x128 interior grid, zero initial guess"),
    CatalogEntry("convdiff-32", convection_diffusion_problem, {"grid": 32, "k": 3.0}, 5, "flip", 0.25,
                 "convection-diffusion, k=3, 32x32 interior grid, ones initial guess"),
    CatalogEntry("convdiff-64", convection_diffusion_problem, {"grid": 64, "k": 3.0}, 20, "flip", 0.25,
                 "convection-diffusion, k=3, 64x64 interior grid, ones initial guess"),
    CatalogEntry("linear-10", linear_problem, {"n": 10}, 1, "raw", None,
                 "tridiag(-1,2,-1) x = 1, n=10, zero initial guess"),
    CatalogEntry("linear-100", linear_problem, {"n": 100}, 5, "raw", None,
                 "tridiag(-1,2,-1) x = 1, n=100, zero initial guess"),
    CatalogEntry("chandrasekhar-0.5", chandrasekhar_problem, {"n": 500, "c": 0.5}, 1, "raw", None,
                 "H-equation, N=500, c=0.5, ones initial guess"),
    CatalogEntry("chandrasekhar-0.99", chandrasekhar_problem, {"n": 500, "c": 0.99}, 1, "raw", None,
                 "H-equation, N=500, c=0.99, ones initial guess"),
    CatalogEntry("chandrasekhar-1.0", chandrasekhar_problem, {"n": 500, "c": 1.0}, 1, "raw", None,
                 "H-equation, N=500, c=1, ones initial guess"),
]


def catalog() -> list:
    return list(_ENTRIES)


def lookup(name: str) -> CatalogEntry:
    for entry in _ENTRIES:
        if entry.name == name:
            return entry
    known = ", ".join(e.name for e in _ENTRIES)
    raise NotFoundError(f"unknown problem {name!r}; known: {known}")
