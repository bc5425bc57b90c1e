"""Picard iteration, damped Anderson acceleration and optimized damping.

The residual convention is ``f(x) = g(x) - x`` throughout. Anderson
coefficients are found from the unconstrained form
``min ||f_k - F_k gamma||`` over the window of residual differences, held
as a thin QR factorization (:class:`~aaoptd.qr_window.QrWindow`).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import AAError, DivergenceError, SingularWindowError
from .qr_window import QrWindow

__all__ = [
    "FixedPointProblem",
    "Raw",
    "ClampFloor",
    "FlipBelow",
    "Undamped",
    "Constant",
    "Optimized",
    "SolverConfig",
    "IterationRecord",
    "SolveReport",
    "AndersonState",
    "solve_picard",
    "solve_aa",
    "gamma_to_alpha",
    "aa_step",
    "mixed_averages",
    "optimize_damping",
    "damping_direction_is_degenerate",
    "apply_safeguard",
    "theta_ratio",
    "constrained_ls_oracle",
    "OracleResult",
]


@dataclass(frozen=True, eq=False)
class FixedPointProblem:
    """A map ``g: R^n -> R^n`` together with a starting point.

    ``evaluate`` must be deterministic and must not modify its argument.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    initial_guess: np.ndarray
    known_solution: Optional[np.ndarray] = None
    contraction_bound: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        x0 = np.array(self.initial_guess, dtype=float).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, "initial_guess", x0)
        if self.known_solution is not None:
            xs = np.array(self.known_solution, dtype=float).reshape(-1)
            if xs.shape != x0.shape:
                raise ValueError("known_solution and initial_guess differ in length")
            xs.setflags(write=False)
            object.__setattr__(self, "known_solution", xs)
        kappa = self.contraction_bound
        if kappa is not None and not 0.0 < kappa < 1.0:
            raise ValueError(f"contraction_bound must lie in (0, 1), got {kappa}")

    @property
    def dimension(self) -> int:
        return self.initial_guess.size


# -- damping policies -------------------------------------------------------


def _check_eta(eta):
    if not 0.0 < eta < 0.5:
        raise ValueError(f"eta must lie in (0, 0.5), got {eta}")


@dataclass(frozen=True)
class Raw:
    """Use the optimized damping factor as computed."""

    label = "raw"


@dataclass(frozen=True)
class ClampFloor:
    """Replace damping factors below ``eta`` by ``eta``."""

    eta: float = 0.3
    label = "clamp"

    def __post_init__(self):
        _check_eta(self.eta)


@dataclass(frozen=True)
class FlipBelow:
    """Replace damping factors ``b < eta`` by ``1 - b``."""

    eta: float = 0.3
    label = "flip"

    def __post_init__(self):
        _check_eta(self.eta)


SafeguardStrategy = Union[Raw, ClampFloor, FlipBelow]


@dataclass(frozen=True)
class Undamped:
    pass


@dataclass(frozen=True)
class Constant:
    beta: float

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")


DAMPING_RULES = ("normalized", "minimizer")


@dataclass(frozen=True)
class Optimized:
    """Per-iteration damping from two extra map evaluations.

    ``rule`` selects the formula used by :func:`optimize_damping`.
    """

    strategy: SafeguardStrategy = field(default_factory=Raw)
    rule: str = "normalized"

    def __post_init__(self):
        if self.rule not in DAMPING_RULES:
            raise ValueError(f"rule must be one of {DAMPING_RULES}, got {self.rule!r}")


DampingPolicy = Union[Undamped, Constant, Optimized]


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rules, window size and damping for a solve.

    ``condition_guard`` drops the oldest window columns while the estimated
    condition number of ``R`` exceeds it (``None`` disables the guard).
    ``divergence_ratio`` raises :class:`DivergenceError` once the residual
    norm exceeds that multiple of the initial residual norm (``None``
    disables the check; non-finite values always raise).
    """

    window_size: int = 0
    tolerance: float = 1e-10
    max_iterations: int = 200
    damping: DampingPolicy = field(default_factory=Undamped)
    condition_guard: Optional[float] = 1e14
    divergence_ratio: Optional[float] = 1e12

    def __post_init__(self):
        if self.window_size < 0:
            raise ValueError(f"window_size must be >= 0, got {self.window_size}")
        if not self.tolerance > 0.0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not isinstance(self.damping, (Undamped, Constant, Optimized)):
            raise TypeError(f"unknown damping policy {self.damping!r}")


@dataclass
class IterationRecord:
    """One row of the convergence trace.

    ``beta_applied`` and ``theta`` describe the step taken from iterate
    ``iteration``; both are ``None`` on a final record where no step was
    taken. ``g_evaluations`` is cumulative and includes the extra
    evaluations spent at this iteration.
    """

    iteration: int
    residual_norm: float
    beta_raw: Optional[float]
    beta_applied: Optional[float]
    theta: Optional[float]
    active_window: int
    g_evaluations: int
    elapsed_ms: float = 0.0
    degenerate_damping: bool = False


@dataclass
class SolveReport:
    converged: bool
    final_iterate: np.ndarray
    final_residual_norm: float
    trace: list = field(default_factory=list)
    status: str = "converged"

    @property
    def iterations_used(self) -> int:
        return len(self.trace)

    @property
    def g_evaluations(self) -> int:
        return self.trace[-1].g_evaluations if self.trace else 0

    def residual_norms(self) -> np.ndarray:
        return np.array([r.residual_norm for r in self.trace])


# -- coefficient algebra ----------------------------------------------------


def gamma_to_alpha(gamma) -> np.ndarray:
    """Map least-squares coefficients ``gamma`` (length c) to affine weights.

    ``alpha_0 = gamma_0``, ``alpha_i = gamma_i - gamma_{i-1}`` and
    ``alpha_c = 1 - gamma_{c-1}``; the weights sum to one.
    """
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    return np.diff(np.concatenate(([0.0], gamma, [1.0])))


def theta_ratio(alpha, residual_history) -> float:
    """``||sum_i alpha_i f_i|| / ||f_newest||`` for residuals oldest first."""
    alpha = np.asarray(alpha, dtype=float)
    res = np.asarray(residual_history, dtype=float)
    if res.ndim == 1:
        res = res[None, :]
    if res.shape[0] != alpha.size:
        raise ValueError(f"{alpha.size} coefficients for {res.shape[0]} residuals")
    current = np.linalg.norm(res[-1])
    if current == 0.0:
        return 0.0
    return float(np.linalg.norm(alpha @ res) / current)


def damping_direction_is_degenerate(r_p, r_q) -> bool:
    d = np.asarray(r_p) - np.asarray(r_q)
    return bool(np.linalg.norm(d) <= 1e-14 * max(np.linalg.norm(r_p), 1.0))


def optimize_damping(r_p, r_q, rule: str = "normalized") -> float:
    """Damping factor from the residuals at the two mixed averages.

    With ``d = r_p - r_q``:

    * ``"normalized"``: ``|d.r_p| / (||d|| ||r_p||)``, the dot product of the
      two unit vectors.
    * ``"minimizer"``: ``|d.r_p| / ||d||^2``, the minimizer of
      ``||r_p - beta d||``, with both vectors scaled by ``1/||d||`` before the
      dot product, capped at 1.

    A degenerate direction (``||d|| <= 1e-14 max(||r_p||, 1)``) gives 1.
    """
    r_p = np.asarray(r_p, dtype=float)
    d = r_p - np.asarray(r_q, dtype=float)
    dnorm = np.linalg.norm(d)
    pnorm = np.linalg.norm(r_p)
    if dnorm <= 1e-14 * max(pnorm, 1.0):
        return 1.0
    if rule == "minimizer":
        beta = abs(float(np.dot(d / dnorm, r_p / dnorm)))
    elif rule == "normalized":
        if pnorm == 0.0:
            return 0.0
        beta = abs(float(np.dot(d / dnorm, r_p / pnorm)))
    else:
        raise ValueError(f"unknown damping rule {rule!r}")
    return min(beta, 1.0)


def apply_safeguard(beta_raw: float, strategy: SafeguardStrategy) -> float:
    """Bound a raw damping factor away from zero according to ``strategy``."""
    if isinstance(strategy, Raw):
        return beta_raw if beta_raw > 0.0 else 1.0
    if isinstance(strategy, ClampFloor):
        return max(beta_raw, strategy.eta)
    if isinstance(strategy, FlipBelow):
        return beta_raw if beta_raw >= strategy.eta else 1.0 - beta_raw
    raise TypeError(f"unknown safeguard strategy {strategy!r}")


class OracleResult(NamedTuple):
    alpha: np.ndarray
    value: float
    rank_deficient: bool


def constrained_ls_oracle(residual_columns) -> OracleResult:
    """Dense solve of ``min ||F alpha|| s.t. sum(alpha) = 1``.

    The constraint is eliminated through the newest column:
    ``F alpha = f_c + sum_{i<c} alpha_i (f_i - f_c)``; the reduced problem is
    solved by SVD-based least squares (minimum norm when rank deficient).
    Columns are ordered oldest first. Intended for testing.
    """
    cols = [np.asarray(c, dtype=float) for c in residual_columns]
    if not cols:
        raise ValueError("need at least one residual column")
    f_new = cols[-1]
    if len(cols) == 1:
        return OracleResult(np.ones(1), float(np.linalg.norm(f_new)), False)
    diffs = np.column_stack([c - f_new for c in cols[:-1]])
    coef, _, rank, _ = np.linalg.lstsq(diffs, -f_new, rcond=None)
    alpha = np.append(coef, 1.0 - coef.sum())
    value = float(np.linalg.norm(np.column_stack(cols) @ alpha))
    return OracleResult(alpha, value, bool(rank < diffs.shape[1]))


# -- window state -----------------------------------------------------------


class AndersonState:
    """Sliding history of residual and map differences for one solve.

    The residual differences ``Δf_i = f_{i+1} - f_i`` live in a
    :class:`QrWindow`; the matching ``Δg_i`` are stored densely as rows.
    """

    def __init__(self, dimension: int, window_size: int, condition_guard=1e14):
        if window_size < 1:
            raise ValueError("window_size must be >= 1")
        self.window_size = window_size
        self.condition_guard = condition_guard
        self.qr = QrWindow(dimension, window_size)
        self._dg = np.zeros((window_size, dimension))
        self._prev_f = None
        self._prev_g = None

    @property
    def count(self) -> int:
        return self.qr.count

    @property
    def dg_columns(self) -> np.ndarray:
        return self._dg[: self.count].T

    def push(self, f_k, g_k):
        """Record ``f_k = g(x_k) - x_k`` and ``g(x_k)``; extends the window."""
        if self._prev_f is not None:
            if self.count == self.window_size:
                self.drop_oldest()
            self.qr.append_column(f_k - self._prev_f)
            self._dg[self.count - 1] = g_k - self._prev_g
            if self.condition_guard is not None:
                while self.count > 1 and self.qr.condition_estimate() > self.condition_guard:
                    self.drop_oldest()
        self._prev_f = np.array(f_k, dtype=float)
        self._prev_g = np.array(g_k, dtype=float)

    def drop_oldest(self):
        c = self.count
        self.qr.drop_oldest_column()
        self._dg[: c - 1] = self._dg[1:c]
        self._dg[c - 1] = 0.0

    def clear(self):
        self.qr.clear()
        self._dg[:] = 0.0

    def solve(self, f_k) -> np.ndarray:
        """Least-squares coefficients for ``f_k``.

        On a singular factor the oldest columns are dropped until the solve
        succeeds; if even a single column is singular the window is cleared
        and an empty ``gamma`` (a plain fixed-point step) is returned.
        """
        while self.count:
            try:
                return self.qr.solve_least_squares(f_k)
            except SingularWindowError:
                if self.count == 1:
                    self.clear()
                    break
                self.drop_oldest()
        return np.zeros(0)

    def _check(self, gamma):
        if gamma.size != self.count or self.qr.count != self.count:
            raise AAError(f"coefficient length {gamma.size} does not match window {self.count}")

    def fitted_residual(self, gamma) -> np.ndarray:
        """``F_k gamma`` evaluated as ``Q (R gamma)``."""
        self._check(gamma)
        if gamma.size == 0:
            return np.zeros(self.qr.dimension)
        return self.qr.q_factor @ (self.qr.r_factor @ gamma)


def mixed_averages(state: AndersonState, g_xk, f_k, gamma):
    """Return ``(x_alpha, x_tilde_alpha)``, the alpha-weighted iterates and map values."""
    state._check(gamma)
    if gamma.size == 0:
        x_tilde = np.array(g_xk, dtype=float)
        return x_tilde - f_k, x_tilde
    x_tilde = g_xk - state.dg_columns @ gamma
    x_alpha = x_tilde - (f_k - state.fitted_residual(gamma))
    return x_alpha, x_tilde


def aa_step(state: AndersonState, g_xk, f_k, gamma, beta: float = 1.0) -> np.ndarray:
    """Damped Anderson update ``x_alpha + beta (x_tilde_alpha - x_alpha)``."""
    state._check(gamma)
    if gamma.size == 0:
        x_next = np.array(g_xk, dtype=float)
    else:
        x_next = g_xk - state.dg_columns @ gamma
    if beta != 1.0:
        x_next = x_next - (1.0 - beta) * (f_k - state.fitted_residual(gamma))
    return x_next


# -- solvers ----------------------------------------------------------------


class _Tracker:
    """Trace bookkeeping shared by the solvers."""

    def __init__(self, cfg: SolverConfig, callback):
        self.cfg = cfg
        self.callback = callback
        self.trace = []
        self.evals = 0
        self.t0 = time.perf_counter()
        self.f0 = None

    def evaluate(self, problem, x, last_x, last_norm):
        try:
            gx = np.asarray(problem.evaluate(x), dtype=float)
        except DivergenceError as exc:
            self.fail(last_x, last_norm, str(exc))
        self.evals += 1
        if gx.shape != x.shape:
            raise AAError(f"map returned shape {gx.shape} for input shape {x.shape}")
        if not np.all(np.isfinite(gx)):
            self.fail(last_x, last_norm, f"non-finite map value after {self.evals} evaluations")
        return gx

    def check_norm(self, x, fnorm):
        if self.f0 is None:
            self.f0 = fnorm
        ratio = self.cfg.divergence_ratio
        if ratio is not None and self.f0 > 0.0 and fnorm > ratio * self.f0:
            self.fail(x, fnorm, f"residual grew by more than {ratio:g}x")

    def record(self, k, fnorm, x, f, beta_raw=None, beta=None, theta=None, mk=0, degenerate=False):
        rec = IterationRecord(
            iteration=k,
            residual_norm=float(fnorm),
            beta_raw=beta_raw,
            beta_applied=beta,
            theta=theta,
            active_window=mk,
            g_evaluations=self.evals,
            elapsed_ms=1e3 * (time.perf_counter() - self.t0),
            degenerate_damping=degenerate,
        )
        self.trace.append(rec)
        if self.callback is not None:
            self.callback(rec, x, f)
        return rec

    def report(self, x, fnorm, status):
        return SolveReport(
            converged=status == "converged",
            final_iterate=x,
            final_residual_norm=float(fnorm),
            trace=self.trace,
            status=status,
        )

    def fail(self, x, fnorm, message):
        x = None if x is None else np.array(x)
        fnorm = float("nan") if fnorm is None else fnorm
        raise DivergenceError(message, self.report(x, fnorm, "diverged"))


def solve_picard(problem: FixedPointProblem, cfg: SolverConfig = SolverConfig(), callback=None) -> SolveReport:
    """Plain fixed-point iteration ``x_{k+1} = g(x_k)``.

    ``callback(record, x_k, f_k)`` is called after every trace record.
    Raises :class:`DivergenceError` (with the partial report attached) on
    non-finite values or runaway residual growth.
    """
    track = _Tracker(cfg, callback)
    x = np.array(problem.initial_guess, dtype=float)
    gx = track.evaluate(problem, x, None, None)
    for k in range(cfg.max_iterations):
        f = gx - x
        fnorm = float(np.linalg.norm(f))
        if fnorm <= cfg.tolerance:
            track.record(k, fnorm, x, f)
            return track.report(x, fnorm, "converged")
        track.check_norm(x, fnorm)
        if k == cfg.max_iterations - 1:
            track.record(k, fnorm, x, f)
            break
        track.record(k, fnorm, x, f, beta=1.0, theta=1.0)
        x = gx
        gx = track.evaluate(problem, x, x, fnorm)
    return track.report(x, fnorm, "max_iterations")


def solve_aa(problem: FixedPointProblem, cfg: SolverConfig = SolverConfig(), callback=None) -> SolveReport:
    """Anderson acceleration AA(m) with the configured damping policy.

    With :class:`Optimized` damping this is AAoptD(m): the damping factor
    of every accelerated step is chosen from two extra map evaluations at
    the mixed averages, then passed through the safeguard strategy.
    ``window_size == 0`` gives Picard iteration.
    """
    m = cfg.window_size
    policy = cfg.damping
    track = _Tracker(cfg, callback)
    x = np.array(problem.initial_guess, dtype=float)
    gx = track.evaluate(problem, x, None, None)
    state = AndersonState(x.size, m, cfg.condition_guard) if m else None
    for k in range(cfg.max_iterations):
        f = gx - x
        fnorm = float(np.linalg.norm(f))
        if state is not None:
            state.push(f, gx)
        if fnorm <= cfg.tolerance:
            track.record(k, fnorm, x, f)
            return track.report(x, fnorm, "converged")
        track.check_norm(x, fnorm)
        if k == cfg.max_iterations - 1:
            track.record(k, fnorm, x, f)
            break
        gamma = state.solve(f) if state is not None and state.count else np.zeros(0)
        if gamma.size == 0:
            # First step, pure Picard, or singular-window fallback.
            track.record(k, fnorm, x, f, beta=1.0, theta=1.0)
            x = gx
        else:
            mk = gamma.size
            fitted = state.fitted_residual(gamma)
            theta = float(np.linalg.norm(f - fitted) / fnorm)
            x_alpha, x_tilde = mixed_averages(state, gx, f, gamma)
            beta_raw = None
            degenerate = False
            if isinstance(policy, Undamped):
                beta = 1.0
            elif isinstance(policy, Constant):
                beta = policy.beta
            else:
                r_p = x_alpha - track.evaluate(problem, x_alpha, x, fnorm)
                r_q = x_tilde - track.evaluate(problem, x_tilde, x, fnorm)
                degenerate = damping_direction_is_degenerate(r_p, r_q)
                beta_raw = optimize_damping(r_p, r_q, policy.rule)
                beta = apply_safeguard(beta_raw, policy.strategy)
            track.record(k, fnorm, x, f, beta_raw, beta, theta, mk, degenerate)
            x = x_tilde if beta == 1.0 else x_tilde - (1.0 - beta) * (x_tilde - x_alpha)
        if not np.all(np.isfinite(x)):
            track.fail(None, fnorm, f"non-finite iterate at step {k + 1}")
        gx = track.evaluate(problem, x, x, fnorm)
    return track.report(x, fnorm, "max_iterations")
