"""Command-line experiment runner.

Single run::

    aaoptd-bench --problem bratu-32 --method aaoptd --window 10 \\
        --safeguard flip --eta 0.3 --out trace.csv

Side-by-side comparison (one ``--compare`` block per method)::

    aaoptd-bench --problem bratu-32 --compare aa:m=10 \\
        --compare aaoptd:m=10,safeguard=flip,eta=0.3 --out compare.csv

Exit codes: 0 converged, 1 not converged or diverged, 2 usage error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, replace
from typing import Optional

from .accelerator import (
    ClampFloor,
    Constant,
    FlipBelow,
    Optimized,
    Raw,
    SolverConfig,
    SolveReport,
    Undamped,
    solve_aa,
    solve_picard,
)
from .errors import DivergenceError, NotFoundError
from .problems import lookup

EXIT_CONVERGED = 0
EXIT_NOT_CONVERGED = 1
EXIT_USAGE = 2
EXIT_IO = 3

METHODS = ("picard", "aa", "aaoptd")
DAMPINGS = ("none", "constant", "optimized")
SAFEGUARDS = ("raw", "clamp", "flip")
TRACE_HEADER = ["iter", "residual_norm", "beta_raw", "beta_applied", "theta", "m_k", "g_evals", "elapsed_ms"]


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    problem: str
    method: str = "aaoptd"
    window_size: int = 0
    damping: str = "none"
    beta: Optional[float] = None
    safeguard: Optional[str] = None
    eta: Optional[float] = None
    rule: str = "normalized"
    tolerance: float = 1e-10
    max_iterations: int = 200
    out: Optional[str] = None
    seed: Optional[int] = None  # reserved; every catalog problem is deterministic

    @property
    def label(self) -> str:
        if self.method == "picard":
            return "Picard"
        if self.method == "aa":
            extra = f",beta={self.beta:g}" if self.damping == "constant" else ""
            return f"AA({self.window_size}{extra})"
        guard = self.safeguard if self.safeguard == "raw" else f"{self.safeguard}{self.eta:g}"
        rule = "" if self.rule == "normalized" else f",{self.rule}"
        return f"AAoptD({self.window_size},{guard}{rule})"

    def solver_config(self) -> SolverConfig:
        if self.damping == "constant":
            damping = Constant(self.beta)
        elif self.damping == "optimized":
            strategy = {"raw": lambda: Raw(), "clamp": lambda: ClampFloor(self.eta),
                        "flip": lambda: FlipBelow(self.eta)}[self.safeguard]()
            damping = Optimized(strategy, self.rule)
        else:
            damping = Undamped()
        return SolverConfig(
            window_size=self.window_size,
            tolerance=self.tolerance,
            max_iterations=self.max_iterations,
            damping=damping,
        )


def resolve_spec(problem, method, window=None, damping=None, beta=None, safeguard=None,
                 eta=None, rule=None, tolerance=1e-10, max_iterations=200, out=None, seed=None):
    """Validate a method block and fill catalog defaults."""
    try:
        entry = lookup(problem)
    except NotFoundError as exc:
        raise UsageError(str(exc)) from None
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if damping is not None and damping not in DAMPINGS:
        raise UsageError(f"unknown damping {damping!r}; choose from {', '.join(DAMPINGS)}")
    if safeguard is not None and safeguard not in SAFEGUARDS:
        raise UsageError(f"unknown safeguard {safeguard!r}; choose from {', '.join(SAFEGUARDS)}")
    if tolerance <= 0:
        raise UsageError("--tol must be positive")
    if max_iterations < 1:
        raise UsageError("--max-iters must be >= 1")

    if method == "picard":
        if window not in (None, 0):
            raise UsageError("picard takes no window")
        if damping not in (None, "none") or beta is not None or safeguard is not None or eta is not None:
            raise UsageError("picard takes no damping or safeguard")
        if rule is not None:
            raise UsageError("picard takes no damping rule")
        return ExperimentSpec(problem, "picard", 0, "none", tolerance=tolerance,
                              max_iterations=max_iterations, out=out, seed=seed)

    window = entry.window if window is None else window
    if window < 1:
        raise UsageError(f"{method} needs --window >= 1")

    if method == "aa":
        damping = damping or "none"
        if damping == "optimized":
            raise UsageError("optimized damping requires --method aaoptd")
        if safeguard is not None or eta is not None or rule is not None:
            raise UsageError("safeguards and damping rules apply only to --method aaoptd")
        if damping == "constant":
            if beta is None:
                raise UsageError("constant damping needs --beta")
            if not 0.0 < beta <= 1.0:
                raise UsageError("--beta must lie in (0, 1]")
        elif beta is not None:
            raise UsageError("--beta requires --damping constant")
        return ExperimentSpec(problem, "aa", window, damping, beta, tolerance=tolerance,
                              max_iterations=max_iterations, out=out, seed=seed)

    if damping not in (None, "optimized"):
        raise UsageError("aaoptd requires optimized damping")
    if beta is not None:
        raise UsageError("--beta is for constant damping with --method aa")
    safeguard = safeguard or entry.safeguard
    if safeguard == "raw":
        if eta is not None:
            raise UsageError("--eta needs --safeguard clamp or flip")
    else:
        eta = eta if eta is not None else (entry.eta or 0.3)
        if not 0.0 < eta < 0.5:
            raise UsageError("--eta must lie in (0, 0.5)")
    rule = rule or "normalized"
    if rule not in ("normalized", "minimizer"):
        raise UsageError(f"unknown damping rule {rule!r}")
    return ExperimentSpec(problem, "aaoptd", window, "optimized", None, safeguard, eta, rule,
                          tolerance, max_iterations, out, seed)


_BLOCK_KEYS = {"m": int, "window": int, "damping": str, "beta": float, "safeguard": str,
               "eta": float, "rule": str}


def parse_block(text):
    """Parse ``method[:key=value,...]`` into keyword arguments."""
    method, _, rest = text.partition(":")
    kwargs = {"method": method.strip()}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in _BLOCK_KEYS:
            raise UsageError(f"bad compare item {item!r}; keys: {', '.join(_BLOCK_KEYS)}")
        try:
            kwargs["window" if key == "m" else key] = _BLOCK_KEYS[key](value.strip())
        except ValueError:
            raise UsageError(f"bad value in compare item {item!r}") from None
    return kwargs


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aaoptd-bench",
        description="Run Picard / AA(m) / AAoptD(m) on the benchmark catalog.",
    )
    parser.add_argument("--problem", required=True, help="catalog name, e.g. bratu-32")
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--window", type=int, help="window size m")
    parser.add_argument("--damping", choices=DAMPINGS)
    parser.add_argument("--beta", type=float, help="constant damping factor")
    parser.add_argument("--safeguard", choices=SAFEGUARDS)
    parser.add_argument("--eta", type=float, help="safeguard threshold in (0, 0.5)")
    parser.add_argument("--rule", choices=("normalized", "minimizer"), help="optimized damping formula")
    parser.add_argument("--tol", type=float, default=1e-10)
    parser.add_argument("--max-iters", type=int, default=200)
    parser.add_argument("--out", help="trace (single run) or comparison table (with --compare)")
    parser.add_argument("--compare", action="append", metavar="BLOCK",
                        help="method block such as aaoptd:m=10,safeguard=flip,eta=0.3; repeatable")
    parser.add_argument("--seed", type=int, help="reserved")
    return parser


def parse_args(argv=None):
    """Return a single :class:`ExperimentSpec`, or a list of them with ``--compare``.

    Raises :class:`UsageError` for invalid combinations; argparse itself
    exits with status 2 on unknown flags.
    """
    ns = build_parser().parse_args(argv)
    common = dict(tolerance=ns.tol, max_iterations=ns.max_iters, seed=ns.seed)
    if ns.compare:
        single = [ns.method, ns.window, ns.damping, ns.beta, ns.safeguard, ns.eta, ns.rule]
        if any(v is not None for v in single):
            raise UsageError("with --compare, give method settings inside the blocks")
        return [resolve_spec(ns.problem, **parse_block(b), out=ns.out, **common) for b in ns.compare]
    return resolve_spec(ns.problem, ns.method or "aaoptd", ns.window, ns.damping, ns.beta,
                        ns.safeguard, ns.eta, ns.rule, out=ns.out, **common)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    report: SolveReport
    wall_time: float
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.report.converged

    @property
    def exit_code(self) -> int:
        return EXIT_CONVERGED if self.converged else EXIT_NOT_CONVERGED

    def summary(self) -> dict:
        return {
            "problem": self.spec.problem,
            "method": self.spec.label,
            "m": self.spec.window_size,
            "converged": self.converged,
            "status": self.report.status,
            "iterations": self.report.iterations_used,
            "final_residual": self.report.final_residual_norm,
            "g_evals": self.report.g_evaluations,
            "wall_time_s": round(self.wall_time, 6),
        }

    def summary_line(self) -> str:
        s = self.summary()
        return (f"{s['problem']} {s['method']} m={s['m']} converged={str(s['converged']).lower()} "
                f"iterations={s['iterations']} final_residual={s['final_residual']:.3e} "
                f"g_evals={s['g_evals']} wall_time={s['wall_time_s']:.3f}s")


def _fmt(value):
    return "" if value is None else repr(float(value))


def write_trace(report: SolveReport, path):
    """Write the per-iteration trace as CSV; missing scalars are empty fields."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for r in report.trace:
            writer.writerow([
                r.iteration, _fmt(r.residual_norm), _fmt(r.beta_raw), _fmt(r.beta_applied),
                _fmt(r.theta), r.active_window, r.g_evaluations, f"{r.elapsed_ms:.3f}",
            ])


def read_trace(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Solve one spec and write its trace if ``spec.out`` is set.

    Divergence yields a non-converged result with the partial trace. I/O
    failures propagate as ``OSError``.
    """
    problem = lookup(spec.problem).build()
    cfg = spec.solver_config()
    solver = solve_picard if spec.method == "picard" else solve_aa
    t0 = time.perf_counter()
    message = ""
    try:
        report = solver(problem, cfg)
    except DivergenceError as exc:
        report, message = exc.report, str(exc)
    wall = time.perf_counter() - t0
    if report.final_iterate is None:
        report.final_iterate = problem.initial_guess.copy()
    if spec.out:
        write_trace(report, spec.out)
    return ExperimentResult(spec, report, wall, message)


def _unique_labels(specs):
    seen = {}
    labels = []
    for s in specs:
        n = seen.get(s.label, 0) + 1
        seen[s.label] = n
        labels.append(s.label if n == 1 else f"{s.label}#{n}")
    return labels


def compare_experiments(specs, out=None):
    """Run several specs on one problem and build the wide residual table.

    The table goes to ``out`` (default: the first spec's ``out``). Returns
    ``(results, header, rows, ranking)`` where ``ranking`` lists
    ``(label, result)`` ordered by iterations to tolerance, non-converged
    runs last.
    """
    specs = list(specs)
    if not specs:
        raise UsageError("nothing to compare")
    if out is None:
        out = specs[0].out
    if len({s.problem for s in specs}) > 1:
        raise UsageError("all compared specs must use the same problem")
    results = [run_experiment(replace(s, out=None)) for s in specs]
    labels = _unique_labels(specs)
    header = ["iter"] + labels
    length = max(r.report.iterations_used for r in results)
    rows = []
    for k in range(length):
        row = [k]
        for r in results:
            trace = r.report.trace
            row.append(_fmt(trace[k].residual_norm) if k < len(trace) else "")
        rows.append(row)
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    order = sorted(range(len(results)),
                   key=lambda i: (not results[i].converged, results[i].report.iterations_used, i))
    ranking = [(labels[i], results[i]) for i in order]
    return results, header, rows, ranking


def main(argv=None) -> int:
    try:
        parsed = parse_args(argv)
    except UsageError as exc:
        print(f"aaoptd-bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if isinstance(parsed, list):
            results, _, _, ranking = compare_experiments(parsed)
            for pos, (label, res) in enumerate(ranking, 1):
                print(f"{pos}. {label}: {res.summary_line()}")
            for res in results:
                print(json.dumps(res.summary(), sort_keys=True))
            return EXIT_CONVERGED if all(r.converged for r in results) else EXIT_NOT_CONVERGED
        result = run_experiment(parsed)
    except OSError as exc:
        print(f"aaoptd-bench: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except UsageError as exc:
        print(f"aaoptd-bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(result.summary_line())
    print(json.dumps(result.summary(), sort_keys=True))
    if result.message:
        print(f"aaoptd-bench: {result.message}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
