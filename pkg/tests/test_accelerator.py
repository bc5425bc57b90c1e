import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aaoptd.accelerator import (
    AndersonState,
    ClampFloor,
    Constant,
    FixedPointProblem,
    FlipBelow,
    Optimized,
    Raw,
    SolverConfig,
    Undamped,
    aa_step,
    apply_safeguard,
    constrained_ls_oracle,
    gamma_to_alpha,
    mixed_averages,
    optimize_damping,
    solve_aa,
    solve_picard,
    theta_ratio,
)
from aaoptd.errors import AAError, DivergenceError
from aaoptd.problems import chandrasekhar_problem, linear_problem
from oracles import grid_search_beta, random_contractive_affine


def affine_problem(m, b, x0=None):
    return FixedPointProblem(lambda x: m @ x + b, np.zeros(b.size) if x0 is None else x0)


def collect(solver, problem, cfg):
    xs, fs = [], []
    report = solver(problem, cfg, callback=lambda rec, x, f: (xs.append(x.copy()), fs.append(f.copy())))
    return report, xs, fs


# -- configuration ------------------------------------------------------------


def test_policy_validation():
    with pytest.raises(ValueError):
        Constant(0.0)
    with pytest.raises(ValueError):
        Constant(1.5)
    with pytest.raises(ValueError):
        FlipBelow(0.5)
    with pytest.raises(ValueError):
        ClampFloor(0.0)
    with pytest.raises(ValueError):
        Optimized(rule="cosine")
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(window_size=-1)


# -- Picard -------------------------------------------------------------------


def test_picard_halving_map():
    p = FixedPointProblem(lambda x: x / 2, np.ones(1))
    rep = solve_picard(p, SolverConfig(tolerance=1e-10))
    assert rep.converged
    norms = rep.residual_norms()
    np.testing.assert_allclose(norms[1:] / norms[:-1], 0.5)
    assert rep.final_residual_norm <= 1e-10
    assert rep.g_evaluations == rep.iterations_used


def test_picard_constant_map_converges_in_one_iteration():
    rep = solve_picard(chandrasekhar_problem(50, 0.0), SolverConfig())
    assert rep.converged and rep.iterations_used == 1
    np.testing.assert_array_equal(rep.final_iterate, np.ones(50))


def test_picard_linear_problem_diverges():
    with pytest.raises(DivergenceError) as info:
        solve_picard(linear_problem(10), SolverConfig())
    partial = info.value.report
    assert partial is not None and not partial.converged
    norms = partial.residual_norms()
    assert norms[-1] > 1e6 * norms[0]


def test_picard_without_divergence_check_hits_max_iterations():
    rep = solve_picard(linear_problem(10), SolverConfig(divergence_ratio=None, max_iterations=50))
    assert not rep.converged and rep.status == "max_iterations"
    assert rep.iterations_used == 50
    assert rep.residual_norms()[-1] > rep.residual_norms()[0]


def test_non_finite_map_raises_with_partial_trace():
    # x = x^2 + 2 has no real fixed point; plain iteration overflows.
    p = FixedPointProblem(lambda x: x * x + 2.0, np.full(2, 3.0))
    cfg = SolverConfig(window_size=0, divergence_ratio=None)
    for solver in (solve_picard, solve_aa):
        with np.errstate(over="ignore"), pytest.raises(DivergenceError) as info:
            solver(p, cfg)
        assert "non-finite" in str(info.value)
        assert info.value.report.trace
        assert info.value.report.status == "diverged"


def test_problem_domain_error_gets_partial_report():
    def g(x):
        if x[0] > 5:
            raise DivergenceError("out of domain")
        return 2 * x + 1

    with pytest.raises(DivergenceError) as info:
        solve_picard(FixedPointProblem(g, np.zeros(1)), SolverConfig())
    assert info.value.report is not None
    assert len(info.value.report.trace) >= 2


# -- coefficient algebra ----------------------------------------------------------


@pytest.mark.parametrize(
    "gamma, alpha",
    [((), (1.0,)), ((0.2, 0.5), (0.2, 0.3, 0.5)), ((1.0,), (1.0, 0.0))],
)
def test_gamma_to_alpha(gamma, alpha):
    np.testing.assert_allclose(gamma_to_alpha(gamma), alpha, atol=1e-15)


@given(st.lists(st.floats(-1e3, 1e3), max_size=12))
def test_gamma_to_alpha_sums_to_one(gamma):
    alpha = gamma_to_alpha(gamma)
    assert alpha.size == len(gamma) + 1
    assert abs(alpha.sum() - 1.0) <= 1e-14 * max(1.0, max(map(abs, gamma), default=1.0))


def test_theta_examples():
    rng = np.random.default_rng(0)
    hist = rng.standard_normal((3, 5))
    assert theta_ratio([0, 0, 1], hist) == pytest.approx(1.0)
    v = rng.standard_normal(5)
    assert theta_ratio([0.5, 0.5], [v, v]) == pytest.approx(1.0)
    assert theta_ratio([1.0], [np.zeros(4)]) == 0.0


def test_oracle_examples():
    col = np.array([1.0, 2.0])
    res = constrained_ls_oracle([col])
    np.testing.assert_array_equal(res.alpha, [1.0])
    res = constrained_ls_oracle([col, col])
    assert res.rank_deficient
    assert res.alpha.sum() == pytest.approx(1.0)
    assert res.value == pytest.approx(np.linalg.norm(col))


def test_oracle_agrees_with_qr_path_on_random_columns():
    rng = np.random.default_rng(7)
    for _ in range(100):
        cols = rng.standard_normal((8, 3))
        oracle = constrained_ls_oracle(list(cols.T))
        state = AndersonState(8, 2)
        for c in cols.T:
            state.push(c, np.zeros(8))
        gamma = state.solve(cols[:, -1])
        alpha = gamma_to_alpha(gamma)
        engine = np.linalg.norm(cols @ alpha)
        assert oracle.value <= engine + 1e-10
        assert engine <= oracle.value + 1e-10


# -- single step --------------------------------------------------------------


def test_aa_step_without_history_is_plain_map():
    state = AndersonState(3, 2)
    g = np.array([1.0, 2.0, 3.0])
    f = np.array([0.5, 0.5, 0.5])
    np.testing.assert_array_equal(aa_step(state, g, f, np.zeros(0)), g)
    xa, xt = mixed_averages(state, g, f, np.zeros(0))
    np.testing.assert_array_equal(xt, g)
    np.testing.assert_array_equal(xa, g - f)


def test_aa_step_checks_window_length():
    state = AndersonState(3, 2)
    with pytest.raises(AAError):
        aa_step(state, np.zeros(3), np.zeros(3), np.ones(1))


def history_state(rng, n=5, m=2, steps=3):
    """Run a few undamped steps on an affine map keeping every iterate."""
    a, b = random_contractive_affine(rng, n, 0.8)
    x = rng.standard_normal(n)
    state = AndersonState(n, m, condition_guard=None)
    xs, gs = [], []
    for _ in range(steps):
        gx = a @ x + b
        xs.append(x)
        gs.append(gx)
        state.push(gx - x, gx)
        gamma = state.solve(gx - x) if state.count else np.zeros(0)
        x = aa_step(state, gx, gx - x, gamma)
    return state, np.array(xs), np.array(gs)


def test_mixed_averages_match_direct_summation():
    rng = np.random.default_rng(11)
    for _ in range(20):
        state, xs, gs = history_state(rng, n=5, m=2, steps=4)
        f = gs[-1] - xs[-1]
        gamma = state.solve(f)
        assert gamma.size == 2
        alpha = gamma_to_alpha(gamma)
        xa, xt = mixed_averages(state, gs[-1], f, gamma)
        np.testing.assert_allclose(xa, alpha @ xs[-3:], atol=1e-10)
        np.testing.assert_allclose(xt, alpha @ gs[-3:], atol=1e-10)


def test_mixed_averages_zero_gamma():
    state, xs, gs = history_state(np.random.default_rng(3), m=2, steps=3)
    f = gs[-1] - xs[-1]
    xa, xt = mixed_averages(state, gs[-1], f, np.zeros(2))
    np.testing.assert_allclose(xt, gs[-1])
    np.testing.assert_allclose(xa, xs[-1], atol=1e-14)


def test_undamped_step_has_no_correction_term():
    state, xs, gs = history_state(np.random.default_rng(5), m=2, steps=3)
    f = gs[-1] - xs[-1]
    gamma = state.solve(f)
    np.testing.assert_array_equal(aa_step(state, gs[-1], f, gamma, 1.0), gs[-1] - state.dg_columns @ gamma)


def test_damped_step_is_convex_mix_of_averages():
    state, xs, gs = history_state(np.random.default_rng(6), m=2, steps=3)
    f = gs[-1] - xs[-1]
    gamma = state.solve(f)
    xa, xt = mixed_averages(state, gs[-1], f, gamma)
    np.testing.assert_allclose(aa_step(state, gs[-1], f, gamma, 0.3), xa + 0.3 * (xt - xa), atol=1e-13)


def test_aa1_matches_two_point_formula():
    rng = np.random.default_rng(8)
    a, b = random_contractive_affine(rng, 6, 0.7)
    g = lambda x: a @ x + b  # noqa: E731
    x0 = rng.standard_normal(6)
    x1 = g(x0)
    f0, f1 = g(x0) - x0, g(x1) - x1
    df = f1 - f0
    gamma = df @ f1 / (df @ df)
    x2 = g(x1) - gamma * (g(x1) - g(x0))

    _, xs, _ = collect(solve_aa, affine_problem(a, b, x0), SolverConfig(window_size=1, max_iterations=3))
    np.testing.assert_allclose(xs[1], x1, rtol=0, atol=0)
    np.testing.assert_allclose(xs[2], x2, atol=1e-12)


# -- damping ------------------------------------------------------------------


def test_minimizer_rule_examples():
    rp = np.array([1.0, -2.0, 0.5])
    assert optimize_damping(rp, np.zeros(3), "minimizer") == pytest.approx(1.0)
    assert optimize_damping(rp, -rp, "minimizer") == pytest.approx(0.5)
    rp, rq = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    beta = optimize_damping(rp, rq, "minimizer")
    assert beta == pytest.approx(0.5)
    assert beta == pytest.approx(grid_search_beta(rp, rq), abs=1e-5)


def test_minimizer_rule_matches_grid_search():
    rng = np.random.default_rng(9)
    for _ in range(30):
        rp, rq = rng.standard_normal(4), rng.standard_normal(4)
        best = grid_search_beta(rp, rq, -3, 3, 60001)
        expected = min(abs(best), 1.0)
        assert optimize_damping(rp, rq, "minimizer") == pytest.approx(expected, abs=2e-4)


def test_normalized_rule_examples():
    rp = np.array([1.0, -2.0, 0.5])
    assert optimize_damping(rp, np.zeros(3)) == pytest.approx(1.0)
    assert optimize_damping(rp, -rp) == pytest.approx(1.0)
    assert optimize_damping(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(np.sqrt(0.5))
    assert optimize_damping(np.zeros(2), np.array([1.0, 0.0])) == 0.0


@pytest.mark.parametrize("rule", ["normalized", "minimizer"])
def test_degenerate_direction_gives_one(rule):
    rp = np.array([1.0, 2.0])
    assert optimize_damping(rp, rp, rule) == 1.0
    assert optimize_damping(rp, rp + 1e-17, rule) == 1.0


@pytest.mark.parametrize("rule", ["normalized", "minimizer"])
def test_damping_is_scale_invariant(rule):
    rng = np.random.default_rng(10)
    rp, rq = rng.standard_normal(7), rng.standard_normal(7)
    b = optimize_damping(rp, rq, rule)
    assert optimize_damping(1e-8 * rp, 1e-8 * rq, rule) == pytest.approx(b, rel=1e-12)
    assert optimize_damping(1e150 * rp, 1e150 * rq, rule) == pytest.approx(b, rel=1e-12)


def test_safeguard_examples():
    assert apply_safeguard(0.1, ClampFloor(0.3)) == 0.3
    assert apply_safeguard(0.1, FlipBelow(0.3)) == pytest.approx(0.9)
    assert apply_safeguard(0.5, ClampFloor(0.3)) == 0.5
    assert apply_safeguard(0.5, FlipBelow(0.3)) == 0.5
    assert apply_safeguard(0.0, Raw()) == 1.0
    assert apply_safeguard(0.4, Raw()) == 0.4


@given(st.floats(0.0, 1.0), st.floats(0.01, 0.49))
def test_safeguard_domain(beta, eta):
    assert 0.0 < apply_safeguard(beta, Raw()) <= 1.0
    assert eta <= apply_safeguard(beta, ClampFloor(eta)) <= 1.0
    flipped = apply_safeguard(beta, FlipBelow(eta))
    assert 0.0 < flipped <= 1.0 and not (0.0 < flipped < eta)


# -- full solves ----------------------------------------------------------------


def test_window_zero_reproduces_picard_bit_for_bit():
    p = chandrasekhar_problem(60, 0.7)
    a, xa, _ = collect(solve_picard, p, SolverConfig())
    b, xb, _ = collect(solve_aa, p, SolverConfig(window_size=0))
    assert a.iterations_used == b.iterations_used
    for u, v in zip(xa, xb):
        np.testing.assert_array_equal(u, v)
    assert [r.residual_norm for r in a.trace] == [r.residual_norm for r in b.trace]


def test_zero_gamma_step_reproduces_picard():
    rng = np.random.default_rng(12)
    a, b = random_contractive_affine(rng, 6, 0.6)
    x = rng.standard_normal(6)
    state = AndersonState(6, 1)
    for _ in range(4):
        gx = a @ x + b
        state.push(gx - x, gx)
        x_next = aa_step(state, gx, gx - x, np.zeros(state.count))
        np.testing.assert_array_equal(x_next, gx)
        x = x_next


def test_linear_finite_termination():
    p = linear_problem(10)
    rep = solve_aa(p, SolverConfig(window_size=10, tolerance=1e-8))
    assert rep.converged and rep.iterations_used <= 11
    np.testing.assert_allclose(rep.final_iterate, p.known_solution, atol=1e-6)


@pytest.mark.parametrize("rule", ["normalized", "minimizer"])
def test_chandrasekhar_critical_case_aa1_beats_picard(rule):
    p = chandrasekhar_problem(500, 1.0)
    assert not solve_picard(p, SolverConfig()).converged
    assert solve_aa(p, SolverConfig(window_size=1)).converged
    rep = solve_aa(p, SolverConfig(window_size=1, damping=Optimized(FlipBelow(0.3), rule)))
    assert rep.converged


def test_constant_map_optimized_equals_undamped():
    c = np.array([0.3, -1.0, 2.0])
    p = FixedPointProblem(lambda x: c.copy(), np.zeros(3))
    for rule in ("normalized", "minimizer"):
        a, xa, _ = collect(solve_aa, p, SolverConfig(window_size=2, damping=Optimized(rule=rule)))
        b, xb, _ = collect(solve_aa, p, SolverConfig(window_size=2))
        assert len(xa) == len(xb)
        for u, v in zip(xa, xb):
            np.testing.assert_array_equal(u, v)


@pytest.mark.parametrize(
    "policy", [Undamped(), Constant(0.6), Optimized(), Optimized(FlipBelow(0.3)), Optimized(ClampFloor(0.3))]
)
def test_trace_invariants_on_random_affine(policy):
    rng = np.random.default_rng(13)
    for _ in range(5):
        a, b = random_contractive_affine(rng, 12, 0.9)
        rep = solve_aa(affine_problem(a, b), SolverConfig(window_size=3, damping=policy, max_iterations=60))
        for r in rep.trace:
            assert r.residual_norm >= 0
            if r.theta is not None:
                assert r.theta <= 1 + 1e-12
            if r.beta_applied is not None:
                assert 0 < r.beta_applied <= 1
                if isinstance(policy, Optimized) and isinstance(policy.strategy, ClampFloor):
                    assert r.beta_applied >= 0.3 or r.active_window == 0
                if isinstance(policy, Optimized) and isinstance(policy.strategy, FlipBelow):
                    assert not (0 < r.beta_applied < 0.3)
        if rep.converged:
            assert rep.final_residual_norm <= 1e-10


def test_evaluation_accounting():
    rng = np.random.default_rng(14)
    a, b = random_contractive_affine(rng, 10, 0.95)
    p = affine_problem(a, b)
    for policy in (Undamped(), Constant(0.5)):
        rep = solve_aa(p, SolverConfig(window_size=2, damping=policy))
        assert rep.g_evaluations == rep.iterations_used
    rep = solve_aa(p, SolverConfig(window_size=2, damping=Optimized()))
    accelerated = sum(r.beta_raw is not None for r in rep.trace)
    assert accelerated == rep.iterations_used - 2
    assert rep.g_evaluations == rep.iterations_used + 2 * accelerated


def test_condition_guard_drops_columns():
    # A map that stalls in one coordinate makes successive residual
    # differences nearly parallel.
    p = FixedPointProblem(lambda x: np.array([0.999999 * x[0] + 1e-6, 0.0, 0.0]), np.zeros(3))
    rep = solve_aa(p, SolverConfig(window_size=3, condition_guard=10.0, max_iterations=30))
    assert max(r.active_window for r in rep.trace) <= 3
    assert rep.converged


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(1, 3), n=st.integers(2, 32))
def test_coefficient_consistency_property(seed, m, n):
    rng = np.random.default_rng(seed)
    a, b = random_contractive_affine(rng, n, 0.85)
    fs = []
    records = []

    def cb(rec, x, f):
        fs.append(f.copy())
        records.append(rec)

    solve_aa(affine_problem(a, b), SolverConfig(window_size=m, max_iterations=20), callback=cb)
    for k, rec in enumerate(records):
        if rec.theta is None or rec.active_window == 0:
            continue
        cols = fs[k - rec.active_window : k + 1]
        oracle = constrained_ls_oracle(cols)
        engine = rec.theta * rec.residual_norm
        if oracle.rank_deficient:
            continue
        assert abs(engine - oracle.value) <= 1e-8 * max(oracle.value, 1e-3 * rec.residual_norm)


def test_chandrasekhar_critical_case_raw_minimizer():
    # The unsafeguarded default rule over-damps here; see the acceptance log.
    p = chandrasekhar_problem(500, 1.0)
    rep = solve_aa(p, SolverConfig(window_size=1, damping=Optimized(Raw(), "minimizer")))
    assert rep.converged and rep.iterations_used <= 200
