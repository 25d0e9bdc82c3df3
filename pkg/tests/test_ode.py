import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from ctesn import ode
from ctesn.models import robertson
from ctesn.ode import (
    OdeSystem,
    Solution,
    SolverConfig,
    SolverStatus,
    fd_jacobian,
    interpolate,
    solve_explicit,
    solve_stiff,
    wrms_norm,
)


def decay_system(rate=1.0):
    return OdeSystem(1, lambda t, y: -rate * y, lambda t, y: np.array([[-rate]]))


# --- explicit solver ---------------------------------------------------------


def test_explicit_exponential_decay():
    cfg = SolverConfig()
    sol = solve_explicit(decay_system(), (0.0, 1.0), [1.0], cfg)
    assert sol.success
    assert abs(sol.states[-1, 0] - math.exp(-1.0)) <= 10 * cfg.reltol


def test_explicit_constant_solution_exact():
    c = 3.25
    sol = solve_explicit(OdeSystem(1, lambda t, y: np.zeros(1)), (0.0, 5.0), [c])
    assert np.all(sol.states == c)


def test_explicit_cosine_forcing():
    cfg = SolverConfig()
    sol = solve_explicit(OdeSystem(1, lambda t, y: np.array([math.cos(t)])), (0.0, math.pi), [0.0], cfg)
    assert abs(sol.states[-1, 0]) <= 10 * (cfg.abstol + cfg.reltol)


def test_explicit_steps_within_wrms_tolerance():
    # re-run each accepted step and check its error estimate
    cfg = SolverConfig(reltol=1e-5, abstol=1e-7)
    sys_ = OdeSystem(2, lambda t, y: np.array([y[1], -y[0]]))
    sol = solve_explicit(sys_, (0.0, 10.0), [1.0, 0.0], cfg)
    counts = {"rhs": 0, "jac": 0}
    for k in range(sol.n_steps):
        h = sol.times[k + 1] - sol.times[k]
        _, _, _, err = ode._dp_step(sys_, sol.times[k], sol.states[k], sol.derivs[k], h, cfg, counts)
        assert err <= 1.0


def test_explicit_status_budget():
    sol = solve_explicit(decay_system(), (0.0, 100.0), [1.0], SolverConfig(max_steps=3))
    assert sol.status is SolverStatus.BUDGET_EXHAUSTED
    assert not sol.success


def test_explicit_status_underflow():
    # finite-time blow-up forces the step below dt_min
    sys_ = OdeSystem(1, lambda t, y: y**2)
    sol = solve_explicit(sys_, (0.0, 2.0), [1.0], SolverConfig(dt_min=1e-8))
    assert sol.status is SolverStatus.DT_UNDERFLOW
    assert sol.times[-1] < 1.001


def test_explicit_matches_scipy_oracle():
    f = lambda t, y: np.array([y[1], (1 - y[0] ** 2) * y[1] - y[0]])
    sol = solve_explicit(OdeSystem(2, f), (0.0, 10.0), [2.0, 0.0], SolverConfig(reltol=1e-8, abstol=1e-10))
    ref = solve_ivp(f, (0.0, 10.0), [2.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-12)
    assert np.allclose(sol.states[-1], ref.y[:, -1], atol=1e-6)


def _fixed_step_error(solver, h):
    sol = solver(decay_system(), (0.0, 1.0), [1.0], SolverConfig(fixed_dt=h))
    return abs(sol.states[-1, 0] - math.exp(-1.0))


def test_explicit_convergence_order():
    e1, e2 = _fixed_step_error(solve_explicit, 0.1), _fixed_step_error(solve_explicit, 0.05)
    assert math.log2(e1 / e2) >= 4.5


def test_stiff_convergence_order():
    e1, e2 = _fixed_step_error(solve_stiff, 0.02), _fixed_step_error(solve_stiff, 0.01)
    assert math.log2(e1 / e2) >= 1.8


def test_tighter_tolerance_reduces_error():
    errs = []
    for tol in (1e-4, 1e-6, 1e-8):
        sol = solve_explicit(decay_system(), (0.0, 1.0), [1.0], SolverConfig(reltol=tol, abstol=tol))
        errs.append(abs(sol.states[-1, 0] - math.exp(-1.0)))
    assert errs[0] > errs[1] > errs[2]


# --- stiff solver ------------------------------------------------------------


def test_stiff_prothero_robinson_matches_tight_oracle():
    f = lambda t, y: -1000.0 * (y - math.cos(t))
    jac = lambda t, y: np.array([[-1000.0]])
    sys_ = OdeSystem(1, f, jac)
    sol = solve_stiff(sys_, (0.0, 1.0), [0.0])
    tight = solve_stiff(sys_, (0.0, 1.0), [0.0], SolverConfig(abstol=1e-12, reltol=1e-12, max_steps=10**6))
    assert abs(sol.states[-1, 0] - tight.states[-1, 0]) / abs(tight.states[-1, 0]) <= 1e-4
    # independent oracle
    ref = solve_ivp(f, (0.0, 1.0), [0.0], method="Radau", rtol=1e-12, atol=1e-14)
    assert abs(tight.states[-1, 0] - ref.y[0, -1]) <= 1e-9


def test_stiff_robertson_at_1e4_matches_oracle():
    sys_ = robertson()
    sol = solve_stiff(sys_, (0.0, 1e4), [1.0, 0.0, 0.0])
    tight = solve_stiff(sys_, (0.0, 1e4), [1.0, 0.0, 0.0], SolverConfig(abstol=1e-14, reltol=1e-10, max_steps=10**7))
    scale = np.abs(tight.states).max(axis=0)
    err = np.abs(sol.states[-1] - tight.states[-1]) / scale
    assert np.all(err <= 1e-4)
    ref = solve_ivp(sys_.rhs, (0.0, 1e4), [1.0, 0.0, 0.0], method="Radau", rtol=1e-11, atol=1e-14, jac=sys_.jacobian)
    assert np.all(np.abs(tight.states[-1] - ref.y[:, -1]) / scale <= 1e-6)


def test_stiff_robertson_full_span_step_count():
    sol = solve_stiff(robertson(), (0.0, 1e5), [1.0, 0.0, 0.0])
    assert sol.success
    assert sol.n_steps <= 10**5


def test_stiff_diagonal_linear_system():
    cfg = SolverConfig()
    a = -np.eye(3)
    y0 = np.array([1.0, -2.0, 0.5])
    sol = solve_stiff(OdeSystem(3, lambda t, y: a @ y, lambda t, y: a), (0.0, 2.0), y0, cfg)
    assert np.all(np.abs(sol.states[-1] - y0 * math.exp(-2.0)) <= 10 * cfg.reltol)


def test_stiff_step_sizes_grow_on_very_stiff_decay():
    sol = solve_stiff(decay_system(1e6), (0.0, 1.0), [1.0])
    assert sol.success
    assert np.max(np.diff(sol.times)) >= 0.05
    explicit = solve_explicit(decay_system(1e6), (0.0, 1.0), [1.0], SolverConfig(max_steps=20_000))
    assert not explicit.success


def test_stiff_uses_fd_jacobian_without_analytic():
    sys_ = robertson()
    no_jac = OdeSystem(3, sys_.rhs)
    a = solve_stiff(sys_, (0.0, 10.0), [1.0, 0.0, 0.0])
    b = solve_stiff(no_jac, (0.0, 10.0), [1.0, 0.0, 0.0])
    assert b.success and b.n_rhs > a.n_rhs
    assert np.allclose(a.states[-1], b.states[-1], rtol=1e-4, atol=1e-9)


def test_stiff_singular_stage_matrix_raises():
    # J = 1/(gamma h) for every h the controller can reach is impossible,
    # so use a Jacobian that is NaN: every factorisation fails
    sys_ = OdeSystem(1, lambda t, y: -y, lambda t, y: np.array([[np.nan]]))
    with pytest.raises(ode.SingularMatrixError):
        solve_stiff(sys_, (0.0, 1.0), [1.0])


def test_solvers_are_deterministic():
    a = solve_stiff(robertson(), (0.0, 100.0), [1.0, 0.0, 0.0])
    b = solve_stiff(robertson(), (0.0, 100.0), [1.0, 0.0, 0.0])
    for name in ("times", "states", "derivs"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_bad_problem_rejected():
    with pytest.raises(ValueError):
        solve_explicit(decay_system(), (1.0, 0.0), [1.0])
    with pytest.raises(ValueError):
        solve_explicit(decay_system(), (0.0, 1.0), [1.0, 2.0])
    with pytest.raises(ValueError):
        SolverConfig(abstol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(dt_min=-1.0)


# --- fd_jacobian ---------------------------------------------------------------


def test_fd_jacobian_linear():
    sys_ = OdeSystem(2, lambda t, y: np.array([2 * y[0], 3 * y[1]]))
    assert np.allclose(fd_jacobian(sys_, 0.0, np.array([0.3, -1.2])), np.diag([2.0, 3.0]), atol=1e-6)


def test_fd_jacobian_robertson_first_row():
    jac = fd_jacobian(robertson(), 0.0, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(jac[0], [-0.04, 0.0, 0.0], atol=1e-5)


def test_fd_jacobian_constant_rhs():
    sys_ = OdeSystem(3, lambda t, y: np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(fd_jacobian(sys_, 0.0, np.ones(3)), np.zeros((3, 3)))


def test_fd_jacobian_nan_propagates():
    sys_ = OdeSystem(1, lambda t, y: np.array([np.nan]))
    assert np.isnan(fd_jacobian(sys_, 0.0, np.zeros(1))).all()


# --- interpolate ---------------------------------------------------------------


def test_interpolate_knot_identity():
    sol = solve_stiff(robertson(), (0.0, 100.0), [1.0, 0.0, 0.0])
    for k in (0, 5, len(sol.times) - 1):
        assert np.array_equal(interpolate(sol, sol.times[k]), sol.states[k])


def test_interpolate_vectorised_matches_scalar():
    sol = solve_explicit(decay_system(), (0.0, 1.0), [1.0])
    ts = np.linspace(0.0, 1.0, 17)
    vec = interpolate(sol, ts)
    assert vec.shape == (17, 1)
    assert np.array_equal(vec, np.array([interpolate(sol, t) for t in ts]))


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8, unique=True), st.floats(0.0, 1.0))
def test_interpolate_reproduces_linear(gaps, frac):
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    sol = Solution(times, times[:, None], np.ones((times.size, 1)))
    t = frac * times[-1]
    assert abs(interpolate(sol, t)[0] - t) <= 1e-12


@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=6), st.floats(0.0, 1.0))
def test_interpolate_reproduces_cubic(gaps, frac):
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    sol = Solution(times, (times**3)[:, None], (3 * times**2)[:, None])
    t = frac * times[-1]
    assert abs(interpolate(sol, t)[0] - t**3) <= 1e-10 * max(1.0, times[-1] ** 3)


def test_interpolate_continuous_at_knots():
    sol = solve_stiff(robertson(), (0.0, 10.0), [1.0, 0.0, 0.0])
    for k in range(1, len(sol.times) - 1, 7):
        t = sol.times[k]
        left, right = interpolate(sol, np.nextafter(t, -np.inf)), interpolate(sol, np.nextafter(t, np.inf))
        assert np.allclose(left, right, rtol=1e-12, atol=1e-15)


def test_interpolate_out_of_range():
    sol = solve_explicit(decay_system(), (0.0, 1.0), [1.0])
    with pytest.raises(ValueError):
        interpolate(sol, 1.0 + 1e-9)
    with pytest.raises(ValueError):
        interpolate(sol, -0.1)


# --- wrms_norm -------------------------------------------------------------------


def test_wrms_zero():
    assert wrms_norm(np.zeros(3), np.ones(3), np.ones(3), SolverConfig()) == 0.0


def test_wrms_unit_case():
    cfg = SolverConfig()
    assert wrms_norm([cfg.abstol], [0.0], [0.0], cfg) == pytest.approx(1.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
def test_wrms_homogeneous(vals):
    cfg = SolverConfig()
    err = np.array(vals)
    y = np.linspace(-1, 1, err.size)
    assert wrms_norm(2 * err, y, y, cfg) == pytest.approx(2 * wrms_norm(err, y, y, cfg), rel=1e-12, abs=0)


def test_wrms_matches_definition(rng):
    cfg = SolverConfig(abstol=1e-3, reltol=1e-2)
    e, a, b = rng.normal(size=(3, 5))
    ref = math.sqrt(np.mean((e / (1e-3 + 1e-2 * np.maximum(abs(a), abs(b)))) ** 2))
    assert wrms_norm(e, a, b, cfg) == pytest.approx(ref, rel=1e-14)
