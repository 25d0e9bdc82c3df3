"""Adaptive ODE integration with Hermite dense output.

Two integrators share one step-size controller and one ``Solution`` type:

* ``solve_explicit`` -- Dormand-Prince 5(4), for non-stiff problems such as
  the driven reservoir.
* ``solve_stiff`` -- the L-stable Rosenbrock 2(3) pair of Shampine and
  Reichelt (the ``ode23s`` scheme), for stiff ground-truth trajectories.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

Array = np.ndarray
RhsFn = Callable[[float, Array], Array]
JacFn = Callable[[float, Array], Array]

_EPS = np.finfo(float).eps

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


class SolverStatus(str, enum.Enum):
    SUCCESS = "success"
    BUDGET_EXHAUSTED = "step-budget-exhausted"
    DT_UNDERFLOW = "dt-underflow"


class SolverError(RuntimeError):
    """Raised when an integration cannot proceed at all."""


class SingularMatrixError(SolverError):
    """The Rosenbrock stage matrix ``I - gamma*h*J`` stayed singular."""


@dataclass(frozen=True)
class OdeSystem:
    """A first-order system ``y' = rhs(t, y)`` of fixed dimension."""

    dim: int
    rhs: RhsFn
    jacobian: Optional[JacFn] = None
    name: str = ""

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and budgets for the adaptive integrators.

    ``dt_init`` and ``dt_min`` default to fractions of the integration span
    (``1e-6`` and ``1e-14`` respectively). Setting ``fixed_dt`` disables
    error control entirely, which is only useful for convergence studies.
    """

    abstol: float | Sequence[float] = 1e-8
    reltol: float = 1e-6
    dt_init: Optional[float] = None
    dt_min: Optional[float] = None
    max_steps: int = 100_000
    fixed_dt: Optional[float] = None

    def __post_init__(self):
        if np.any(np.asarray(self.abstol, dtype=float) <= 0):
            raise ValueError("abstol must be positive")
        if self.reltol <= 0:
            raise ValueError("reltol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.dt_min is not None and self.dt_min <= 0:
            raise ValueError("dt_min must be positive")
        if self.dt_init is not None and self.dt_init <= 0:
            raise ValueError("dt_init must be positive")
        if self.fixed_dt is not None and self.fixed_dt <= 0:
            raise ValueError("fixed_dt must be positive")


def _frozen(a) -> Array:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Solution:
    """Accepted steps of an integration plus Hermite dense output.

    Arrays are read-only; ``states[k]`` and ``derivs[k]`` belong to
    ``times[k]``.
    """

    times: Array
    states: Array
    derivs: Array
    status: SolverStatus = SolverStatus.SUCCESS
    n_rhs: int = 0
    n_jac: int = 0
    n_rejected: int = 0

    def __post_init__(self):
        for name in ("times", "states", "derivs"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not (len(self.times) == len(self.states) == len(self.derivs)):
            raise ValueError("times, states and derivs must have equal length")
        if self.states.ndim != 2:
            raise ValueError("states must be a (n_times, dim) array")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    @property
    def success(self) -> bool:
        return self.status is SolverStatus.SUCCESS

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def __call__(self, t):
        return interpolate(self, t)


def wrms_norm(err, y_prev, y_new, cfg: SolverConfig) -> float:
    """Weighted RMS norm used for step acceptance (accept when <= 1)."""
    err = np.asarray(err, dtype=float)
    scale = np.asarray(cfg.abstol, dtype=float) + cfg.reltol * np.maximum(
        np.abs(y_prev), np.abs(y_new)
    )
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def fd_jacobian(system: OdeSystem, t: float, y, f0: Optional[Array] = None) -> Array:
    """Forward-difference Jacobian with ``h_j = sqrt(eps) * max(|y_j|, 1)``."""
    y = np.asarray(y, dtype=float)
    if f0 is None:
        f0 = np.asarray(system.rhs(t, y), dtype=float)
    n = y.size
    jac = np.empty((n, n))
    yp = y.copy()
    sqrt_eps = math.sqrt(_EPS)
    for j in range(n):
        h = sqrt_eps * max(abs(y[j]), 1.0)
        yp[j] = y[j] + h
        # use the representable increment
        h = yp[j] - y[j]
        jac[:, j] = (np.asarray(system.rhs(t, yp), dtype=float) - f0) / h
        yp[j] = y[j]
    return jac


def interpolate(sol: Solution, t):
    """Cubic Hermite dense output.

    ``t`` may be a scalar (returns a state vector) or an array of times
    (returns an array of shape ``(len(t), dim)``). Times outside the solved
    span raise ``ValueError``; there is no extrapolation.
    """
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    times = sol.times
    if tt.size and (tt.min() < times[0] or tt.max() > times[-1] or np.isnan(tt).any()):
        raise ValueError(
            f"requested time outside solution span [{times[0]!r}, {times[-1]!r}]"
        )
    if len(times) == 1:
        out = np.repeat(sol.states[:1], tt.size, axis=0)
        return out[0] if scalar else out
    k = np.searchsorted(times, tt, side="right") - 1
    k = np.clip(k, 0, len(times) - 2)
    t0 = times[k]
    h = times[k + 1] - t0
    theta = ((tt - t0) / h)[:, None]
    hh = h[:, None]
    y0 = sol.states[k]
    y1 = sol.states[k + 1]
    f0 = sol.derivs[k]
    f1 = sol.derivs[k + 1]
    out = (1.0 - theta) * y0 + theta * y1 + theta * (theta - 1.0) * (
        (1.0 - 2.0 * theta) * (y1 - y0) + (theta - 1.0) * hh * f0 + theta * hh * f1
    )
    return out[0] if scalar else out


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th- and 4th-order weights
_DP_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

# ode23s constants
_RB_D = 1.0 / (2.0 + math.sqrt(2.0))
_RB_E32 = 6.0 + math.sqrt(2.0)


def _check_problem(system: OdeSystem, tspan, y0) -> Tuple[float, float, Array]:
    t0, tf = (float(v) for v in tspan)
    if not tf > t0:
        raise ValueError(f"need tf > t0, got ({t0}, {tf})")
    y0 = np.array(y0, dtype=float).reshape(-1)
    if y0.size != system.dim:
        raise ValueError(f"y0 has length {y0.size}, system dim is {system.dim}")
    return t0, tf, y0


class _Controller:
    """PI step-size controller with factors clamped to [0.2, 5]."""

    def __init__(self, order: int, beta: float):
        # order is the exponent of h in the local error estimate
        self.alpha = 1.0 / order - 0.75 * beta
        self.beta = beta
        self.order = order
        self.err_prev = 1.0
        self.rejected_last = False

    def accept(self, err: float) -> float:
        if err == 0.0:
            fac = MAX_FACTOR
        else:
            fac = SAFETY * err ** (-self.alpha) * self.err_prev**self.beta
        fac = min(MAX_FACTOR, max(MIN_FACTOR, fac))
        if self.rejected_last:
            fac = min(1.0, fac)
        self.err_prev = max(err, 1e-4)
        self.rejected_last = False
        return fac

    def reject(self, err: float) -> float:
        self.rejected_last = True
        if not np.isfinite(err):
            return MIN_FACTOR
        return min(1.0, max(MIN_FACTOR, SAFETY * err ** (-1.0 / self.order)))


def _integrate(system, tspan, y0, cfg, step, order, beta):
    """Shared adaptive driver.

    ``step`` returns ``(y_new, f_new, slope, err)`` where ``f_new`` is the
    right-hand side at the new point (reused by the next step) and ``slope``
    the derivative stored for dense output.
    """
    t0, tf, y = _check_problem(system, tspan, y0)
    span = tf - t0
    dt_min = cfg.dt_min if cfg.dt_min is not None else 1e-14 * max(span, abs(tf))
    if cfg.fixed_dt is not None:
        h = cfg.fixed_dt
    else:
        h = cfg.dt_init if cfg.dt_init is not None else 1e-6 * span
    h = min(h, span)

    f = np.asarray(system.rhs(t0, y), dtype=float)
    counts = {"rhs": 1, "jac": 0}
    times, states, derivs = [t0], [y], [f]
    ctrl = _Controller(order, beta)
    status = SolverStatus.SUCCESS
    n_rejected = 0
    t = t0
    n_attempts = 0

    while t < tf:
        if len(times) > cfg.max_steps or n_attempts > 10 * cfg.max_steps:
            status = SolverStatus.BUDGET_EXHAUSTED
            break
        last = t + h >= tf or (tf - (t + h)) < dt_min
        if last:
            h = tf - t
        if h < dt_min and not last:
            status = SolverStatus.DT_UNDERFLOW
            break
        n_attempts += 1
        y_new, f_new, slope, err = step(system, t, y, f, h, cfg, counts)
        if cfg.fixed_dt is not None:
            err = 0.0 if np.all(np.isfinite(y_new)) else np.inf
            if not np.isfinite(err):
                raise SolverError(f"non-finite state at t={t + h!r} with fixed step")
        if err <= 1.0:
            t = tf if last else t + h
            y, f = y_new, f_new
            times.append(t)
            states.append(y)
            derivs.append(slope)
            if cfg.fixed_dt is None:
                h *= ctrl.accept(err)
        else:
            n_rejected += 1
            h *= ctrl.reject(err)
            if h < dt_min:
                status = SolverStatus.DT_UNDERFLOW
                break

    return Solution(
        times=np.array(times),
        states=np.array(states),
        derivs=np.array(derivs),
        status=status,
        n_rhs=counts["rhs"],
        n_jac=counts["jac"],
        n_rejected=n_rejected,
    )


def _dp_step(system, t, y, f, h, cfg, counts):
    k = [f]
    for i in range(1, 7):
        yi = y + h * sum(a * kj for a, kj in zip(_DP_A[i], k) if a != 0.0)
        k.append(np.asarray(system.rhs(t + _DP_C[i] * h, yi), dtype=float))
    counts["rhs"] += 6
    # stage 7 is evaluated at the 5th-order solution (FSAL)
    y_new = y + h * sum(b * kj for b, kj in zip(_DP_B, k) if b != 0.0)
    err_vec = h * sum(e * kj for e, kj in zip(_DP_E, k) if e != 0.0)
    err = wrms_norm(err_vec, y, y_new, cfg)
    if not np.isfinite(err):
        err = np.inf
    return y_new, k[6], k[6], err


def solve_explicit(
    system: OdeSystem, tspan, y0, cfg: Optional[SolverConfig] = None
) -> Solution:
    """Integrate a non-stiff system with the Dormand-Prince 5(4) pair.

    Failure to reach ``tf`` is reported through ``Solution.status`` rather
    than raised.
    """
    cfg = cfg or SolverConfig()
    return _integrate(system, tspan, y0, cfg, _dp_step, order=5, beta=0.04)


def _lu(w: Array):
    if not np.all(np.isfinite(w)):
        return None
    lu, piv = scipy.linalg.lu_factor(w, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e3 * _EPS * max(diag.max(), 1.0):
        return None
    return lu, piv


def _make_rosenbrock_step():
    def step(system, t, y, f0, h, cfg, counts):
        n = y.size
        if system.jacobian is not None:
            jac = np.asarray(system.jacobian(t, y), dtype=float)
        else:
            jac = fd_jacobian(system, t, y, f0)
            counts["rhs"] += n
        counts["jac"] += 1
        # time derivative of rhs by forward difference
        dt = math.sqrt(_EPS) * max(abs(t), abs(h), 1e-300)
        ft = (np.asarray(system.rhs(t + dt, y), dtype=float) - f0) / dt
        counts["rhs"] += 1

        factors = _lu(np.eye(n) - (h * _RB_D) * jac)
        step.singular_at = None
        if factors is None:
            # signal a rejection; the driver shrinks h
            step.singular_at = (t, h)
            return y, f0, f0, np.inf
        solve = lambda b: scipy.linalg.lu_solve(factors, b, check_finite=False)
        hdt = h * _RB_D * ft
        k1 = solve(f0 + hdt)
        f1 = np.asarray(system.rhs(t + 0.5 * h, y + 0.5 * h * k1), dtype=float)
        k2 = solve(f1 - k1) + k1
        y_new = y + h * k2
        f2 = np.asarray(system.rhs(t + h, y_new), dtype=float)
        k3 = solve(f2 - _RB_E32 * (k2 - f1) - 2.0 * (k1 - f0) + hdt)
        counts["rhs"] += 2
        err_vec = (h / 6.0) * (k1 - 2.0 * k2 + k3)
        err = wrms_norm(err_vec, y, y_new, cfg)
        if not np.isfinite(err):
            err = np.inf
        # Slope of the method's own continuous extension at the step end.
        # f2 is unusable for Hermite output on stiff components: tiny
        # off-manifold offsets in y_new are amplified by the stiff Jacobian.
        slope = (-k1 + (2.0 - 2.0 * _RB_D) * k2) / (1.0 - 2.0 * _RB_D)
        return y_new, f2, slope, err

    step.singular_at = None
    return step


def solve_stiff(
    system: OdeSystem, tspan, y0, cfg: Optional[SolverConfig] = None
) -> Solution:
    """Integrate a stiff system with the L-stable Rosenbrock 2(3) pair.

    Uses ``system.jacobian`` when present, otherwise ``fd_jacobian``.
    Raises ``SingularMatrixError`` if the stage matrix is still singular once
    the step has been reduced below ``dt_min``.
    """
    cfg = cfg or SolverConfig()
    step = _make_rosenbrock_step()
    sol = _integrate(system, tspan, y0, cfg, step, order=3, beta=0.4 / 3)
    if sol.status is SolverStatus.DT_UNDERFLOW and step.singular_at is not None:
        t_bad, h_bad = step.singular_at
        raise SingularMatrixError(
            f"stage matrix I - gamma*h*J singular at t={t_bad!r} (h={h_bad!r})"
        )
    return sol
