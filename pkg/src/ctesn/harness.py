"""Measurement procedures: test-parameter error, error heatmaps, scaling.

Wall-clock timings use ``time.perf_counter`` (monotonic) and report the
median over repetitions after one discarded warm-up call.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import ode
from .models import HeatingParams, ModelFamily, heating_family
from .ode import SolverConfig
from .parameter_space import map_to_box, sobol_points
from .surrogate import (
    TrainedSurrogate,
    TrainingConfig,
    default_training_config,
    evaluation_times,
    predict,
    train,
    validate,
)

DEFAULT_N_LIST = (5, 10, 20, 40, 80)


def timing(f: Callable[[], object], reps: int = 5) -> float:
    """Median wall time of ``reps`` calls of ``f``; one warm-up call first."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    f()
    samples = []
    for _ in range(reps):
        tic = time.perf_counter()
        f()
        samples.append(time.perf_counter() - tic)
    return float(np.median(samples))


@dataclass(frozen=True)
class ErrorStats:
    min: float
    median: float
    p95: float
    max: float
    count: int
    missing: int = 0

    @classmethod
    def from_errors(cls, errors, missing: int = 0) -> "ErrorStats":
        e = np.asarray([v for v in errors if np.isfinite(v)], dtype=float)
        if e.size == 0:
            nan = float("nan")
            return cls(nan, nan, nan, nan, 0, missing)
        return cls(
            min=float(e.min()),
            median=float(np.median(e)),
            p95=float(np.percentile(e, 95)),
            max=float(e.max()),
            count=int(e.size),
            missing=missing,
        )

    def as_dict(self) -> dict:
        return {
            "min": self.min,
            "median": self.median,
            "p95": self.p95,
            "max": self.max,
            "count": self.count,
            "missing": self.missing,
        }


@dataclass(frozen=True)
class HeatmapResult:
    """Errors on a uniform grid; NaN marks cells whose solve failed."""

    grid: List[Tuple[np.ndarray, float]]
    resolution: Tuple[int, int]
    stats: ErrorStats
    messages: Tuple[str, ...] = ()

    @property
    def errors(self) -> np.ndarray:
        return np.array([e for _, e in self.grid])

    @property
    def params(self) -> np.ndarray:
        return np.array([p for p, _ in self.grid])


def grid_points(family: ModelFamily, resolution: Tuple[int, int]) -> np.ndarray:
    """Uniform grid over a 2-D box including its corners, sorted by (p1, p2)."""
    n1, n2 = (int(v) for v in resolution)
    if n1 < 2 or n2 < 2:
        raise ValueError("heatmap resolution must be at least 2 x 2")
    if family.space.dim != 2:
        raise ValueError(f"heatmaps need a 2-D parameter box, got d={family.space.dim}")
    lo, hi = family.space.lower, family.space.upper
    a = np.linspace(lo[0], hi[0], n1)
    b = np.linspace(lo[1], hi[1], n2)
    return np.array([(x, y) for x in a for y in b])


def run_heatmap(
    s: TrainedSurrogate,
    family: ModelFamily,
    resolution: Tuple[int, int] = (23, 23),
    solver: Optional[SolverConfig] = None,
    workers: int = 1,
) -> HeatmapResult:
    """Surrogate error against fresh stiff solves on a uniform grid."""
    pts = grid_points(family, resolution)
    rows = validate(s, family, pts, solver=solver, workers=workers)
    grid = [(row.param, row.overall) for row in rows]
    messages = tuple(
        f"p={np.asarray(row.param).tolist()}: {row.message}"
        for row in rows
        if row.error is None
    )
    stats = ErrorStats.from_errors([e for _, e in grid], missing=len(messages))
    return HeatmapResult(grid, (int(resolution[0]), int(resolution[1])), stats, messages)


@dataclass(frozen=True)
class ScalingRow:
    n: int
    full_solve_s: float
    train_s: float
    predict_s: float
    max_rel_err: float

    @property
    def dim(self) -> int:
        return 2 * self.n + 1

    @property
    def speedup(self) -> float:
        return self.full_solve_s / self.predict_s


@dataclass(frozen=True)
class ScalingConfig:
    training: Optional[TrainingConfig] = None
    heating: HeatingParams = field(default_factory=HeatingParams)
    solve_reps: int = 5
    predict_reps: int = 100
    n_test: int = 3
    # seed of the uniform draw of unseen test parameters
    test_seed: int = 0

    def __post_init__(self):
        if self.solve_reps < 5:
            raise ValueError("solve_reps must be >= 5")
        if self.predict_reps < 100:
            raise ValueError("predict_reps must be >= 100")
        if self.n_test < 1:
            raise ValueError("n_test must be >= 1")


@dataclass(frozen=True)
class ScalingResult:
    rows: List[ScalingRow]
    timing_reps: Tuple[int, int]  # (full solve, predict)

    @property
    def predict_spread(self) -> float:
        t = [r.predict_s for r in self.rows]
        return max(t) / min(t)


class ScalingError(RuntimeError):
    pass


def run_scaling(
    n_list: Sequence[int] = DEFAULT_N_LIST, cfg: Optional[ScalingConfig] = None
) -> ScalingResult:
    """Full-solve versus surrogate cost for heating networks of growing size.

    Test parameters are drawn uniformly in the box from a PCG64 stream
    seeded with ``cfg.test_seed``. Timings run sequentially in this thread.
    """
    cfg = cfg or ScalingConfig()
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError(f"N list must be strictly increasing, got {n_list}")
    training = cfg.training or default_training_config("heating")
    rows = []
    for n in n_list:
        family = heating_family(replace(cfg.heating, n_rooms=n))
        mid = family.space.midpoint
        system, y0 = family.make(mid), family.y0(mid)
        full = timing(
            lambda: ode.solve_stiff(system, family.tspan, y0, training.solver),
            cfg.solve_reps,
        )
        try:
            tic = time.perf_counter()
            s = train(family, training)
            train_s = time.perf_counter() - tic
        except Exception as exc:
            raise ScalingError(f"training failed for N={n}: {exc}") from exc
        times = evaluation_times(family.tspan)
        pred = timing(lambda: predict(s, mid, times), cfg.predict_reps)
        rng = np.random.Generator(np.random.PCG64(cfg.test_seed))
        tests = map_to_box(rng.random((cfg.n_test, family.space.dim)), family.space)
        errs = [row.overall for row in validate(s, family, tests, training.solver, times)]
        rows.append(ScalingRow(n, full, train_s, pred, float(np.nanmax(errs))))
    return ScalingResult(rows, (cfg.solve_reps, cfg.predict_reps))


def unseen_parameter_errors(
    s: TrainedSurrogate,
    family: ModelFamily,
    n_test: int = 10,
    skip: Optional[int] = None,
    solver: Optional[SolverConfig] = None,
) -> np.ndarray:
    """Overall relative errors at ``n_test`` unseen Sobol points.

    ``skip`` defaults to the training sample count, so the test points are
    the next Sobol points after the training set.
    """
    skip = int(s.metadata["n_train"]) if skip is None else skip
    pts = sobol_points(family.space, n_test, skip=skip)
    return np.array([row.overall for row in validate(s, family, pts, solver)])

