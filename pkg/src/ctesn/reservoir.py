"""Fixed random reservoir ``r' = tanh((A - decay I) r + W_in x(t))``.

With ``decay = 0`` this is the plain CTESN reservoir. A small positive
decay makes the linearised dynamics contractive; without it roughly half of
the eigenvalues of a random ``A`` have positive real part, the reservoir
saturates into ``r ~ +-t`` and stops responding to its drive on long spans.

Randomness comes from NumPy's PCG64 bit generator (``numpy.random.PCG64``),
which produces the same stream on every platform for a given seed. The
draws are made in a fixed order: sparsity mask, then nonzero values of
``A``, then ``W_in``, then the initial reservoir state.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .ode import OdeSystem, Solution, SolverConfig, interpolate, solve_explicit


class DegenerateReservoirError(RuntimeError):
    """The random connectivity matrix has (numerically) zero spectral radius."""


@dataclass(frozen=True)
class ReservoirSpec:
    n_r: int = 300
    density: float = 0.01
    spectral_radius: float = 0.1
    input_scale: float = 1.0
    seed: int = 0
    decay: float = 0.1
    # half-width of the uniform draw for r(t0); 0 gives the zero state
    init_scale: float = 1.0

    def __post_init__(self):
        if self.n_r < 1:
            raise ValueError("n_r must be >= 1")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.spectral_radius <= 0:
            raise ValueError("spectral_radius must be positive")
        if self.input_scale <= 0:
            raise ValueError("input_scale must be positive")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def effective_density(self) -> float:
        # at least one expected nonzero per row
        return min(1.0, max(self.density, 1.0 / self.n_r))


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    converged: bool
    iterations: int
    degenerate: bool = False

    def __float__(self):
        return self.value


def estimate_spectral_radius(
    a, max_iter: int = 1000, tol: float = 1e-6, seed: int = 0
) -> SpectralEstimate:
    """Power-iteration estimate of ``max |lambda(a)|``.

    Convergence is declared once the Rayleigh quotient magnitude is stable
    and agrees with the growth factor ``||a x||``. When the dominant
    eigenvalues form a complex pair the quotient never settles; the
    geometric-mean growth rate over the second half of the iterations is
    returned instead, with ``converged=False``.
    """
    n, m = a.shape
    if n != m:
        raise ValueError(f"square matrix required, got {a.shape}")
    x = np.random.Generator(np.random.PCG64(seed)).standard_normal(n)
    x /= np.linalg.norm(x)
    log_growth = []
    prev = None
    for k in range(1, max_iter + 1):
        y = a @ x
        growth = float(np.linalg.norm(y))
        if growth == 0.0 or not np.isfinite(growth):
            return SpectralEstimate(0.0, growth == 0.0, k, degenerate=True)
        rq = abs(float(x @ y))
        log_growth.append(math.log(growth))
        if (
            prev is not None
            and abs(rq - prev) <= tol * rq
            and abs(growth - rq) <= tol * growth
        ):
            return SpectralEstimate(rq, True, k)
        prev = rq
        x = y / growth
    tail = log_growth[len(log_growth) // 2 :]
    return SpectralEstimate(float(math.exp(np.mean(tail))), False, max_iter)


def _matrix_checksum(*arrays) -> str:
    h = hashlib.sha256()
    for arr in arrays:
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ReservoirMatrices:
    a: sp.csr_matrix
    w_in: np.ndarray
    r0: np.ndarray
    spec: ReservoirSpec
    model_dim: int

    def checksum(self) -> str:
        coo = self.a.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return _matrix_checksum(
            coo.row[order].astype(float),
            coo.col[order].astype(float),
            coo.data[order],
            self.w_in,
            self.r0,
        )


def _draw_connectivity(rng: np.random.Generator, n: int, density: float):
    mask = rng.random((n, n)) < density
    rows, cols = np.nonzero(mask)
    vals = rng.uniform(-1.0, 1.0, size=rows.size)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def build_reservoir(spec: ReservoirSpec, model_dim: int) -> ReservoirMatrices:
    """Draw ``A`` and ``W_in`` deterministically from ``spec.seed``.

    ``A`` is rescaled so that its power-iteration spectral radius estimate
    equals ``spec.spectral_radius``.
    """
    if model_dim < 1:
        raise ValueError("model_dim must be >= 1")
    n = spec.n_r
    streams = np.random.SeedSequence(spec.seed).spawn(2)
    for attempt, stream in enumerate(streams):
        rng = np.random.Generator(np.random.PCG64(stream))
        a = _draw_connectivity(rng, n, spec.effective_density)
        est = estimate_spectral_radius(a)
        if est.value > 1e-12:
            break
    else:
        raise DegenerateReservoirError(
            f"connectivity has zero spectral radius for seed {spec.seed} "
            f"(n_r={n}, density={spec.density}) after a retry"
        )
    a = (a * (spec.spectral_radius / est.value)).tocsr()
    a.sort_indices()
    w_in = rng.uniform(-spec.input_scale, spec.input_scale, size=(n, model_dim))
    r0 = rng.uniform(-1.0, 1.0, size=n) * spec.init_scale
    for arr in (a.data, a.indices, a.indptr, w_in, r0):
        arr.setflags(write=False)
    return ReservoirMatrices(a=a, w_in=w_in, r0=r0, spec=spec, model_dim=model_dim)


@dataclass(frozen=True)
class DriveNormalization:
    """Componentwise affine map of model states onto ``[-1, 1]``."""

    center: np.ndarray
    half_range: np.ndarray

    @classmethod
    def from_states(cls, states) -> "DriveNormalization":
        states = np.asarray(states, dtype=float)
        lo, hi = states.min(axis=0), states.max(axis=0)
        half = 0.5 * (hi - lo)
        # constant components are only shifted
        half = np.where(half > 0, half, 1.0)
        return cls(center=0.5 * (hi + lo), half_range=half)

    @classmethod
    def identity(cls, dim: int) -> "DriveNormalization":
        return cls(center=np.zeros(dim), half_range=np.ones(dim))

    def forward(self, x):
        """Physical -> normalised; states along the last axis."""
        return (np.asarray(x) - self.center) / self.half_range

    def inverse(self, z):
        return np.asarray(z) * self.half_range + self.center


@dataclass(frozen=True)
class ReservoirSolution:
    sol: Solution
    drive_span: Tuple[float, float]

    @property
    def n_r(self) -> int:
        return self.sol.dim

    def states_at(self, times) -> np.ndarray:
        """Reservoir states as an ``(n_r, len(times))`` matrix."""
        return interpolate(self.sol, np.asarray(times, dtype=float)).T


def reservoir_system(
    mats: ReservoirMatrices,
    drive: Solution,
    normalization: Optional[DriveNormalization] = None,
) -> OdeSystem:
    a, w_in, decay = mats.a, mats.w_in, mats.spec.decay
    norm = normalization or DriveNormalization.identity(mats.model_dim)

    def rhs(t, r):
        x = norm.forward(interpolate(drive, t))
        return np.tanh(a @ r - decay * r + w_in @ x)

    return OdeSystem(dim=mats.spec.n_r, rhs=rhs, name="reservoir")


def simulate_reservoir(
    mats: ReservoirMatrices,
    drive: Solution,
    cfg: Optional[SolverConfig] = None,
    normalization: Optional[DriveNormalization] = None,
) -> ReservoirSolution:
    """Integrate the reservoir over the full span of ``drive``.

    ``normalization`` maps drive states before they enter ``W_in``; ``None``
    feeds the raw states. Solver failures are raised, since a partial
    reservoir trajectory cannot serve as a feature basis.
    """
    if drive.dim != mats.model_dim:
        raise ValueError(
            f"drive has dimension {drive.dim}, reservoir expects {mats.model_dim}"
        )
    if not drive.success:
        raise ValueError(f"drive solution did not complete ({drive.status.value})")
    system = reservoir_system(mats, drive, normalization)
    sol = solve_explicit(system, drive.span, mats.r0, cfg or SolverConfig())
    if not sol.success:
        raise RuntimeError(f"reservoir integration failed: {sol.status.value}")
    return ReservoirSolution(sol=sol, drive_span=drive.span)
