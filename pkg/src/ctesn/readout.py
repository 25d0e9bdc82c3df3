"""Linear readout ``x(t) = W_out r(t)`` fitted by SVD least squares."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple

import numpy as np

from .ode import Solution, interpolate
from .reservoir import DriveNormalization, ReservoirSolution


@dataclass(frozen=True)
class FitConfig:
    n_samples: int = 200
    ridge: float = 0.0
    svd_cutoff: float = 1e-10
    time_grid: Literal["log", "linear"] = "log"

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.svd_cutoff < 0:
            raise ValueError("svd_cutoff must be non-negative")
        if self.time_grid not in ("log", "linear"):
            raise ValueError(f"unknown time grid {self.time_grid!r}")


@dataclass(frozen=True)
class ReadoutMatrix:
    w: np.ndarray
    fit_residual: float
    param: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.w)):
            raise ValueError("readout matrix has non-finite entries")
        if self.fit_residual < 0:
            raise ValueError("fit residual must be non-negative")


def sample_times(span, cfg: FitConfig) -> np.ndarray:
    """Training/evaluation grid of ``cfg.n_samples`` times over ``span``.

    The log grid is ``t0`` followed by ``n - 1`` log10-spaced points on
    ``[t0 + eps, tf]`` with ``eps = 1e-6 (tf - t0)``.
    """
    t0, tf = (float(v) for v in span)
    if not tf > t0:
        raise ValueError("need tf > t0")
    n = cfg.n_samples
    if cfg.time_grid == "linear":
        out = np.linspace(t0, tf, n)
    else:
        eps = 1e-6 * (tf - t0)
        offsets = np.logspace(np.log10(eps), np.log10(tf - t0), n - 1)
        out = np.concatenate([[t0], t0 + offsets])
    out[-1] = tf
    return out


def collect_matrices(
    res: ReservoirSolution, truth: Solution, times
) -> Tuple[np.ndarray, np.ndarray]:
    """``(R, X)`` with column ``k`` holding reservoir / model states at ``t_k``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return res.states_at(times), interpolate(truth, times).T


class LeastSquaresReadout:
    """SVD of a reservoir state matrix, reused across many targets.

    All training samples share one reservoir trajectory, so the
    factorisation is done once and each fit costs two small products.
    """

    def __init__(self, r: np.ndarray, cfg: Optional[FitConfig] = None):
        cfg = cfg or FitConfig()
        r = np.asarray(r, dtype=float)
        if not np.all(np.isfinite(r)):
            raise ValueError("reservoir state matrix contains non-finite values")
        self.r = r
        self.cfg = cfg
        u, s, vt = np.linalg.svd(r, full_matrices=False)
        if cfg.ridge > 0:
            inv = s / (s**2 + cfg.ridge)
        else:
            keep = s > cfg.svd_cutoff * (s[0] if s.size else 0.0)
            inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
        self.rank = int(np.count_nonzero(inv))
        # (T, N_R) operator with W = X @ self._pinv
        self._pinv = (vt.T * inv) @ u.T

    def fit(self, x, param=None) -> ReadoutMatrix:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.r.shape[1]:
            raise ValueError(
                f"R has {self.r.shape[1]} columns but X has {x.shape[1]}"
            )
        w = x @ self._pinv
        resid = np.linalg.norm(w @ self.r - x) / max(
            np.linalg.norm(x), np.finfo(float).tiny
        )
        return ReadoutMatrix(
            w=w,
            fit_residual=float(resid),
            param=None if param is None else np.asarray(param, dtype=float),
        )


def fit_readout(r, x, cfg: Optional[FitConfig] = None, param=None) -> ReadoutMatrix:
    """Least-squares ``W`` with ``W R ~= X``.

    With ``cfg.ridge == 0`` this is ``X pinv(R)`` with singular values below
    ``svd_cutoff * sigma_max`` discarded; otherwise the Tikhonov solution
    ``X R^T (R R^T + ridge I)^-1``.
    """
    return LeastSquaresReadout(r, cfg).fit(x, param)


def predict_series(
    w: ReadoutMatrix | np.ndarray,
    res: ReservoirSolution,
    times,
    normalization: Optional[DriveNormalization] = None,
) -> np.ndarray:
    """``(N, T)`` prediction ``W r(t_k)``, mapped back to physical units."""
    mat = w.w if isinstance(w, ReadoutMatrix) else np.asarray(w, dtype=float)
    out = mat @ res.states_at(times)
    if normalization is not None:
        out = normalization.inverse(out.T).T
    return out


@dataclass(frozen=True)
class ErrorReport:
    per_component: np.ndarray  # NaN where skipped
    overall: float
    skipped: Tuple[int, ...] = ()


def relative_error(pred, truth) -> ErrorReport:
    """Max-over-time error of each component, normalised by ``max |truth|``."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if truth.ndim == 1:
        pred, truth = pred[None, :], truth[None, :]
    scale = np.abs(truth).max(axis=1)
    skipped = np.flatnonzero(scale < 1e-300)
    err = np.full(truth.shape[0], np.nan)
    ok = scale >= 1e-300
    err[ok] = np.abs(pred[ok] - truth[ok]).max(axis=1) / scale[ok]
    overall = float(np.nanmax(err)) if ok.any() else 0.0
    return ErrorReport(err, overall, tuple(int(i) for i in skipped))
