"""Parameter boxes, Sobol sampling and thin-plate RBF interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

MAX_SOBOL_DIM = 16
_BITS = 52


class DomainError(ValueError):
    """A parameter lies outside the region a model or interpolator supports."""


class SingularInterpolationError(ValueError):
    """The augmented RBF system could not be solved."""


@dataclass(frozen=True)
class BoxSpace:
    """Axis-aligned box ``[lower_j, upper_j]`` in physical units."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper must be non-empty and of equal length")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValueError(f"need lower < upper componentwise, got {lo}, {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.names is not None:
            names = tuple(self.names)
            if len(names) != len(lo):
                raise ValueError("one name per dimension")
            object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    @property
    def width(self) -> np.ndarray:
        return np.array(self.upper) - np.array(self.lower)

    def to_unit(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - np.array(self.lower)) / self.width

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def violations(self, p) -> list[str]:
        """Human-readable descriptions of every bound ``p`` violates."""
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.size != self.dim:
            return [f"expected {self.dim} parameters, got {p.size}"]
        out = []
        for j, (v, lo, hi) in enumerate(zip(p, self.lower, self.upper)):
            label = self.names[j] if self.names else f"p{j + 1}"
            if v < lo:
                out.append(f"{label}={v:g} below lower bound {lo:g}")
            elif v > hi:
                out.append(f"{label}={v:g} above upper bound {hi:g}")
        return out


def map_to_box(u, space: BoxSpace) -> np.ndarray:
    """Affine map from the unit cube onto ``space`` (works row-wise too)."""
    u = np.asarray(u, dtype=float)
    return np.array(space.lower) + u * space.width


def _load_direction_table():
    text = resources.files("ctesn").joinpath("data/joe_kuo_d16.txt").read_text()
    rows = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("d "):
            continue
        d, s, a, *m = (int(v) for v in line.split())
        if len(m) != s:
            raise ValueError(f"malformed direction-number row for dimension {d}")
        rows[d] = (s, a, m)
    return rows


def _direction_integers(dim: int) -> np.ndarray:
    """Direction integers ``v[j, k]`` scaled to ``_BITS`` bits."""
    table = _load_direction_table()
    v = np.zeros((dim, _BITS), dtype=np.uint64)
    for k in range(_BITS):
        v[0, k] = 1 << (_BITS - 1 - k)
    for j in range(1, dim):
        s, a, m_init = table[j + 1]
        m = list(m_init)
        for k in range(s, _BITS):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    new ^= m[k - i] << i
            m.append(new)
        for k in range(_BITS):
            v[j, k] = m[k] << (_BITS - 1 - k)
    return v


class SobolSequencer:
    """Unscrambled Gray-code Sobol sequence in up to 16 dimensions.

    The all-zero point at index 0 is skipped, so the first point returned is
    ``(0.5, ..., 0.5)``.
    """

    def __init__(self, dim: int):
        if not 1 <= dim <= MAX_SOBOL_DIM:
            raise ValueError(
                f"Sobol dimension must be in [1, {MAX_SOBOL_DIM}], got {dim}"
            )
        self.dim = dim
        self._v = _direction_integers(dim)
        self._x = np.zeros(dim, dtype=np.uint64)
        self.index = 0
        # move past the origin
        self._advance()

    def _advance(self):
        # flip the direction number of the lowest zero bit of the current index
        c = 0
        i = self.index
        while i & 1:
            i >>= 1
            c += 1
        self._x ^= self._v[:, c]
        self.index += 1

    def next(self) -> np.ndarray:
        point = self._x.astype(float) / float(1 << _BITS)
        self._advance()
        return point

    def take(self, n: int) -> np.ndarray:
        return np.array([self.next() for _ in range(n)]).reshape(n, self.dim)


def sobol_next(seq: SobolSequencer) -> np.ndarray:
    return seq.next()


def sobol_points(space: BoxSpace, n: int, skip: int = 0) -> np.ndarray:
    """First ``n`` Sobol points (after ``skip``) mapped into ``space``."""
    seq = SobolSequencer(space.dim)
    for _ in range(skip):
        seq.next()
    return map_to_box(seq.take(n), space)


def _tps(r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    nz = r > 0
    out[nz] = r[nz] ** 2 * np.log(r[nz])
    return out


@dataclass(frozen=True)
class RbfInterpolator:
    """Thin-plate spline interpolant with a linear polynomial tail.

    ``coefficients`` stacks the kernel weights (one row per center) over the
    ``d + 1`` tail coefficients, so evaluation is a single product.
    """

    centers: np.ndarray  # unit-box coordinates, (n, d)
    coefficients: np.ndarray  # (n + d + 1, m)
    lower: np.ndarray
    upper: np.ndarray
    value_shape: Tuple[int, ...]
    outside_tolerance: float = 0.1

    def __post_init__(self):
        # a fixed C layout keeps evaluation bitwise reproducible after a
        # save/load round trip (BLAS kernels differ by memory order)
        for name in ("centers", "coefficients", "lower", "upper"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def kernel_weights(self) -> np.ndarray:
        return self.coefficients[: self.n_centers]

    @property
    def poly(self) -> np.ndarray:
        return self.coefficients[self.n_centers :]

    def physical_centers(self) -> np.ndarray:
        return self.lower + self.centers * (self.upper - self.lower)

    def basis(self, p) -> np.ndarray:
        """Kernel and tail basis row such that ``value = basis @ coefficients``."""
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.size != self.centers.shape[1]:
            raise ValueError(
                f"expected {self.centers.shape[1]} parameters, got {p.size}"
            )
        lo, hi = self.lower, self.upper
        outside = np.linalg.norm(np.maximum(lo - p, 0) + np.maximum(p - hi, 0))
        if outside > self.outside_tolerance * np.linalg.norm(hi - lo):
            raise DomainError(
                f"parameter {p.tolist()} lies {outside:g} outside the box "
                f"[{lo.tolist()}, {hi.tolist()}]; extrapolation refused"
            )
        u = (p - lo) / (hi - lo)
        r = np.sqrt(((self.centers - u) ** 2).sum(axis=1))
        return np.concatenate([_tps(r), [1.0], u])

    def __call__(self, p) -> np.ndarray:
        return (self.basis(p) @ self.coefficients).reshape(self.value_shape)


def fit_rbf(centers, values, space: Optional[BoxSpace] = None) -> RbfInterpolator:
    """Fit a thin-plate RBF interpolant through ``values`` at ``centers``.

    Parameters
    ----------
    centers : (n, d) array of parameter vectors in physical units.
    values : (n, ...) array; everything after the first axis is flattened
        and interpolated column by column.
    space : box used to normalise the centers. Defaults to their bounding box.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    values = np.asarray(values, dtype=float)
    n, d = centers.shape
    if values.shape[0] != n:
        raise ValueError(f"{n} centers but {values.shape[0]} values")
    if n < d + 2:
        raise SingularInterpolationError(
            f"thin-plate interpolation in {d} dimensions needs at least {d + 2} "
            f"centers, got {n}"
        )
    value_shape = values.shape[1:]
    vals = values.reshape(n, -1)
    if space is None:
        lo, hi = centers.min(axis=0), centers.max(axis=0)
        if np.any(hi <= lo):
            raise SingularInterpolationError(
                "centers are degenerate along at least one axis"
            )
    else:
        lo, hi = np.array(space.lower), np.array(space.upper)
    u = (centers - lo) / (hi - lo)

    dist = cdist(u, u)
    dup = np.argwhere(np.triu(dist <= 1e-12, k=1))
    if dup.size:
        i, j = dup[0]
        raise SingularInterpolationError(
            f"duplicate centers {i} and {j}: {centers[i].tolist()}"
        )
    poly = np.hstack([np.ones((n, 1)), u])
    if np.linalg.matrix_rank(poly) < d + 1:
        raise SingularInterpolationError(
            "centers are affinely dependent (e.g. collinear in 2-D); "
            f"offending centers: {centers.tolist()}"
        )
    system = np.zeros((n + d + 1, n + d + 1))
    system[:n, :n] = _tps(dist)
    system[:n, n:] = poly
    system[n:, :n] = poly.T
    rhs = np.zeros((n + d + 1, vals.shape[1]))
    rhs[:n] = vals

    lu, piv = scipy.linalg.lu_factor(system, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-13 * diag.max():
        raise SingularInterpolationError(
            f"augmented RBF system is numerically singular for centers "
            f"{centers.tolist()}"
        )
    coef = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    return RbfInterpolator(
        centers=u,
        coefficients=coef,
        lower=np.asarray(lo, dtype=float),
        upper=np.asarray(hi, dtype=float),
        value_shape=tuple(value_shape),
    )


def rbf_eval(interp: RbfInterpolator, p) -> np.ndarray:
    return interp(p)
