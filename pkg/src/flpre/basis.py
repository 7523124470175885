"""Clamped uniform B-spline bases on [0, 1], roughness penalties and covariate projection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class BasisConfig:
    """B-spline basis with ``interior_knot_count`` equispaced interior knots.

    The full knot vector repeats each boundary knot ``degree + 1`` times, so the
    basis has ``interior_knot_count + degree + 1`` functions.
    """

    interior_knot_count: int
    degree: int = 3
    penalty_order: int = 2

    def __post_init__(self):
        K, p, q = self.interior_knot_count, self.degree, self.penalty_order
        if int(K) != K or K < 0:
            raise ValueError(f"interior_knot_count must be a non-negative integer, got {K!r}")
        if int(p) != p or p < 0:
            raise ValueError(f"degree must be a non-negative integer, got {p!r}")
        if int(q) != q or q < 1 or q > p:
            raise ValueError(f"penalty_order must satisfy 1 <= q <= degree={p}, got {q!r}")

    @property
    def dim(self) -> int:
        return self.interior_knot_count + self.degree + 1

    @property
    def interior_knots(self) -> np.ndarray:
        K = self.interior_knot_count
        return np.arange(1, K + 1) / (K + 1)

    @property
    def knots(self) -> np.ndarray:
        p = self.degree
        return np.concatenate([np.zeros(p + 1), self.interior_knots, np.ones(p + 1)])


def make_basis(K: int, p: int = 3, q: int = 2) -> BasisConfig:
    return BasisConfig(int(K), int(p), int(q))


def knots_rule_n14(n: int) -> int:
    """Number of interior knots ``ceil(n ** (1/4))``."""
    if n < 1:
        raise ValueError("n must be positive")
    K = int(np.ceil(n ** 0.25))
    # guard against ceil(10000**0.25) = 11 from float noise
    while (K - 1) ** 4 >= n:
        K -= 1
    return K


def _check_points(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.ndim != 1:
        raise ValueError("evaluation points must be a scalar or 1-d array")
    if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("evaluation points must lie in [0, 1]")
    return t


def _degree_zero(knots: np.ndarray, t: np.ndarray) -> np.ndarray:
    # indicator of [u_j, u_{j+1}); t = 1 falls into the last non-empty span
    lo, hi = knots[:-1], knots[1:]
    N = ((t[:, None] >= lo) & (t[:, None] < hi)).astype(float)
    last = np.nonzero(hi > lo)[0][-1]
    N[t == knots[-1], last] = 1.0
    return N


def _safe_recip(d: np.ndarray) -> np.ndarray:
    out = np.zeros_like(d)
    nz = d > 0
    out[nz] = 1.0 / d[nz]
    return out


def basis_matrix(basis: BasisConfig, t, order: int = 0) -> np.ndarray:
    """Values (or ``order``-th derivatives) of all basis functions at points ``t``.

    Returns an array of shape ``(len(t), basis.dim)``. Evaluation uses the
    Cox-de Boor recursion; derivatives are right-continuous at interior knots
    and left limits at ``t = 1``.
    """
    t = _check_points(t)
    p = basis.degree
    if int(order) != order or order < 0 or order > p:
        raise ValueError(f"derivative order must be in [0, {p}], got {order!r}")
    U = basis.knots
    N = _degree_zero(U, t)
    for k in range(1, p - order + 1):
        j = np.arange(len(U) - k - 1)
        left = (t[:, None] - U[j]) * _safe_recip(U[j + k] - U[j])
        right = (U[j + k + 1] - t[:, None]) * _safe_recip(U[j + k + 1] - U[j + 1])
        N = left * N[:, :-1] + right * N[:, 1:]
    for k in range(p - order + 1, p + 1):
        j = np.arange(len(U) - k - 1)
        a = k * _safe_recip(U[j + k] - U[j])
        b = k * _safe_recip(U[j + k + 1] - U[j + 1])
        N = a * N[:, :-1] - b * N[:, 1:]
    return N


def eval_basis(basis: BasisConfig, t: float) -> np.ndarray:
    return basis_matrix(basis, [t])[0]


def eval_basis_deriv(basis: BasisConfig, t: float, order: int) -> np.ndarray:
    return basis_matrix(basis, [t], order)[0]


def penalty_matrix(basis: BasisConfig) -> np.ndarray:
    """Gram matrix of ``penalty_order``-th derivatives, integrated exactly.

    Each knot span uses Gauss-Legendre with ``degree - penalty_order + 1``
    nodes, which is exact for the piecewise polynomial integrand.
    """
    p, q = basis.degree, basis.penalty_order
    nodes, weights = np.polynomial.legendre.leggauss(p - q + 1)
    breaks = np.concatenate([[0.0], basis.interior_knots, [1.0]])
    a, b = breaks[:-1, None], breaks[1:, None]
    pts = (0.5 * (b - a) * nodes + 0.5 * (a + b)).ravel()
    wts = (0.5 * (b - a) * weights).ravel()
    Bq = basis_matrix(basis, pts, q)
    D = Bq.T @ (wts[:, None] * Bq)
    return 0.5 * (D + D.T)


@dataclass(frozen=True)
class FunctionalSample:
    """One curve observed on ``grid`` with an optional positive response."""

    grid: np.ndarray
    values: np.ndarray
    y: Optional[float] = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("grid and values must be 1-d arrays of equal length")
        if len(grid) < 2:
            raise ValueError("a curve needs at least 2 observation points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if grid[0] < 0 or grid[-1] > 1:
            raise ValueError("grid must lie in [0, 1]")
        if not np.all(np.isfinite(values)):
            raise ValueError("curve values must be finite")
        if self.y is not None and not (np.isfinite(self.y) and self.y > 0):
            raise ValueError(f"response must be strictly positive, got {self.y!r}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class DesignMatrix:
    """Projected covariates ``rows`` (n x dim) together with the penalty matrix."""

    rows: np.ndarray
    penalty: np.ndarray
    basis: Optional[BasisConfig] = field(default=None, compare=False)

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        penalty = np.atleast_2d(np.asarray(self.penalty, dtype=float))
        if penalty.shape != (rows.shape[1], rows.shape[1]):
            raise ValueError(
                f"penalty shape {penalty.shape} does not match design width {rows.shape[1]}"
            )
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "penalty", penalty)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def knot_count(self) -> int:
        return self.basis.interior_knot_count if self.basis is not None else 0

    def take(self, idx) -> "DesignMatrix":
        return DesignMatrix(self.rows[idx], self.penalty, self.basis)


def _extend_to_unit(grid: np.ndarray, values: np.ndarray):
    # constant extrapolation to the domain ends
    if grid[0] > 0 or grid[-1] < 1:
        warnings.warn(
            "curve grid does not reach [0, 1]; extending end values as constants",
            stacklevel=3,
        )
        if grid[0] > 0:
            grid = np.concatenate([[0.0], grid])
            values = np.concatenate([values[..., :1], values], axis=-1)
        if grid[-1] < 1:
            grid = np.concatenate([grid, [1.0]])
            values = np.concatenate([values, values[..., -1:]], axis=-1)
    return grid, values


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Weights ``w`` with ``w @ f(grid)`` equal to the composite trapezoid rule."""
    h = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def projection_operator(basis: BasisConfig, grid) -> np.ndarray:
    """Matrix ``P`` (G x dim) so that ``values @ P`` are the projected covariates."""
    grid = np.asarray(grid, dtype=float)
    return trapezoid_weights(grid)[:, None] * basis_matrix(basis, grid)


def project_covariate(sample: FunctionalSample, basis: BasisConfig) -> np.ndarray:
    """Trapezoid approximation of the integral of ``x(t) B(t)`` over [0, 1]."""
    grid, values = _extend_to_unit(sample.grid, sample.values)
    return values @ projection_operator(basis, grid)


def project_curves(grid, values, basis: BasisConfig) -> np.ndarray:
    """Vectorized projection of curves sharing one grid; ``values`` is (n, G)."""
    grid = np.asarray(grid, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    FunctionalSample(grid, values[0])  # validates the shared grid
    if not np.all(np.isfinite(values)):
        bad = int(np.nonzero(~np.all(np.isfinite(values), axis=1))[0][0])
        raise ValueError(f"sample {bad}: curve values must be finite")
    grid, values = _extend_to_unit(grid, values)
    return values @ projection_operator(basis, grid)


def build_design(samples: Sequence[FunctionalSample], basis: BasisConfig) -> DesignMatrix:
    """Stack projected covariates; curves sharing a grid are projected together."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    rows = np.empty((len(samples), basis.dim))
    groups: dict[bytes, list[int]] = {}
    for i, s in enumerate(samples):
        if not isinstance(s, FunctionalSample):
            raise TypeError(f"sample {i}: expected FunctionalSample, got {type(s).__name__}")
        groups.setdefault(s.grid.tobytes(), []).append(i)
    for idx in groups.values():
        grid = samples[idx[0]].grid
        values = np.stack([samples[i].values for i in idx])
        g, v = _extend_to_unit(grid, values)
        rows[idx] = v @ projection_operator(basis, g)
    return DesignMatrix(rows, penalty_matrix(basis), basis)


def design_from_curves(grid, values, basis: BasisConfig) -> DesignMatrix:
    return DesignMatrix(project_curves(grid, values, basis), penalty_matrix(basis), basis)


@dataclass(frozen=True)
class CurveSet:
    """``n`` curves observed on one shared grid; ``values`` has shape (n, G)."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[1] != grid.size:
            raise ValueError("values must have one column per grid point")
        # validates the grid; an empty set is allowed and rejected by its consumers
        FunctionalSample(grid, values[0] if values.shape[0] else np.zeros(grid.size))
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    def samples(self, y=None) -> list:
        y = [None] * len(self) if y is None else list(y)
        return [FunctionalSample(self.grid, v, yi) for v, yi in zip(self.values, y)]

    def integrate(self, f) -> np.ndarray:
        """Trapezoid integrals of ``x_i(t) f(t)`` on the shared grid."""
        fv = f(self.grid) if callable(f) else np.asarray(f, dtype=float)
        return self.values @ (trapezoid_weights(self.grid) * fv)

    def design(self, basis: BasisConfig) -> DesignMatrix:
        return design_from_curves(self.grid, self.values, basis)
