"""Smoothing-parameter selection by BIC and evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from .basis import CurveSet, DesignMatrix, trapezoid_weights
from .lpre import _log_residual, log_responses

DEFAULT_LAMBDA_GRID = tuple(np.logspace(-6, 2, 15))
IMSE_GRID_SIZE = 1001


class BICUndefinedError(ValueError):
    """The residual criterion is zero, so its logarithm is undefined."""


def effective_df(H0: np.ndarray, penalty: np.ndarray, lam: float) -> float:
    """``trace((H0 + lam D)^-1 H0)``.

    Computed as ``sum 1/(1 + lam mu)`` over the generalized eigenvalues of
    ``D v = mu H0 v``, which stays accurate for large lambda. A singular
    ``H0`` falls back to the direct solve.
    """
    try:
        mu = linalg.eigh(penalty, H0, eigvals_only=True)
    except linalg.LinAlgError:
        return float(np.trace(np.linalg.solve(H0 + lam * penalty, H0)))
    # D is PSD; eigenvalues at rounding level belong to its null space
    mu = np.where(mu > 1e-12 * max(mu.max(), 0.0), mu, 0.0)
    return float(np.sum(1.0 / (1.0 + lam * mu)))


def _criterion_parts(fit, design: DesignMatrix, responses, weights):
    method = getattr(fit, "method", "FLPRE")
    theta = np.asarray(fit.theta, dtype=float)
    logy = log_responses(responses)
    B = design.rows
    w = np.ones(design.n) if weights is None else np.asarray(weights, dtype=float)
    if method == "FLPRE":
        u = _log_residual(B, logy, theta)
        per_point = 4.0 * np.sinh(0.5 * u) ** 2
        curv = 2.0 * np.cosh(u)
    elif method == "FLS":
        u = logy - B @ theta
        per_point = u ** 2
        curv = np.ones_like(u)
    elif method == "FLAD":
        from .baselines import FLAD_DELTA

        u = logy - B @ theta
        per_point = np.abs(u)
        curv = 1.0 / np.sqrt(u ** 2 + FLAD_DELTA ** 2)
    else:
        raise ValueError(f"unknown method {method!r}")
    H0 = B.T @ ((w * curv)[:, None] * B)
    return float(np.sum(w * per_point) / np.sum(w)), H0


def bic(fit, design: DesignMatrix, responses, weights=None, n_eff: Optional[int] = None) -> float:
    """``log(RSS) + log(n)/n * df`` with df the trace of the smoother.

    RSS is the mean LPRE summand for LPRE fits (mean squared and mean absolute
    log-residual for the FLS and FLAD baselines). ``weights`` gives a weighted
    mean and a weighted curvature, as needed on an inverse-probability-weighted
    subsample of effective size ``n_eff``.
    """
    rss, H0 = _criterion_parts(fit, design, responses, weights)
    if not rss > 0:
        raise BICUndefinedError("RSS is zero (perfect fit); BIC is undefined, inspect the lambda path")
    n = design.n if n_eff is None else n_eff
    df = effective_df(H0, design.penalty, fit.lambda_)
    return float(np.log(rss) + np.log(n) / n * df)


def select_lambda(lambda_grid: Sequence[float], fit_fn: Callable, score_fn: Callable):
    """Evaluate ``score_fn(fit_fn(lam))`` over the grid and return the minimizer.

    Returns ``(lam, fit, path)`` where ``path`` maps each grid value to its
    score (``nan`` when undefined). Ties go to the larger lambda.
    """
    grid = sorted({float(l) for l in lambda_grid})
    if not grid:
        raise ValueError("lambda grid is empty")
    if grid[0] < 0:
        raise ValueError("lambda values must be non-negative")
    best = None
    path = {}
    for lam in grid:
        fit = fit_fn(lam)
        try:
            score = score_fn(fit)
        except BICUndefinedError:
            path[lam] = float("nan")
            continue
        path[lam] = score
        if best is None or score <= best[0]:
            best = (score, lam, fit)
    if best is None:
        raise BICUndefinedError("BIC is undefined at every grid value")
    return best[1], best[2], path


def _on_grid(beta, grid: np.ndarray) -> np.ndarray:
    return np.asarray(beta(grid) if callable(beta) else beta, dtype=float)


def imse(beta_est, beta_ref, eval_grid=None) -> float:
    """Root integrated squared difference of two slope curves (trapezoid rule).

    Curves may be callables or arrays already evaluated on ``eval_grid``.
    """
    grid = np.linspace(0, 1, IMSE_GRID_SIZE) if eval_grid is None else np.asarray(eval_grid, float)
    diff = _on_grid(beta_est, grid) - _on_grid(beta_ref, grid)
    return float(np.sqrt(trapezoid_weights(grid) @ diff ** 2))


def rpse(beta_est, beta_ref, test_curves: CurveSet) -> float:
    """Root mean squared difference of the fitted indices over ``test_curves``."""
    if len(test_curves) == 0:
        raise ValueError("test set is empty")
    diff = _on_grid(beta_est, test_curves.grid) - _on_grid(beta_ref, test_curves.grid)
    return float(np.sqrt(np.mean(test_curves.integrate(diff) ** 2)))


def mape_mppe(y_true, y_pred):
    """Mean absolute and mean product-relative prediction errors."""
    y = np.asarray(y_true, dtype=float)
    yh = np.asarray(y_pred, dtype=float)
    if y.shape != yh.shape or y.size == 0:
        raise ValueError("y_true and y_pred must be non-empty and of equal shape")
    if np.any(yh <= 0) or np.any(y <= 0):
        raise ValueError("observed and predicted responses must be positive")
    return float(np.mean(np.abs(y - yh))), float(np.mean((y - yh) ** 2 / (y * yh)))


@dataclass
class MetricReport:
    imse: float = float("nan")
    rpse: float = float("nan")
    mape: float = float("nan")
    mppe: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("imse", "rpse", "mape", "mppe"):
            v = getattr(self, name)
            if not np.isnan(v) and (not np.isfinite(v) or v < 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v!r}")

    def as_row(self) -> dict:
        row = dict(self.meta)
        row.update({k: v for k, v in asdict(self).items() if k != "meta"})
        return row
