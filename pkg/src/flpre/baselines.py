"""Log-scale least squares (FLS) and least absolute deviation (FLAD) fits."""

from __future__ import annotations

import logging

import numpy as np

from .basis import DesignMatrix
from .lpre import FitResult, log_responses

log = logging.getLogger(__name__)

FLAD_DELTA = 1e-6
FLAD_TOL = 1e-6
FLAD_MAX_SWEEPS = 200


def fit_fls(design: DesignMatrix, responses, lam: float = 0.0) -> FitResult:
    """Solve ``(B'B + lam D) theta = B' log y``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    z = log_responses(responses)
    B = design.rows
    M = B.T @ B + lam * design.penalty
    b = B.T @ z
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "FLS normal matrix is singular; use lambda > 0") from None
    theta = np.linalg.solve(L.T, np.linalg.solve(L, b))
    resid = z - B @ theta
    loss = 0.5 * float(resid @ resid) + 0.5 * lam * float(theta @ design.penalty @ theta)
    gnorm = float(np.max(np.abs(M @ theta - b)))
    return FitResult(theta, float(lam), 0, True, gnorm, loss, design.n, method="FLS")


def flad_objective(design: DesignMatrix, responses, theta, lam: float,
                   delta: float = FLAD_DELTA) -> float:
    """Smoothed objective ``sum sqrt(u^2 + delta^2) + lam/2 theta' D theta``."""
    u = log_responses(responses) - design.rows @ theta
    return float(np.sum(np.sqrt(u ** 2 + delta ** 2))
                 + 0.5 * lam * theta @ design.penalty @ theta)


def _objective_change(B, D, z, theta, cand, lam, delta):
    # difference of sqrt terms written without cancellation, so tiny decreases still register
    du = -(B @ (cand - theta))
    u0 = z - B @ theta
    u1 = u0 + du
    s0, s1 = np.sqrt(u0 ** 2 + delta ** 2), np.sqrt(u1 ** 2 + delta ** 2)
    fit = np.sum(du * (u1 + u0) / (s1 + s0))
    return float(fit + 0.5 * lam * (cand - theta) @ D @ (cand + theta))


def _newton_candidate(B, D, z, theta, g, lam, delta):
    # damped Newton on the smoothed objective; IRLS alone crawls once residuals hit the kink
    u = z - B @ theta
    s = np.sqrt(u ** 2 + delta ** 2)
    H = B.T @ ((delta ** 2 / s ** 3)[:, None] * B) + lam * D
    try:
        step = np.linalg.solve(H, -g)
    except np.linalg.LinAlgError:
        return None, np.inf
    t = 1.0
    for _ in range(40):
        cand = theta + t * step
        change = _objective_change(B, D, z, theta, cand, lam, delta)
        if change <= 0:
            return cand, change
        t *= 0.5
    return None, np.inf


def fit_flad(design: DesignMatrix, responses, lam: float = 0.0, delta: float = FLAD_DELTA,
             tol: float = FLAD_TOL, max_sweeps: int = FLAD_MAX_SWEEPS, init=None) -> FitResult:
    """Penalized LAD on the log scale by iteratively reweighted least squares.

    Each sweep minimizes the quadratic majorizer of the smoothed objective at
    the current point and also tries a damped Newton step; the lower of the
    two is kept, so the objective never increases. The start is the FLS
    solution unless ``init`` is given.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    z = log_responses(responses)
    B, D = design.rows, design.penalty
    if init is None:
        try:
            theta = fit_fls(design, responses, lam).theta_hat
        except np.linalg.LinAlgError:
            theta = np.zeros(design.dim)
    else:
        theta = np.asarray(init, dtype=float).copy()
    obj = flad_objective(design, responses, theta, lam, delta)
    history = [obj]
    converged = False
    gnorm = np.inf
    sweep = 0
    for sweep in range(max_sweeps + 1):
        u = z - B @ theta
        s = np.sqrt(u ** 2 + delta ** 2)
        g = -B.T @ (u / s) + lam * (D @ theta)
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            converged = True
            break
        if sweep == max_sweeps:
            break
        w = 1.0 / s
        M = B.T @ (w[:, None] * B) + lam * D
        try:
            new = np.linalg.solve(M, B.T @ (w * z))
            change = _objective_change(B, D, z, theta, new, lam, delta)
        except np.linalg.LinAlgError:
            new, change = None, np.inf
        cand, cand_change = _newton_candidate(B, D, z, theta, g, lam, delta)
        if cand_change < change:
            new, change = cand, cand_change
        if new is None or change > 0:
            log.warning("FLAD made no progress at sweep %d", sweep)
            break
        rel = np.max(np.abs(new - theta)) / max(np.max(np.abs(theta)), 1.0)
        theta, obj = new, obj + change
        history.append(obj)
        if rel < 1e-14:
            break
    if not converged:
        log.debug("FLAD stopped after %d sweeps with gradient %.3g", sweep, gnorm)
    fit = FitResult(theta, float(lam), sweep, converged, gnorm, obj, design.n, method="FLAD",
                    loss_history=history)
    return fit
