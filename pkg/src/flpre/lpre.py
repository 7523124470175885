"""Penalized least product relative error (LPRE) estimation.

With ``u_i = log y_i - B_i' theta`` the relative residual is ``omega_i = exp(u_i)``
and each loss summand ``omega + 1/omega - 2`` equals ``4 sinh(u/2)**2``. The
gradient summand is ``-2 sinh(u) B_i`` and the Hessian weight ``2 cosh(u)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from .basis import BasisConfig, DesignMatrix, FunctionalSample, basis_matrix, project_covariate

log = logging.getLogger(__name__)

EXP_BOUND = 700.0
DEFAULT_TOL = 1e-8
DEFAULT_STEP_TOL = 1e-10
DEFAULT_MAX_ITER = 100
MAX_HALVINGS = 30


class ExpOverflowError(FloatingPointError):
    """A log relative residual left the range where ``exp`` is finite."""


class SingularHessianError(np.linalg.LinAlgError):
    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class FitResult:
    theta_hat: np.ndarray
    lambda_: float
    iterations: int
    converged: bool
    final_gradient_norm: float
    loss: float
    n: int
    method: str = "FLPRE"
    G_hat: Optional[np.ndarray] = None
    H_hat: Optional[np.ndarray] = None
    V_full: Optional[np.ndarray] = None
    loss_history: list = field(default_factory=list, repr=False)

    @property
    def theta(self) -> np.ndarray:
        return self.theta_hat


def log_responses(responses) -> np.ndarray:
    y = np.asarray(responses, dtype=float).ravel()
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise ValueError("responses must be finite and strictly positive")
    return np.log(y)


def _log_residual(rows, logy, theta) -> np.ndarray:
    u = logy - rows @ theta
    if not np.all(np.abs(u) <= EXP_BOUND):
        raise ExpOverflowError(
            f"|log y - B'theta| exceeds {EXP_BOUND:g}; exp would overflow"
        )
    return u


def _check(design: DesignMatrix, logy: np.ndarray, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != design.dim:
        raise ValueError(f"theta has length {theta.shape[0]}, design width is {design.dim}")
    if logy.shape[0] != design.n:
        raise ValueError(f"{logy.shape[0]} responses for {design.n} design rows")
    return theta


# Weighted building blocks; ``w`` multiplies each observation's summand.

def _loss(rows, logy, w, D, theta, lam) -> float:
    u = _log_residual(rows, logy, theta)
    s = 4.0 * np.sinh(0.5 * u) ** 2
    fit = float(np.sum(s if w is None else w * s))
    return fit + 0.5 * lam * float(theta @ D @ theta)


def _loss_change(rows, w, D, theta, cand, lam, u_old, u_new) -> float:
    # L(cand) - L(theta) without cancellation: 2(cosh a - cosh b) = 4 sinh((a+b)/2) sinh((a-b)/2)
    du = rows @ (theta - cand)
    s = 4.0 * np.sinh(0.5 * (u_new + u_old)) * np.sinh(0.5 * du)
    fit = float(np.sum(s if w is None else w * s))
    return fit + 0.5 * lam * float((cand - theta) @ D @ (cand + theta))


def _grad(rows, logy, w, D, theta, lam, u=None) -> np.ndarray:
    if u is None:
        u = _log_residual(rows, logy, theta)
    c = -2.0 * np.sinh(u)
    if w is not None:
        c = w * c
    return rows.T @ c + lam * (D @ theta)


def _hess(rows, logy, w, D, theta, lam, u=None) -> np.ndarray:
    if u is None:
        u = _log_residual(rows, logy, theta)
    c = 2.0 * np.cosh(u)
    if w is not None:
        c = w * c
    H = rows.T @ (c[:, None] * rows) + lam * D
    return 0.5 * (H + H.T)


def lpre_loss(design: DesignMatrix, responses, theta, lam: float) -> float:
    """Penalized LPRE objective ``sum(omega + 1/omega - 2) + lam/2 theta' D theta``."""
    logy = log_responses(responses)
    theta = _check(design, logy, theta)
    return _loss(design.rows, logy, None, design.penalty, theta, lam)


def lpre_gradient(design: DesignMatrix, responses, theta, lam: float) -> np.ndarray:
    logy = log_responses(responses)
    theta = _check(design, logy, theta)
    return _grad(design.rows, logy, None, design.penalty, theta, lam)


def lpre_hessian(design: DesignMatrix, responses, theta, lam: float) -> np.ndarray:
    logy = log_responses(responses)
    theta = _check(design, logy, theta)
    return _hess(design.rows, logy, None, design.penalty, theta, lam)


def _ls_start(rows, logy, w, D, lam) -> np.ndarray:
    # log-scale ridge solution; zero vector when the normal matrix is singular
    W = rows if w is None else w[:, None] * rows
    M = rows.T @ W + lam * D
    try:
        theta = np.linalg.solve(M, W.T @ logy)
    except np.linalg.LinAlgError:
        return np.zeros(rows.shape[1])
    if not np.all(np.isfinite(theta)) or np.any(np.abs(rows @ theta - logy) > EXP_BOUND):
        return np.zeros(rows.shape[1])
    return theta


def newton_solve(rows, logy, D, lam, weights=None, init=None, tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER, jitter=0.0):
    """Damped Newton-Raphson on the (optionally weighted) penalized LPRE objective.

    Returns ``(theta, iterations, converged, gradient_max_norm, loss_history)``.
    Steps are halved (at most 30 times) until the objective does not increase.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = rows.shape[1]
    theta = _ls_start(rows, logy, weights, D, lam) if init is None else \
        np.array(init, dtype=float).ravel()
    loss = _loss(rows, logy, weights, D, theta, lam)
    history = [loss]
    converged = False
    gnorm = np.inf
    it = 0
    for it in range(max_iter + 1):
        u = _log_residual(rows, logy, theta)
        g = _grad(rows, logy, weights, D, theta, lam, u)
        gnorm = float(np.max(np.abs(g)))
        if it == max_iter:
            converged = gnorm < tol
            break
        H = _hess(rows, logy, weights, D, theta, lam, u)
        if jitter:
            H = H + jitter * np.eye(d)
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise SingularHessianError(
                f"Hessian is not positive definite at iteration {it}; "
                "increase lambda, add data, or use a jitter", iteration=it) from None
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        rel = np.linalg.norm(step) / max(np.linalg.norm(theta), 1.0)
        if rel < DEFAULT_STEP_TOL:
            # a negligible step with gradient above tol is a rounding floor, not progress
            converged = gnorm < tol
            break
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = theta - t * step
            try:
                change = _loss_change(rows, weights, D, theta, cand, lam, u,
                                      _log_residual(rows, logy, cand))
            except ExpOverflowError:
                change = np.inf
            # the direct difference stays accurate where L(cand) - L(theta) is lost to rounding
            if change <= 0:
                new_loss = loss + change
                break
            t *= 0.5
        else:
            # no descent within machine precision: accept the current point
            converged = gnorm < tol
            log.debug("step halving exhausted at iteration %d (gradient %.3g)", it, gnorm)
            break
        theta, loss = cand, new_loss
        history.append(loss)
    return theta, it, converged, gnorm, history


def fit_newton(design: DesignMatrix, responses, lam: float = 0.0, init=None,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
               jitter: float = 0.0, variance: bool = True) -> FitResult:
    """Full-data penalized LPRE fit.

    Parameters
    ----------
    design : DesignMatrix
    responses : array_like
        Strictly positive responses.
    lam : float
        Smoothing parameter (>= 0).
    init : array_like, optional
        Starting coefficients; defaults to the log-scale ridge solution.
    tol, max_iter : float, int
        Gradient max-norm tolerance and iteration cap.
    jitter : float
        Multiple of the identity added to every Hessian (0 disables).
    variance : bool
        Attach the plug-in sandwich matrices when the fit converged.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    logy = log_responses(responses)
    _check(design, logy, np.zeros(design.dim))
    theta, it, conv, gnorm, hist = newton_solve(
        design.rows, logy, design.penalty, lam, None, init, tol, max_iter, jitter)
    fit = FitResult(theta, float(lam), it, conv, gnorm, hist[-1], design.n,
                    loss_history=hist)
    if variance and conv:
        try:
            fit.G_hat, fit.H_hat, fit.V_full = sandwich_variance(design, responses, fit)
        except SingularHessianError as exc:
            log.warning("sandwich variance unavailable: %s", exc)
    return fit


def _knot_scale(design: DesignMatrix) -> float:
    # V carries a 1/K factor that cancels in every standard error; K = 0 uses 1
    return float(max(design.knot_count, 1))


def plugin_matrices(design: DesignMatrix, responses, theta, lam: float):
    """Plug-in ``(G_hat, H_hat)`` averaged over observations."""
    logy = log_responses(responses)
    theta = _check(design, logy, theta)
    u = _log_residual(design.rows, logy, theta)
    B, n = design.rows, design.n
    psi = -2.0 * np.sinh(u)
    G = B.T @ ((psi ** 2)[:, None] * B) / n
    H = B.T @ ((2.0 * np.cosh(u))[:, None] * B) / n + lam / n * design.penalty
    return 0.5 * (G + G.T), 0.5 * (H + H.T)


def _inv_spd(H: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise SingularHessianError(
            "plug-in Hessian is singular; use a larger lambda or more data") from None
    Linv = np.linalg.solve(L, np.eye(H.shape[0]))
    if not np.all(np.isfinite(Linv)) or np.linalg.cond(H) > 1e14:
        raise SingularHessianError(
            "plug-in Hessian is numerically singular; use a larger lambda or more data")
    return Linv.T @ Linv


def sandwich_variance(design: DesignMatrix, responses, fit: FitResult):
    """Return ``(G_hat, H_hat, V_full)`` with ``V_full = H^-1 G H^-1 / K``."""
    G, H = plugin_matrices(design, responses, fit.theta_hat, fit.lambda_)
    Hinv = _inv_spd(H)
    V = Hinv @ G @ Hinv / _knot_scale(design)
    return G, H, 0.5 * (V + V.T)


class BetaBand(NamedTuple):
    beta: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def _coefficients(fit) -> np.ndarray:
    if isinstance(fit, np.ndarray):
        return fit
    return np.asarray(fit.theta, dtype=float)


def predict_beta(fit, basis: BasisConfig, t_grid, with_se: bool = False, alpha: float = 0.05,
                 n_knots: Optional[int] = None):
    """Slope curve ``B(t)' theta``; with ``with_se`` also pointwise bands.

    The standard error at ``t`` is ``sqrt(K B(t)' V B(t) / n)`` using the fit's
    ``V_full`` (or ``V`` for subsample fits, with ``n`` replaced by ``r``).
    """
    Bt = basis_matrix(basis, t_grid)
    beta = Bt @ _coefficients(fit)
    if not with_se:
        return beta
    V = getattr(fit, "V_full", None)
    count = getattr(fit, "n", None)
    if V is None:
        V = getattr(fit, "V", None)
        count = getattr(fit, "r", count)
    if V is None or count is None:
        raise ValueError("fit carries no variance matrix")
    K = max(basis.interior_knot_count if n_knots is None else n_knots, 1)
    var = K * np.einsum("ij,jk,ik->i", Bt, V, Bt) / count
    se = np.sqrt(np.clip(var, 0.0, None))
    z = stats.norm.ppf(1 - alpha / 2)
    return BetaBand(beta, se, beta - z * se, beta + z * se)


def predict_index(fit, design_rows) -> np.ndarray:
    return np.atleast_2d(design_rows) @ _coefficients(fit)


def predict_response(fit, basis: BasisConfig, new_sample) -> float | np.ndarray:
    """``exp(B_new' theta)`` for a single FunctionalSample or a design-row array."""
    if isinstance(new_sample, FunctionalSample):
        eta = float(project_covariate(new_sample, basis) @ _coefficients(fit))
        if abs(eta) > EXP_BOUND:
            raise ExpOverflowError("fitted index exceeds the exp-safe bound")
        return float(np.exp(eta))
    eta = predict_index(fit, new_sample)
    if np.any(np.abs(eta) > EXP_BOUND):
        raise ExpOverflowError("fitted index exceeds the exp-safe bound")
    return np.exp(eta)
