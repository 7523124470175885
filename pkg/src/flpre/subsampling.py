"""Inverse-probability-weighted subsampling for the LPRE estimator.

Subsample objective, with ``R_i`` the draw multiplicities::

    L*(theta) = (1/r) sum_i (R_i / pi_i) (omega_i + 1/omega_i - 2) + lam/2 theta' D theta

Its expectation over draws is the full-data objective, so a smoothing
parameter keeps the same meaning on the full data and on a subsample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .basis import DesignMatrix
from .lpre import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    SingularHessianError,
    _inv_spd,
    _knot_scale,
    _log_residual,
    _loss,
    log_responses,
    newton_solve,
    plugin_matrices,
)
from .tuning import bic, select_lambda

log = logging.getLogger(__name__)

Kind = Literal["uniform", "FAopt", "FLopt"]
KINDS = ("uniform", "FAopt", "FLopt")


class ZeroScoreError(ValueError):
    """Every optimal-probability score vanished (the reference fit is exact)."""


class PilotFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SubsampleScheme:
    probabilities: np.ndarray
    kind: str = "uniform"
    alpha: float = 0.0

    def __post_init__(self):
        pi = np.asarray(self.probabilities, dtype=float)
        if pi.ndim != 1 or pi.size == 0:
            raise ValueError("probabilities must be a non-empty 1-d array")
        if np.any(pi < 0) or not np.all(np.isfinite(pi)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(pi.sum() - 1.0) > 1e-10:
            raise ValueError(f"probabilities sum to {pi.sum()!r}, expected 1")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        object.__setattr__(self, "probabilities", pi)

    @property
    def n(self) -> int:
        return self.probabilities.size


@dataclass(frozen=True)
class SubsampleDraw:
    multiplicities: np.ndarray
    r: int
    seed: Optional[object] = None

    @property
    def indices(self) -> np.ndarray:
        """Distinct selected points."""
        return np.flatnonzero(self.multiplicities)


@dataclass
class SubsampleFit:
    theta_tilde: np.ndarray
    lambda_: float
    r: int
    converged: bool
    iterations: int
    final_gradient_norm: float
    kind: str = "uniform"
    V: Optional[np.ndarray] = None
    V_pi: Optional[np.ndarray] = None
    pilot_theta: Optional[np.ndarray] = None
    r0: Optional[int] = None
    scheme: Optional[SubsampleScheme] = field(default=None, repr=False)
    draw: Optional[SubsampleDraw] = field(default=None, repr=False)
    bic_path: Optional[dict] = None

    @property
    def theta(self) -> np.ndarray:
        return self.theta_tilde


def _normalize(scores: np.ndarray, kind: str, alpha: float) -> SubsampleScheme:
    total = scores.sum()
    if not total > 0:
        raise ZeroScoreError(
            f"all {kind} scores are zero (exact fit everywhere); use uniform probabilities")
    pi = scores / total
    if alpha:
        pi = (1.0 - alpha) * pi + alpha / pi.size
    pi /= pi.sum()
    return SubsampleScheme(pi, kind, alpha)


def probs_uniform(n: int) -> SubsampleScheme:
    if n < 1:
        raise ValueError("n must be positive")
    return SubsampleScheme(np.full(n, 1.0 / n), "uniform", 0.0)


def residual_factor(design: DesignMatrix, responses, theta_ref) -> np.ndarray:
    """``|-omega_i + 1/omega_i|`` at ``theta_ref``."""
    u = _log_residual(design.rows, log_responses(responses), np.asarray(theta_ref, float))
    return np.abs(2.0 * np.sinh(u))


def _row_norms(M: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", M, M))


def probs_flopt(design: DesignMatrix, responses, theta_ref, alpha: float = 0.0) -> SubsampleScheme:
    """L-optimal probabilities, proportional to ``|-omega + 1/omega| * ||B_i||``."""
    scores = residual_factor(design, responses, theta_ref) * _row_norms(design.rows)
    return _normalize(scores, "FLopt", alpha)


def probs_faopt(design: DesignMatrix, responses, theta_ref, H_ref, alpha: float = 0.0) -> SubsampleScheme:
    """A-optimal probabilities, proportional to ``|-omega + 1/omega| * ||H^-1 B_i||``."""
    HinvB = np.linalg.solve(np.asarray(H_ref, float), design.rows.T)
    scores = residual_factor(design, responses, theta_ref) * _row_norms(HinvB.T)
    return _normalize(scores, "FAopt", alpha)


def build_alias_table(pi: np.ndarray):
    """Alias table ``(accept, alias)`` for probabilities ``pi`` in O(n) vectorized rounds.

    Each round gives every under-full column (``n pi_i < 1``) an alias: the
    over-full column whose cumulative surplus covers the start of its
    cumulative deficit. Over-full columns pushed below 1 become under-full and
    are resolved in the next round.
    """
    pi = np.asarray(pi, dtype=float)
    n = pi.size
    q = pi * n
    accept = np.ones(n)
    alias = np.arange(n)
    small = np.flatnonzero(q < 1.0)
    large = np.flatnonzero(q >= 1.0)
    while small.size and large.size:
        deficit = 1.0 - q[small]
        start = np.cumsum(deficit) - deficit
        ends = np.cumsum(q[large] - 1.0)
        g = np.minimum(np.searchsorted(ends, start, side="right"), large.size - 1)
        accept[small] = q[small]
        alias[small] = large[g]
        q[large] -= np.bincount(g, weights=deficit, minlength=large.size)
        np.clip(q, 0.0, None, out=q)
        demoted = q[large] < 1.0
        small, large = large[demoted], large[~demoted]
    # leftovers are full columns up to rounding
    accept[small] = 1.0
    alias[small] = small
    return accept, alias


def alias_probabilities(accept: np.ndarray, alias: np.ndarray) -> np.ndarray:
    """Distribution encoded by an alias table."""
    n = accept.size
    return (accept + np.bincount(alias, weights=1.0 - accept, minlength=n)) / n


def sample_alias(accept: np.ndarray, alias: np.ndarray, size: int, rng: np.random.Generator):
    col = rng.integers(0, accept.size, size=size)
    keep = rng.random(size) < accept[col]
    return np.where(keep, col, alias[col])


def draw_with_replacement(scheme: SubsampleScheme, r: int, rng) -> SubsampleDraw:
    """Multinomial(r, pi) multiplicities drawn through an alias table."""
    if r < 1:
        raise ValueError("subsample size r must be positive")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    n = scheme.n
    if scheme.kind == "uniform" and np.all(scheme.probabilities == scheme.probabilities[0]):
        idx = rng.integers(0, n, size=r)
    else:
        accept, alias = build_alias_table(scheme.probabilities)
        idx = sample_alias(accept, alias, r, rng)
    R = np.bincount(idx, minlength=n)
    return SubsampleDraw(R, int(r), seed)


def _weights(draw: SubsampleDraw, scheme: SubsampleScheme):
    idx = draw.indices
    pi = scheme.probabilities[idx]
    if np.any(pi <= 0):
        raise ValueError("a selected point has zero sampling probability")
    return idx, draw.multiplicities[idx] / (draw.r * pi)


def weighted_loss(design: DesignMatrix, responses, draw: SubsampleDraw,
                  scheme: SubsampleScheme, theta, lam: float) -> float:
    """Subsample objective ``L*(theta)``."""
    idx, w = _weights(draw, scheme)
    logy = log_responses(responses)[idx]
    return _loss(design.rows[idx], logy, w, design.penalty, np.asarray(theta, float), lam)


def fit_weighted(design: DesignMatrix, responses, draw: SubsampleDraw, scheme: SubsampleScheme,
                 lam: float = 0.0, init=None, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, jitter: float = 0.0,
                 variance: bool = False) -> SubsampleFit:
    """Minimize the inverse-probability-weighted objective by damped Newton."""
    if draw.multiplicities.sum() != draw.r:
        raise ValueError("multiplicities do not sum to r")
    idx, w = _weights(draw, scheme)
    logy = log_responses(responses)
    try:
        theta, it, conv, gnorm, _ = newton_solve(
            design.rows[idx], logy[idx], design.penalty, lam, w, init, tol, max_iter, jitter)
    except SingularHessianError as exc:
        raise SingularHessianError(
            f"weighted Hessian is singular ({exc}); increase r or use alpha > 0",
            exc.iteration) from None
    fit = SubsampleFit(theta, float(lam), draw.r, conv, it, gnorm, scheme.kind,
                       scheme=scheme, draw=draw)
    if variance:
        fit.V, fit.V_pi = subsample_variance(design, responses, theta, scheme, lam)
    return fit


def subsample_variance(design: DesignMatrix, responses, theta_tilde, scheme: SubsampleScheme,
                       lam: float):
    """Return ``(V, V_pi)`` with ``V = H^-1 V_pi H^-1 / K``, ``H`` evaluated at ``theta_tilde``."""
    u = _log_residual(design.rows, log_responses(responses), np.asarray(theta_tilde, float))
    psi2 = (2.0 * np.sinh(u)) ** 2
    pi = scheme.probabilities
    active = psi2 > 0
    if np.any(pi[active] <= 0):
        raise ValueError("zero sampling probability on a point with non-zero residual")
    coef = np.zeros_like(psi2)
    coef[active] = psi2[active] / pi[active]
    n = design.n
    B = design.rows
    V_pi = B.T @ (coef[:, None] * B) / n ** 2
    V_pi = 0.5 * (V_pi + V_pi.T)
    _, H = plugin_matrices(design, responses, theta_tilde, lam)
    Hinv = _inv_spd(H)
    V = Hinv @ V_pi @ Hinv / _knot_scale(design)
    return 0.5 * (V + V.T), V_pi


def _pilot(design, responses, r0, rng, tol, max_iter, lam=0.0):
    n = design.n
    scheme = probs_uniform(n)
    for size in (r0, min(2 * r0, n)):
        draw = draw_with_replacement(scheme, size, rng)
        try:
            fit = fit_weighted(design, responses, draw, scheme, lam, tol=tol, max_iter=max_iter)
        except SingularHessianError as exc:
            log.info("pilot fit with r0=%d failed: %s", size, exc)
            continue
        if fit.converged:
            return fit, size
        log.info("pilot fit with r0=%d did not converge", size)
    raise PilotFitError(
        f"pilot fit failed with r0={r0} and r0={min(2 * r0, n)}; if the design is rank "
        "deficient, pass a positive pilot_lambda")


def two_step_fit(design: DesignMatrix, responses, r0: int, r: int,
                 lambda_grid: Sequence[float] = (0.0,), rng=None, kind: str = "FLopt",
                 alpha: float = 0.0, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, variance: bool = False,
                 pilot_lambda: float = 0.0) -> SubsampleFit:
    """Pilot-then-optimal subsampling fit.

    Step 1 fits a uniform subsample of size ``r0`` with ``lam = pilot_lambda``
    (0 by default); its estimate replaces the full-data fit in the optimal
    probabilities. Step 2 draws ``r`` points with those probabilities and
    picks ``lam`` from ``lambda_grid`` by the subsample BIC. ``kind="uniform"``
    skips the pilot and fits one uniform subsample of size ``r``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown subsampling kind {kind!r}; expected one of {KINDS}")
    if r < 1:
        raise ValueError("r must be positive")
    rng = np.random.default_rng(rng)
    n = design.n
    pilot_theta, used_r0 = None, None
    if kind == "uniform":
        scheme = probs_uniform(n)
    else:
        if r0 < design.dim:
            raise ValueError(f"r0={r0} is below the basis dimension {design.dim}")
        pilot, used_r0 = _pilot(design, responses, r0, rng, tol, max_iter, pilot_lambda)
        pilot_theta = pilot.theta_tilde
        if kind == "FLopt":
            scheme = probs_flopt(design, responses, pilot_theta, alpha)
        else:
            _, H = plugin_matrices(design, responses, pilot_theta, pilot_lambda)
            scheme = probs_faopt(design, responses, pilot_theta, H, alpha)
    draw = draw_with_replacement(scheme, r, rng)
    idx, w = _weights(draw, scheme)

    state = {"init": None}

    def fit_at(lam):
        fit = fit_weighted(design, responses, draw, scheme, lam, init=state["init"],
                           tol=tol, max_iter=max_iter)
        state["init"] = fit.theta_tilde
        return fit

    sub = design.take(idx)
    y_sub = np.asarray(responses, float)[idx]
    lam, best, path = select_lambda(
        lambda_grid, fit_at, lambda f: bic(f, sub, y_sub, weights=w, n_eff=r))
    best.pilot_theta = pilot_theta
    best.r0 = used_r0
    best.bic_path = path
    if variance:
        best.V, best.V_pi = subsample_variance(design, responses, best.theta_tilde, scheme, lam)
    return best
