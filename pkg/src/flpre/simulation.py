"""Replication harness for the estimation and subsampling studies."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .baselines import fit_fls, fit_flad
from .basis import BasisConfig, CurveSet, DesignMatrix
from .datagen import SimConfig, simulate, true_beta
from .lpre import SingularHessianError, fit_newton, predict_beta, sandwich_variance
from .subsampling import two_step_fit
from .tuning import DEFAULT_LAMBDA_GRID, IMSE_GRID_SIZE, bic, imse, rpse, select_lambda

log = logging.getLogger(__name__)

METHODS = ("FLPRE", "FLS", "FLAD")
IMSE_GRID = np.linspace(0.0, 1.0, IMSE_GRID_SIZE)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FLPRE_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """Ordered map over ``items``, threaded when ``workers > 1``."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def fit_method(design: DesignMatrix, y, method: str = "FLPRE",
               lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID, jitter: float = 0.0,
               variance: bool = False):
    """Fit one method with BIC over ``lambda_grid``; returns ``(lam, fit, bic_path)``."""
    if method == "FLPRE":
        warm = {"init": None}

        def fit_fn(lam):
            f = fit_newton(design, y, lam, init=warm["init"], jitter=jitter, variance=False)
            warm["init"] = f.theta_hat
            return f
    elif method == "FLS":
        def fit_fn(lam):
            return fit_fls(design, y, lam)
    elif method == "FLAD":
        def fit_fn(lam):
            return fit_flad(design, y, lam)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    grid = list(lambda_grid)
    if len(set(grid)) == 1:
        lam = float(grid[0])
        fit, path = fit_fn(lam), {}
    else:
        lam, fit, path = select_lambda(grid, fit_fn, lambda f: bic(f, design, y))
    if variance and method == "FLPRE" and fit.converged:
        try:
            G, H, V = sandwich_variance(design, y, fit)
            fit = replace(fit, G_hat=G, H_hat=H, V_full=V)
        except SingularHessianError as exc:
            log.warning("sandwich variance unavailable: %s", exc)
    return lam, fit, path


@dataclass
class EstimationRecord:
    seed: int
    method: str
    lambda_: float
    imse: float
    rpse: float
    converged: bool


def estimation_replication(seed, n_train: int, n_test: int, covariate_law: str,
                           error_law: str, basis: BasisConfig,
                           methods: Iterable[str] = METHODS,
                           lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                           gen_basis_dim: int = 10) -> list[EstimationRecord]:
    """One replication: simulate train/test data, fit each method, score against the true slope."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    train_ss, test_ss = ss.spawn(2)
    train, y = simulate(SimConfig(n_train, covariate_law, error_law, gen_basis_dim=gen_basis_dim),
                        np.random.default_rng(train_ss))
    test, _ = simulate(SimConfig(n_test, covariate_law, error_law, gen_basis_dim=gen_basis_dim),
                       np.random.default_rng(test_ss))
    design = train.design(basis)
    out = []
    for m in methods:
        lam, fit, _ = fit_method(design, y, m, lambda_grid)
        beta_hat = lambda t, f=fit: predict_beta(f, basis, t)
        out.append(EstimationRecord(
            int(ss.entropy) if isinstance(ss.entropy, int) else 0, m, lam,
            imse(beta_hat, true_beta, IMSE_GRID), rpse(beta_hat, true_beta, test),
            bool(fit.converged)))
    return out


def subsample_replication(design: DesignMatrix, y, basis: BasisConfig, beta_full: np.ndarray,
                          kind: str, r0: int, r: int, lambda_grid: Sequence[float], seed,
                          test_curves: Optional[CurveSet] = None, alpha: float = 0.0,
                          pilot_lambda: float = 0.0) -> dict:
    """One subsample fit scored against the full-data slope ``beta_full`` on IMSE_GRID."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    fit = two_step_fit(design, y, r0, r, lambda_grid, rng, kind=kind, alpha=alpha,
                       pilot_lambda=pilot_lambda)
    elapsed = time.perf_counter() - t0
    beta_sub = predict_beta(fit, basis, IMSE_GRID)
    row = {
        "method": kind, "r0": r0 if kind != "uniform" else "", "r": r,
        "lambda": fit.lambda_, "imse": imse(beta_sub, beta_full, IMSE_GRID),
        "rpse": float("nan"), "fit_seconds": elapsed, "converged": fit.converged,
        "theta": fit.theta_tilde,
    }
    if test_curves is not None:
        sub_t = predict_beta(fit, basis, test_curves.grid)
        full_t = np.interp(test_curves.grid, IMSE_GRID, beta_full)
        row["rpse"] = rpse(sub_t, full_t, test_curves)
    return row


def subsample_study(design: DesignMatrix, y, basis: BasisConfig, beta_full: np.ndarray,
                    kinds: Sequence[str], r_values: Sequence[int], r0: int, replications: int,
                    lambda_grid: Sequence[float], seed: int, test_curves=None,
                    alpha: float = 0.0, pilot_lambda: float = 0.0,
                    workers: Optional[int] = None) -> list[dict]:
    """Paired replications: every (kind, r) cell reuses replication ``k``'s seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(replications)
    jobs = [(k, kind, r) for r in r_values for kind in kinds for k in range(replications)]

    def run(job):
        k, kind, r = job
        row = subsample_replication(design, y, basis, beta_full, kind, r0, r, lambda_grid,
                                    seeds[k], test_curves, alpha, pilot_lambda)
        row["seed"] = k
        return row

    return pmap(run, jobs, workers)


def time_call(fn: Callable, repeats: int = 1) -> tuple[float, object]:
    """Median wall time of ``fn()`` over ``repeats`` calls and the last result."""
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def aggregate(rows: Sequence[dict], keys=("method", "r"), fields=("imse", "rpse", "fit_seconds")):
    """Mean and standard deviation of ``fields`` grouped by ``keys``."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        agg = dict(zip(keys, key))
        agg["replications"] = len(members)
        for f in fields:
            v = np.array([m[f] for m in members], dtype=float)
            agg[f"{f}_mean"] = float(np.nanmean(v)) if np.any(~np.isnan(v)) else float("nan")
            agg[f"{f}_sd"] = float(np.nanstd(v, ddof=1)) if np.sum(~np.isnan(v)) > 1 else float("nan")
        out.append(agg)
    return out
