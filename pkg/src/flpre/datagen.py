"""Synthetic functional covariates, multiplicative errors and responses."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special

from .basis import CurveSet, basis_matrix, make_basis

COVARIATE_LAWS = ("C1", "C2", "C3")
ERROR_LAWS = ("R1", "R2", "R3", "R4")
T_DOF = 5
R3_PROPOSAL_SD = 0.8


@dataclass(frozen=True)
class SimConfig:
    n: int
    covariate_law: str = "C1"
    error_law: str = "R1"
    grid_size: int = 100
    gen_basis_dim: int = 10
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.covariate_law not in COVARIATE_LAWS:
            raise ValueError(f"unknown covariate law {self.covariate_law!r}; expected {COVARIATE_LAWS}")
        if self.error_law not in ERROR_LAWS:
            raise ValueError(f"unknown error law {self.error_law!r}; expected {ERROR_LAWS}")
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if self.gen_basis_dim < 4:
            raise ValueError("gen_basis_dim must be at least 4 for a cubic basis")

    def to_dict(self) -> dict:
        return asdict(self)


def true_beta(t):
    """``7 t^3 + 2 sin(4 pi t + 0.2)``."""
    t = np.asarray(t, dtype=float)
    return 7.0 * t ** 3 + 2.0 * np.sin(4.0 * np.pi * t + 0.2)


def coefficient_covariance(dim: int) -> np.ndarray:
    idx = np.arange(dim)
    return 0.5 ** np.abs(idx[:, None] - idx[None, :])


def generation_grid(grid_size: int = 100) -> np.ndarray:
    return np.linspace(0.0, 1.0, grid_size)


def draw_coefficients(law: str, n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    Sigma = coefficient_covariance(dim)
    if law == "C1":
        return rng.multivariate_normal(np.zeros(dim), Sigma, size=n, method="cholesky")
    if law == "C2":
        z = rng.multivariate_normal(np.zeros(dim), Sigma / 10.0, size=n, method="cholesky")
        scale = np.sqrt(T_DOF / rng.chisquare(T_DOF, size=n))
        return z * scale[:, None]
    if law == "C3":
        z = rng.multivariate_normal(np.zeros(dim), Sigma, size=n, method="cholesky")
        sign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        return z + sign[:, None]
    raise ValueError(f"unknown covariate law {law!r}")


def gen_covariates(config: SimConfig, rng=None) -> CurveSet:
    """Curves ``x_i = a_i' B(grid)`` with a cubic generating basis."""
    rng = np.random.default_rng(config.seed if rng is None else rng)
    gen = make_basis(config.gen_basis_dim - 4, 3, 2)
    grid = generation_grid(config.grid_size)
    a = draw_coefficients(config.covariate_law, config.n, config.gen_basis_dim, rng)
    return CurveSet(grid, a @ basis_matrix(gen, grid).T)


def r3_normalizer() -> float:
    """``c`` making ``c exp(-x - 1/x - log x + 2)`` a density on x > 0."""
    return float(np.exp(-2.0) / (2.0 * special.k0(2.0)))


def r3_density(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = r3_normalizer() * np.exp(-xp - 1.0 / xp - np.log(xp) + 2.0)
    return out


@lru_cache(maxsize=None)
def _r3_log_envelope() -> float:
    # sup over u of log target(u) - log proposal(u), target ~ exp(-2 cosh u) for u = log x
    u = np.linspace(-6, 6, 120001)
    g = -2.0 * np.cosh(u) + u ** 2 / (2 * R3_PROPOSAL_SD ** 2)
    return float(g.max()) + 1e-12


def sample_r3(n: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampler on ``log x`` with a N(0, 0.8^2) proposal."""
    bound = _r3_log_envelope()
    out = np.empty(0)
    while out.size < n:
        m = int(1.3 * (n - out.size)) + 16
        u = rng.normal(0.0, R3_PROPOSAL_SD, size=m)
        log_acc = -2.0 * np.cosh(u) + u ** 2 / (2 * R3_PROPOSAL_SD ** 2) - bound
        keep = np.log(rng.random(m)) < log_acc
        out = np.concatenate([out, u[keep]])
    return np.exp(out[:n])


def r4_upper() -> float:
    """``b`` with ``E(eps) = E(1/eps)`` for ``eps ~ U(0.5, b)``."""
    return float(optimize.brentq(lambda b: (b * b - 0.25) / 2.0 - np.log(2.0 * b), 1.0, 3.0,
                                 xtol=1e-15, rtol=4 * np.finfo(float).eps))


def gen_errors(law: str, n: int, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    if n < 1:
        raise ValueError("n must be positive")
    if law == "R1":
        return np.exp(rng.normal(0.0, 1.0, size=n))
    if law == "R2":
        return np.exp(rng.uniform(-2.0, 2.0, size=n))
    if law == "R3":
        return sample_r3(n, rng)
    if law == "R4":
        return rng.uniform(0.5, r4_upper(), size=n)
    raise ValueError(f"unknown error law {law!r}; expected {ERROR_LAWS}")


def gen_response(curves: CurveSet, beta: Callable, errors) -> np.ndarray:
    """``y_i = exp(integral x_i beta) * eps_i`` with the trapezoid rule on the curve grid."""
    errors = np.asarray(errors, dtype=float)
    if errors.shape != (len(curves),):
        raise ValueError("need one error per curve")
    if np.any(errors <= 0):
        raise ValueError("errors must be positive")
    return np.exp(curves.integrate(beta)) * errors


def simulate(config: SimConfig, rng=None, beta: Callable = true_beta):
    """Return ``(curves, y)`` drawn from one RNG stream."""
    rng = np.random.default_rng(config.seed if rng is None else rng)
    curves = gen_covariates(config, rng)
    eps = gen_errors(config.error_law, config.n, rng)
    return curves, gen_response(curves, beta, eps)
