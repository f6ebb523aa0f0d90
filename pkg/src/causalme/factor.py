"""Gaussian factor analysis by EM, factor-count selection, and the
identifiability thresholds that govern how many unique variances a factor
model can carry.

The estimators work on covariance matrices, not raw data, so population
inputs and sample covariances take the same path.  Loadings are identified
only up to right-rotation; everything downstream consumes the rotation
invariants ``L @ L.T`` and ``psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError

__all__ = [
    "FaFit",
    "fa_fit",
    "select_num_factors",
    "identifiability_thresholds",
    "recovered_latent_cov",
]

_PSI_FLOOR_SCALE = 1e-6
_MAX_ITER = 5000
_REL_TOL = 1e-8


@dataclass(eq=False)
class FaFit:
    """One fitted factor model: ``cov ~ L @ L.T + diag(psi)``."""

    L: np.ndarray
    psi: np.ndarray
    loglik: float
    bic: float
    r: int
    n_obs: int
    n_iter: int
    converged: bool
    psi_at_floor: tuple = ()


def _loglik(S: np.ndarray, sigma: np.ndarray, n_obs: int) -> float:
    n = S.shape[0]
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        return -np.inf
    trace = float(np.trace(np.linalg.solve(sigma, S)))
    return -0.5 * n_obs * (n * math.log(2.0 * math.pi) + logdet + trace)


def _free_params(n: int, r: int) -> int:
    return n * r + n - r * (r - 1) // 2


def fa_fit(cov: np.ndarray, n_obs: int, r: int, *, max_iter: int = _MAX_ITER,
           rel_tol: float = _REL_TOL, strict: bool = True,
           init_seed: int | None = None) -> FaFit:
    """Fit an r-factor model to ``cov`` by EM.

    Initialization is the classic principal-axis start: uniquenesses seeded
    from squared multiple correlations (``1 / (S^-1)_ii``), loadings from the
    top-r eigenpairs of the reduced matrix.  Seeding the uniquenesses matters
    — EM creeps on a likelihood ridge from a cold start and can trip the
    relative-change stop far from the optimum.  The default start is fully
    deterministic; pass ``init_seed`` to start from a random point instead
    (useful for checking that ``L @ L.T`` and ``psi`` are init-independent).

    ``psi`` entries are floored at 1e-6 times the largest diagonal to avoid
    degenerate collapse; floored coordinates are reported.  On hitting the
    iteration cap the best iterate is either raised inside a
    ``ConvergenceError`` (``strict``) or returned flagged.
    """
    S = np.asarray(cov, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n):
        raise ConfigError("covariance must be square")
    if not np.allclose(S, S.T, atol=1e-10):
        raise ConfigError("covariance must be symmetric")
    if not 1 <= r <= n - 1:
        raise ConfigError(f"factor count must lie in [1, {n - 1}], got {r}")
    if n_obs < 2:
        raise ConfigError("n_obs must be at least 2")

    floor = _PSI_FLOOR_SCALE * float(np.max(np.diag(S)))
    if floor <= 0:
        raise ConfigError("covariance diagonal must have a positive entry")

    if init_seed is None:
        prec_diag = np.diag(np.linalg.pinv(S, hermitian=True))
        with np.errstate(divide="ignore"):
            smc = np.where(prec_diag > 0, 1.0 / prec_diag, np.diag(S))
        psi = np.clip(np.minimum(smc, np.diag(S)), floor, None)
        evals, evecs = np.linalg.eigh(S - np.diag(psi))
        top = np.clip(evals[::-1][:r], floor, None)
        L = evecs[:, ::-1][:, :r] * np.sqrt(top)
    else:
        rng = np.random.default_rng(init_seed)
        scale = np.sqrt(np.maximum(np.diag(S), floor) / r)
        L = rng.standard_normal((n, r)) * scale[:, None] * 0.7
        psi = np.clip(0.5 * np.diag(S), floor, None)

    prev = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        sigma = L @ L.T + np.diag(psi)
        ll = _loglik(S, sigma, n_obs)
        if np.isfinite(prev) and abs(ll - prev) <= rel_tol * abs(prev):
            converged = True
            break
        prev = ll
        beta = np.linalg.solve(sigma, L).T          # r x n
        bs = beta @ S
        gamma = np.eye(r) - beta @ L + bs @ beta.T  # E[ff^T | data], averaged
        L = np.linalg.solve(gamma.T, bs).T
        psi = np.clip(np.diag(S - L @ bs), floor, None)

    sigma = L @ L.T + np.diag(psi)
    ll = _loglik(S, sigma, n_obs)
    bic = -2.0 * ll + _free_params(n, r) * math.log(n_obs)
    at_floor = tuple(int(i) for i in np.flatnonzero(psi <= floor * (1 + 1e-12)))
    fit = FaFit(L=L, psi=psi, loglik=ll, bic=bic, r=r, n_obs=n_obs,
                n_iter=it, converged=converged, psi_at_floor=at_floor)
    if not converged and strict:
        raise ConvergenceError(
            f"factor analysis did not converge in {max_iter} iterations",
            best=fit)
    return fit


def select_num_factors(cov: np.ndarray, n_obs: int, candidates=None) -> int:
    """Pick the factor count minimizing BIC (ties go to the smaller count)."""
    n = np.asarray(cov).shape[0]
    if candidates is None:
        candidates = range(1, n)
    candidates = sorted(set(int(r) for r in candidates))
    if not candidates or candidates[0] < 1 or candidates[-1] > n - 1:
        raise ConfigError(f"candidates must lie within [1, {n - 1}]")
    best_r, best_bic = None, np.inf
    for r in candidates:
        fit = fa_fit(cov, n_obs, r, strict=False)
        if fit.bic < best_bic - 1e-9:
            best_r, best_bic = r, fit.bic
    return best_r


def identifiability_thresholds(n: int) -> tuple[float, float]:
    """Return ``(phi_n, c_n)`` for an n-variable factor model.

    ``phi_n`` is the largest factor count at which the model's unique
    variances are generically pinned down; ``c_n = 1 - phi_n / n`` is the
    matching lower bound on the fraction of pure-noise (leaf) coordinates.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    root = math.sqrt(8.0 * n + 1.0)
    phi = (2.0 * n + 1.0 - root) / 2.0
    c = (root - 1.0) / (2.0 * n)
    return phi, c


def recovered_latent_cov(fit: FaFit) -> np.ndarray:
    """Covariance of the shared signal implied by the fit: ``L @ L.T``."""
    return fit.L @ fit.L.T
