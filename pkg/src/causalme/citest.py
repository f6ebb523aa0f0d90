"""Partial-correlation machinery: conditional-independence decisions and
detection of (near-)deterministic relations, working off a covariance matrix
that may be singular.

Singular conditioning blocks are handled by pseudo-inversion, which computes
the projection onto the span of the conditioning variables; that is the
right notion of "given" when conditioners are linearly redundant.  Tests
whose endpoint is itself determined by the conditioning set have no
well-defined partial correlation — callers are expected to screen with
``is_deterministic`` first, as the deterministic-aware search algorithms do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, InconsistencyError
from .graphs import Dag, d_separated

__all__ = [
    "CiOracle",
    "partial_corr",
    "fisher_z_test",
    "is_deterministic",
    "default_determinism_tol",
]

_POP_CI_TOL = 1e-8
_POP_DET_TOL = 1e-6


def _partial_moments(cov: np.ndarray, i: int, j: int, S) -> tuple[float, float, float]:
    """Residual (co)variances of i and j after projecting out S."""
    S = sorted(set(int(s) for s in S))
    if i == j or i in S or j in S:
        raise ConfigError("endpoints must be distinct and outside S")
    if not S:
        return cov[i, i], cov[j, j], cov[i, j]
    css = cov[np.ix_(S, S)]
    cis = cov[i, S]
    cjs = cov[j, S]
    solve = np.linalg.pinv(css, hermitian=True)
    vii = cov[i, i] - cis @ solve @ cis
    vjj = cov[j, j] - cjs @ solve @ cjs
    vij = cov[i, j] - cis @ solve @ cjs
    return float(vii), float(vjj), float(vij)


def partial_corr(cov: np.ndarray, i: int, j: int, S=()) -> float:
    """Partial correlation of i and j given S, in [-1, 1].

    Raises when an endpoint is (numerically) determined by S — such a test
    carries no information and must be skipped, not evaluated.
    """
    cov = np.asarray(cov, dtype=float)
    vii, vjj, vij = _partial_moments(cov, i, j, S)
    scale = math.sqrt(max(cov[i, i], 0.0) * max(cov[j, j], 0.0))
    eps = 1e-12 * max(scale, 1e-300)
    if vii <= eps or vjj <= eps:
        raise InconsistencyError(
            f"endpoint determined by conditioning set {sorted(S)}; "
            "partial correlation undefined")
    r = vij / math.sqrt(vii * vjj)
    return max(-1.0, min(1.0, r))


def fisher_z_test(r: float, n_obs: int, cond_size: int, alpha: float = 0.01) -> bool:
    """True iff the partial correlation is statistically indistinguishable
    from zero at level ``alpha``."""
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if n_obs <= cond_size + 3:
        raise ConfigError("need n_obs > |S| + 3 for the z-transform test")
    if abs(r) >= 1.0:
        return False
    stat = math.sqrt(n_obs - cond_size - 3) * abs(math.atanh(r))
    return bool(stat <= stats.norm.ppf(1.0 - alpha / 2.0))


def default_determinism_tol(n_vars: int, n_obs: int | None = None) -> float:
    """Population default 1e-6; sample inputs get a size-adaptive floor."""
    if n_obs is None:
        return _POP_DET_TOL
    return max(_POP_DET_TOL, 10.0 * math.log(max(n_vars, 2)) / n_obs)


def is_deterministic(cov: np.ndarray, target: int, S, tol: float = _POP_DET_TOL) -> bool:
    """True iff the target's variance given S is below ``tol`` of its own."""
    cov = np.asarray(cov, dtype=float)
    S = sorted(set(int(s) for s in S))
    if target in S:
        return True
    vt = cov[target, target]
    if vt <= 0:
        return True
    if not S:
        return False
    css = cov[np.ix_(S, S)]
    cts = cov[target, S]
    resid = vt - cts @ np.linalg.pinv(css, hermitian=True) @ cts
    return bool(resid < tol * vt)


@dataclass(eq=False)
class CiOracle:
    """Uniform front door for conditional-independence queries.

    Three flavours share the interface: exact d-separation on a known DAG,
    thresholded partial correlations on a population covariance, and
    Fisher-z tests on a sample covariance with its sample size.
    """

    n: int
    cov: np.ndarray | None = None
    n_obs: int | None = None
    alpha: float = 0.01
    det_tol: float | None = None
    ci_tol: float = _POP_CI_TOL
    dag: Dag | None = None
    _det_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_cov(cls, cov: np.ndarray, n_obs: int | None = None,
                 alpha: float = 0.01, det_tol: float | None = None,
                 ci_tol: float = _POP_CI_TOL) -> "CiOracle":
        cov = np.asarray(cov, dtype=float)
        n = cov.shape[0]
        if cov.shape != (n, n) or not np.allclose(cov, cov.T, atol=1e-8):
            raise ConfigError("covariance must be square and symmetric")
        if det_tol is None:
            det_tol = default_determinism_tol(n, n_obs)
        return cls(n=n, cov=cov, n_obs=n_obs, alpha=alpha,
                   det_tol=det_tol, ci_tol=ci_tol)

    @classmethod
    def from_dag(cls, dag: Dag) -> "CiOracle":
        return cls(n=dag.n, dag=dag)

    def independent(self, i: int, j: int, S=()) -> bool:
        if self.dag is not None:
            return d_separated(self.dag, i, j, S)
        r = partial_corr(self.cov, i, j, S)
        if self.n_obs is None:
            return abs(r) <= self.ci_tol
        return fisher_z_test(r, self.n_obs, len(tuple(S)), self.alpha)

    def determined(self, target: int, S) -> bool:
        if self.dag is not None:
            return False
        key = (target, frozenset(int(s) for s in S))
        hit = self._det_cache.get(key)
        if hit is None:
            hit = is_deterministic(self.cov, target, S, self.det_tol)
            self._det_cache[key] = hit
        return hit
