"""End-to-end discovery procedures.

Three pipelines recover structure from contaminated observations:

* ``fa_equvar`` — factor fit, then the equal-noise rule: with measurement
  noise of common magnitude, the smallest unique variances mark the
  non-leaves; PC runs on the non-leaf block of the shared covariance and
  each leaf is attached to the smallest non-leaf set that reconstructs its
  loading row.  Recovers a unique graph (leaf edges oriented).
* ``fa_dpc`` — factor fit, then determinism-aware PC on the full (singular)
  shared covariance.  Recovers an equivalence class; leaves stay unlabeled.
* ``oica_rgd`` — non-Gaussian mixing estimation, recursive group
  decomposition, leaf identification, and graph reconstruction with
  coefficients.

Each has an ``*_oracle`` twin that consumes a model instead of data and runs
the same downstream logic on exact population quantities; oracle outputs
are deterministic functions of the model.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .citest import CiOracle, default_determinism_tol, is_deterministic
from .errors import AmbiguityError, ConfigError, InconsistencyError
from .factor import fa_fit, identifiability_thresholds, select_num_factors
from .graphs import Cpdag, WeightedDag, build_canonical, latent_cov, meek_closure
from .groups import (ORACLE_TOLERANCES, RecursiveGroups, decompose,
                     identify_leaves, reconstruct_graph)
from .oica import oica_fit
from .pcalg import dpc, pc

__all__ = [
    "DiscoveryResult",
    "RgdResult",
    "fa_equvar",
    "fa_equvar_oracle",
    "fa_dpc",
    "fa_dpc_oracle",
    "oica_rgd",
    "oica_rgd_oracle",
]

_PSI_GAP = 0.02

# The factor EM's loglik plateau is reached well before the loadings stop
# moving; pipeline CI thresholds assume the residual fit error is
# statistical, so the pipelines run the EM much tighter than the module
# defaults.
_FA_KW = {"max_iter": 50_000, "rel_tol": 1e-12, "strict": False}


@dataclass(eq=False)
class DiscoveryResult:
    """Outcome of a second-order pipeline.

    ``leaf_set`` is empty when the method does not identify leaves; when it
    does, every identified leaf has only incoming edges in ``cpdag``.
    """

    cpdag: Cpdag
    leaf_set: frozenset
    unique_variances: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.leaf_set = frozenset(self.leaf_set)
        self.unique_variances = np.asarray(self.unique_variances, dtype=float)
        for u, v in self.cpdag.directed:
            if u in self.leaf_set:
                raise InconsistencyError(f"identified leaf {u} has an outgoing edge")
        for u, v in self.cpdag.undirected:
            if u in self.leaf_set or v in self.leaf_set:
                raise InconsistencyError(
                    f"identified leaf touches undirected edge {(u, v)}")

    def to_json(self) -> dict:
        return {
            "cpdag": self.cpdag.to_json(),
            "leaf_set": sorted(self.leaf_set),
            "unique_variances": self.unique_variances.tolist(),
            "diagnostics": _json_safe(self.diagnostics),
        }


@dataclass(eq=False)
class RgdResult:
    """Outcome of the non-Gaussian pipeline: the labeled decomposition and,
    when every group resolved, the reconstructed weighted graph."""

    graph: WeightedDag | None
    groups: RecursiveGroups
    unique_variances: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        graph = None
        if self.graph is not None:
            graph = {
                "n": self.graph.dag.n,
                "edges": [[u, v, float(self.graph.B[v, u])]
                          for (u, v) in sorted(self.graph.dag.edges)],
            }
        return {
            "graph": graph,
            "groups": self.groups.to_json(),
            "unique_variances": np.asarray(self.unique_variances).tolist(),
            "diagnostics": _json_safe(self.diagnostics),
        }


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, frozenset):
        return sorted(obj)
    return obj


def _as_matrix(data) -> np.ndarray:
    values = getattr(data, "values", data)
    X = np.asarray(values, dtype=float)
    if X.ndim != 2:
        raise ConfigError("data must be a 2-d sample matrix")
    return X


def _latent_ci_tol(n_obs) -> float:
    """Partial-correlation threshold for tests on a factor-implied
    covariance.  The implied matrix carries estimation error rather than
    sampling noise, so a z-test null is wrong there; a magnitude cutoff
    shrinking as 1/sqrt(N) separates genuine zeros from fit error."""
    if n_obs is None:
        return 1e-8
    return max(1e-3, 15.0 / math.sqrt(n_obs))


def _leaf_recon_tol(n_obs) -> float:
    """Residual-fraction tolerance for reconstructing a leaf row from
    non-leaf rows: the square of the partial-correlation cutoff, since an
    unexplained correlation of rho leaves a variance fraction rho^2."""
    tol = _latent_ci_tol(n_obs)
    return max(1e-6, tol * tol)


def _latent_oracle(shared: np.ndarray, n_obs, alpha, ci_tol, det_tol) -> CiOracle:
    if alpha is not None:
        return CiOracle.from_cov(shared, n_obs=n_obs, alpha=alpha,
                                 det_tol=det_tol)
    if ci_tol is None:
        ci_tol = _latent_ci_tol(n_obs)
    return CiOracle.from_cov(shared, n_obs=None, ci_tol=ci_tol,
                             det_tol=det_tol)


def _resolve_leaf_count(n: int, l, cov, n_obs) -> tuple[int, bool]:
    if l is not None:
        l = int(l)
        if not 1 <= l <= n - 1:
            raise ConfigError(f"leaf count must lie in [1, {n - 1}], got {l}")
        return l, False
    r = select_num_factors(cov, n_obs, candidates=range(1, n))
    return n - r, True


def _fa_diagnostics(fit, n: int) -> dict:
    phi, _ = identifiability_thresholds(n)
    diag = {
        "loglik": fit.loglik,
        "bic": fit.bic,
        "n_iter": fit.n_iter,
        "converged": fit.converged,
        "r": fit.r,
        "max_factors": phi,
        "psi_spread": float(np.max(fit.psi) / max(np.min(fit.psi), 1e-300)),
    }
    if fit.r >= phi:
        diag["warning"] = (
            f"{fit.r} factors on {n} variables exceeds the unique-decomposition "
            f"bound {phi:.3f}; the factor solution may not be unique")
    return diag


def _split_by_psi(psi: np.ndarray, r: int) -> tuple[list, list]:
    """Smallest r unique variances mark non-leaves; a near-tie at the cut
    is genuine ambiguity, not a coin flip."""
    order = np.argsort(psi, kind="stable")
    inside = psi[order[r - 1]]
    outside = psi[order[r]]
    if outside - inside <= _PSI_GAP * max(outside, 1e-300):
        lo = inside * (1 - _PSI_GAP)
        hi = outside * (1 + _PSI_GAP)
        tied = sorted(int(i) for i in order if lo <= psi[i] <= hi)
        raise AmbiguityError(
            f"unique-variance gap at the non-leaf cut is below {_PSI_GAP:.0%}; "
            f"tied nodes {tied}", candidates=tied)
    nonleaves = sorted(int(i) for i in order[:r])
    leaves = sorted(int(i) for i in order[r:])
    return nonleaves, leaves


def _leaf_parents(shared_cov: np.ndarray, leaf: int, nonleaves: list,
                  det_tol: float) -> tuple:
    scale = float(np.max(np.diag(shared_cov)))
    if shared_cov[leaf, leaf] <= 1e-12 * max(scale, 1.0):
        return ()
    for size in range(1, len(nonleaves) + 1):
        for subset in itertools.combinations(nonleaves, size):
            if is_deterministic(shared_cov, leaf, subset, tol=det_tol):
                return subset
    raise InconsistencyError(
        f"no non-leaf subset reconstructs the shared signal of node {leaf}")


def _equvar_core(L: np.ndarray, psi: np.ndarray, n_obs, *, alpha, ci_tol,
                 max_cond, det_tol: float, diagnostics: dict) -> DiscoveryResult:
    n, r = L.shape
    nonleaves, leaves = _split_by_psi(psi, r)
    shared = L @ L.T
    sub = shared[np.ix_(nonleaves, nonleaves)]
    oracle = _latent_oracle(sub, n_obs, alpha, ci_tol, None)
    sub_cpdag = pc(oracle, max_cond=max_cond)
    directed = {(nonleaves[u], nonleaves[v]) for u, v in sub_cpdag.directed}
    undirected = {(nonleaves[u], nonleaves[v]) for u, v in sub_cpdag.undirected}
    leaf_parents = {}
    for leaf in leaves:
        parents = _leaf_parents(shared, leaf, nonleaves, det_tol)
        leaf_parents[leaf] = list(parents)
        directed.update((p, leaf) for p in parents)
    directed, undirected = meek_closure(n, directed, undirected)
    cpdag = Cpdag(n=n, directed=frozenset(directed),
                  undirected=frozenset(tuple(sorted(e)) for e in undirected))
    diagnostics = dict(diagnostics)
    diagnostics["leaf_parents"] = leaf_parents
    return DiscoveryResult(cpdag=cpdag, leaf_set=frozenset(leaves),
                           unique_variances=psi, diagnostics=diagnostics)


def fa_equvar(data, l=None, *, ci_tol=None, alpha=None, max_cond=None,
              det_tol=None) -> DiscoveryResult:
    """Equal-noise discovery from data: returns a unique graph (all leaf
    edges oriented) plus the identified leaf set.

    ``l`` is the leaf count; when omitted it is chosen by the factor-count
    information criterion.  Caller vouches for equal measurement-noise
    magnitudes; the result's ``psi_spread`` diagnostic helps judge that.
    Independence on the implied covariance is judged by an N-adaptive
    magnitude cutoff (``ci_tol``); passing ``alpha`` switches to a z-test
    at that level instead.
    """
    X = _as_matrix(data)
    n_obs, n = X.shape
    cov = np.cov(X.T)
    l, auto = _resolve_leaf_count(n, l, cov, n_obs)
    fit = fa_fit(cov, n_obs, n - l, **_FA_KW)
    diagnostics = {"fa": _fa_diagnostics(fit, n), "leaf_count": l,
                   "auto_leaf_count": auto}
    if det_tol is None:
        det_tol = _leaf_recon_tol(n_obs)
    return _equvar_core(fit.L, fit.psi, n_obs, alpha=alpha, ci_tol=ci_tol,
                        max_cond=max_cond, det_tol=det_tol,
                        diagnostics=diagnostics)


def fa_equvar_oracle(model, l=None, *, max_cond=None) -> DiscoveryResult:
    """Equal-noise discovery on exact population quantities (no factor fit)."""
    canon = build_canonical(model)
    L = np.asarray(canon.loadings) * np.sqrt(np.asarray(canon.source_variances))
    psi = np.asarray(canon.unique_variances, dtype=float)
    n = L.shape[0]
    if l is not None and int(l) != n - L.shape[1]:
        raise ConfigError(
            f"model has {n - L.shape[1]} leaves; cannot honor leaf count {l}")
    diagnostics = {"oracle": True, "leaf_count": L.shape[0] - L.shape[1]}
    return _equvar_core(L, psi, None, alpha=None, ci_tol=None,
                        max_cond=max_cond, det_tol=_leaf_recon_tol(None),
                        diagnostics=diagnostics)


def fa_dpc(data, l=None, *, ci_tol=None, alpha=None, max_cond=None,
           det_tol=None) -> DiscoveryResult:
    """Determinism-aware discovery from data: equivalence class only, no
    leaf labels.  The shared covariance is rank-deficient by construction,
    so tests with a determined endpoint are skipped rather than trusted."""
    X = _as_matrix(data)
    n_obs, n = X.shape
    cov = np.cov(X.T)
    l, auto = _resolve_leaf_count(n, l, cov, n_obs)
    fit = fa_fit(cov, n_obs, n - l, **_FA_KW)
    diagnostics = {"fa": _fa_diagnostics(fit, n), "leaf_count": l,
                   "auto_leaf_count": auto}
    shared = fit.L @ fit.L.T
    if det_tol is None:
        det_tol = default_determinism_tol(n, n_obs)
    oracle = _latent_oracle(shared, n_obs, alpha, ci_tol, det_tol)
    cpdag = dpc(oracle, max_cond=max_cond)
    return DiscoveryResult(cpdag=cpdag, leaf_set=frozenset(),
                           unique_variances=fit.psi, diagnostics=diagnostics)


def fa_dpc_oracle(model, *, max_cond=None) -> DiscoveryResult:
    """Determinism-aware discovery on the exact shared covariance."""
    canon = build_canonical(model)
    shared = latent_cov(canon)
    oracle = CiOracle.from_cov(shared, n_obs=None)
    cpdag = dpc(oracle, max_cond=max_cond)
    return DiscoveryResult(cpdag=cpdag, leaf_set=frozenset(),
                           unique_variances=np.asarray(canon.unique_variances),
                           diagnostics={"oracle": True})


def oica_rgd(data, l, *, use_equal_noise: bool = False, tol=None,
             max_cond=None, **oica_kwargs) -> RgdResult:
    """Non-Gaussian pipeline: estimate the shared mixing columns, decompose
    into ordered groups, label leaves, and (when fully resolved) rebuild the
    weighted graph.  ``use_equal_noise`` additionally applies the
    smallest-unique-variance rule, which is only sound when measurement
    noise magnitudes are equal."""
    X = _as_matrix(data)
    n = X.shape[1]
    l = int(l)
    if not 1 <= l <= n - 1:
        raise ConfigError(f"leaf count must lie in [1, {n - 1}], got {l}")
    est = oica_fit(X, n - l, **oica_kwargs)
    diagnostics = {"oica": {k: v for k, v in est.meta.items() if k != "ll_trace"},
                   "loglik": est.loglik, "converged": est.converged,
                   "leaf_count": l}
    groups = decompose(est, tol=tol)
    labeled = identify_leaves(
        groups, est, tol=tol, max_cond=max_cond,
        unique_variances=est.unique_variances if use_equal_noise else None)
    graph = None
    if labeled.resolved:
        graph = reconstruct_graph(labeled, est, tol=tol)
    else:
        diagnostics["warning"] = "some groups could not be fully labeled"
    return RgdResult(graph=graph, groups=labeled,
                     unique_variances=est.unique_variances,
                     diagnostics=diagnostics)


def oica_rgd_oracle(model, *, use_equal_noise: bool = False,
                    max_cond=None) -> RgdResult:
    """Non-Gaussian pipeline on the exact mixing columns."""
    canon = build_canonical(model)
    groups = decompose(canon)
    labeled = identify_leaves(
        groups, canon, max_cond=max_cond,
        unique_variances=canon.unique_variances if use_equal_noise else None)
    graph = None
    diagnostics = {"oracle": True}
    if labeled.resolved:
        graph = reconstruct_graph(labeled, canon, tol=ORACLE_TOLERANCES)
    else:
        diagnostics["warning"] = "some groups could not be fully labeled"
    return RgdResult(graph=graph, groups=labeled,
                     unique_variances=np.asarray(canon.unique_variances),
                     diagnostics=diagnostics)
