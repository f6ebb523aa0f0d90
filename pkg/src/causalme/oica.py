"""Constrained overcomplete ICA: estimate the non-leaf mixing columns from
contaminated non-Gaussian data.

The generative model fitted here is ``x = A s + e`` with r shared sources
and a full diagonal Gaussian remainder — the remainder column block is an
identity by construction, which is what makes the overcomplete problem
(r + n sources, n observations) well posed.  Each shared source is a
zero-mean two-component Gaussian mixture, so the complete-data problem is a
finite mixture over the 2^r component configurations and EM steps are exact.

Estimates carry the usual indeterminacy: column order and scale mean
nothing.  Columns are therefore normalized (unit norm, largest-magnitude
entry positive) with the scale folded into the source parameters, and
``align_columns`` evaluates estimates against references modulo exactly
that indeterminacy.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import ConfigError, ConvergenceError
from .factor import fa_fit

__all__ = [
    "SourceMixture",
    "MixingEstimate",
    "oica_fit",
    "align_columns",
    "nongaussianity_screen",
]

_FLOOR = 1e-3


@dataclass(frozen=True)
class SourceMixture:
    """Two-component Gaussian mixture for one shared source (zero mean)."""

    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        if len(self.weights) != len(self.means) or len(self.means) != len(self.variances):
            raise ConfigError("mixture parameter lengths differ")
        if any(v <= 0 for v in self.variances) or any(w <= 0 for w in self.weights):
            raise ConfigError("mixture weights and variances must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-8:
            raise ConfigError("mixture weights must sum to one")

    @property
    def variance(self) -> float:
        mu = sum(w * m for w, m in zip(self.weights, self.means))
        second = sum(w * (m * m + v) for w, m, v in
                     zip(self.weights, self.means, self.variances))
        return second - mu * mu

    def scaled(self, c: float) -> "SourceMixture":
        return SourceMixture(
            weights=self.weights,
            means=tuple(m * c for m in self.means),
            variances=tuple(v * c * c for v in self.variances))


@dataclass(eq=False)
class MixingEstimate:
    """Fitted shared-signal mixing: unit-norm sign-fixed columns, per-node
    remainder variances, and the per-source mixture parameters (with the
    column scales folded in)."""

    loadings: np.ndarray
    unique_variances: np.ndarray
    source_params: tuple
    loglik: float
    n_obs: int
    converged: bool
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        L = np.asarray(self.loadings, dtype=float)
        # a shared column per non-leaf and every graph has a leaf, so r < n
        if L.ndim != 2 or L.shape[1] >= L.shape[0]:
            raise ConfigError("loadings must be n x r with r < n")
        self.loadings = L
        self.unique_variances = np.asarray(self.unique_variances, dtype=float)

    @property
    def n(self) -> int:
        return self.loadings.shape[0]

    @property
    def r(self) -> int:
        return self.loadings.shape[1]

    @property
    def source_std(self) -> np.ndarray:
        return np.sqrt([sm.variance for sm in self.source_params])

    def to_json(self) -> dict:
        return {
            "loadings": self.loadings.tolist(),
            "unique_variances": self.unique_variances.tolist(),
            "source_params": [{"weights": list(sm.weights),
                               "means": list(sm.means),
                               "variances": list(sm.variances)}
                              for sm in self.source_params],
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_model(cls, model) -> "MixingEstimate":
        """Population bypass: package a model's exact shared-mixing columns
        so downstream consumers can run without an actual fit.  Source
        mixtures are symmetric stand-ins with the exact variances."""
        from .graphs import build_canonical

        canon = model if hasattr(model, "loadings") else build_canonical(model)
        A = np.array(canon.loadings, dtype=float)
        sources = []
        for j in range(A.shape[1]):
            var = float(canon.source_variances[j])
            nrm = float(np.linalg.norm(A[:, j]))
            if nrm > 0:
                k = int(np.argmax(np.abs(A[:, j])))
                sgn = 1.0 if A[k, j] > 0 else -1.0
                A[:, j] *= sgn / nrm
                var *= nrm * nrm
            sources.append(SourceMixture(
                weights=(0.5, 0.5),
                means=(0.8 * math.sqrt(var), -0.8 * math.sqrt(var)),
                variances=(0.36 * var, 0.36 * var)))
        return cls(loadings=A, unique_variances=np.array(canon.unique_variances,
                                                         dtype=float),
                   source_params=tuple(sources), loglik=float("nan"),
                   n_obs=0, converged=True, meta={"oracle": True})

    @classmethod
    def from_json(cls, obj) -> "MixingEstimate":
        return cls(
            loadings=np.asarray(obj["loadings"], dtype=float),
            unique_variances=np.asarray(obj["unique_variances"], dtype=float),
            source_params=tuple(SourceMixture(weights=tuple(sm["weights"]),
                                              means=tuple(sm["means"]),
                                              variances=tuple(sm["variances"]))
                                for sm in obj["source_params"]),
            loglik=float(obj["loglik"]),
            n_obs=int(obj["n_obs"]),
            converged=bool(obj["converged"]),
            meta=dict(obj.get("meta", {})),
        )


def nongaussianity_screen(data, z_scale: float = 4.0):
    """Per-variable excess kurtosis with a sample-size-adaptive Gaussian band.

    Returns ``(excess, gaussian_mask, note)``; a variable inside the band is
    consistent with Gaussian marginals.  When every variable sits inside,
    the note warns that non-Gaussian recovery is unreliable.
    """
    X = _as_matrix(data)
    N = X.shape[0]
    if N < 100:
        raise ConfigError("need at least 100 samples for the kurtosis screen")
    Xc = X - X.mean(axis=0)
    m2 = np.mean(Xc ** 2, axis=0)
    m4 = np.mean(Xc ** 4, axis=0)
    excess = m4 / np.maximum(m2 ** 2, 1e-300) - 3.0
    band = z_scale * math.sqrt(24.0 / N)
    mask = np.abs(excess) < band
    note = None
    if mask.all():
        note = ("every variable is consistent with Gaussian marginals; "
                "mixing recovery from higher-order structure is unreliable")
    return excess, mask, note


def align_columns(est: np.ndarray, reference: np.ndarray):
    """Match estimated columns to reference columns modulo order and scale.

    Each candidate pairing is scored by the residual after the best scalar
    multiple; a globally optimal assignment is then chosen.  Returns
    ``(permutation, scales, max_abs_error)`` such that
    ``est[:, permutation] * scales`` approximates ``reference`` with the
    reported worst-case entry error.
    """
    E = np.asarray(est, dtype=float)
    R = np.asarray(reference, dtype=float)
    if E.shape != R.shape:
        raise ConfigError("estimate and reference must share a shape")
    r = E.shape[1]
    cost = np.empty((r, r))
    scale = np.empty((r, r))
    for i in range(r):  # reference column
        for j in range(r):  # estimated column
            denom = float(E[:, j] @ E[:, j])
            s = float(E[:, j] @ R[:, i]) / denom if denom > 0 else 0.0
            scale[i, j] = s
            cost[i, j] = float(np.sum((s * E[:, j] - R[:, i]) ** 2))
    ref_idx, est_idx = linear_sum_assignment(cost)
    perm = np.empty(r, dtype=int)
    scales = np.empty(r)
    for i, j in zip(ref_idx, est_idx):
        perm[i] = j
        scales[i] = scale[i, j]
    err = float(np.max(np.abs(E[:, perm] * scales - R))) if r else 0.0
    return perm, scales, err


def _as_matrix(data) -> np.ndarray:
    values = getattr(data, "values", data)
    X = np.asarray(values, dtype=float)
    if X.ndim != 2:
        raise ConfigError("data must be a 2-d sample matrix")
    return X


def _ica_rotation(Z: np.ndarray, n_iter: int = 60) -> np.ndarray:
    """Deterministic kurtosis-based rotation search on whitened scores."""
    r = Z.shape[1]
    W = np.eye(r)
    for _ in range(n_iter):
        Y = Z @ W.T
        W_new = (Y ** 3).T @ Z / Z.shape[0] - 3.0 * W
        u, _, vt = np.linalg.svd(W_new)
        W_sym = u @ vt
        if np.abs(W_sym - W).max() < 1e-8:
            W = W_sym
            break
        W = W_sym
    return W


def _init_params(X: np.ndarray, r: int, start: int, rng: np.random.Generator):
    N, n = X.shape
    S = np.cov(X.T) if n > 1 else np.atleast_2d(np.var(X))
    fa = fa_fit(S, N, r, strict=False)
    if start == 0:
        beta = np.linalg.solve(fa.L @ fa.L.T + np.diag(fa.psi), fa.L).T
        F = X @ beta.T
        covF = np.cov(F.T) if r > 1 else np.atleast_2d(np.var(F))
        w, V = np.linalg.eigh(covF)
        K = V @ np.diag(1.0 / np.sqrt(np.clip(w, 1e-12, None))) @ V.T
        Z = F @ K.T
        rot = _ica_rotation(Z)
        A = fa.L @ np.linalg.inv(K) @ rot.T
    else:
        q, _ = np.linalg.qr(rng.standard_normal((r, r)))
        A = fa.L @ q
        A = A + 0.1 * rng.standard_normal(A.shape) * max(np.abs(A).max(), 1e-6)
    psi = np.maximum(fa.psi, _FLOOR * S.diagonal().max())
    sources = tuple(
        SourceMixture(weights=(0.5, 0.5), means=(0.8, -0.8),
                      variances=(0.36, 0.36))
        for _ in range(r))
    return A, psi, sources


def _em(X, A, psi, sources, max_iter, rel_tol, floor_scale):
    """EM for the mixture-of-configurations model; returns updated params,
    final loglik and iteration count."""
    N, n = X.shape
    r = A.shape[1]
    configs = list(itertools.product(range(2), repeat=r))
    C = len(configs)
    prev = -np.inf
    ll = -np.inf
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        logp = np.empty((N, C))
        stats = []
        for ci, cfg in enumerate(configs):
            w = np.array([sources[j].weights[cfg[j]] for j in range(r)])
            m = np.array([sources[j].means[cfg[j]] for j in range(r)])
            v = np.array([sources[j].variances[cfg[j]] for j in range(r)])
            sigma = A @ (v[:, None] * A.T) + np.diag(psi)
            sign, logdet = np.linalg.slogdet(sigma)
            Xc = X - A @ m
            sol = np.linalg.solve(sigma, Xc.T)
            quad = np.einsum("ij,ji->i", Xc, sol)
            logp[:, ci] = (np.log(w).sum()
                           - 0.5 * (n * math.log(2 * math.pi) + logdet + quad))
            # posterior moments of s given x and this configuration
            prec = (A.T * (1.0 / psi)) @ A + np.diag(1.0 / v)
            W = np.linalg.inv(prec)
            M = W @ (A.T * (1.0 / psi))
            mus = m + Xc @ M.T
            stats.append((m, v, W, mus))
        norm = logsumexp(logp, axis=1)
        ll = float(np.sum(norm))
        trace.append(ll)
        if it > 1 and ll - prev <= rel_tol * abs(prev):
            return A, psi, sources, ll, it, True, trace
        prev = ll
        gamma = np.exp(logp - norm[:, None])

        Sxs = np.zeros((n, r))
        Sss = np.zeros((r, r))
        mass = np.zeros((r, 2))
        msum = np.zeros((r, 2))
        ssum = np.zeros((r, 2))
        for ci, cfg in enumerate(configs):
            g = gamma[:, ci]
            tot = float(g.sum())
            _, _, W, mus = stats[ci]
            gm = g[:, None] * mus
            Sxs += X.T @ gm
            Sss += tot * W + mus.T @ gm
            for j in range(r):
                k = cfg[j]
                mass[j, k] += tot
                msum[j, k] += float(gm[:, j].sum())
                ssum[j, k] += tot * W[j, j] + float(g @ (mus[:, j] ** 2))
        A = np.linalg.solve(Sss.T, Sxs.T).T
        Sxx = X.T @ X
        psi_new = np.diag(Sxx - A @ Sxs.T) / N
        floor = floor_scale * float(np.max(np.diag(Sxx)) / N)
        psi = np.clip(psi_new, floor, None)

        new_sources = []
        for j in range(r):
            wj = np.maximum(mass[j] / N, _FLOOR)
            wj = wj / wj.sum()
            mbar = msum[j] / np.maximum(mass[j], 1e-12)
            # zero-mixture-mean constraint via exact Lagrange step
            vj_old = np.array(sources[j].variances)
            denom = float(np.sum(wj ** 2 * vj_old / np.maximum(mass[j], 1e-12)))
            lam = float(wj @ mbar) / max(denom, 1e-300)
            mj = mbar - lam * wj * vj_old / np.maximum(mass[j], 1e-12)
            es2 = ssum[j] / np.maximum(mass[j], 1e-12)
            vj = es2 - 2 * mj * mbar + mj ** 2
            var_floor = _FLOOR * max(float(sources[j].variance), 1e-6)
            vj = np.clip(vj, var_floor, None)
            new_sources.append(SourceMixture(weights=tuple(wj), means=tuple(mj),
                                             variances=tuple(vj)))
        sources = tuple(new_sources)
    return A, psi, sources, ll, it, False, trace


def _normalize(A, psi, sources):
    A = A.copy()
    out = []
    for j in range(A.shape[1]):
        nrm = float(np.linalg.norm(A[:, j]))
        if nrm <= 0:
            out.append(sources[j])
            continue
        k = int(np.argmax(np.abs(A[:, j])))
        sgn = 1.0 if A[k, j] > 0 else -1.0
        A[:, j] *= sgn / nrm
        out.append(sources[j].scaled(sgn * nrm))
    return A, psi, tuple(out)


def oica_fit(data, r: int, *, n_starts: int = 10, max_iter: int = 400,
             screen_iter: int = 30, screen_subsample: int = 50_000,
             subsample: int = 200_000, rel_tol: float = 1e-7,
             seed: int = 0, strict: bool = False) -> MixingEstimate:
    """Fit the r shared mixing columns by multi-start EM.

    Every start is screened with a short run on a capped subsample; the best
    screening likelihood (ties to the lowest start index) gets the full run.
    Start 0 seeds the loadings from a factor fit rotated to maximize source
    kurtosis, so the default path is deterministic; remaining starts perturb
    it.  ``strict`` turns a non-converged full run into an error carrying
    the best iterate.
    """
    X = _as_matrix(data)
    N, n = X.shape
    if not 1 <= r <= n - 1:
        raise ConfigError(f"source count must lie in [1, {n - 1}], got {r}")
    if n_starts < 1:
        raise ConfigError("n_starts must be positive")
    X = X - X.mean(axis=0)
    rng = np.random.default_rng(seed)
    full_idx = rng.choice(N, size=min(N, subsample), replace=False) \
        if N > subsample else np.arange(N)
    Xfull = X[full_idx]
    screen_idx = np.arange(Xfull.shape[0])
    if Xfull.shape[0] > screen_subsample:
        screen_idx = rng.choice(Xfull.shape[0], size=screen_subsample,
                                replace=False)
    Xs = Xfull[screen_idx]

    excess, gaussian_mask, note = nongaussianity_screen(X) if N >= 100 \
        else (np.zeros(n), np.zeros(n, dtype=bool), "")

    best = None
    for start in range(n_starts):
        A0, psi0, src0 = _init_params(Xs, r, start, rng)
        cand = _em(Xs, A0, psi0, src0, screen_iter, rel_tol, _FLOOR)
        score = cand[3] / Xs.shape[0]
        if best is None or score > best[0] + 1e-12:
            best = (score, start, cand)
    _, start_idx, (A, psi, sources, _, _, _, _) = best
    A, psi, sources, ll, n_iter, converged, trace = _em(
        Xfull, A, psi, sources, max_iter, rel_tol, _FLOOR)
    A, psi, sources = _normalize(A, psi, sources)

    meta = {
        "n_starts": n_starts,
        "chosen_start": start_idx,
        "n_iter": n_iter,
        "n_used": int(Xfull.shape[0]),
        "excess_kurtosis": [float(e) for e in excess],
        "ll_trace": trace,
    }
    if note:
        meta["warning"] = note
    est = MixingEstimate(loadings=A, unique_variances=psi,
                         source_params=sources, loglik=ll,
                         n_obs=int(Xfull.shape[0]), converged=converged,
                         meta=meta)
    if strict and not converged:
        raise ConvergenceError(
            f"mixing estimation did not converge in {max_iter} iterations",
            best=est)
    return est
