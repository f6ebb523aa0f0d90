"""Sampling, random model generation, and the closed-form distortion curves.

The two analytic curves describe what additive noise on a common cause does
to second-order statistics in the three-node fork: the marginal correlation
of a child with the noisy centre shrinks by ``1/sqrt(1 + gamma^2)`` while the
partial correlation of the two children given the centre, exactly zero
without noise, grows toward the noise-free ``rho_tilde^2`` as the centre
becomes pure noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError
from .graphs import (
    Dag,
    NoiseSpec,
    NoisyModel,
    WeightedDag,
    leaf_nodes,
    topological_order,
)

__all__ = [
    "Dataset",
    "RandomDagConfig",
    "sample_observations",
    "analytic_rho12",
    "analytic_rho13_2",
    "random_model",
    "emit_demo_data",
    "write_dataset_csv",
    "read_dataset_csv",
]


@dataclass(eq=False)
class Dataset:
    """Observed samples, one row per draw, one column per variable.

    ``latent`` optionally carries the noise-free values of the same draws for
    oracle-side evaluation; it is never written to disk by the CLI.
    """

    values: np.ndarray
    labels: tuple
    meta: dict = field(default_factory=dict)
    latent: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.labels = tuple(self.labels)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ConfigError("dataset values must be a nonempty 2-D array")
        if len(self.labels) != self.values.shape[1]:
            raise ConfigError("one label per column required")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("dataset contains non-finite entries")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


def _sample_noise(rng: np.random.Generator, spec: NoiseSpec, size: int) -> np.ndarray:
    v = spec.variance
    if spec.family == "gaussian":
        return rng.normal(0.0, math.sqrt(v), size)
    if spec.family == "uniform":
        half = math.sqrt(3.0 * v)
        return rng.uniform(-half, half, size)
    if spec.family == "laplace":
        return rng.laplace(0.0, math.sqrt(v / 2.0), size)
    if spec.family == "gmm":
        w0, w1, ratio = spec.params if spec.params else (0.5, 0.5, 3.0)
        # zero-mean two-component scale mixture with component sds 1 : ratio
        var0 = v / (w0 + w1 * ratio ** 2)
        sd = np.where(rng.random(size) < w0,
                      math.sqrt(var0), ratio * math.sqrt(var0))
        return rng.normal(0.0, 1.0, size) * sd
    raise ConfigError(f"unknown noise family {spec.family!r}")


def sample_observations(model: NoisyModel, n_samples: int, seed: int = 0,
                        include_latent: bool = False) -> Dataset:
    """Draw ``n_samples`` rows of the observed vector.

    Structural equations are solved in topological order; measurement noise
    is Gaussian with the per-variable variances stored on the model and is
    drawn independently of everything structural.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    dag = model.dag
    n = dag.n
    B = model.sem.B
    noise = np.column_stack([
        _sample_noise(rng, model.noise_specs[i], n_samples) for i in range(n)
    ])
    latent = np.empty_like(noise)
    for i in topological_order(dag):
        latent[:, i] = noise[:, i]
        for p in sorted(dag.parents(i)):
            latent[:, i] += B[i, p] * latent[:, p]
    observed = latent.copy()
    for i in range(n):
        if model.me_variances[i] > 0:
            observed[:, i] += rng.normal(0.0, math.sqrt(model.me_variances[i]),
                                         n_samples)
    meta = {"seed": seed, "model_hash": model.content_hash(),
            "n_samples": n_samples}
    return Dataset(observed, dag.labels, meta,
                   latent=latent if include_latent else None)


def analytic_rho12(rho_tilde: float, gamma: float) -> float:
    """Correlation of a fork child with the noise-contaminated centre."""
    _check_curve_args(rho_tilde, gamma)
    return rho_tilde / math.sqrt(1.0 + gamma ** 2)


def analytic_rho13_2(rho_tilde: float, gamma: float) -> float:
    """Partial correlation of the two fork children given the noisy centre.

    Zero when the centre is clean; increases with gamma and approaches
    ``rho_tilde**2`` as the centre's signal drowns.
    """
    _check_curve_args(rho_tilde, gamma)
    g2 = gamma ** 2
    return g2 * rho_tilde ** 2 / (1.0 + g2 - rho_tilde ** 2)


def _check_curve_args(rho_tilde, gamma):
    if not abs(rho_tilde) < 1:
        raise ConfigError("rho_tilde must lie in (-1, 1)")
    if gamma < 0:
        raise ConfigError("gamma must be nonnegative")


@dataclass(frozen=True)
class RandomDagConfig:
    """Knobs for random model generation.

    Non-leaf nodes come first in index (and topological) order; every leaf
    gets at least one non-leaf parent and every non-leaf at least one child,
    so the requested leaf count is realized exactly.  Coefficients are drawn
    with magnitude inside ``coef_range`` (bounded away from zero) and random
    sign.
    """

    n: int
    leaf_count: int
    density: float = 0.4
    coef_range: tuple = (0.3, 1.5)
    seed: int = 0
    family: str = "uniform"
    variance_range: tuple = (0.5, 1.5)
    me_variance: float = 0.3

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("need at least two nodes")
        if not 1 <= self.leaf_count < self.n:
            raise ConfigError(
                "leaf_count must be in [1, n): a DAG always has a sink, so "
                "zero leaves is infeasible")
        if not 0 < self.density <= 1:
            raise ConfigError("density must lie in (0, 1]")
        lo, hi = self.coef_range
        if not 0 < lo <= hi:
            raise ConfigError("coef_range must satisfy 0 < lo <= hi")
        if self.me_variance < 0:
            raise ConfigError("me_variance must be nonnegative")


def random_model(config: RandomDagConfig) -> NoisyModel:
    """Generate a reproducible random model under ``config``."""
    rng = np.random.default_rng(config.seed)
    n, l = config.n, config.leaf_count
    m = n - l
    lo, hi = config.coef_range

    def draw_weight():
        return (1 if rng.random() < 0.5 else -1) * rng.uniform(lo, hi)

    triples = []
    children = [0] * m
    for i in range(m):
        for j in range(i + 1, m):
            if rng.random() < config.density:
                triples.append((i, j, draw_weight()))
                children[i] += 1
    for j in range(m, n):
        parents = [i for i in range(m) if rng.random() < config.density]
        if not parents:
            parents = [int(rng.integers(m))]
        for i in parents:
            triples.append((i, j, draw_weight()))
            children[i] += 1
    for i in range(m):
        if children[i] == 0:
            j = int(rng.integers(m, n)) if l else int(rng.integers(i + 1, m))
            triples.append((i, j, draw_weight()))
            children[i] += 1

    sem = WeightedDag.from_edges(n, triples)
    variances = rng.uniform(*config.variance_range, n)
    specs = tuple(NoiseSpec(config.family, float(v)) for v in variances)
    model = NoisyModel(sem, specs, np.full(n, config.me_variance))
    assert leaf_nodes(model.dag) == frozenset(range(m, n))
    return model


def emit_demo_data(kind: str, **params):
    """Build one of the demonstration tables as ``(labels, rows)``.

    ``distortion``: grid of (gamma, observed correlation, observed partial
    correlation) for the fork model at a fixed ``rho_tilde``.

    ``residual``: samples of (noisy centre, child, OLS residual of the child
    on the noisy centre) with *all* noises uniform, so dependence between
    residual and regressor is visible to higher-order tests whenever
    ``gamma > 0``.
    """
    if kind == "distortion":
        rho_tilde = float(params.get("rho_tilde", 0.5))
        gammas = params.get("gammas")
        if gammas is None:
            gammas = np.linspace(0.0, 5.0, 51)
        rows = np.array([
            (g, analytic_rho12(rho_tilde, g), analytic_rho13_2(rho_tilde, g))
            for g in gammas
        ])
        return ("gamma", "rho12", "rho13_2"), rows
    if kind == "residual":
        rho_tilde = float(params.get("rho_tilde", 0.4))
        gamma = float(params.get("gamma", 1.4))
        n_samples = int(params.get("n_samples", 10000))
        seed = int(params.get("seed", 0))
        _check_curve_args(rho_tilde, gamma)
        rng = np.random.default_rng(seed)

        def uniform(var, size):
            half = math.sqrt(3.0 * var)
            return rng.uniform(-half, half, size)

        centre_clean = uniform(1.0, n_samples)
        child = rho_tilde * centre_clean + uniform(1.0 - rho_tilde ** 2,
                                                   n_samples)
        centre = centre_clean
        if gamma > 0:
            centre = centre_clean + uniform(gamma ** 2, n_samples)
        xc = centre - centre.mean()
        beta = float(xc @ (child - child.mean())) / float(xc @ xc)
        residual = child - beta * centre
        return ("X2", "X1", "residual"), np.column_stack(
            [centre, child, residual])
    raise ConfigError(f"unknown demo kind {kind!r}")


def write_dataset_csv(path, dataset: Dataset) -> None:
    frame = pd.DataFrame(dataset.values, columns=list(dataset.labels))
    frame.to_csv(path, index=False)


def read_dataset_csv(path) -> Dataset:
    frame = pd.read_csv(path)
    return Dataset(frame.to_numpy(dtype=float), tuple(frame.columns),
                   {"source": str(path)})
