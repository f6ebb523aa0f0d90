"""Named example models shared by tests and the CLI registry.

Each builder returns a fresh ``NoisyModel``.  The ``bench-*`` family covers
the structural situations the discovery pipelines are graded on: a dense
eight-node benchmark whose every leaf is labelable, a star that stays
unresolved, a pair of six-node graphs differing in one edge, and an
eight-node graph that needs the forward-looking rule.  Structural noises are
uniform (non-Gaussian) so the higher-order pipeline applies; measurement
noise is Gaussian with equal variance so the second-order pipelines apply
too.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .graphs import NoiseSpec, NoisyModel, WeightedDag

__all__ = [
    "fork_model",
    "chain_model",
    "collider_model",
    "coupled_model",
    "bench_a",
    "bench_b",
    "bench_c",
    "bench_d",
    "bench_e",
    "FIXTURES",
    "get_fixture",
]


def _build(n, weighted_edges, variances, me, family="uniform"):
    sem = WeightedDag.from_edges(n, weighted_edges)
    specs = tuple(NoiseSpec(family, v) for v in variances)
    return NoisyModel(sem, specs, np.asarray(me, dtype=float))


def fork_model(rho_tilde: float = 0.6, gamma: float = 1.0,
               family: str = "gaussian") -> NoisyModel:
    """Common cause X2 of X1 and X3 with measurement noise on the centre only.

    Weights and variances are tuned so every noise-free variable has unit
    variance: corr(X1~, X2~) = rho_tilde and the observed correlation shrinks
    to rho_tilde/sqrt(1 + gamma^2) once X2 picks up measurement noise of
    variance gamma^2 (gamma is the noise-to-signal standard-deviation ratio
    on the centre node).
    """
    if not abs(rho_tilde) < 1:
        raise ConfigError("rho_tilde must lie in (-1, 1)")
    if gamma < 0:
        raise ConfigError("gamma must be nonnegative")
    edges = []
    if rho_tilde != 0:
        edges = [(1, 0, rho_tilde), (1, 2, rho_tilde)]
    outer = 1.0 - rho_tilde ** 2
    return _build(3, edges, (outer, 1.0, outer),
                  (0.0, gamma ** 2, 0.0), family)


def chain_model(weight: float = 0.8, me_variance: float = 0.3) -> NoisyModel:
    """Two-node chain X1 -> X2, uniform noises, equal measurement variance."""
    return _build(2, [(0, 1, weight)], (1.0, 1.0),
                  (me_variance, me_variance))


def collider_model(a: float = 1.0, b: float = 1.0,
                   me_variance: float = 1.0) -> NoisyModel:
    """X1 -> X2 <- X3 with unit-variance uniform noises.

    The three-variable workhorse: its mixing matrix restricted to shared
    sources is [[1, 0], [a, b], [0, 1]] and the combined unique noises have
    variances (me, me + 1, me).
    """
    if a == 0 or b == 0:
        raise ConfigError("collider weights must be nonzero")
    return _build(3, [(0, 1, a), (2, 1, b)], (1.0, 1.0, 1.0),
                  np.full(3, float(me_variance)))


def coupled_model() -> NoisyModel:
    """Five nodes where X4's shared part is a near-exact multiple of X3's.

    X3 = 0.6 X1 + 0.5 X2 + noise while X4 = 1.2 X1 + 1.0 X2 + (variance 1e-9
    noise), so within the shared-signal system conditioning on X3 pins X4
    numerically.  Exercises the determinism screen that plain conditional
    independence testing trips over.
    """
    edges = [
        (0, 1, 0.8),
        (0, 2, 0.6), (1, 2, 0.5),
        (0, 3, 1.2), (1, 3, 1.0),
        (3, 4, 0.7),
    ]
    return _build(5, edges, (1.0, 1.0, 1.0, 1e-9, 1.0), np.full(5, 0.3))


def bench_a() -> NoisyModel:
    """Eight nodes, half of them leaves, every leaf labelable.

    Non-leaf chain X1 -> X2 -> X3 -> X4 with leaves X5..X8 hanging off pairs
    of non-adjacent anchors; equal measurement variance 0.3 and distinct leaf
    noise variances keep both second-order pipelines in scope.
    """
    edges = [
        (0, 1, 0.8), (1, 2, 0.9), (2, 3, 0.75),
        (0, 4, 0.7), (1, 4, -0.6),
        (1, 5, 1.1), (2, 5, 0.7),
        (2, 6, 0.65), (3, 6, 0.9),
        (0, 7, 0.55), (3, 7, 0.8),
    ]
    variances = (1.0, 1.0, 1.0, 1.0, 0.6, 0.8, 1.0, 1.2)
    return _build(8, edges, variances, np.full(8, 0.3))


def bench_b() -> NoisyModel:
    """Star out of X1: a single recursive group that no rule can resolve."""
    edges = [(0, 1, 0.9), (0, 2, 0.7), (0, 3, -0.8)]
    return _build(4, edges, (1.0, 0.8, 1.0, 1.2), np.full(4, 0.3))


def bench_c() -> NoisyModel:
    """Six nodes, leaves X3 and X6; X3 falls only to the forward rule."""
    edges = [
        (0, 1, 0.9),
        (0, 2, 0.7), (1, 2, 0.8),
        (1, 3, -0.75), (1, 5, 0.65),
        (3, 4, 0.85), (4, 5, 0.7),
    ]
    variances = (1.0, 1.0, 0.9, 1.0, 1.0, 1.1)
    return _build(6, edges, variances, np.full(6, 0.3))


def bench_d() -> NoisyModel:
    """bench-c plus the extra edge X1 -> X6, thinning X3's forward witnesses."""
    edges = [
        (0, 1, 0.9),
        (0, 2, 0.7), (1, 2, 0.8),
        (1, 3, -0.75), (1, 5, 0.65),
        (3, 4, 0.85), (4, 5, 0.7),
        (0, 5, 0.6),
    ]
    variances = (1.0, 1.0, 0.9, 1.0, 1.0, 1.1)
    return _build(6, edges, variances, np.full(6, 0.3))


def bench_e() -> NoisyModel:
    """Eight nodes, leaves X4, X5, X8; X4 needs the forward rule via X7."""
    edges = [
        (0, 1, 0.85), (1, 2, 0.75),
        (1, 3, 0.8), (2, 3, 0.65),
        (0, 4, 0.6), (2, 4, 0.9),
        (1, 5, 0.6), (2, 5, 0.9),
        (0, 6, 0.55), (2, 6, -0.7),
        (5, 7, 0.7), (6, 7, 0.8),
    ]
    variances = (1.0, 1.0, 1.0, 0.8, 1.0, 1.0, 1.0, 1.2)
    return _build(8, edges, variances, np.full(8, 0.3))


FIXTURES = {
    "fork3": fork_model,
    "chain2": chain_model,
    "collider3": collider_model,
    "coupled5": coupled_model,
    "bench-a": bench_a,
    "bench-b": bench_b,
    "bench-c": bench_c,
    "bench-d": bench_d,
    "bench-e": bench_e,
}


def get_fixture(name: str) -> NoisyModel:
    try:
        builder = FIXTURES[name]
    except KeyError:
        known = ", ".join(sorted(FIXTURES))
        raise ConfigError(f"unknown fixture {name!r}; known: {known}") from None
    return builder()
