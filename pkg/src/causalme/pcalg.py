"""Constraint-based structure search over a conditional-independence oracle.

``pc`` is the stable-skeleton variant: edge removals within one conditioning
level are deferred until the level finishes, so the result does not depend
on variable order.  ``dpc`` additionally skips any test whose endpoint is
determined by the conditioning set — on rank-deficient covariances those
tests are meaningless (zero residual variance) and evaluating them would
poison the skeleton.

Both return a CPDAG: v-structures from separating sets, then Meek closure.
"""

from __future__ import annotations

import itertools

from .citest import CiOracle
from .errors import ConfigError
from .graphs import Cpdag, meek_closure

__all__ = ["pc", "dpc"]


def _skeleton(oracle: CiOracle, max_cond: int | None, skip_determined: bool):
    n = oracle.n
    adj = [set(range(n)) - {i} for i in range(n)]
    sepsets: dict[frozenset, tuple] = {}
    level = 0
    while True:
        if max_cond is not None and level > max_cond:
            break
        snapshot = [frozenset(a) for a in adj]
        if all(len(snapshot[i] - {j}) < level
               for i in range(n) for j in snapshot[i]):
            break
        to_remove = set()
        for i in range(n):
            for j in sorted(snapshot[i]):
                if j <= i or frozenset((i, j)) in to_remove:
                    continue
                found = _find_sepset(oracle, i, j, snapshot, level,
                                     skip_determined)
                if found is not None:
                    to_remove.add(frozenset((i, j)))
                    sepsets.setdefault(frozenset((i, j)), found)
        for pair in to_remove:
            a, b = tuple(pair)
            adj[a].discard(b)
            adj[b].discard(a)
        level += 1
    return adj, sepsets


def _find_sepset(oracle, i, j, snapshot, level, skip_determined):
    # candidate sets come from either endpoint's neighbourhood, smallest
    # lexicographic first; duplicates tested once
    seen = set()
    for base in (snapshot[i] - {j}, snapshot[j] - {i}):
        for S in itertools.combinations(sorted(base), level):
            if S in seen:
                continue
            seen.add(S)
            if skip_determined and (oracle.determined(i, S)
                                    or oracle.determined(j, S)):
                continue
            if oracle.independent(i, j, S):
                return S
    return None


def _orient(n: int, adj, sepsets):
    directed: set = set()
    undirected = {(min(a, b), max(a, b)) for a in range(n) for b in adj[a] if a < b}
    for k in range(n):
        for i, j in itertools.combinations(sorted(adj[k]), 2):
            if j in adj[i]:
                continue
            sep = sepsets.get(frozenset((i, j)))
            if sep is None or k in sep:
                continue
            for tail in (i, j):
                key = (min(tail, k), max(tail, k))
                if key in undirected:
                    undirected.discard(key)
                    directed.add((tail, k))
                # first orientation wins; a conflicting later v-structure
                # leaves the existing arrow in place
    directed, undirected = meek_closure(n, directed, undirected)
    return Cpdag(n=n, directed=frozenset(directed),
                 undirected=frozenset(tuple(sorted(e)) for e in undirected))


def pc(oracle: CiOracle, max_cond: int | None = None) -> Cpdag:
    """PC-stable over the oracle's independence relation."""
    if max_cond is not None and max_cond < 0:
        raise ConfigError("max_cond must be non-negative")
    adj, sepsets = _skeleton(oracle, max_cond, skip_determined=False)
    return _orient(oracle.n, adj, sepsets)


def dpc(oracle: CiOracle, max_cond: int | None = None) -> Cpdag:
    """PC-stable that refuses tests with a determined endpoint.

    Intended for covariances of the shared-signal part of the data, where
    leaf variables are exact linear functions of their parents and classic
    PC would divide by a zero residual variance.
    """
    if max_cond is not None and max_cond < 0:
        raise ConfigError("max_cond must be non-negative")
    adj, sepsets = _skeleton(oracle, max_cond, skip_determined=True)
    return _orient(oracle.n, adj, sepsets)
