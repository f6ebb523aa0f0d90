"""Graph and model types: DAGs, weighted linear SEMs, noisy observation models,
their canonical factor form, and CPDAG equivalence classes.

The observation model is ``X_i = Z_i + E_i`` where the latent ``Z`` follows a
linear SEM ``Z = B Z + e`` over a DAG and ``E_i`` is independent measurement
noise.  Solving the SEM gives ``Z = A e`` with ``A = (I - B)^{-1}``.  Splitting
``e`` into the noises of non-leaf nodes (shared across variables) and leaf
nodes (private to one variable) rewrites the observed vector as

    X = L s + u,

a factor model whose loading matrix ``L`` keeps the non-leaf columns of ``A``
and whose unique noise ``u`` absorbs each leaf's own noise together with all
measurement noise.  ``CanonicalRep`` stores that form; downstream estimators
recover it from data and invert it back to the SEM.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import GraphError

__all__ = [
    "Dag",
    "WeightedDag",
    "NoiseSpec",
    "NoisyModel",
    "CanonicalRep",
    "Cpdag",
    "topological_order",
    "leaf_nodes",
    "mixing_matrix",
    "build_canonical",
    "observed_cov",
    "latent_cov",
    "d_separated",
    "v_structures",
    "meek_closure",
    "cpdag_of",
    "leaf_augmented_cpdag",
    "model_to_json",
    "model_from_json",
    "dag_to_dot",
]

NOISE_FAMILIES = ("gaussian", "uniform", "laplace", "gmm")


def _default_labels(n: int) -> tuple[str, ...]:
    return tuple(f"X{i + 1}" for i in range(n))


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph on nodes ``0..n-1``.

    Parameters
    ----------
    n : int
        Node count.
    edges : iterable of (int, int)
        Ordered pairs ``(parent, child)``.
    labels : sequence of str, optional
        Per-node display names; defaults to ``X1..Xn``.
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)
    labels: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "edges", frozenset((int(u), int(v)) for u, v in self.edges))
        if not self.labels:
            object.__setattr__(self, "labels", _default_labels(self.n))
        else:
            object.__setattr__(self, "labels", tuple(self.labels))
        if self.n < 0:
            raise GraphError("node count must be nonnegative")
        if len(self.labels) != self.n:
            raise GraphError(f"expected {self.n} labels, got {len(self.labels)}")
        for u, v in self.edges:
            if u == v:
                raise GraphError(f"self-edge at node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={self.n}")
        topological_order(self)  # raises on cycles

    @cached_property
    def parent_sets(self) -> tuple[frozenset, ...]:
        out = [set() for _ in range(self.n)]
        for u, v in self.edges:
            out[v].add(u)
        return tuple(frozenset(s) for s in out)

    @cached_property
    def child_sets(self) -> tuple[frozenset, ...]:
        out = [set() for _ in range(self.n)]
        for u, v in self.edges:
            out[u].add(v)
        return tuple(frozenset(s) for s in out)

    def parents(self, i: int) -> frozenset:
        return self.parent_sets[i]

    def children(self, i: int) -> frozenset:
        return self.child_sets[i]

    def adjacent(self, i: int, j: int) -> bool:
        return (i, j) in self.edges or (j, i) in self.edges


def topological_order(dag: Dag) -> list[int]:
    """Return a topological order (lowest index first among ties).

    Raises
    ------
    GraphError
        If the edge set contains a directed cycle.
    """
    indeg = [0] * dag.n
    children: list[list[int]] = [[] for _ in range(dag.n)]
    for u, v in dag.edges:
        indeg[v] += 1
        children[u].append(v)
    ready = sorted(i for i in range(dag.n) if indeg[i] == 0)
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for c in sorted(children[node]):
            indeg[c] -= 1
            if indeg[c] == 0:
                # insertion keeps `ready` sorted; graphs here are small
                ready.append(c)
        ready.sort()
    if len(order) != dag.n:
        raise GraphError("graph contains a directed cycle")
    return order


def leaf_nodes(dag: Dag) -> frozenset:
    """Nodes with no outgoing edge (isolated nodes included)."""
    return frozenset(i for i in range(dag.n) if not dag.children(i))


@dataclass(frozen=True, eq=False)
class WeightedDag:
    """A linear SEM: DAG plus coefficient matrix.

    ``B[i, j]`` is the direct effect of node ``j`` on node ``i``; it is nonzero
    exactly when the edge ``j -> i`` exists.
    """

    dag: Dag
    B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        object.__setattr__(self, "B", B)
        n = self.dag.n
        if B.shape != (n, n):
            raise GraphError(f"B must be {n}x{n}, got {B.shape}")
        if np.any(np.diag(B) != 0):
            raise GraphError("B has a nonzero diagonal entry")
        for i in range(n):
            for j in range(n):
                has_edge = (j, i) in self.dag.edges
                if has_edge and B[i, j] == 0:
                    raise GraphError(f"edge {j}->{i} declared but B[{i},{j}] = 0")
                if not has_edge and B[i, j] != 0:
                    raise GraphError(f"B[{i},{j}] nonzero without edge {j}->{i}")
        B.setflags(write=False)

    @classmethod
    def from_edges(cls, n: int, weighted_edges: Iterable[tuple[int, int, float]],
                   labels: Sequence[str] | None = None) -> "WeightedDag":
        """Build from ``(parent, child, weight)`` triples."""
        B = np.zeros((n, n))
        edges = []
        for u, v, w in weighted_edges:
            edges.append((u, v))
            B[v, u] = w
        return cls(Dag(n, frozenset(edges), tuple(labels) if labels else ()), B)


def mixing_matrix(sem: WeightedDag) -> np.ndarray:
    """Solve the SEM for its noise representation: ``A = (I - B)^{-1}``.

    Acyclicity makes ``I - B`` invertible (unit-triangular under a topological
    permutation), so each latent variable is the ``A``-weighted sum of the
    noises of its ancestors and itself.
    """
    n = sem.dag.n
    eye = np.eye(n)
    try:
        A = np.linalg.solve(eye - sem.B, eye)
    except np.linalg.LinAlgError as exc:  # unreachable for a validated DAG
        raise GraphError("I - B is singular") from exc
    return A


@dataclass(frozen=True)
class NoiseSpec:
    """Descriptor of one zero-mean noise distribution.

    ``family`` is one of ``gaussian``, ``uniform``, ``laplace``, or ``gmm``
    (two-component Gaussian scale mixture).  ``variance`` is the realized
    second moment; ``params`` holds family-specific shape values (for ``gmm``:
    ``weights`` and ``sd_ratio``).
    """

    family: str
    variance: float
    params: tuple = ()

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise GraphError(f"unknown noise family {self.family!r}")
        if not self.variance > 0:
            raise GraphError("noise variance must be strictly positive")
        object.__setattr__(self, "params", tuple(self.params))

    @classmethod
    def gaussian(cls, variance: float = 1.0) -> "NoiseSpec":
        return cls("gaussian", variance)

    @classmethod
    def uniform(cls, variance: float = 1.0) -> "NoiseSpec":
        return cls("uniform", variance)

    @classmethod
    def laplace(cls, variance: float = 1.0) -> "NoiseSpec":
        return cls("laplace", variance)

    @classmethod
    def gmm(cls, variance: float = 1.0, weights: tuple[float, float] = (0.5, 0.5),
            sd_ratio: float = 3.0) -> "NoiseSpec":
        return cls("gmm", variance, (float(weights[0]), float(weights[1]), float(sd_ratio)))


@dataclass(frozen=True, eq=False)
class NoisyModel:
    """Linear SEM observed through independent additive measurement noise.

    Measurement-noise variances may be zero (noise-free pedagogical fixtures);
    structural noise variances must be strictly positive.
    """

    sem: WeightedDag
    noise_specs: tuple
    me_variances: np.ndarray

    def __post_init__(self):
        n = self.sem.dag.n
        specs = tuple(self.noise_specs)
        object.__setattr__(self, "noise_specs", specs)
        if len(specs) != n:
            raise GraphError(f"expected {n} noise specs, got {len(specs)}")
        me = np.asarray(self.me_variances, dtype=float)
        object.__setattr__(self, "me_variances", me)
        if me.shape != (n,):
            raise GraphError(f"me_variances must have shape ({n},)")
        if np.any(me < 0):
            raise GraphError("measurement-noise variances must be nonnegative")
        me.setflags(write=False)

    @property
    def dag(self) -> Dag:
        return self.sem.dag

    @property
    def n(self) -> int:
        return self.sem.dag.n

    @cached_property
    def noise_variances(self) -> np.ndarray:
        v = np.array([s.variance for s in self.noise_specs])
        v.setflags(write=False)
        return v

    def content_hash(self) -> str:
        """Stable hash of the model content, used in dataset metadata."""
        payload = json.dumps(model_to_json(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class CanonicalRep:
    """Factor form of a noisy model: ``X = loadings @ s + u``.

    ``loadings`` keeps one column per non-leaf node (that node's structural
    noise, a shared source); ``unique_variances[i]`` is the variance of the
    independent noise left on variable ``i`` — its measurement noise, plus its
    own structural noise when ``i`` is a leaf.  ``source_order`` records which
    non-leaf owns each column.
    """

    loadings: np.ndarray
    leaf_set: frozenset
    unique_variances: np.ndarray
    source_variances: np.ndarray
    source_order: tuple

    def __post_init__(self):
        L = np.asarray(self.loadings, dtype=float)
        uv = np.asarray(self.unique_variances, dtype=float)
        sv = np.asarray(self.source_variances, dtype=float)
        object.__setattr__(self, "loadings", L)
        object.__setattr__(self, "unique_variances", uv)
        object.__setattr__(self, "source_variances", sv)
        object.__setattr__(self, "leaf_set", frozenset(self.leaf_set))
        object.__setattr__(self, "source_order", tuple(self.source_order))
        n, r = L.shape
        if uv.shape != (n,) or sv.shape != (r,) or len(self.source_order) != r:
            raise GraphError("canonical representation shapes are inconsistent")
        for arr in (L, uv, sv):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.loadings.shape[0]

    @property
    def r(self) -> int:
        return self.loadings.shape[1]

    @property
    def nonleaf_order(self) -> tuple:
        return self.source_order

    @cached_property
    def leaf_selector(self) -> np.ndarray:
        """n x l 0/1 matrix whose columns select the leaf variables."""
        leaves = sorted(self.leaf_set)
        sel = np.zeros((self.n, len(leaves)))
        for k, i in enumerate(leaves):
            sel[i, k] = 1.0
        sel.setflags(write=False)
        return sel


def build_canonical(model: NoisyModel) -> CanonicalRep:
    """Rewrite a noisy model in its observationally equivalent factor form.

    Leaf nodes' structural noises are private (they feed no other variable),
    so they move into the unique-noise term together with all measurement
    noise; the remaining shared structure is the non-leaf columns of the
    mixing matrix.  An isolated node contributes an all-zero row (its shared
    part is identically zero).
    """
    dag = model.dag
    leaves = leaf_nodes(dag)
    nonleaves = tuple(i for i in range(dag.n) if i not in leaves)
    A = mixing_matrix(model.sem)
    unique = model.me_variances.copy()
    for i in leaves:
        unique[i] += model.noise_specs[i].variance
    return CanonicalRep(
        loadings=A[:, list(nonleaves)],
        leaf_set=leaves,
        unique_variances=unique,
        source_variances=model.noise_variances[list(nonleaves)],
        source_order=nonleaves,
    )


def observed_cov(model: NoisyModel) -> np.ndarray:
    """Population covariance of the observed vector."""
    A = mixing_matrix(model.sem)
    return A @ np.diag(model.noise_variances) @ A.T + np.diag(model.me_variances)


def latent_cov(canon: CanonicalRep) -> np.ndarray:
    """Population covariance of the shared (measurement-noise-free) part."""
    return canon.loadings @ np.diag(canon.source_variances) @ canon.loadings.T


def d_separated(dag: Dag, i: int, j: int, S: Iterable[int]) -> bool:
    """True iff every path between ``i`` and ``j`` is blocked by ``S``.

    Active-trail reachability: walk the graph keeping track of the direction
    of arrival, descending through non-conditioned nodes and turning upward
    only at colliders whose descendants meet ``S``.
    """
    S = frozenset(S)
    if i == j or i in S or j in S:
        raise GraphError("endpoints must be distinct and outside the conditioning set")

    # ancestors of S, inclusive
    anc = set(S)
    stack = list(S)
    while stack:
        node = stack.pop()
        for p in dag.parents(node):
            if p not in anc:
                anc.add(p)
                stack.append(p)

    up, down = 0, 1
    visited = set()
    frontier = [(i, up)]
    while frontier:
        node, direction = frontier.pop()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node == j and node not in S:
            return False
        if direction == up and node not in S:
            for p in dag.parents(node):
                frontier.append((p, up))
            for c in dag.children(node):
                frontier.append((c, down))
        elif direction == down:
            if node not in S:
                for c in dag.children(node):
                    frontier.append((c, down))
            if node in anc:
                for p in dag.parents(node):
                    frontier.append((p, up))
    return True


def v_structures(dag: Dag) -> frozenset:
    """Colliders ``a -> c <- b`` with non-adjacent ``a, b``, as (a, c, b), a < b."""
    out = set()
    for c in range(dag.n):
        ps = sorted(dag.parents(c))
        for x in range(len(ps)):
            for y in range(x + 1, len(ps)):
                a, b = ps[x], ps[y]
                if not dag.adjacent(a, b):
                    out.add((a, c, b))
    return frozenset(out)


@dataclass(frozen=True)
class Cpdag:
    """Partially directed graph standing for a Markov equivalence class."""

    n: int
    directed: frozenset = field(default_factory=frozenset)
    undirected: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        d = frozenset((int(u), int(v)) for u, v in self.directed)
        u_ = frozenset((min(int(a), int(b)), max(int(a), int(b))) for a, b in self.undirected)
        object.__setattr__(self, "directed", d)
        object.__setattr__(self, "undirected", u_)
        for a, b in d | u_:
            if a == b:
                raise GraphError(f"self-edge at node {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise GraphError(f"edge ({a}, {b}) out of range")
        for u, v in d:
            if (min(u, v), max(u, v)) in u_ or (v, u) in d:
                raise GraphError(f"conflicting marks on pair ({u}, {v})")

    def edge_mark(self, a: int, b: int) -> str:
        """Mark on the unordered pair: '>', '<', '-', or '' (absent)."""
        if (a, b) in self.directed:
            return ">"
        if (b, a) in self.directed:
            return "<"
        if (min(a, b), max(a, b)) in self.undirected:
            return "-"
        return ""

    def skeleton(self) -> frozenset:
        pairs = {(min(u, v), max(u, v)) for u, v in self.directed}
        return frozenset(pairs | set(self.undirected))

    def shd(self, other: "Cpdag") -> int:
        """Structural Hamming distance: one unit per pair whose mark differs."""
        if self.n != other.n:
            raise GraphError("node counts differ")
        count = 0
        for a in range(self.n):
            for b in range(a + 1, self.n):
                if self.edge_mark(a, b) != other.edge_mark(a, b):
                    count += 1
        return count

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "directed": sorted(list(e) for e in self.directed),
            "undirected": sorted(list(e) for e in self.undirected),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Cpdag":
        return cls(
            n=int(obj["n"]),
            directed=frozenset(tuple(e) for e in obj.get("directed", [])),
            undirected=frozenset(tuple(e) for e in obj.get("undirected", [])),
        )

    def to_dot(self, labels: Sequence[str] | None = None) -> str:
        labels = list(labels) if labels else list(_default_labels(self.n))
        lines = ["digraph cpdag {"]
        for i in range(self.n):
            lines.append(f'  n{i} [label="{labels[i]}"];')
        for u, v in sorted(self.directed):
            lines.append(f"  n{u} -> n{v};")
        for a, b in sorted(self.undirected):
            lines.append(f"  n{a} -> n{b} [dir=none];")
        lines.append("}")
        return "\n".join(lines)


def meek_closure(n: int, directed: set, undirected: set) -> tuple[set, set]:
    """Orient undirected edges forced by the four standard propagation rules.

    Input sets are not mutated.  Undirected edges are unordered pairs; the
    returned sets are the maximally oriented extension of the input pattern.
    """
    directed = set(directed)
    undirected = {(min(a, b), max(a, b)) for a, b in undirected}

    def und_neighbors(x):
        out = set()
        for a, b in undirected:
            if a == x:
                out.add(b)
            elif b == x:
                out.add(a)
        return out

    def adjacent(x, y):
        return ((x, y) in directed or (y, x) in directed
                or (min(x, y), max(x, y)) in undirected)

    def orient(a, b):
        undirected.discard((min(a, b), max(a, b)))
        directed.add((a, b))

    changed = True
    while changed:
        changed = False
        for a, b in sorted(undirected):
            for x, y in ((a, b), (b, a)):
                # R1: z -> x, z and y non-adjacent  =>  x -> y
                if any((z, x) in directed and not adjacent(z, y)
                       for z in range(n) if z not in (x, y)):
                    orient(x, y)
                    changed = True
                    break
                # R2: x -> z -> y  =>  x -> y
                if any((x, z) in directed and (z, y) in directed
                       for z in range(n) if z not in (x, y)):
                    orient(x, y)
                    changed = True
                    break
                # R3: x - z1 -> y, x - z2 -> y, z1 and z2 non-adjacent  =>  x -> y
                zs = [z for z in und_neighbors(x) if (z, y) in directed]
                if any(not adjacent(z1, z2)
                       for k, z1 in enumerate(zs) for z2 in zs[k + 1:]):
                    orient(x, y)
                    changed = True
                    break
                # R4: x - z, z -> w -> y, x - w (or adj), z and y non-adjacent => x -> y
                hit = False
                for z in und_neighbors(x):
                    if z in (x, y):
                        continue
                    for w in range(n):
                        if w in (x, y, z):
                            continue
                        if (z, w) in directed and (w, y) in directed and adjacent(x, w) \
                                and not adjacent(z, y):
                            orient(x, y)
                            changed = True
                            hit = True
                            break
                    if hit:
                        break
                if hit:
                    break
            if changed:
                break
    return directed, undirected


def cpdag_of(dag: Dag) -> Cpdag:
    """Equivalence class of a DAG: skeleton, colliders, then propagation."""
    directed = set()
    for a, c, b in v_structures(dag):
        directed.add((a, c))
        directed.add((b, c))
    undirected = {(min(u, v), max(u, v)) for u, v in dag.edges
                  if (u, v) not in directed and (v, u) not in directed}
    directed, undirected = meek_closure(dag.n, directed, undirected)
    return Cpdag(dag.n, frozenset(directed), frozenset(undirected))


def leaf_augmented_cpdag(dag: Dag) -> Cpdag:
    """Equivalence class refined by the knowledge of which nodes are leaves.

    Every edge touching a leaf is compelled into the leaf; propagation then
    runs again.  This is the strongest pattern recoverable by procedures that
    identify the leaf set alongside the equivalence class.
    """
    base = cpdag_of(dag)
    leaves = leaf_nodes(dag)
    directed = set(base.directed)
    undirected = set(base.undirected)
    for a, b in list(undirected):
        if b in leaves and a not in leaves:
            undirected.discard((a, b))
            directed.add((a, b))
        elif a in leaves and b not in leaves:
            undirected.discard((a, b))
            directed.add((b, a))
    directed, undirected = meek_closure(dag.n, directed, undirected)
    return Cpdag(dag.n, frozenset(directed), frozenset(undirected))


def model_to_json(model: NoisyModel) -> dict:
    """Serialize to the interchange schema (weighted edge list plus noises)."""
    dag = model.dag
    edges = [
        {"from": u, "to": v, "weight": float(model.sem.B[v, u])}
        for u, v in sorted(dag.edges)
    ]
    noise = []
    for spec in model.noise_specs:
        entry = {"dist": spec.family, "variance": spec.variance}
        if spec.family == "gmm" and spec.params:
            entry["weights"] = [spec.params[0], spec.params[1]]
            entry["sd_ratio"] = spec.params[2]
        noise.append(entry)
    return {
        "n": dag.n,
        "labels": list(dag.labels),
        "edges": edges,
        "noise": noise,
        "me_variance": [float(v) for v in model.me_variances],
    }


def model_from_json(obj: Mapping) -> NoisyModel:
    n = int(obj["n"])
    labels = obj.get("labels") or None
    triples = [(e["from"], e["to"], e["weight"]) for e in obj.get("edges", [])]
    sem = WeightedDag.from_edges(n, triples, labels)
    specs = []
    for entry in obj["noise"]:
        family = entry["dist"]
        if family == "gmm":
            specs.append(NoiseSpec.gmm(entry["variance"],
                                       tuple(entry.get("weights", (0.5, 0.5))),
                                       entry.get("sd_ratio", 3.0)))
        else:
            specs.append(NoiseSpec(family, entry["variance"]))
    return NoisyModel(sem, tuple(specs), np.asarray(obj["me_variance"], dtype=float))


def dag_to_dot(dag: Dag, B: np.ndarray | None = None) -> str:
    lines = ["digraph g {"]
    for i in range(dag.n):
        lines.append(f'  n{i} [label="{dag.labels[i]}"];')
    for u, v in sorted(dag.edges):
        if B is not None:
            lines.append(f'  n{u} -> n{v} [label="{B[v, u]:.3g}"];')
        else:
            lines.append(f"  n{u} -> n{v};")
    lines.append("}")
    return "\n".join(lines)
