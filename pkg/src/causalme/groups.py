"""Recursive group decomposition over an estimated (or exact) mixing matrix,
leaf labeling by the backward/forward rules, and graph reconstruction.

Everything here operates on the rows of the shared-signal mixing matrix: row
i holds the coefficients expressing variable i's shared part over the
independent sources.  The decomposition repeatedly peels off a root — a node
whose removal (by residualizing every other row on it) leaves residuals
independent of it — collecting nodes whose rows are parallel to the root's
into one group.  Which group member is the actual non-leaf is then decided
by the labeling rules, and the graph follows by regression among rows.

All steps are invariant to permuting or rescaling the columns of the input
matrix, which is exactly the indeterminacy an overcomplete-ICA estimate
carries.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .citest import CiOracle
from .errors import ConfigError, InconsistencyError
from .graphs import CanonicalRep, WeightedDag

__all__ = [
    "Tolerances",
    "ORACLE_TOLERANCES",
    "ESTIMATED_TOLERANCES",
    "Group",
    "RecursiveGroups",
    "residual_coeffs",
    "ds_independent",
    "decompose",
    "identify_leaves_backward",
    "identify_leaves_forward",
    "identify_leaves_equvar",
    "identify_leaves",
    "reconstruct_graph",
]


@dataclass(frozen=True)
class Tolerances:
    """Thresholds for the zero-tests; exact inputs warrant tight values,
    estimated mixing matrices need slack."""

    ds_rel: float = 0.05       # independence criterion, relative
    group_rel: float = 0.05    # zero-residual (parallel rows) grouping
    coef_tol: float = 0.1      # nonzero-coefficient threshold in regressions
    ci_tol: float = 0.05       # partial-correlation zero threshold
    det_tol: float = 1e-4      # determinism screen on the implied covariance
    recon_tol: float = 0.05    # reconstruction residual bound, relative


ORACLE_TOLERANCES = Tolerances(ds_rel=1e-8, group_rel=1e-8, coef_tol=1e-6,
                               ci_tol=1e-8, det_tol=1e-6, recon_tol=1e-8)
ESTIMATED_TOLERANCES = Tolerances()


@dataclass(frozen=True)
class Group:
    """One recursive group: its members, the designated non-leaf once known,
    and which rule labeled each identified leaf."""

    members: tuple
    nonleaf: int | None = None
    leaf_provenance: dict = field(default_factory=dict)
    nonleaf_provenance: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(self.members)))
        if not self.members:
            raise ConfigError("empty group")
        bad = set(self.leaf_provenance) - set(self.members)
        if bad:
            raise ConfigError(f"leaf labels outside group: {sorted(bad)}")
        if self.nonleaf is not None:
            if self.nonleaf not in self.members:
                raise ConfigError("designated non-leaf must be a member")
            if self.nonleaf in self.leaf_provenance:
                raise InconsistencyError(
                    f"node {self.nonleaf} labeled both leaf and non-leaf")

    @property
    def leaves(self) -> tuple:
        return tuple(sorted(self.leaf_provenance))

    @property
    def resolved(self) -> bool:
        return self.nonleaf is not None and \
            len(self.leaf_provenance) == len(self.members) - 1


@dataclass(frozen=True)
class RecursiveGroups:
    """Ordered decomposition; the order is a causal order of the groups'
    non-leaf members."""

    groups: tuple

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        seen: set = set()
        for g in self.groups:
            if seen & set(g.members):
                raise ConfigError("groups must be disjoint")
            seen.update(g.members)
        if seen != set(range(len(seen))) or not seen:
            raise ConfigError("groups must partition 0..n-1")

    @property
    def n(self) -> int:
        return sum(len(g.members) for g in self.groups)

    @property
    def resolved(self) -> bool:
        return all(g.resolved for g in self.groups)

    def member_sets(self) -> tuple:
        return tuple(g.members for g in self.groups)

    def to_json(self) -> dict:
        return {"groups": [
            {"members": list(g.members),
             "nonleaf": g.nonleaf,
             "leaf_provenance": {str(k): v
                                 for k, v in sorted(g.leaf_provenance.items())},
             "nonleaf_provenance": g.nonleaf_provenance}
            for g in self.groups]}

    @classmethod
    def from_json(cls, obj) -> "RecursiveGroups":
        groups = tuple(
            Group(members=tuple(g["members"]),
                  nonleaf=g.get("nonleaf"),
                  leaf_provenance={int(k): v
                                   for k, v in g.get("leaf_provenance", {}).items()},
                  nonleaf_provenance=g.get("nonleaf_provenance"))
            for g in obj["groups"])
        return cls(groups=groups)


def _coerce_rows(mix) -> tuple[np.ndarray, Tolerances]:
    """Accept a canonical representation (exact), a mixing estimate, or a
    bare array of rows; return rows plus suitable default tolerances."""
    if isinstance(mix, CanonicalRep):
        rows = mix.loadings * np.sqrt(mix.source_variances)
        return np.asarray(rows, dtype=float), ORACLE_TOLERANCES
    if hasattr(mix, "loadings") and hasattr(mix, "source_std"):
        rows = np.asarray(mix.loadings, dtype=float) * \
            np.asarray(mix.source_std, dtype=float)
        return rows, ESTIMATED_TOLERANCES
    rows = np.asarray(mix, dtype=float)
    if rows.ndim != 2:
        raise ConfigError("mixing rows must form a 2-d array")
    return rows, ORACLE_TOLERANCES


def residual_coeffs(rows: np.ndarray, i: int, j: int) -> np.ndarray:
    """Coefficient vector of the residual of node j regressed on node i."""
    rows = np.asarray(rows, dtype=float)
    pred = rows[i]
    denom = float(pred @ pred)
    if denom <= 0:
        raise ConfigError(f"predictor row {i} is zero; residual undefined")
    return rows[j] - (float(rows[j] @ pred) / denom) * pred


def ds_independent(alpha: np.ndarray, predictor_row: np.ndarray,
                   tol: float | None = None, *, rel: float = 1e-8) -> bool:
    """Residual-independence criterion: the entrywise product of the residual
    coefficients with the predictor's coefficients must vanish — two linear
    mixtures of independent non-Gaussian sources are independent only when no
    source loads on both."""
    alpha = np.asarray(alpha, dtype=float)
    row = np.asarray(predictor_row, dtype=float)
    if alpha.shape != row.shape:
        raise ConfigError("vectors must have equal length")
    if tol is None:
        tol = rel * float(np.sum(np.abs(alpha)) * np.max(np.abs(row), initial=0.0))
    return float(np.sum(np.abs(alpha * row))) <= tol


def decompose(mix, *, tol: Tolerances | None = None) -> RecursiveGroups:
    """Split the nodes into ordered recursive groups.

    At each step a root is a node whose residualized relation to every other
    active node passes the independence criterion; nodes whose current rows
    are parallel to the root's (zero residual) share its group.  Remaining
    rows are replaced by their residuals and the search repeats.  Ties go to
    the lowest index.  Non-leaves stay undesignated here — that is the
    labeling rules' job.
    """
    rows, defaults = _coerce_rows(mix)
    tols = tol if tol is not None else defaults
    n = rows.shape[0]
    work = rows.copy()
    active = list(range(n))
    out = []
    def parallel(alpha, j):
        return float(np.sum(np.abs(alpha))) <= \
            tols.group_rel * float(np.sum(np.abs(work[j])))

    while active:
        root = None
        for i in active:
            if float(work[i] @ work[i]) <= 0:
                continue
            ok = True
            for j in active:
                if j == i:
                    continue
                alpha = residual_coeffs(work, i, j)
                # a parallel row joins i's group; only genuinely distinct
                # residuals must pass the independence criterion
                if parallel(alpha, j):
                    continue
                if not ds_independent(alpha, work[i], rel=tols.ds_rel):
                    ok = False
                    break
            if ok:
                root = i
                break
        if root is None:
            raise InconsistencyError(
                "no root found at decomposition step; the mixing estimate is "
                "inconsistent with an acyclic shared structure")
        members = [root]
        rest = []
        for j in active:
            if j == root:
                continue
            alpha = residual_coeffs(work, root, j)
            if parallel(alpha, j):
                members.append(j)
            else:
                work[j] = alpha
                rest.append(j)
        out.append(Group(members=tuple(sorted(members))))
        active = rest
    return RecursiveGroups(groups=tuple(out))


def _pool_cap(n: int, max_cond: int | None) -> int:
    if max_cond is not None:
        return max_cond
    return n if n <= 12 else 4


def _subsets(pool, cap):
    pool = sorted(pool)
    for size in range(min(cap, len(pool)) + 1):
        yield from itertools.combinations(pool, size)


def _implied_oracle(rows: np.ndarray, tols: Tolerances) -> CiOracle:
    return CiOracle.from_cov(rows @ rows.T, ci_tol=tols.ci_tol,
                             det_tol=tols.det_tol)


def _representatives(groups, upto: int) -> list[int]:
    reps = []
    for g in groups[:upto]:
        reps.append(g.nonleaf if g.nonleaf is not None else g.members[0])
    return reps


def _label(prov: dict, node: int, rule: str) -> None:
    prov.setdefault(node, rule)


def _eliminate(g: Group) -> Group:
    unlabeled = [m for m in g.members if m not in g.leaf_provenance]
    if not unlabeled:
        raise InconsistencyError(
            f"every member of group {g.members} got labeled a leaf")
    if len(unlabeled) == 1 and g.nonleaf is None:
        return replace(g, nonleaf=unlabeled[0], nonleaf_provenance="elimination")
    if g.nonleaf is not None and g.nonleaf in g.leaf_provenance:
        raise InconsistencyError(
            f"designated non-leaf {g.nonleaf} was labeled a leaf")
    return g


def identify_leaves_backward(groups: RecursiveGroups, mix, *,
                             tol: Tolerances | None = None,
                             max_cond: int | None = None) -> RecursiveGroups:
    """Label leaves by looking at causally earlier groups.

    Two rules: a member whose regression on earlier-group representatives
    uses a strictly larger predictor set than another member's is a leaf
    (the extra predictor is a parent the group's non-leaf does not have);
    and two members that are conditionally independent given some non-
    determining subset of the groups so far are both leaves (the non-leaf is
    adjacent to every member of its group).
    """
    rows, defaults = _coerce_rows(mix)
    tols = tol if tol is not None else defaults
    oracle = _implied_oracle(rows, tols)
    cap = _pool_cap(rows.shape[0], max_cond)
    new_groups = []
    for k, g in enumerate(groups.groups):
        prov = dict(g.leaf_provenance)
        if k > 0 and len(g.members) > 1:
            reps = _representatives(new_groups, k)
            basis = rows[reps].T
            supports = {}
            for m in g.members:
                coef, *_ = np.linalg.lstsq(basis, rows[m], rcond=None)
                supports[m] = frozenset(
                    reps[idx] for idx in range(len(reps))
                    if abs(coef[idx]) > tols.coef_tol)
            for m, m2 in itertools.permutations(g.members, 2):
                if supports[m] > supports[m2]:
                    _label(prov, m, "extra-parent")
        if len(g.members) > 1:
            pool = set()
            for g2 in groups.groups[:k + 1]:
                pool.update(g2.members)
            for u, w in itertools.combinations(g.members, 2):
                if u in prov and w in prov:
                    continue
                for C in _subsets(pool - {u, w}, cap):
                    if oracle.determined(u, C) or oracle.determined(w, C):
                        continue
                    if oracle.independent(u, w, C):
                        _label(prov, u, "leaf-pair")
                        _label(prov, w, "leaf-pair")
                        break
        g = replace(g, leaf_provenance=prov)
        new_groups.append(_eliminate(g))
    return RecursiveGroups(groups=tuple(new_groups))


def _always_dependent(oracle, m: int, s: int, pool, cap) -> bool:
    saw_valid = False
    for C in _subsets(pool - {m, s}, cap):
        if oracle.determined(m, C) or oracle.determined(s, C):
            continue
        saw_valid = True
        if oracle.independent(m, s, C):
            return False
    return saw_valid


def identify_leaves_forward(groups: RecursiveGroups, mix, *,
                            tol: Tolerances | None = None,
                            max_cond: int | None = None) -> RecursiveGroups:
    """Label leaves by looking at causally later nodes.

    For each group, collect the later nodes that stay dependent on some
    member no matter the (non-determining) conditioning set drawn from the
    groups so far — such nodes sit downstream of the group's non-leaf.  A
    member separable from one of them is a leaf; a member dependent on all
    of them under every valid conditioning set is the non-leaf, designated
    when unique.
    """
    rows, defaults = _coerce_rows(mix)
    tols = tol if tol is not None else defaults
    oracle = _implied_oracle(rows, tols)
    cap = _pool_cap(rows.shape[0], max_cond)
    seq = list(groups.groups)
    new_groups = []
    for k, g in enumerate(seq):
        later = [m for g2 in seq[k + 1:] for m in g2.members]
        if not later or len(g.members) == 1:
            new_groups.append(g)
            continue
        pool = set()
        for g2 in seq[:k + 1]:
            pool.update(g2.members)
        witnesses = [s for s in sorted(later)
                     if any(_always_dependent(oracle, m, s, pool, cap)
                            for m in g.members)]
        if not witnesses:
            new_groups.append(g)
            continue
        prov = dict(g.leaf_provenance)
        always = []
        for m in g.members:
            if any(not oracle.determined(m, C) and not oracle.determined(s, C)
                   and oracle.independent(m, s, C)
                   for s in witnesses
                   for C in _subsets(pool - {m, s}, cap)):
                _label(prov, m, "downstream-witness")
            elif all(_always_dependent(oracle, m, s, pool, cap)
                     for s in witnesses):
                always.append(m)
        g = replace(g, leaf_provenance=prov)
        if g.nonleaf is None and len(always) == 1:
            g = replace(g, nonleaf=always[0],
                        nonleaf_provenance="always-dependent")
        new_groups.append(_eliminate(g))
    return RecursiveGroups(groups=tuple(new_groups))


def identify_leaves_equvar(groups: RecursiveGroups, unique_variances,
                           *, rel_tol: float = 0.05) -> RecursiveGroups:
    """Label leaves from unique-variance estimates under the equal-noise
    premise: every variance above the global minimum (beyond tolerance)
    belongs to a leaf, whose own structural noise inflates it."""
    uv = np.asarray(unique_variances, dtype=float)
    if uv.shape != (groups.n,):
        raise ConfigError("need one unique-variance estimate per node")
    lo = float(np.min(uv))
    new_groups = []
    for g in groups.groups:
        prov = dict(g.leaf_provenance)
        for m in g.members:
            if uv[m] > lo * (1.0 + rel_tol) + 1e-300:
                _label(prov, m, "equal-variance")
        new_groups.append(_eliminate(replace(g, leaf_provenance=prov)))
    return RecursiveGroups(groups=tuple(new_groups))


def identify_leaves(groups: RecursiveGroups, mix, *,
                    tol: Tolerances | None = None,
                    max_cond: int | None = None,
                    unique_variances=None,
                    equvar_rel_tol: float = 0.05) -> RecursiveGroups:
    """Run the labeling rules to a fixpoint.

    Later passes can improve earlier ones: once a group's non-leaf is
    designated, the backward regressions of later groups use it as the
    group's representative, so the rules iterate until labels stop changing.
    """
    current = groups
    if unique_variances is not None:
        current = identify_leaves_equvar(current, unique_variances,
                                         rel_tol=equvar_rel_tol)
    for _ in range(len(groups.groups) + 1):
        step = identify_leaves_backward(current, mix, tol=tol,
                                        max_cond=max_cond)
        step = identify_leaves_forward(step, mix, tol=tol, max_cond=max_cond)
        if step == current:
            break
        current = step
    return current


def reconstruct_graph(groups: RecursiveGroups, mix, *,
                      tol: Tolerances | None = None) -> WeightedDag:
    """Rebuild the weighted graph from a fully labeled decomposition.

    Non-leaf parents come from regressing each non-leaf's row on the rows of
    the causally earlier non-leaves; leaf rows are exact combinations of the
    non-leaf rows, so solving against that row basis yields each leaf's
    parents and weights.  A leaf residual above tolerance means the labeling
    contradicts the mixing matrix.
    """
    rows, defaults = _coerce_rows(mix)
    tols = tol if tol is not None else defaults
    if not groups.resolved:
        unresolved = [g.members for g in groups.groups if not g.resolved]
        raise ConfigError(
            f"cannot reconstruct: unresolved groups {unresolved}")
    nonleaves = [g.nonleaf for g in groups.groups]
    edges = []
    for k, nl in enumerate(nonleaves):
        if k == 0:
            continue
        basis = rows[nonleaves[:k]].T
        coef, *_ = np.linalg.lstsq(basis, rows[nl], rcond=None)
        for idx, c in enumerate(coef):
            if abs(c) > tols.coef_tol:
                edges.append((nonleaves[idx], nl, float(c)))
    basis = rows[nonleaves].T
    for g in groups.groups:
        for leaf in g.leaves:
            coef, *_ = np.linalg.lstsq(basis, rows[leaf], rcond=None)
            scale = max(float(rows[leaf] @ rows[leaf]), 1e-300)
            err = float(np.linalg.norm(rows[leaf] - basis @ coef)) ** 2
            if err > (tols.recon_tol ** 2) * scale:
                raise InconsistencyError(
                    f"row of node {leaf} is not a combination of the "
                    "designated non-leaf rows; leaf labels are inconsistent")
            for idx, c in enumerate(coef):
                if abs(c) > tols.coef_tol:
                    edges.append((nonleaves[idx], leaf, float(c)))
    n = groups.n
    return WeightedDag.from_edges(n, edges)
