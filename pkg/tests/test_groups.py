import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalme.errors import ConfigError, InconsistencyError
from causalme.fixtures import get_fixture
from causalme.graphs import build_canonical
from causalme.groups import (ESTIMATED_TOLERANCES, ORACLE_TOLERANCES,
                             RecursiveGroups, Tolerances, decompose,
                             ds_independent, identify_leaves,
                             identify_leaves_backward, identify_leaves_equvar,
                             identify_leaves_forward, reconstruct_graph,
                             residual_coeffs)


def canon(name):
    return build_canonical(get_fixture(name))


def members_of(groups):
    return [g.members for g in groups.groups]


def labels_of(groups):
    return [(g.members, g.nonleaf, dict(g.leaf_provenance))
            for g in groups.groups]


# --- residual / independence criterion ------------------------------------


def test_residual_coeffs_worked_example():
    # three-variable collider rows over its two shared sources
    rows = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(residual_coeffs(rows, 0, 1), [0.0, 1.0])
    np.testing.assert_allclose(residual_coeffs(rows, 1, 0), [0.5, -0.5])


def test_residual_coeffs_zero_predictor():
    rows = np.array([[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(ConfigError):
        residual_coeffs(rows, 0, 1)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_residual_orthogonal_to_predictor(seed):
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((4, 6))
    alpha = residual_coeffs(rows, 0, 2)
    assert abs(float(alpha @ rows[0])) < 1e-10 * np.linalg.norm(rows[0])


def test_ds_independent_worked_vectors():
    # residual (0, b) never shares a source with predictor (1, 0);
    # the reverse residual loads on both sources whenever a, b != 0
    for a, b in ((1.0, 1.0), (0.7, -1.2), (-0.4, 0.05)):
        rows = np.array([[1.0, 0.0], [a, b], [0.0, 1.0]])
        fwd = residual_coeffs(rows, 0, 1)
        assert ds_independent(fwd, rows[0])
        rev = residual_coeffs(rows, 1, 0)
        assert not ds_independent(rev, rows[1])


def test_ds_independent_explicit_tolerance():
    alpha = np.array([1e-6, 1.0])
    row = np.array([1.0, 0.0])
    assert not ds_independent(alpha, row)
    assert ds_independent(alpha, row, tol=1e-5)


@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
@settings(max_examples=30, deadline=None)
def test_ds_independent_scale_invariant(s1, s2):
    rows = np.array([[1.0, 0.0], [0.8, 1.3], [0.0, 1.0]])
    alpha = residual_coeffs(rows, 0, 1)
    assert ds_independent(alpha * s1, rows[0] * s2) == \
        ds_independent(alpha, rows[0])


# --- decomposition ----------------------------------------------------------


def test_decompose_bench_a():
    assert members_of(decompose(canon("bench-a"))) == \
        [(0,), (1, 4), (2, 5), (3, 6, 7)]


def test_decompose_star_single_group():
    g = decompose(canon("bench-b"))
    assert members_of(g) == [(0, 1, 2, 3)]
    assert not g.resolved


def test_decompose_six_node_fixtures():
    for name in ("bench-c", "bench-d"):
        assert members_of(decompose(canon(name))) == \
            [(0,), (1, 2), (3,), (4, 5)], name


def test_decompose_bench_e():
    assert members_of(decompose(canon("bench-e"))) == \
        [(0,), (1,), (2, 3, 4), (5,), (6, 7)]


def test_decompose_order_consistent_with_topology():
    from causalme.simulate import RandomDagConfig, random_model
    for seed in range(25):
        model = random_model(RandomDagConfig(n=2 + seed % 5, leaf_count=1,
                                             seed=seed))
        groups = decompose(build_canonical(model))
        dag = model.sem.dag
        seen = set()
        for g in groups.groups:
            nonleaf = min(g.members)  # root chosen first; members sorted
            for m in g.members:
                parents = dag.parents(m)
                nl_parents = {p for p in parents if dag.children(p)}
                assert nl_parents <= seen | set(g.members), (seed, m)
            seen.update(g.members)


def test_decompose_rejects_ragged_input():
    with pytest.raises(ConfigError):
        decompose(np.zeros(4))


# --- leaf labeling ----------------------------------------------------------


def test_backward_rules_bench_a():
    g = identify_leaves_backward(decompose(canon("bench-a")), canon("bench-a"))
    assert labels_of(g)[3] == ((3, 6, 7), 3,
                               {6: "leaf-pair", 7: "extra-parent"})
    # middle groups stay untouched by backward rules
    assert labels_of(g)[1] == ((1, 4), None, {})


def test_backward_rules_bench_c_and_e():
    g = identify_leaves_backward(decompose(canon("bench-c")), canon("bench-c"))
    assert labels_of(g)[3] == ((4, 5), 4, {5: "extra-parent"})
    g = identify_leaves_backward(decompose(canon("bench-e")), canon("bench-e"))
    assert labels_of(g)[2] == ((2, 3, 4), None, {4: "extra-parent"})
    assert labels_of(g)[4] == ((6, 7), 6, {7: "extra-parent"})


def test_forward_rules_bench_a():
    g = identify_leaves_forward(decompose(canon("bench-a")), canon("bench-a"))
    assert labels_of(g)[1] == ((1, 4), 1, {4: "downstream-witness"})
    assert labels_of(g)[2] == ((2, 5), 2, {5: "downstream-witness"})
    assert labels_of(g)[3] == ((3, 6, 7), None, {})


def test_forward_rules_bench_c_and_e():
    g = identify_leaves_forward(decompose(canon("bench-c")), canon("bench-c"))
    assert labels_of(g)[1] == ((1, 2), 1, {2: "downstream-witness"})
    g = identify_leaves_forward(decompose(canon("bench-e")), canon("bench-e"))
    assert g.groups[2].nonleaf == 2
    assert g.groups[2].leaf_provenance[3] == "downstream-witness"


def test_equvar_rule():
    c = canon("bench-a")
    g = identify_leaves_equvar(decompose(c), c.unique_variances)
    assert g.resolved
    assert {m for gr in g.groups for m in gr.leaves} == {4, 5, 6, 7}
    cb = canon("bench-b")
    gb = identify_leaves_equvar(decompose(cb), cb.unique_variances)
    assert gb.resolved
    assert gb.groups[0].nonleaf == 0


def test_combined_identify_resolves_labelable_fixtures():
    for name in ("bench-a", "bench-c", "bench-d", "bench-e", "collider3"):
        c = canon(name)
        g = identify_leaves(decompose(c), c)
        assert g.resolved, name


def test_combined_identify_leaves_star_unresolved():
    c = canon("bench-b")
    g = identify_leaves(decompose(c), c)
    assert not g.resolved
    assert g.groups[0].nonleaf is None


# --- reconstruction ---------------------------------------------------------


@pytest.mark.parametrize("name", ["bench-a", "bench-c", "bench-d", "bench-e"])
def test_reconstruct_round_trip(name):
    model = get_fixture(name)
    c = canon(name)
    wd = reconstruct_graph(identify_leaves(decompose(c), c), c)
    assert wd.dag.edges == model.sem.dag.edges
    np.testing.assert_allclose(wd.B, model.sem.B, atol=1e-8)


def test_reconstruct_distinguishes_one_edge_pair():
    got_c = set(reconstruct_graph(
        identify_leaves(decompose(canon("bench-c")), canon("bench-c")),
        canon("bench-c")).dag.edges)
    got_d = set(reconstruct_graph(
        identify_leaves(decompose(canon("bench-d")), canon("bench-d")),
        canon("bench-d")).dag.edges)
    assert got_d - got_c == {(0, 5)}
    assert got_c <= got_d


def test_reconstruct_equvar_star():
    model = get_fixture("bench-b")
    c = canon("bench-b")
    g = identify_leaves(decompose(c), c, unique_variances=c.unique_variances)
    wd = reconstruct_graph(g, c)
    assert sorted(wd.dag.edges) == [(0, 1), (0, 2), (0, 3)]
    np.testing.assert_allclose(wd.B, model.sem.B, atol=1e-12)


def test_reconstruct_refuses_unresolved():
    c = canon("bench-b")
    g = identify_leaves(decompose(c), c)
    with pytest.raises(ConfigError):
        reconstruct_graph(g, c)


def test_pipeline_invariant_under_column_permutation_and_scale():
    model = get_fixture("bench-a")
    base = canon("bench-a")
    rows = base.loadings * np.sqrt(base.source_variances)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        perm = rng.permutation(rows.shape[1])
        scale = rng.uniform(0.5, 2.0, rows.shape[1]) * \
            rng.choice([-1.0, 1.0], rows.shape[1])
        shuffled = rows[:, perm] * scale
        g = identify_leaves(decompose(shuffled), shuffled)
        wd = reconstruct_graph(g, shuffled)
        assert wd.dag.edges == model.sem.dag.edges
        np.testing.assert_allclose(wd.B, model.sem.B, atol=1e-8)


# --- serialization / config -------------------------------------------------


def test_recursive_groups_json_round_trip():
    c = canon("bench-a")
    g = identify_leaves(decompose(c), c)
    back = RecursiveGroups.from_json(g.to_json())
    assert members_of(back) == members_of(g)
    assert [gr.nonleaf for gr in back.groups] == \
        [gr.nonleaf for gr in g.groups]
    assert [dict(gr.leaf_provenance) for gr in back.groups] == \
        [dict(gr.leaf_provenance) for gr in g.groups]


def test_tolerance_presets():
    assert ORACLE_TOLERANCES.ds_rel == pytest.approx(1e-8)
    assert ESTIMATED_TOLERANCES.ds_rel > ORACLE_TOLERANCES.ds_rel
    assert Tolerances(ds_rel=0.2).ds_rel == 0.2  # frozen, overridable
