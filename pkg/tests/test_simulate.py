import numpy as np
import pytest

from causalme.errors import ConfigError
from causalme.fixtures import fork_model, get_fixture
from causalme.graphs import observed_cov
from causalme.simulate import (RandomDagConfig, analytic_rho12,
                               analytic_rho13_2, emit_demo_data,
                               random_model, read_dataset_csv,
                               sample_observations, write_dataset_csv)


def test_sampling_is_reproducible():
    model = get_fixture("bench-a")
    a = sample_observations(model, 500, seed=42)
    b = sample_observations(model, 500, seed=42)
    np.testing.assert_array_equal(a.values, b.values)
    c = sample_observations(model, 500, seed=43)
    assert not np.array_equal(a.values, c.values)


def test_sample_shape_and_labels():
    model = get_fixture("bench-c")
    data = sample_observations(model, 100, seed=0)
    assert data.values.shape == (100, 6)
    assert data.labels == ("X1", "X2", "X3", "X4", "X5", "X6")
    assert data.n_samples == 100
    assert data.n_vars == 6


def test_sample_covariance_approaches_population():
    model = get_fixture("bench-a")
    data = sample_observations(model, 200_000, seed=0)
    emp = np.cov(data.values, rowvar=False)
    np.testing.assert_allclose(emp, observed_cov(model), atol=0.05)


def test_include_latent_decomposition():
    model = get_fixture("chain2")
    data = sample_observations(model, 50_000, seed=1, include_latent=True)
    noise = data.values - data.latent
    # additive measurement noise: independent of the latent part,
    # with the configured variance
    assert abs(np.var(noise[:, 0]) - 0.3) < 0.02
    assert abs(np.var(noise[:, 1]) - 0.3) < 0.02
    r = np.corrcoef(noise[:, 0], data.latent[:, 0])[0, 1]
    assert abs(r) < 0.02


@pytest.mark.parametrize("family", ["gaussian", "uniform", "laplace", "gmm"])
def test_noise_families_hit_requested_variance(family):
    from causalme.graphs import NoiseSpec, NoisyModel, WeightedDag
    sem = WeightedDag.from_edges(1, [])
    model = NoisyModel(sem, (NoiseSpec(family, 2.5),), np.zeros(1))
    data = sample_observations(model, 200_000, seed=3)
    assert np.var(data.values[:, 0]) == pytest.approx(2.5, rel=0.03)
    assert abs(np.mean(data.values[:, 0])) < 0.02


def test_uniform_noise_is_bounded():
    model = get_fixture("collider3")  # unit-variance uniform noises
    data = sample_observations(model, 10_000, seed=0, include_latent=True)
    root = data.latent[:, 0]
    assert np.max(np.abs(root)) <= np.sqrt(3.0) + 1e-9
    assert np.max(np.abs(root)) > 1.5  # actually spreads over the range


def test_analytic_rho12_worked_values():
    assert analytic_rho12(0.5, 0.0) == pytest.approx(0.5)
    assert analytic_rho12(0.5, 1.0) == pytest.approx(0.5 / np.sqrt(2.0))
    assert analytic_rho12(0.6, 1.0) == pytest.approx(0.6 / np.sqrt(2.0))
    # correlation only decays as noise grows
    vals = [analytic_rho12(0.7, g) for g in np.linspace(0, 10, 31)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_analytic_rho13_2_worked_values():
    assert analytic_rho13_2(0.5, 0.0) == 0.0
    assert analytic_rho13_2(0.5, 1.0) == pytest.approx(0.25 / 1.75)
    # saturates at the squared base correlation
    assert analytic_rho13_2(0.5, 1e6) == pytest.approx(0.25, abs=1e-9)
    assert analytic_rho13_2(0.7, 1e6) == pytest.approx(0.49, abs=1e-9)


def test_analytic_curves_match_fork_population_cov():
    for rho in (0.3, 0.5, 0.7):
        for gamma in (0.0, 0.5, 2.0):
            cov = observed_cov(fork_model(rho, gamma))
            d = np.sqrt(np.diag(cov))
            corr = cov / np.outer(d, d)
            assert corr[0, 1] == pytest.approx(analytic_rho12(rho, gamma))
            num = corr[0, 2] - corr[0, 1] * corr[1, 2]
            den = np.sqrt((1 - corr[0, 1] ** 2) * (1 - corr[1, 2] ** 2))
            assert num / den == pytest.approx(analytic_rho13_2(rho, gamma),
                                              abs=1e-12)


def test_curve_args_validated():
    with pytest.raises(ConfigError):
        analytic_rho12(1.0, 1.0)
    with pytest.raises(ConfigError):
        analytic_rho13_2(0.5, -1.0)


def test_random_model_respects_config():
    cfg = RandomDagConfig(n=7, leaf_count=3, seed=11)
    model = random_model(cfg)
    dag = model.sem.dag
    assert dag.n == 7
    leaves = {i for i in range(7) if not dag.children(i)}
    assert len(leaves) == 3
    assert model.me_variances.shape == (7,)


def test_random_model_seed_determinism():
    a = random_model(RandomDagConfig(n=5, leaf_count=2, seed=4))
    b = random_model(RandomDagConfig(n=5, leaf_count=2, seed=4))
    assert a.sem.dag.edges == b.sem.dag.edges
    np.testing.assert_array_equal(a.sem.B, b.sem.B)


def test_random_model_coef_range():
    cfg = RandomDagConfig(n=6, leaf_count=2, seed=9, coef_range=(0.5, 0.9))
    model = random_model(cfg)
    w = model.sem.B[model.sem.B != 0]
    assert np.all((np.abs(w) >= 0.5) & (np.abs(w) <= 0.9))


def test_random_model_validation():
    with pytest.raises(ConfigError):
        RandomDagConfig(n=1, leaf_count=1)
    with pytest.raises(ConfigError):
        RandomDagConfig(n=4, leaf_count=4)
    with pytest.raises(ConfigError):
        RandomDagConfig(n=4, leaf_count=1, density=0.0)


def test_emit_demo_distortion():
    labels, rows = emit_demo_data("distortion", rho_tilde=0.5,
                                  gammas=[0.0, 1.0])
    assert labels == ("gamma", "rho12", "rho13_2")
    np.testing.assert_allclose(rows[0], [0.0, 0.5, 0.0])
    np.testing.assert_allclose(rows[1],
                               [1.0, 0.5 / np.sqrt(2), 0.25 / 1.75])


def test_emit_demo_residual_dependence_pattern():
    # residual orthogonal to the regressor by construction, but not
    # independent of it once the centre is noisy
    labels, rows = emit_demo_data("residual", rho_tilde=0.4, gamma=1.4,
                                  n_samples=50_000, seed=2)
    centre, child, resid = rows.T
    assert abs(np.corrcoef(centre, resid)[0, 1]) < 1e-10
    corr2 = np.corrcoef(centre ** 2, resid ** 2)[0, 1]
    assert abs(corr2) > 0.02


def test_emit_demo_unknown_kind():
    with pytest.raises(ConfigError):
        emit_demo_data("nope")


def test_csv_round_trip(tmp_path):
    model = get_fixture("fork3")
    data = sample_observations(model, 64, seed=5)
    path = tmp_path / "d.csv"
    write_dataset_csv(path, data)
    back = read_dataset_csv(path)
    assert back.labels == data.labels
    np.testing.assert_allclose(back.values, data.values, atol=1e-12)
