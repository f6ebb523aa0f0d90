import numpy as np
import pytest

from causalme.errors import ConfigError, ConvergenceError
from causalme.factor import (fa_fit, identifiability_thresholds,
                             recovered_latent_cov, select_num_factors)
from causalme.fixtures import get_fixture
from causalme.graphs import build_canonical, latent_cov, observed_cov


def pop_cov(name):
    return observed_cov(get_fixture(name))


def test_thresholds_quoted_values():
    phi4, c4 = identifiability_thresholds(4)
    assert c4 == pytest.approx(0.593, abs=1e-3)
    _, c100 = identifiability_thresholds(100)
    assert c100 == pytest.approx(0.136, abs=1e-3)


def test_thresholds_frozen_digits():
    assert identifiability_thresholds(2) == pytest.approx(
        (0.4384471871911697, 0.7807764064044151))
    assert identifiability_thresholds(3) == pytest.approx(
        (1.0, 2.0 / 3.0))
    assert identifiability_thresholds(4)[0] == pytest.approx(
        1.6277186767309857)
    assert identifiability_thresholds(6) == pytest.approx((3.0, 0.5))
    assert identifiability_thresholds(8)[1] == pytest.approx(
        0.4413911092686593)
    assert identifiability_thresholds(100) == pytest.approx(
        (86.3490283019151, 0.13650971698084904))


def test_threshold_c_strictly_decreasing():
    prev = 2.0
    for n in range(2, 2001):
        _, c = identifiability_thresholds(n)
        assert c < prev
        prev = c


def test_threshold_identity():
    for n in (2, 5, 17, 240):
        phi, c = identifiability_thresholds(n)
        assert c == pytest.approx(1.0 - phi / n, abs=1e-12)


def test_threshold_rejects_bad_n():
    with pytest.raises(ConfigError):
        identifiability_thresholds(0)


def test_fa_fit_recovers_bench_a_population():
    """4 leaves out of 8 sits above the identifiability bound, so the
    population covariance pins both psi and the shared part."""
    model = get_fixture("bench-a")
    canon = build_canonical(model)
    fit = fa_fit(pop_cov("bench-a"), 100_000, 4,
                 max_iter=50_000, rel_tol=1e-13, strict=False)
    np.testing.assert_allclose(fit.psi, canon.unique_variances, atol=2e-3)
    np.testing.assert_allclose(recovered_latent_cov(fit), latent_cov(canon),
                               atol=2e-3)


def test_fa_fit_random_start_lands_on_same_solution():
    cov = pop_cov("bench-a")
    base = fa_fit(cov, 100_000, 4, max_iter=50_000, rel_tol=1e-13,
                  strict=False)
    other = fa_fit(cov, 100_000, 4, max_iter=50_000, rel_tol=1e-13,
                   strict=False, init_seed=123)
    np.testing.assert_allclose(other.psi, base.psi, atol=5e-3)
    np.testing.assert_allclose(recovered_latent_cov(other),
                               recovered_latent_cov(base), atol=5e-3)


def test_fa_fit_monotone_likelihood():
    cov = pop_cov("bench-c")
    lls = []
    for iters in (1, 3, 10, 50, 200):
        fit = fa_fit(cov, 1000, 4, max_iter=iters, strict=False)
        lls.append(fit.loglik)
    assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))


def test_fa_fit_validation():
    cov = pop_cov("chain2")
    with pytest.raises(ConfigError):
        fa_fit(cov, 100, 0)
    with pytest.raises(ConfigError):
        fa_fit(cov, 100, 2)  # r must leave at least one unique coordinate
    with pytest.raises(ConfigError):
        fa_fit(cov, 1, 1)
    with pytest.raises(ConfigError):
        fa_fit(np.array([[1.0, 0.5]]), 100, 1)
    asym = np.array([[1.0, 0.9], [0.2, 1.0]])
    with pytest.raises(ConfigError):
        fa_fit(asym, 100, 1)


def test_fa_fit_strict_convergence_error_carries_best():
    cov = pop_cov("bench-a")
    with pytest.raises(ConvergenceError) as exc:
        fa_fit(cov, 1000, 4, max_iter=2)
    best = exc.value.best
    assert best.n_iter == 2
    assert not best.converged
    # non-strict returns the same iterate flagged instead
    fit = fa_fit(cov, 1000, 4, max_iter=2, strict=False)
    assert not fit.converged
    np.testing.assert_allclose(fit.L, best.L)


def test_fa_fit_healthy_run_reports_no_floor():
    fit = fa_fit(pop_cov("bench-a"), 10_000, 4, strict=False)
    assert fit.psi_at_floor == ()
    assert fit.converged
    assert np.all(fit.psi > 0)


def test_select_num_factors_bench_a():
    assert select_num_factors(pop_cov("bench-a"), 100_000) == 4


def test_select_num_factors_candidates_validated():
    cov = pop_cov("bench-a")
    with pytest.raises(ConfigError):
        select_num_factors(cov, 1000, candidates=[0, 1])
    with pytest.raises(ConfigError):
        select_num_factors(cov, 1000, candidates=[8])
    assert select_num_factors(cov, 100_000, candidates=[4]) == 4


def test_bic_penalizes_extra_factors_on_sampled_data():
    from causalme.simulate import sample_observations
    model = get_fixture("bench-a")
    data = sample_observations(model, 100_000, seed=0)
    emp = np.cov(data.values, rowvar=False)
    assert select_num_factors(emp, 100_000) == 4
