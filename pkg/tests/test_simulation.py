import numpy as np
import pytest
from scipy import special, stats

from iago.covariance import CovarianceSpec, covariance_matrix
from iago.kriging import Design, assemble_system
from iago.simulation import (
    LocationSet,
    MinimizerPmf,
    condition_paths,
    condition_paths_noisy,
    minimizer_distribution,
    noisy_anchor_sampler,
    sample_unconditional,
    standard_normals,
)

SPEC = CovarianceSpec(1.0, (1.0,))


def test_merge_deduplicates_and_keeps_groups():
    locs = LocationSet.merge(design=[[0.0], [1.0]], grid=[[1.0], [2.0], [3.0]],
                             candidates=[[0.0], [4.0]])
    assert locs.size == 5
    np.testing.assert_array_equal(locs.points[:, 0], [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(locs.indices("grid"), [1, 2, 3])
    np.testing.assert_array_equal(locs.indices("candidates"), [0, 4])
    np.testing.assert_array_equal(locs.locate([[3.0], [0.0]]), [3, 0])
    with pytest.raises(KeyError):
        locs.locate([[0.5]])


def test_path_blocks_can_be_regenerated_alone():
    full = standard_normals(11, 6, 7)
    np.testing.assert_array_equal(standard_normals(11, 2, 7, start=3), full[3:5])


def test_standard_normals_look_normal():
    z = standard_normals(5, 2000, 10).ravel()
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_unconditional_covariance():
    x = np.linspace(0, 2, 5)[:, None]
    paths = sample_unconditional(SPEC, LocationSet(x), 20000, seed=1)
    emp = np.cov(paths.values, rowvar=False)
    np.testing.assert_allclose(emp, covariance_matrix(SPEC, x), atol=0.04)


def test_sampler_survives_near_duplicate_locations():
    x = np.array([[0.0], [1e-9], [1.0]])
    paths = sample_unconditional(SPEC, LocationSet(x), 10, seed=0)
    assert np.all(np.isfinite(paths.values))


def _exact_setup(r=4000):
    design = Design(np.array([[0.3], [1.1], [2.0], [2.9], [3.6]]),
                    [1.0, -0.5, 0.3, 0.8, -1.2])
    system = assemble_system(design, SPEC)
    test = np.linspace(0.0, 4.0, 20)[:, None]
    locs = LocationSet.merge(design=design.points, test=test)
    z = sample_unconditional(SPEC, locs, r, seed=3)
    return system, condition_paths(z, system), test


def test_conditioned_paths_interpolate_the_data():
    system, paths, _ = _exact_setup(50)
    at_design = paths.restrict("design")
    np.testing.assert_allclose(at_design, np.broadcast_to(system.design.values, at_design.shape),
                               atol=1e-8)
    assert paths.conditioned


def test_conditioned_moments_match_kriging():
    system, paths, test = _exact_setup()
    t = paths.restrict("test")
    mean, var = system.predict(test)
    r = t.shape[0]
    assert np.all(np.abs(t.mean(axis=0) - mean) <= 4 * np.sqrt(var) / np.sqrt(r) + 1e-12)
    ratio = t.var(axis=0, ddof=1) / var
    live = var > 1e-6
    assert np.all((ratio[live] > 0.85) & (ratio[live] < 1.15))


def test_conditioning_twice_is_refused():
    system, paths, _ = _exact_setup(10)
    with pytest.raises(ValueError):
        condition_paths(paths, system)


def test_mismatched_covariance_is_refused():
    system, _, test = _exact_setup(10)
    other = CovarianceSpec(2.0, (1.0,))
    locs = LocationSet.merge(design=system.design.points, test=test)
    with pytest.raises(ValueError):
        condition_paths(sample_unconditional(other, locs, 5, 0), system)


def test_noisy_anchors_follow_the_posterior_at_design_points():
    design = Design(np.array([[0.0], [1.0], [2.5]]), [0.5, -0.2, 1.0], [0.09] * 3)
    system = assemble_system(design, SPEC)
    pts, mean, chol = noisy_anchor_sampler(system)
    np.testing.assert_allclose(mean, system.predict(pts)[0])
    np.testing.assert_allclose(chol @ chol.T, system.posterior_covariance(pts), atol=1e-9)


def test_noisy_conditioning_moments():
    design = Design(np.array([[0.0], [1.0], [2.5], [1.0]]), [0.5, -0.2, 1.0, 0.1], [0.09] * 4)
    system = assemble_system(design, SPEC)
    test = np.linspace(-0.5, 3.0, 12)[:, None]
    locs = LocationSet.merge(design=design.points, test=test)
    z = sample_unconditional(SPEC, locs, 6000, seed=8)
    t = condition_paths_noisy(z, system, seed=9).restrict("test")
    mean, var = system.predict(test)
    assert np.all(np.abs(t.mean(axis=0) - mean) <= 4 * np.sqrt(var / t.shape[0]))
    np.testing.assert_allclose(t.var(axis=0, ddof=1) / var, 1.0, atol=0.12)
    assert np.all(var > 0.01)


def test_two_location_minimizer_probability():
    # P(F(a) < F(b) | data) = Φ((m_b - m_a) / sd(F(a) - F(b)))
    system, _, _ = _exact_setup(1)
    grid = np.array([[1.5], [2.45]])
    locs = LocationSet.merge(design=system.design.points, grid=grid)
    r = 10_000
    paths = condition_paths(sample_unconditional(SPEC, locs, r, seed=21), system)
    pmf = minimizer_distribution(paths, seed=0, label="grid")
    mean = system.predict(grid)[0]
    c = system.posterior_covariance(grid)
    p = special.ndtr((mean[1] - mean[0]) / np.sqrt(c[0, 0] + c[1, 1] - 2 * c[0, 1]))
    assert abs(pmf.probabilities[0] - p) <= 3 * np.sqrt(p * (1 - p) / r)


def test_pmf_validates_total_mass():
    with pytest.raises(ValueError):
        MinimizerPmf(np.zeros((2, 1)), [0.5, 0.6])


def test_ties_are_broken_at_random_but_reproducibly():
    from iago.simulation import PathEnsemble

    values = np.zeros((1000, 4))
    ens = PathEnsemble(values, LocationSet(np.arange(4.0)[:, None]), SPEC, 0)
    a = minimizer_distribution(ens, seed=3)
    b = minimizer_distribution(ens, seed=3)
    np.testing.assert_array_equal(a.probabilities, b.probabilities)
    np.testing.assert_allclose(a.probabilities, 0.25, atol=0.05)


def test_mass_within():
    pmf = MinimizerPmf(np.array([[0.0], [1.0], [2.0]]), [0.2, 0.3, 0.5])
    assert pmf.mass_within([[0.1]], 0.5) == pytest.approx(0.2)
    assert pmf.mass_within([[0.0], [2.0]], 0.1) == pytest.approx(0.7)


# -- small worked cases ----------------------------------------------------------

def test_single_location_variance():
    paths = sample_unconditional(SPEC, LocationSet(np.array([[0.3]])), 100_000, seed=4)
    assert 0.97 <= paths.values.var(ddof=1) <= 1.03


def test_one_path_shape_and_seed_determinism():
    locs = LocationSet(np.linspace(0, 1, 7)[:, None])
    assert sample_unconditional(SPEC, locs, 1, seed=2).values.shape == (1, 7)
    a = sample_unconditional(SPEC, locs, 30, seed=2).values
    b = sample_unconditional(SPEC, locs, 30, seed=2).values
    assert a.tobytes() == b.tobytes()


def test_zero_residual_path_lands_on_the_prediction():
    from iago.simulation import PathEnsemble

    system, _, _ = _exact_setup(1)
    x = np.array([[1.7]])
    locs = LocationSet.merge(design=system.design.points, test=x)
    z_design = np.array([0.4, -1.0, 0.2, 0.9, -0.3])
    # the value at x is the Kriging interpolant of the path's own design values
    lam = system.weights(x)[0][:, 0]
    z = np.empty((1, locs.size))
    z[0, locs.indices("design")] = z_design
    z[0, locs.indices("test")] = z_design @ lam
    t = condition_paths(PathEnsemble(z, locs, SPEC, 0), system).restrict("test")
    assert t[0, 0] == pytest.approx(system.predict_mean(x)[0], abs=1e-10)


def test_vanishing_noise_recovers_exact_conditioning():
    x = np.array([[0.0], [1.0], [2.5]])
    values = [0.5, -0.2, 1.0]
    test = np.linspace(-0.5, 3.0, 8)[:, None]
    locs = LocationSet.merge(design=x, test=test)
    z = sample_unconditional(SPEC, locs, 500, seed=5)
    exact = condition_paths(z, assemble_system(Design(x, values), SPEC))
    noisy = condition_paths_noisy(z, assemble_system(Design(x, values, [1e-10] * 3), SPEC), seed=6)
    np.testing.assert_allclose(noisy.values, exact.values, atol=1e-3)


def test_noisy_paths_spread_at_design_points():
    x = np.array([[0.0], [1.0], [2.5], [4.0]])
    obs = [0.5, -0.2, 1.0, 0.3]
    system = assemble_system(Design(x, obs, [0.04] * 4), SPEC)
    locs = LocationSet.merge(design=x)
    t = condition_paths_noisy(sample_unconditional(SPEC, locs, 4000, seed=7), system,
                              seed=8).restrict("design")
    ratio = t.var(axis=0, ddof=1) / system.predict(x)[1]
    assert np.all((ratio > 0.85) & (ratio < 1.15))
    # the simulated measurements are not the observed ones
    assert not np.allclose(t, np.broadcast_to(obs, t.shape), atol=1e-3)


def test_point_mass_and_even_split():
    from iago.simulation import PathEnsemble

    locs = LocationSet(np.arange(5.0)[:, None])
    vals = np.ones((20, 5))
    vals[:, 3] = 0.0
    pmf = minimizer_distribution(PathEnsemble(vals, locs, SPEC, 0), seed=0)
    np.testing.assert_array_equal(pmf.probabilities, [0, 0, 0, 1, 0])
    two = np.array([[0.0, 1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0, 0.0]])
    pmf = minimizer_distribution(PathEnsemble(two, locs, SPEC, 0), seed=0)
    np.testing.assert_array_equal(pmf.probabilities, [0.5, 0, 0, 0, 0.5])


def test_two_dimensional_conditioned_moments():
    spec = CovarianceSpec(1.0, (0.8, 1.2))
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 2, (6, 2))
    system = assemble_system(Design(x, np.sin(x[:, 0]) + x[:, 1]), spec)
    test = rng.uniform(0, 2, (10, 2))
    locs = LocationSet.merge(design=x, test=test)
    t = condition_paths(sample_unconditional(spec, locs, 4000, seed=10), system).restrict("test")
    mean, var = system.predict(test)
    assert np.all(np.abs(t.mean(axis=0) - mean) <= 4 * np.sqrt(var / 4000))
    ratio = t.var(axis=0, ddof=1) / var
    assert np.all((ratio > 0.85) & (ratio < 1.15))
