import warnings

import numpy as np
import pytest

from phasecorr.core.errors import BoundaryMassWarning, ValidationError
from phasecorr.gaussian_sim import (PhaseNoiseModel, QuadratureDataset,
                                    SqueezingSpec, sample_dataset)
from phasecorr.processors.quasiprob import (PhaseSpaceGrid, WidthScanEntry,
                                            WidthScanResult, ensemble_stats,
                                            estimate_pomega, grid_axis,
                                            normalization_check,
                                            pomega_oracle, significance,
                                            width_scan)

AXIS = np.array([0.0, 0.5, 1.0, 1.5])


@pytest.fixture(scope="module")
def randomized_dataset():
    spec = SqueezingSpec(r=0.5, eta=0.7)
    return sample_dataset(spec, PhaseNoiseModel(kind="uniform"), 400_000, seed=31)


class TestGrid:
    def test_axis_is_inclusive(self):
        """Test that the grid axis includes its end point."""
        axis = grid_axis(0.0, 3.0, 0.1)
        assert axis.size == 31
        assert axis[-1] == 3.0 and axis[10] == 1.0

    @pytest.mark.parametrize("args", [(-1.0, 1.0, 0.1), (2.0, 1.0, 0.1), (0.0, 1.0, 0.0)])
    def test_invalid_axis(self, args):
        """Test that negative, reversed or zero-step axes are rejected."""
        with pytest.raises(ValidationError):
            grid_axis(*args)

    def test_rows_and_z(self):
        """Test grid rows, z-scores and nearest-point lookup."""
        grid = PhaseSpaceGrid(AXIS[:2], AXIS[:2], np.array([[1.0, -2.0], [3.0, 4.0]]), np.full((2, 2), 0.5))
        assert grid.rows()[1] == (0.0, 0.5, -2.0, 0.5, -4.0)
        assert grid.index_of(0.45, 0.1) == (1, 0)

    def test_z_needs_errors(self):
        """Test that z needs standard errors."""
        with pytest.raises(ValidationError):
            PhaseSpaceGrid(AXIS, AXIS, np.zeros((4, 4))).z


class TestEstimator:
    def test_agrees_with_oracle(self, randomized_dataset, pattern_table, filter_table):
        """Test the sampled estimate against the oracle surface."""
        stats = ensemble_stats(randomized_dataset, AXIS, AXIS, 1.3, pattern_table, n_ensembles=40)
        oracle = pomega_oracle(randomized_dataset.spec, randomized_dataset.noise, AXIS, AXIS, 1.3, filter_table)
        z = (stats.p - oracle.p) / stats.sigma
        assert np.max(np.abs(z)) < 5

    def test_ensemble_mean_is_full_sample_mean(self, randomized_dataset, pattern_table):
        """Test that the ensemble mean equals the full-sample estimate."""
        full = estimate_pomega(randomized_dataset, AXIS, AXIS, 1.3, pattern_table)
        stats = ensemble_stats(randomized_dataset, AXIS, AXIS, 1.3, pattern_table, n_ensembles=40)
        assert np.allclose(full.p, stats.p, rtol=1e-12, atol=1e-12)
        assert stats.metadata["dropped"] == 0

    def test_remainder_records_dropped(self, pattern_table):
        """Test that trailing records are dropped to equalize ensembles."""
        ds = sample_dataset(SqueezingSpec(), PhaseNoiseModel(), 1003, seed=0)
        stats = ensemble_stats(ds, AXIS, AXIS, 1.3, pattern_table, n_ensembles=10)
        assert stats.metadata["dropped"] == 3
        assert stats.metadata["n_total"] == 1000

    def test_phases_are_ignored(self, randomized_dataset, pattern_table):
        """Test that the estimator ignores the recorded phases."""
        shifted = randomized_dataset.records.copy()
        shifted[:, 2:] = np.mod(shifted[:, 2:] + 1.234, 2 * np.pi)
        rotated = QuadratureDataset(shifted, spec=randomized_dataset.spec)
        first = estimate_pomega(randomized_dataset, AXIS, AXIS, 1.3, pattern_table)
        second = estimate_pomega(rotated, AXIS, AXIS, 1.3, pattern_table)
        assert np.array_equal(first.p, second.p)

    def test_linear_in_records(self, pattern_table):
        """Test that the estimate is the record average."""
        spec = SqueezingSpec(r=0.3)
        one = sample_dataset(spec, PhaseNoiseModel(kind="uniform"), 5000, seed=1)
        two = sample_dataset(SqueezingSpec(), PhaseNoiseModel(), 5000, seed=2)
        mixed = QuadratureDataset(np.concatenate([one.records, two.records]))
        average = 0.5 * (estimate_pomega(one, AXIS, AXIS, 1.3, pattern_table).p
                         + estimate_pomega(two, AXIS, AXIS, 1.3, pattern_table).p)
        assert np.allclose(estimate_pomega(mixed, AXIS, AXIS, 1.3, pattern_table).p, average, rtol=0, atol=1e-12)

    def test_thread_count_does_not_change_estimate(self, randomized_dataset, pattern_table):
        """Test that the thread count does not change the estimate."""
        single = estimate_pomega(randomized_dataset, AXIS, AXIS, 1.3, pattern_table, threads=1)
        pooled = estimate_pomega(randomized_dataset, AXIS, AXIS, 1.3, pattern_table, threads=4)
        assert np.array_equal(single.p, pooled.p)

    def test_width_must_match_table(self, randomized_dataset, pattern_table):
        """Test that the table width must match the requested width."""
        with pytest.raises(ValidationError):
            estimate_pomega(randomized_dataset, AXIS, AXIS, 1.5, pattern_table)

    def test_convention_must_match_table(self, pattern_table):
        """Test that the quadrature conventions must agree."""
        ds = QuadratureDataset(np.zeros((10, 4)), convention="x=(a+a^dag)/sqrt(2)")
        with pytest.raises(ValidationError):
            estimate_pomega(ds, AXIS, AXIS, 1.3, pattern_table)

    def test_vacuum_shows_no_negativity(self, pattern_table):
        """Test that vacuum data shows no significant negativity."""
        ds = sample_dataset(SqueezingSpec(), PhaseNoiseModel(), 500_000, seed=41)
        stats = ensemble_stats(ds, AXIS, AXIS, 1.3, pattern_table, n_ensembles=50)
        assert np.min(stats.z) > -5

    @pytest.mark.slow
    @pytest.mark.parametrize("spec", [SqueezingSpec(), SqueezingSpec(excess_noise=0.5)], ids=["vacuum", "thermal"])
    def test_classical_states_on_default_grid(self, spec, pattern_table):
        """Test that classical data shows no negativity and integrates to one."""
        ds = sample_dataset(spec, PhaseNoiseModel(kind="uniform"), 1_000_000, seed=43)
        axis = grid_axis()
        stats = ensemble_stats(ds, axis, axis, 1.3, pattern_table, n_ensembles=50)
        assert np.min(stats.z) > -5
        assert normalization_check(stats) == pytest.approx(1.0, abs=0.05)


class TestSignificance:
    def test_largest_negative_z(self):
        """Test that Sigma is the largest negative z-score."""
        p = np.array([[0.1, -0.2], [-0.3, 0.0]])
        sigma = np.array([[1.0, 0.05], [0.1, 1.0]])
        report = significance(PhaseSpaceGrid(AXIS[:2], AXIS[2:], p, sigma, {"w": 1.3}))
        assert report.significance == pytest.approx(4.0)
        assert (report.a_star, report.b_star) == (0.0, 1.5)
        assert report.summary() == {"w": 1.3, "Sigma": report.significance, "argmax": [0.0, 1.5]}

    def test_first_maximum_wins(self):
        """Test that the first maximum wins ties."""
        p = np.full((2, 2), -1.0)
        report = significance(PhaseSpaceGrid(AXIS[:2], AXIS[:2], p, np.ones((2, 2))))
        assert (report.a_star, report.b_star) == (0.0, 0.0)

    def test_requires_positive_errors(self):
        """Test that zero errors are rejected."""
        with pytest.raises(ValidationError):
            significance(PhaseSpaceGrid(AXIS[:2], AXIS[:2], np.zeros((2, 2)), np.zeros((2, 2))))


class TestWidthScan:
    def test_failed_width_is_reported(self, randomized_dataset, filter_table):
        """Test that a failing width is recorded and the scan goes on."""
        result = width_scan(randomized_dataset, AXIS, AXIS, [1.0, 3.0], filter=filter_table, n_ensembles=10,
                            steps=(0.01, 0.01), a_range=(0.0, 2.0), tolerance=1e-4)
        assert [e.w for e in result.entries] == [1.0, 3.0]
        assert result.entries[0].error is None and np.isfinite(result.entries[0].significance)
        assert result.entries[1].error is not None
        assert result.best().w == 1.0
        assert len(result.rows()) == 2

    def test_ties_go_to_smaller_width(self):
        """Test that ties go to the smaller width."""
        result = WidthScanResult([WidthScanEntry(1.4, 3.0), WidthScanEntry(1.2, 3.0), WidthScanEntry(1.6, 2.0)])
        assert result.best().w == 1.2

    def test_no_successful_width(self):
        """Test that best() is None when every width failed."""
        assert WidthScanResult([WidthScanEntry(1.0, error="failed")]).best() is None

    @pytest.mark.slow
    def test_canonical_significance_peaks_inside_scan(self, canonical_spec, uniform_noise, filter_table):
        """Test that Sigma(w) peaks inside 1.0..1.8 while the negativity deepens with w."""
        ds = sample_dataset(canonical_spec, uniform_noise, 2_000_000, seed=19)
        axis = grid_axis()
        widths = [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8]
        result = width_scan(ds, axis, axis, widths, filter=filter_table, n_ensembles=50)
        by_width = {e.w: e for e in result.entries}
        sigmas = [e.significance for e in result.entries]
        assert all(e.error is None for e in result.entries)
        assert 0 < int(np.argmax(sigmas)) < len(widths) - 1
        assert result.best().w in (1.2, 1.3, 1.4)
        assert by_width[1.0].significance < 0
        assert by_width[1.6].significance < by_width[1.3].significance
        assert abs(by_width[1.6].min_p) > abs(by_width[1.3].min_p)


class TestNormalization:
    def test_gaussian_integrates_to_one(self):
        """Test the radial integration on a normalized Gaussian."""
        axis = grid_axis(0.0, 6.0, 0.01)
        p = np.exp(-axis[:, None] ** 2 - axis[None, :] ** 2) / np.pi ** 2
        assert normalization_check(PhaseSpaceGrid(axis, axis, p)) == pytest.approx(1.0, abs=1e-4)

    def test_truncated_grid_warns(self):
        """Test that a truncated grid raises BoundaryMassWarning."""
        axis = grid_axis(0.0, 0.5, 0.05)
        p = np.exp(-axis[:, None] ** 2 - axis[None, :] ** 2) / np.pi ** 2
        with pytest.warns(BoundaryMassWarning):
            normalization_check(PhaseSpaceGrid(axis, axis, p))

    def test_vacuum_oracle_fits_default_grid(self, uniform_noise, filter_table):
        """Test that vacuum at the default grid and width raises no boundary warning."""
        axis = grid_axis()
        oracle = pomega_oracle(SqueezingSpec(), uniform_noise, axis, axis, 1.3, filter_table)
        with warnings.catch_warnings():
            warnings.simplefilter("error", BoundaryMassWarning)
            assert normalization_check(oracle) == pytest.approx(1.0, abs=0.02)

    def test_edge_noise_within_errors_is_ignored(self):
        """Test that edge values within three standard errors do not warn."""
        axis = grid_axis(0.0, 3.0, 0.1)
        p = np.exp(-axis[:, None] ** 2 - axis[None, :] ** 2) / np.pi ** 2
        p[-1, :] += 2e-3
        sigma = np.full_like(p, 1e-3)
        with warnings.catch_warnings():
            warnings.simplefilter("error", BoundaryMassWarning)
            normalization_check(PhaseSpaceGrid(axis, axis, p, sigma))
        with pytest.warns(BoundaryMassWarning):
            normalization_check(PhaseSpaceGrid(axis, axis, p))

    def test_oracle_surface_is_normalized(self, filter_table):
        """Test that the oracle surface integrates to one."""
        axis = grid_axis(0.0, 5.0, 0.05)
        oracle = pomega_oracle(SqueezingSpec(r=0.4, eta=0.8), PhaseNoiseModel(kind="uniform"), axis, axis, 1.0,
                               filter_table)
        assert normalization_check(oracle) == pytest.approx(1.0, abs=0.02)


class TestOracle:
    def test_canonical_negativity(self, canonical_spec, uniform_noise, filter_table):
        """Test the oracle negativity at (0, 1.5) for the canonical state."""
        oracle = pomega_oracle(canonical_spec, uniform_noise, np.array([0.0]), np.array([1.5]), 1.3, filter_table)
        assert oracle.p[0, 0] < 0

    def test_vacuum_surface_is_nonnegative_product(self, uniform_noise, filter_table):
        """Test that the vacuum surface is a nonnegative product."""
        axis = grid_axis(0.0, 3.0, 0.1)
        p = pomega_oracle(SqueezingSpec(), uniform_noise, axis, axis, 1.3, filter_table).p
        assert np.min(p) > -1e-10
        assert np.allclose(p, np.outer(p[:, 0], p[0, :]) / p[0, 0], rtol=1e-10, atol=1e-14)

    def test_full_loss_is_vacuum(self, uniform_noise, filter_table):
        """Test that full loss gives the vacuum surface."""
        lossy = pomega_oracle(SqueezingSpec(r=0.8, eta=0.0), uniform_noise, AXIS, AXIS, 1.3, filter_table)
        vacuum = pomega_oracle(SqueezingSpec(), uniform_noise, AXIS, AXIS, 1.3, filter_table)
        assert np.allclose(lossy.p, vacuum.p, rtol=1e-12, atol=1e-15)

    def test_thermal_surface_is_nonnegative(self, uniform_noise, filter_table):
        """Test that a thermal surface is nonnegative."""
        axis = grid_axis(0.0, 3.0, 0.1)
        p = pomega_oracle(SqueezingSpec(excess_noise=0.5), uniform_noise, axis, axis, 1.3, filter_table).p
        assert np.min(p) > -1e-10

    def test_symmetric_in_modes(self, canonical_spec, uniform_noise, filter_table):
        """Test that the oracle is symmetric in the two modes."""
        p = pomega_oracle(canonical_spec, uniform_noise, AXIS, AXIS, 1.3, filter_table).p
        assert np.allclose(p, p.T, rtol=1e-12, atol=1e-15)

    def test_requires_uniform_randomization(self, canonical_spec, filter_table):
        """Test that the oracle needs uniform randomization."""
        with pytest.raises(ValidationError):
            pomega_oracle(canonical_spec, PhaseNoiseModel(), AXIS, AXIS, 1.3, filter_table)

    @pytest.mark.slow
    def test_canonical_sampled_negativity(self, canonical_spec, uniform_noise, pattern_table, filter_table):
        """Test the sampled canonical negativity against the oracle."""
        ds = sample_dataset(canonical_spec, uniform_noise, 5_000_000, seed=7)
        stats = ensemble_stats(ds, AXIS, AXIS, 1.3, pattern_table, n_ensembles=50)
        oracle = pomega_oracle(canonical_spec, uniform_noise, AXIS, AXIS, 1.3, filter_table)
        assert np.all(np.abs(stats.p - oracle.p) < 5 * stats.sigma + 1e-5)
        i, j = stats.index_of(0.0, 1.5)
        assert stats.p[i, j] < 0

    @pytest.mark.slow
    def test_negativity_significance_grows_as_root_n(self, canonical_spec, uniform_noise, pattern_table):
        """Test that doubling the records raises the z-score at (0, 1.5) by about sqrt(2)."""
        ds = sample_dataset(canonical_spec, uniform_noise, 10_000_000, seed=23)
        half = ensemble_stats(ds.slice(0, 5_000_000), AXIS, AXIS, 1.3, pattern_table, n_ensembles=50)
        full = ensemble_stats(ds, AXIS, AXIS, 1.3, pattern_table, n_ensembles=50)
        i, j = full.index_of(0.0, 1.5)
        assert full.z[i, j] < -5
        assert full.z[i, j] / half.z[i, j] == pytest.approx(np.sqrt(2), rel=0.3)
