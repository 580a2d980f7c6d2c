import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from phasecorr.config import SIMULATION_CHUNK
from phasecorr.core.errors import EmptyBinError, ValidationError
from phasecorr.gaussian_sim import (AsymmetricSource, PhaseNoiseModel,
                                    QuadratureDataset, SqueezingSpec,
                                    asymmetric_covariance, bin_phases,
                                    cycle_bin_centers, db_from_squeezing,
                                    sample_asymmetric, sample_dataset,
                                    sample_phase_noise, squeezing_from_db,
                                    tmsv_covariance, variance_profile,
                                    wrap_phase, wrapped_uniformity)


class TestSqueezingLevels:
    def test_initial_squeezing_conversion(self):
        """Test the dB to r conversion of the initial squeezing."""
        assert squeezing_from_db(7.4) == pytest.approx(7.4 * np.log(10) / 20)
        assert squeezing_from_db(-7.4) == squeezing_from_db(7.4)

    @pytest.mark.parametrize("detected", [False, True])
    def test_conversion_inverts(self, detected):
        """Test that dB and r conversions invert each other."""
        r = squeezing_from_db(3.0, eta=0.6, detected=detected)
        assert db_from_squeezing(r, eta=0.6, detected=detected) == pytest.approx(3.0)

    def test_unreachable_detected_level(self):
        """Test that a detected level beyond the loss limit is rejected."""
        with pytest.raises(ValidationError):
            squeezing_from_db(10.0, eta=0.6, detected=True)

    def test_spec_properties(self):
        """Test the photon-number ratios and marginal variance of a spec."""
        spec = SqueezingSpec(r=0.5, eta=0.8)
        assert spec.p == pytest.approx(np.tanh(0.5))
        assert spec.thermal_ratio == pytest.approx(np.tanh(0.5) ** 2)
        assert spec.marginal_variance == pytest.approx(0.8 * np.cosh(1.0) + 0.2)

    def test_spec_rejects_out_of_range_values(self):
        """Test that pydantic rejects out-of-range parameters."""
        with pytest.raises(PydanticValidationError):
            SqueezingSpec(r=0.5, eta=1.5)
        with pytest.raises(PydanticValidationError):
            PhaseNoiseModel(kind="band_limited", sigma=-0.1)


class TestCovariance:
    def test_tmsv_covariance_entries(self):
        """Test the lossy TMSV quadrature covariance entries."""
        spec = SqueezingSpec(r=0.6, theta=0.2, eta=0.7)
        cov = tmsv_covariance(spec, 0.3, 0.4)
        assert cov[0, 0] == pytest.approx(0.7 * np.cosh(1.2) + 0.3)
        assert cov[0, 1] == pytest.approx(0.7 * np.sinh(1.2) * np.cos(0.5))
        assert np.linalg.eigvalsh(cov)[0] > 0

    @pytest.mark.parametrize("phi_a,phi_b", [(0.0, 0.0), (0.3, 1.2), (2.0, 5.5)])
    def test_symmetric_two_source_model_is_tmsv(self, phi_a, phi_b):
        """Test that equal orthogonal sources reproduce the TMSV."""
        r, eta = 0.7, 0.6
        source = AsymmetricSource(r1=r, r2=r, relative_phase=np.pi / 2, eta=eta)
        expected = tmsv_covariance(SqueezingSpec(r=r, theta=0.0, eta=eta), phi_a, phi_b)
        assert np.allclose(asymmetric_covariance(source, phi_a, phi_b), expected, atol=1e-12)

    def test_aligned_sources_have_no_xx_correlation(self):
        """Test that aligned sources give no x-x correlation."""
        source = AsymmetricSource(r1=0.7, r2=0.7, relative_phase=0.0)
        assert asymmetric_covariance(source, 0.0, 0.0)[0, 1] == pytest.approx(0.0, abs=1e-12)


class TestPhaseNoise:
    def test_uniform_noise_is_flat(self):
        """Test that uniform noise fills [0, 2 pi) evenly."""
        phases = sample_phase_noise(PhaseNoiseModel(kind="uniform"), 200_000, seed=1)
        assert np.all((phases >= 0) & (phases < 2 * np.pi))
        assert wrapped_uniformity(phases) < 0.02

    def test_band_limited_noise_statistics(self):
        """Test the spread and lag-one correlation of band-limited noise."""
        tau, sigma = 10.0, 0.3
        model = PhaseNoiseModel(kind="band_limited", sigma=sigma, correlation_time=tau)
        delta = np.angle(np.exp(1j * sample_phase_noise(model, 400_000, seed=2)))
        assert delta.std() == pytest.approx(sigma, rel=0.05)
        lag1 = np.corrcoef(delta[:-1], delta[1:])[0, 1]
        assert lag1 == pytest.approx(np.exp(-1 / tau), abs=0.02)
        assert wrapped_uniformity(delta) > 0.5

    def test_strong_band_limited_noise_randomizes(self):
        """Test that band-limited noise with sigma = 3.7 wraps to a near-uniform phase."""
        model = PhaseNoiseModel(kind="band_limited", sigma=3.7, correlation_time=1.0)
        assert wrapped_uniformity(sample_phase_noise(model, 400_000, seed=8)) < 0.05

    def test_no_noise_is_zero(self):
        """Test that kind none gives zero offsets."""
        assert not sample_phase_noise(PhaseNoiseModel(), 10, seed=0).any()

    @pytest.mark.parametrize("kind", ["uniform", "band_limited"])
    def test_noise_independent_of_thread_count(self, kind):
        """Test that noise does not depend on the thread count."""
        model = PhaseNoiseModel(kind=kind, sigma=0.2, correlation_time=5.0)
        n = 2 * SIMULATION_CHUNK + 17
        assert np.array_equal(sample_phase_noise(model, n, seed=9, threads=1),
                              sample_phase_noise(model, n, seed=9, threads=4))

    def test_wrap_phase_range(self):
        """Test that wrapped phases stay in [0, 2 pi)."""
        wrapped = wrap_phase(np.array([-1e-18, 2 * np.pi, 7.0, -3.0]))
        assert np.all((wrapped >= 0) & (wrapped < 2 * np.pi))


class TestSampling:
    def test_vacuum_variance(self):
        """Test the vacuum variance of 1 and vanishing correlation."""
        ds = sample_dataset(SqueezingSpec(r=0.0), PhaseNoiseModel(), 200_000, seed=4)
        assert ds.x_a.var() == pytest.approx(1.0, abs=0.02)
        assert ds.x_b.var() == pytest.approx(1.0, abs=0.02)
        assert abs(np.mean(ds.x_a * ds.x_b)) < 0.02

    def test_sample_moments_match_covariance(self):
        """Test sample moments against the covariance at fixed phases."""
        spec = SqueezingSpec(r=0.5, eta=0.9)
        n = 200_000
        schedule = np.tile([0.4, 0.2], (n, 1))
        ds = sample_dataset(spec, PhaseNoiseModel(), n, phase_schedule=schedule, seed=5)
        cov = tmsv_covariance(spec, 0.4, 0.2)
        sample = np.cov(ds.x_a, ds.x_b)
        # 6 sigma of the sample (co)variance at this n
        scale = 6 * np.sqrt(2.0 / n) * cov[0, 0]
        assert np.allclose(sample, cov, atol=scale)

    def test_uniform_noise_removes_pooled_correlation(self):
        """Test that uniform noise drives the pooled mean of x_A x_B to zero."""
        spec = SqueezingSpec(r=0.5, eta=0.8)
        n = 400_000
        schedule = np.zeros((n, 2))
        locked = sample_dataset(spec, PhaseNoiseModel(), n, phase_schedule=schedule, seed=13)
        noisy = sample_dataset(spec, PhaseNoiseModel(kind="uniform"), n, phase_schedule=schedule, seed=13)
        product = noisy.x_a * noisy.x_b
        assert np.mean(locked.x_a * locked.x_b) == pytest.approx(tmsv_covariance(spec, 0.0, 0.0)[0, 1], rel=0.05)
        assert abs(product.mean()) < 5 * np.sqrt(np.mean(product ** 2) / n)

    def test_records_keep_nominal_phases(self):
        """Test that records carry the nominal phases, not the noisy ones."""
        ds = sample_dataset(SqueezingSpec(r=0.3), PhaseNoiseModel(kind="uniform"), 1800, seed=0)
        assert np.array_equal(ds.records[:, 2:], cycle_bin_centers(1800))

    def test_same_seed_same_bytes(self):
        """Test that the seed fixes the output bytes."""
        spec, noise = SqueezingSpec(r=0.4, eta=0.7), PhaseNoiseModel(kind="uniform")
        a = sample_dataset(spec, noise, 5000, seed=11)
        b = sample_dataset(spec, noise, 5000, seed=11)
        c = sample_dataset(spec, noise, 5000, seed=12)
        assert a.records.tobytes() == b.records.tobytes()
        assert not np.array_equal(a.records, c.records)

    def test_thread_count_does_not_change_output(self):
        """Test that the thread count does not change the records."""
        spec = SqueezingSpec(r=0.4, eta=0.7)
        noise = PhaseNoiseModel(kind="band_limited", sigma=0.1, correlation_time=3.0)
        n = SIMULATION_CHUNK + 1000
        assert np.array_equal(sample_dataset(spec, noise, n, seed=3, threads=1).records,
                              sample_dataset(spec, noise, n, seed=3, threads=3).records)

    @pytest.mark.parametrize("n", [0, 2.5, -4])
    def test_invalid_counts(self, n):
        """Test that non-positive or fractional counts are rejected."""
        with pytest.raises(ValidationError):
            sample_dataset(SqueezingSpec(), PhaseNoiseModel(), n)

    def test_schedule_shape_checked(self):
        """Test that a schedule of the wrong shape is rejected."""
        with pytest.raises(ValidationError):
            sample_dataset(SqueezingSpec(), PhaseNoiseModel(), 10, phase_schedule=np.zeros((9, 2)))

    def test_dataset_shape_checked(self):
        """Test that records must have four columns."""
        with pytest.raises(ValidationError):
            QuadratureDataset(np.zeros((5, 3)))

    @pytest.mark.parametrize("column,value", [(2, 2 * np.pi), (3, -0.1), (2, np.nan), (0, np.inf)])
    def test_dataset_values_checked(self, column, value):
        """Test that non-finite values and phases outside [0, 2 pi) are rejected."""
        records = np.zeros((3, 4))
        records[1, column] = value
        with pytest.raises(ValidationError):
            QuadratureDataset(records)

    def test_asymmetric_sampling_records_its_source(self):
        """Test that two-source datasets record their source."""
        source = AsymmetricSource(r1=0.5, r2=0.2)
        ds = sample_asymmetric(source, PhaseNoiseModel(), 900, seed=1)
        assert ds.spec == source
        assert ds.metadata()["spec_kind"] == "AsymmetricSource"


class TestBinning:
    def test_cycled_schedule_fills_bins_evenly(self):
        """Test that the cycled schedule fills every bin pair evenly."""
        ds = sample_dataset(SqueezingSpec(), PhaseNoiseModel(), 900 * 3, seed=0)
        binned = bin_phases(ds)
        assert np.all(binned.counts == 3)
        assert binned.records_for(4, 7).shape == (3, 4)
        assert np.allclose(binned.records_for(4, 7)[:, 2:], binned.bin_centers()[[4, 7]])

    def test_phase_near_two_pi_lands_in_last_bin(self):
        """Test that a phase just below 2 pi lands in the last bin."""
        records = np.array([[0.0, 0.0, np.nextafter(2 * np.pi, 0), 0.0]])
        assert bin_phases(QuadratureDataset(records), 30).counts[29, 0] == 1

    def test_variance_profile_follows_single_mode_squeezing(self):
        """Test the phase-resolved variance of a single squeezed source."""
        source = AsymmetricSource(r1=0.5, r2=0.0)
        ds = sample_asymmetric(source, PhaseNoiseModel(), 300_000, seed=6)
        profile = variance_profile(ds, "A")
        expected = [asymmetric_covariance(source, phi, 0.0)[0, 0] for phi in profile.bin_centers]
        assert np.allclose(profile.variances, expected, rtol=0.1)
        assert profile.variances.max() / profile.variances.min() > 2

    def test_uniform_noise_flattens_mode_a(self):
        """Test that uniform noise flattens the variance profile of mode A."""
        source = AsymmetricSource(r1=0.5, r2=0.0)
        ds = sample_asymmetric(source, PhaseNoiseModel(kind="uniform"), 300_000, seed=7)
        profile = variance_profile(ds, "A", n_bins=10)
        assert profile.variances.max() - profile.variances.min() < 0.08
        flat = 0.5 * (np.exp(-1.0) + 1 + np.exp(1.0) + 1) / 2
        assert profile.variances.mean() == pytest.approx(flat, rel=0.03)

    def test_sparse_bins_raise(self):
        """Test that bins with fewer than two records raise EmptyBinError."""
        ds = sample_dataset(SqueezingSpec(), PhaseNoiseModel(), 40, seed=0)
        with pytest.raises(EmptyBinError) as info:
            variance_profile(ds, "A")
        assert len(info.value.bin_index) == 1

    def test_unknown_mode_rejected(self):
        """Test that an unknown mode is rejected."""
        ds = sample_dataset(SqueezingSpec(), PhaseNoiseModel(), 900, seed=0)
        with pytest.raises(ValidationError):
            variance_profile(ds, "C")
