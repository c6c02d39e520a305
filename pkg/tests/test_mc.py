"""
Tests for the frame simulator and the empirical estimators.
"""
import math

import numpy as np
import pytest

from sofi_fisher.blinking import EmitterModel, chi_set
from sofi_fisher.errors import InvalidParameterError
from sofi_fisher.fisher import zeta_max
from sofi_fisher.mc import (
    analytic_cumulant_image,
    cumulant_image_check,
    empirical_summary,
    fit_gaussian_width,
    lag_covariance,
    read_batch,
    score_fi_oracle,
    simulate_frames,
    write_batch,
)
from sofi_fisher.model import DetectorGeometry
from sofi_fisher.summary import SchemeSpec, build_summary


class TestSimulateFrames:
    def test_deterministic(self, geometry, simplified):
        """Same seed and replica give identical counts; replicas differ."""
        a = simulate_frames(simplified, geometry, 0.3, 500, seed=7)
        b = simulate_frames(simplified, geometry, 0.3, 500, seed=7)
        c = simulate_frames(simplified, geometry, 0.3, 500, seed=7, replica=1)
        np.testing.assert_array_equal(a.counts, b.counts)
        assert not np.array_equal(a.counts, c.counts)

    def test_counts_are_frozen(self, geometry, simplified):
        """Batches expose read-only int32 counts of shape (frames, pixels)."""
        batch = simulate_frames(simplified, geometry, 0.3, 10, seed=1)
        assert batch.counts.shape == (10, geometry.n_pixels)
        assert batch.counts.dtype == np.int32
        with pytest.raises(ValueError):
            batch.counts[0, 0] = 1

    def test_needs_frames(self, geometry, simplified):
        """At least one frame is required."""
        with pytest.raises(InvalidParameterError):
            simulate_frames(simplified, geometry, 0.3, 0, seed=1)

    def test_markov_mean_count(self, geometry, markov):
        """Mean total count is 2χ₁."""
        batch = simulate_frames(markov, geometry, 0.0, 20_000, seed=3)
        total = batch.counts.sum(axis=1)
        expected = 2 * chi_set(markov, geometry.frame_time).chi1
        # Batch means over 100 frames are close to independent.
        means = total.reshape(200, 100).mean(axis=1)
        stderr = means.std(ddof=1) / math.sqrt(len(means))
        assert abs(total.mean() - expected) < 5 * stderr

    def test_markov_lag_covariance(self, geometry):
        """Adjacent-frame covariance of the total count is 2 cov(X₁, X₂)."""
        model = EmitterModel.from_alpha(1.0, kind="markov", mean_power=100.0)
        g = geometry.model_copy(update={"frame_time": 0.5})
        batch = simulate_frames(model, g, 0.0, 200_000, seed=5)
        chi = chi_set(model, 0.5, max_lag=2)
        expected = 2 * (chi.chi2[1] - chi.chi1**2)
        assert lag_covariance(batch, 1)[0] == pytest.approx(expected, rel=0.1)

    def test_independent_frames_uncorrelated(self, geometry, simplified):
        """Simplified frames carry no lag covariance."""
        batch = simulate_frames(simplified, geometry, 0.0, 50_000, seed=2)
        total = batch.counts.sum(axis=1)
        lag1 = lag_covariance(batch, 1)[0]
        assert abs(lag1) < 5 * total.var() / math.sqrt(batch.n_frames)


class TestBatchFiles:
    def test_write_then_read(self, tmp_path, geometry, markov):
        """A stored batch comes back with counts and provenance intact."""
        batch = simulate_frames(markov, geometry, 0.4, 64, seed=11, replica=2)
        path = write_batch(batch, tmp_path / "frames.bin")
        loaded = read_batch(path)
        np.testing.assert_array_equal(loaded.counts, batch.counts)
        assert loaded.model == markov
        assert loaded.geometry == geometry
        assert (loaded.seed, loaded.replica, loaded.theta) == (11, 2, 0.4)

    def test_rejects_foreign_files(self, tmp_path):
        """Files without the batch header are refused."""
        path = tmp_path / "other.bin"
        path.write_bytes(b'{"format": "something else"}\n')
        with pytest.raises(InvalidParameterError):
            read_batch(path)


class TestEmpiricalSummary:
    def test_agrees_with_analytic(self, geometry):
        """Sample statistics match the exact summary within 5 standard errors."""
        model = EmitterModel.from_alpha(0.9, mean_power=100.0)
        scheme = SchemeSpec(id="M")
        analytic = build_summary(scheme, geometry, model, 0.2)
        batch = simulate_frames(model, geometry, 0.2, 200_000, seed=1)
        empirical = empirical_summary(batch, scheme, n_groups=50)
        assert empirical.labels == tuple(analytic.labels)
        z_mean, z_sigma = empirical.z_scores(analytic)
        assert z_mean.max() < 5
        assert z_sigma.max() < 5

    def test_ac2_agrees_with_analytic(self, geometry):
        """Sample-centered AC2 matches the exact pixel variances and their covariance."""
        model = EmitterModel.from_alpha(0.9, mean_power=100.0)
        scheme = SchemeSpec.parse("AC2")
        analytic = build_summary(scheme, geometry, model, 0.2)
        batch = simulate_frames(model, geometry, 0.2, 200_000, seed=2)
        empirical = empirical_summary(batch, scheme, n_groups=50)
        assert empirical.labels == tuple(analytic.labels)
        z_mean, z_sigma = empirical.z_scores(analytic)
        assert z_mean.max() < 5
        assert z_sigma.max() < 5
        variances = batch.counts.var(axis=0)
        pixels = [c.terms[0][1][0] for c in analytic.components]
        np.testing.assert_allclose(empirical.mean, variances[pixels], rtol=1e-8, atol=1e-9)

    def test_label_mismatch(self, geometry, simplified):
        """z-scores need the same statistics on both sides."""
        batch = simulate_frames(simplified, geometry, 0.2, 1000, seed=1)
        empirical = empirical_summary(batch, SchemeSpec(id="M"), n_groups=5)
        other = build_summary(SchemeSpec.parse("M+AC2"), geometry, simplified, 0.2)
        with pytest.raises(InvalidParameterError):
            empirical.z_scores(other)

    @pytest.mark.slow
    def test_markov_agrees_with_analytic(self, geometry):
        """Batch-means covariance reproduces the inter-frame terms."""
        model = EmitterModel.from_alpha(0.9, kind="markov", mean_power=100.0)
        scheme = SchemeSpec(id="M")
        analytic = build_summary(scheme, geometry, model, 0.2)
        batch = simulate_frames(model, geometry, 0.2, 10**6, seed=4)
        z_mean, z_sigma = empirical_summary(batch, scheme, n_groups=50).z_scores(analytic)
        assert max(z_mean.max(), z_sigma.max()) < 5


class TestCumulants:
    def test_analytic_first_order(self, geometry, simplified):
        """κ₁ is the mean image."""
        image = analytic_cumulant_image(simplified, geometry, 0.3, 1)
        s = build_summary(SchemeSpec(id="M"), geometry, simplified, 0.3)
        pixels = [c.terms[0][1][0] for c in s.components]
        np.testing.assert_allclose(image[pixels], s.mu, rtol=1e-10)

    def test_order_range(self, geometry, simplified):
        """Only orders 1..4 are available."""
        with pytest.raises(InvalidParameterError):
            analytic_cumulant_image(simplified, geometry, 0.3, 5)

    def test_markov_refused(self, geometry, markov):
        """Cumulant images assume independent frames."""
        batch = simulate_frames(markov, geometry, 0.0, 10, seed=1)
        with pytest.raises(InvalidParameterError):
            cumulant_image_check(batch, 2)

    def test_second_order_image(self, geometry, simplified):
        """Sampled κ₂ follows the analytic image."""
        batch = simulate_frames(simplified, geometry, 0.0, 100_000, seed=9)
        image = cumulant_image_check(batch, 2)
        peak = image.analytic.max()
        np.testing.assert_allclose(image.empirical, image.analytic, atol=0.03 * peak)

    def test_width_fit(self):
        """An exact Gaussian profile returns its width."""
        x = np.linspace(-6, 6, 49)
        profile = 3.0 * np.exp(-0.5 * (x / 0.7) ** 2)
        assert fit_gaussian_width(x, profile) == pytest.approx(0.7, rel=1e-6)

    @pytest.mark.slow
    def test_sofi_width_shrinks(self):
        """κ₂ - κ₁ of one emitter is the PSF squared, width σ/√2."""
        model = EmitterModel.from_alpha(1.0, mean_power=1000.0, p_off=0.5)
        g = DetectorGeometry.covering(pixel_size=0.25)
        batch = simulate_frames(model, g, 0.0, 10**6, seed=1)
        diff = cumulant_image_check(batch, 2).empirical - cumulant_image_check(batch, 1).empirical
        assert fit_gaussian_width(g.centers, diff) == pytest.approx(1 / math.sqrt(2), rel=0.02)


class TestScoreOracle:
    def test_preconditions(self):
        """The oracle needs the simplified kind, few photons and a tiny θ."""
        model = EmitterModel.from_alpha(1.0, mean_power=20.0)
        with pytest.raises(InvalidParameterError):
            score_fi_oracle(model, theta=0.5, n_samples=100, seed=1)
        bright = EmitterModel.from_alpha(1.0, mean_power=1000.0)
        with pytest.raises(InvalidParameterError):
            score_fi_oracle(bright, theta=0.001, n_samples=100, seed=1)
        markov = EmitterModel.from_alpha(1.0, kind="markov", mean_power=20.0)
        with pytest.raises(InvalidParameterError):
            score_fi_oracle(markov, theta=0.01, n_samples=100, seed=1)

    def test_matches_zeta_max(self):
        """The sampled full-data ζ agrees with the closed form."""
        model = EmitterModel.from_alpha(1.0, mean_power=20.0, p_off=0.5)
        estimate = score_fi_oracle(model, theta=0.01, n_samples=200_000, seed=3)
        expected = zeta_max(0.5, 1.0, 20.0)
        assert estimate.zeta == pytest.approx(expected, abs=4 * estimate.zeta_stderr + 0.01 * expected)
