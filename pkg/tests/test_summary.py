"""
Tests for the Gaussian summaries of the statistic vectors.
"""
import numpy as np
import pytest

from sofi_fisher.blinking import EmitterModel, chi_set
from sofi_fisher.errors import IllConditionedWeightsError, UnsupportedSchemeError
from sofi_fisher.model import DetectorGeometry, pixel_overlaps
from sofi_fisher.summary import (
    SchemeSpec,
    build_summary,
    markov_summary,
    simplified_summary,
    statistic_components,
    weighted_xc2s_summary,
    xc2_weights,
)


class TestSchemeSpec:
    def test_parse_names(self):
        """Common spellings map onto scheme ids."""
        assert SchemeSpec.parse("M+AC2") == SchemeSpec(id="M_ACK", order=2)
        assert SchemeSpec.parse("m_xc2s").id == "M_XC2S"
        assert SchemeSpec.parse("M+ACK(3)").order == 3
        assert SchemeSpec.parse("AC2").id == "AC2"

    def test_labels(self):
        """Labels round-trip through parse."""
        for name in ("M", "AC2", "M+AC2", "M+ACK4", "M+XC2", "M+XC2S", "M+XC2W"):
            assert SchemeSpec.parse(name).label == name

    def test_unknown(self):
        """Unknown names raise UnsupportedSchemeError."""
        with pytest.raises(UnsupportedSchemeError):
            SchemeSpec.parse("XC3")


class TestStatisticComponents:
    def test_counts(self, geometry):
        """Number of statistics per scheme on 32 pixels."""
        n = geometry.n_pixels
        count = lambda name: len(statistic_components(SchemeSpec.parse(name), geometry))
        assert count("M") == n
        assert count("AC2") == n
        assert count("M+ACK3") == 3 * n
        assert count("M+XC2") == n + n * (n + 1) // 2
        assert count("M+XC2S") == n + 2 * n - 1

    def test_centroid_pairs_share_midpoint(self, geometry):
        """Every pair of a centroid sum has the same midpoint, closest pair first."""
        comps = statistic_components(SchemeSpec(id="M_XC2S"), geometry)
        for comp in comps[geometry.n_pixels:]:
            sums = {i + j for _, (i, j) in comp.terms}
            assert len(sums) == 1
            gaps = [j - i for _, (i, j) in comp.terms]
            assert gaps == sorted(gaps)

    def test_order_limits(self, geometry):
        """K > 4, and degree > 2 under Markov blinking, are unsupported."""
        with pytest.raises(UnsupportedSchemeError):
            statistic_components(SchemeSpec.parse("M+ACK5"), geometry)
        with pytest.raises(UnsupportedSchemeError):
            statistic_components(SchemeSpec.parse("M+ACK3"), geometry, kind="markov")


class TestSimplifiedSummary:
    def test_constant_emitters_are_poisson(self, geometry):
        """Without blinking, means are Poisson and Σ₁ is diagonal."""
        model = EmitterModel.from_alpha(0.0, mean_power=400.0)
        s = simplified_summary(SchemeSpec(id="M"), geometry, model, 0.3)
        ov = pixel_overlaps(geometry, theta=0.3)
        pixels = [c.terms[0][1][0] for c in s.components]
        expected = 200.0 * (ov.u1 + ov.u2)[pixels]
        np.testing.assert_allclose(s.mu, expected, rtol=1e-10)
        np.testing.assert_allclose(s.sigma1, np.diag(s.mu), atol=1e-9)

    def test_mean_photons(self, geometry, simplified):
        """⟨n⟩ counts both emitters' source photons."""
        s = build_summary(SchemeSpec(id="M"), geometry, simplified, 0.2)
        assert s.mean_photons_per_frame == pytest.approx(2 * simplified.mean_photons(1.0))

    def test_covariance_is_psd(self, geometry, simplified):
        """Σ₁ is symmetric positive semi-definite."""
        s = build_summary(SchemeSpec.parse("M+AC2"), geometry, simplified, 0.4)
        np.testing.assert_allclose(s.sigma1, s.sigma1.T)
        eig = np.linalg.eigvalsh(s.sigma1)
        assert eig.min() > -1e-8 * eig.max()

    def test_derivative_matches_finite_difference(self, geometry, simplified):
        """∂μ/∂θ agrees with a central difference of μ."""
        scheme = SchemeSpec.parse("M+AC2")
        h = 1e-5
        s = build_summary(scheme, geometry, simplified, 0.3)
        up = build_summary(scheme, geometry, simplified, 0.3 + h)
        down = build_summary(scheme, geometry, simplified, 0.3 - h)
        scale = np.abs(s.mu).max()
        np.testing.assert_allclose(s.dmu_dtheta, (up.mu - down.mu) / (2 * h), atol=1e-6 * scale)

    def test_ac2_is_pixel_variance(self, geometry, simplified):
        """AC2 is centered before squaring: its mean is var(n_j)."""
        ac2 = build_summary(SchemeSpec.parse("AC2"), geometry, simplified, 0.3)
        means = build_summary(SchemeSpec(id="M"), geometry, simplified, 0.3)
        j = ac2.components[0].terms[0][1][0]
        assert ac2.labels[0] == f"(n[{j}]-<n[{j}]>)^2"
        np.testing.assert_allclose(ac2.mu, np.diag(means.sigma1), rtol=1e-9)

    def test_ac2_derivative(self, geometry, simplified):
        """∂var(n_j)/∂θ agrees with a central difference."""
        scheme = SchemeSpec.parse("AC2")
        h = 1e-5
        s = build_summary(scheme, geometry, simplified, 0.3)
        up = build_summary(scheme, geometry, simplified, 0.3 + h)
        down = build_summary(scheme, geometry, simplified, 0.3 - h)
        scale = np.abs(s.mu).max()
        np.testing.assert_allclose(s.dmu_dtheta, (up.mu - down.mu) / (2 * h), atol=1e-6 * scale)

    def test_background_shifts_moments(self, simplified):
        """A Poisson background μ_B adds μ_B to each mean and to each variance only."""
        b = 0.7
        clean = simplified_summary(SchemeSpec(id="M"), DetectorGeometry.covering(0.5), simplified, 0.3)
        noisy = simplified_summary(
            SchemeSpec(id="M"), DetectorGeometry.covering(0.5, background_mean=b), simplified, 0.3
        )
        rows = [noisy.labels.index(label) for label in clean.labels]
        np.testing.assert_allclose(noisy.mu[rows], clean.mu + b, rtol=1e-10)
        np.testing.assert_allclose(
            noisy.sigma1[np.ix_(rows, rows)], clean.sigma1 + b * np.eye(len(rows)), rtol=1e-9, atol=1e-9
        )
        np.testing.assert_allclose(noisy.dmu_dtheta[rows], clean.dmu_dtheta, rtol=1e-10, atol=1e-12)

    def test_mirror_symmetry(self, geometry, simplified):
        """Swapping identical emitters leaves the summary unchanged."""
        s = build_summary(SchemeSpec(id="M_XC2S"), geometry, simplified, 0.5)
        perm = s.reflection(geometry.n_pixels)
        np.testing.assert_allclose(s.mu[perm], s.mu, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(s.sigma1[np.ix_(perm, perm)], s.sigma1, rtol=1e-8, atol=1e-6)

    def test_wrong_kind(self, geometry, markov):
        """The simplified builder refuses Markov emitters."""
        with pytest.raises(UnsupportedSchemeError):
            simplified_summary(SchemeSpec(id="M"), geometry, markov, 0.1)


class TestMarkovSummary:
    def test_constant_emitters_match_simplified(self, geometry):
        """Without blinking both kinds describe the same Poisson frames."""
        flat = EmitterModel.from_alpha(0.0, kind="markov", mean_power=300.0)
        plain = EmitterModel.from_alpha(0.0, mean_power=300.0)
        scheme = SchemeSpec.parse("M+XC2S")
        a = markov_summary(scheme, geometry, flat, 0.6)
        b = simplified_summary(scheme, geometry, plain, 0.6)
        assert a.labels == b.labels
        np.testing.assert_allclose(a.mu, b.mu, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(a.sigma1, b.sigma1, rtol=1e-7, atol=1e-6)

    def test_total_count_variance(self, geometry, markov):
        """1ᵀΣ₁1 is the long-run variance of the total count, inter-frame terms included."""
        tau = geometry.frame_time
        s = markov_summary(SchemeSpec(id="M"), geometry, markov, 0.2)
        chi = chi_set(markov, tau)
        single = 2 * chi.chi1 + 2 * (chi.moments[2] - chi.chi1**2)
        expected = single + 4 * chi.s1
        ones = np.ones(len(s.mu))
        assert ones @ s.sigma1 @ ones == pytest.approx(expected, rel=1e-8)

    def test_higher_degree_refused(self, geometry, markov):
        """Auto-cumulants beyond second order are unavailable under Markov blinking."""
        with pytest.raises(UnsupportedSchemeError):
            build_summary(SchemeSpec.parse("M+ACK3"), geometry, markov, 0.1)


class TestCentroidWeights:
    def test_single_pair(self):
        """A lone pair has weight 1."""
        np.testing.assert_allclose(xc2_weights(np.array([3.0]), np.array([[2.0]])), [1.0])

    def test_uncorrelated_estimators(self):
        """Independent, equal-variance estimators are weighted by their signal."""
        w = xc2_weights(np.array([2.0, 1.0]), np.eye(2))
        np.testing.assert_allclose(w, [1.0, 0.5])

    def test_weights_maximize_snr(self):
        """No other weighting of random PSD instances has a larger |⟨S⟩|/√Var(S)."""
        rng = np.random.default_rng(0)

        def snr(w, kappas, cov):
            return abs(w @ kappas) / np.sqrt(w @ cov @ w)

        for _ in range(20):
            b = rng.normal(size=(4, 4))
            cov = b @ b.T + 0.1 * np.eye(4)
            kappas = rng.uniform(0.5, 2.0, size=4)
            best = snr(xc2_weights(kappas, cov), kappas, cov)
            others = rng.normal(size=(200, 4))
            assert all(snr(w, kappas, cov) <= best * (1 + 1e-9) for w in others)
            assert best >= snr(np.ones(4), kappas, cov) * (1 - 1e-12)

    def test_ill_conditioned(self):
        """Zero first signal or a singular system raises."""
        with pytest.raises(IllConditionedWeightsError):
            xc2_weights(np.array([0.0, 1.0]), np.eye(2))
        with pytest.raises(IllConditionedWeightsError):
            xc2_weights(np.array([1.0, 1.0]), np.ones((2, 2)))

    def test_unit_weights_reproduce_xc2s(self, geometry, simplified):
        """Forcing every weight to 1 gives the plain centroid sums."""
        forced = weighted_xc2s_summary(geometry, simplified, 0.3, forced_weight=1.0)
        plain = build_summary(SchemeSpec(id="M_XC2S"), geometry, simplified, 0.3)
        assert forced.labels == plain.labels
        np.testing.assert_allclose(forced.mu, plain.mu, rtol=1e-12)
        np.testing.assert_allclose(forced.sigma1, plain.sigma1, rtol=1e-10, atol=1e-8)

    def test_weights_recorded(self, geometry, simplified):
        """One weight vector per centroid, fallbacks counted."""
        s = weighted_xc2s_summary(geometry, simplified, 0.3)
        centroids = [c for c in s.components if c.kind == "centroid"]
        assert len(s.weights) == len(centroids)
        assert all(len(w) == len(c.terms) for w, c in zip(s.weights, centroids))
        assert 0 <= s.weights_fallback <= len(centroids)
        assert all(w[0] == pytest.approx(1.0) for w in s.weights)
