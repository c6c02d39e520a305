"""
Fisher information per photon and the resolution gain limit.

F(θ) for a scheme is the Gaussian FI of its frame-averaged statistic
vector divided by the mean number of source photons per frame. The
resolution gain limit ζ is the fourth root of the θ → 0 limit of F/F_SI,
where F_SI is standard imaging on the same pixel grid; the limit is taken
by fitting a + bθ² to the ratio at three small separations.
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate, special, stats

from .blinking import EmitterModel, _quad
from .errors import DegenerateSummaryError, InvalidParameterError
from .log import get_logger
from .model import DetectorGeometry, PsfGaussian, pixel_overlaps
from .summary import GaussianSummary, SchemeSpec, build_summary

log = get_logger(__name__)

RGL_THETAS = (0.08, 0.04, 0.02)
RGL_RESIDUAL_TOL = 1e-4
PINV_RTOL = 1e-10
GOLDEN = (math.sqrt(5) - 1) / 2
TAU_LIMITS = (1e-3, 1e3)
SCAN_PER_DECADE = 9


@dataclass(frozen=True)
class FiCurve:
    """F(θ) per photon of one scheme, in units of σ⁻²."""

    scheme: SchemeSpec
    thetas: np.ndarray
    fi_per_photon: np.ndarray
    model: EmitterModel
    geometry: DetectorGeometry

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.label,
            "thetas": self.thetas.tolist(),
            "fi_per_photon": self.fi_per_photon.tolist(),
            "model": self.model.model_dump(),
            "geometry": self.geometry.model_dump(),
        }


@dataclass(frozen=True)
class RglReport:
    """Extrapolated ζ with the quality of the θ → 0 fit."""

    zeta: float
    kind: Literal["zeta", "zeta_pix", "zeta_max"]
    theta_grid_used: tuple[float, ...]
    ratio_extrapolation_residual: float
    ratios: tuple[float, ...] = ()

    @property
    def converged(self) -> bool:
        return self.ratio_extrapolation_residual < RGL_RESIDUAL_TOL

    @property
    def flag(self) -> str:
        return "converged" if self.converged else "unconverged"

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta,
            "kind": self.kind,
            "theta_grid_used": list(self.theta_grid_used),
            "ratio_extrapolation_residual": self.ratio_extrapolation_residual,
            "ratios": list(self.ratios),
            "flag": self.flag,
        }


@dataclass(frozen=True)
class FrameTimeOptimum:
    """Maximizer of ζ(τ)."""

    tau_opt: float
    zeta: float
    at_boundary: bool
    scan: tuple[tuple[float, float], ...] = field(default=(), repr=False)

    @property
    def flag(self) -> str:
        return "boundary" if self.at_boundary else "converged"

    def to_dict(self) -> dict:
        return {
            "tau_opt": self.tau_opt,
            "zeta": self.zeta,
            "at_boundary": self.at_boundary,
            "flag": self.flag,
            "scan": [list(point) for point in self.scan],
        }


def gaussian_fi(summary: GaussianSummary) -> float:
    """
    F = ∂μᵀ Σ₁⁻¹ ∂μ per frame.

    Σ₁ is first scaled to a correlation matrix (FI is invariant under
    rescaling statistics) and then pseudo-inverted, discarding eigen
    directions below 1e-10 of the largest eigenvalue. Statistics with zero
    variance are ignored.

    Raises:
        DegenerateSummaryError: no direction survives the threshold.
    """
    sigma = np.asarray(summary.sigma1, dtype=float)
    dmu = np.asarray(summary.dmu_dtheta, dtype=float)

    scale = np.sqrt(np.clip(np.diag(sigma), 0.0, None))
    keep = scale > 0
    if not np.any(keep):
        raise DegenerateSummaryError("every statistic has zero variance")
    scale = scale[keep]
    corr = sigma[np.ix_(keep, keep)] / np.outer(scale, scale)
    slope = dmu[keep] / scale

    eigvals, eigvecs = np.linalg.eigh(corr)
    top = eigvals[-1]
    if not top > 0:
        raise DegenerateSummaryError("covariance has no positive eigenvalue")
    good = eigvals > PINV_RTOL * top
    if not np.any(good):
        raise DegenerateSummaryError("no covariance direction above the pseudo-inverse threshold")
    if not np.all(good):
        log.debug("projected out null directions", {"count": int((~good).sum()), "theta": summary.theta})

    proj = eigvecs[:, good].T @ slope
    return float(np.sum(proj**2 / eigvals[good]))


def fi_per_photon_curve(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    model: EmitterModel,
    thetas: Sequence[float],
    psf: PsfGaussian | None = None,
) -> FiCurve:
    """F(θ) = F_meas(θ)/⟨n⟩, with ⟨n⟩ counting source photons only."""
    thetas = np.asarray(thetas, dtype=float)
    if np.any(thetas < 0):
        raise InvalidParameterError("thetas must be non-negative")

    values = np.empty(len(thetas))
    for i, theta in enumerate(thetas):
        summary = build_summary(scheme, geometry, model, float(theta), psf)
        values[i] = gaussian_fi(summary) / summary.mean_photons_per_frame
    return FiCurve(scheme=scheme, thetas=thetas, fi_per_photon=values, model=model, geometry=geometry)


def pixelated_si_fisher(geometry: DetectorGeometry, theta: float, psf: PsfGaussian | None = None) -> float:
    """
    Standard-imaging FI per photon on a pixel grid.

    Two equally bright constant sources: F = ½ Σ_j (U'_{j,1} + U'_{j,2})² / (U_{j,1} + U_{j,2}).
    """
    psf = psf or PsfGaussian()
    return _pixelated_si(geometry.pixel_size, geometry.n_pixels, float(theta), psf.sigma)


@lru_cache(maxsize=4096)
def _pixelated_si(pixel_size: float, n_pixels: int, theta: float, sigma: float) -> float:
    geometry = DetectorGeometry(pixel_size=pixel_size, n_pixels=n_pixels)
    ov = pixel_overlaps(geometry, PsfGaussian(sigma=sigma), theta)
    mass = ov.u1 + ov.u2
    slope = ov.du1_dtheta + ov.du2_dtheta
    keep = mass > 0
    return float(0.5 * np.sum(slope[keep] ** 2 / mass[keep]))


def si_fisher_exact(theta: float, sigma: float = 1.0) -> float:
    """
    Standard-imaging FI per photon for a continuous detector.

    σ²F = ¼ - ∫ x² exp(-(θ - 2x)²/8σ²) / (2σ³√(2π)(e^{θx/σ²} + 1)) dx,
    integrated adaptively over ±10σ.

    Raises:
        QuadratureError: the integral did not converge.
    """
    if theta < 0:
        raise InvalidParameterError(f"theta must be non-negative, got {theta}")
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    norm = 2 * sigma**3 * math.sqrt(2 * math.pi)

    def integrand(x):
        return x * x * math.exp(-((theta - 2 * x) ** 2) / (8 * sigma**2)) * special.expit(-theta * x / sigma**2) / norm

    value = _quad(integrate.quad, integrand, -10 * sigma, 10 * sigma, epsabs=1e-12, epsrel=1e-12, limit=200)
    return (0.25 - value) / sigma**2


def si_fisher_series(theta: float, sigma: float = 1.0) -> float:
    """Small-θ expansion θ²/8 - θ⁴/16 + θ⁶/24 (σ = 1 units)."""
    t = theta / sigma
    return (t**2 / 8 - t**4 / 16 + t**6 / 24) / sigma**2


def _extrapolate(thetas: np.ndarray, ratios: np.ndarray) -> tuple[float, float]:
    """Intercept a of a + bθ² and the relative misfit of that line."""
    x = thetas**2
    coef = P.polyfit(x, ratios, 1)
    misfit = np.max(np.abs(P.polyval(x, coef) - ratios))
    intercept = float(coef[0])
    residual = float(misfit / abs(intercept)) if intercept != 0 else math.inf
    return intercept, residual


def _report(kind, thetas, ratios) -> RglReport:
    intercept, residual = _extrapolate(thetas, ratios)
    zeta = intercept**0.25 if intercept > 0 else 0.0
    report = RglReport(
        zeta=zeta,
        kind=kind,
        theta_grid_used=tuple(float(t) for t in thetas),
        ratio_extrapolation_residual=residual,
        ratios=tuple(float(r) for r in ratios),
    )
    if not report.converged:
        log.warning("zeta extrapolation did not converge", {"kind": kind, "residual": residual})
    return report


def rgl(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    model: EmitterModel,
    psf: PsfGaussian | None = None,
    thetas: Sequence[float] = RGL_THETAS,
) -> RglReport:
    """ζ from F/F_SI at small θ, with F_SI computed on the same pixel grid."""
    psf = psf or PsfGaussian()
    grid = np.asarray(thetas, dtype=float) * psf.sigma
    curve = fi_per_photon_curve(scheme, geometry, model, grid, psf)
    baseline = np.array([pixelated_si_fisher(geometry, t, psf) for t in grid])
    return _report("zeta", grid, curve.fi_per_photon / baseline)


def rgl_pix(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    model: EmitterModel,
    psf: PsfGaussian | None = None,
    thetas: Sequence[float] = RGL_THETAS,
) -> RglReport:
    """ζ^(pix): as ``rgl`` but against the continuous-detector law θ²/8σ⁴."""
    psf = psf or PsfGaussian()
    grid = np.asarray(thetas, dtype=float) * psf.sigma
    curve = fi_per_photon_curve(scheme, geometry, model, grid, psf)
    baseline = grid**2 / (8 * psf.sigma**4)
    return _report("zeta_pix", grid, curve.fi_per_photon / baseline)


def _check_brightness(p: float, alpha: float, nbar: float) -> None:
    if not 0 <= p <= 1:
        raise InvalidParameterError(f"p must lie in [0, 1], got {p}")
    if not 0 <= alpha <= 1:
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
    if not nbar > 0:
        raise InvalidParameterError(f"nbar must be positive, got {nbar}")


def _poisson_window(low_mean: float, high_mean: float | None = None) -> np.ndarray:
    """Counts holding all but ~1e-14 of the Poisson weight between two means."""
    lo = stats.poisson.ppf(1e-15, low_mean)
    hi = stats.poisson.isf(1e-15, low_mean if high_mean is None else high_mean)
    return np.arange(int(lo), int(hi) + 1)


def g_factor(p: float, alpha: float, nbar: float) -> float:
    """
    G with ζ_max = (1 + G n̄)^{1/4}.

    G = 2p²(1-p)²α⁴ S / ((2-α)³(1-pα)),
    S = Σ_n Pois(n; n̄) / (B e^{An̄}(1-A)ⁿ + C + D e^{-An̄}(1+A)ⁿ),
    evaluated in log space over the Poisson window holding all but 1e-14
    of the weight.
    """
    _check_brightness(p, alpha, nbar)
    if p in (0.0, 1.0) or alpha == 0.0:
        return 0.0

    a = alpha / (2 - alpha)
    b = p**2 * (1 - a) ** 2
    c = 2 * p * (1 - p)
    d = (1 - p) ** 2 * (1 + a) ** 2
    n = _poisson_window(nbar)

    terms = [np.full(n.shape, math.log(c)), math.log(d) - a * nbar + n * math.log1p(a)]
    if b > 0:
        terms.append(math.log(b) + a * nbar + special.xlogy(n, 1 - a))
    log_den = np.logaddexp.reduce(np.stack(terms), axis=0)
    s = float(np.exp(special.logsumexp(stats.poisson.logpmf(n, nbar) - log_den)))
    return 2 * p**2 * (1 - p) ** 2 * alpha**4 * s / ((2 - alpha) ** 3 * (1 - p * alpha))


def g_limit(p: float, alpha: float) -> float:
    """n̄ → ∞ limit of G: p(1-p)α⁴/((2-α)³(1-pα))."""
    if p * alpha == 1.0:
        return 0.0
    return p * (1 - p) * alpha**4 / ((2 - alpha) ** 3 * (1 - p * alpha))


def zeta_max(p: float, alpha: float, nbar: float) -> float:
    """RGL of the full photon data for two-level blinking in independent frames."""
    if p in (0.0, 1.0):
        _check_brightness(p, alpha, nbar)
        return 1.0
    return (1 + g_factor(p, alpha, nbar) * nbar) ** 0.25


def zeta_max_asymptotic(p: float, alpha: float, nbar: float) -> float:
    """(1 + G∞ n̄)^{1/4}."""
    _check_brightness(p, alpha, nbar)
    return (1 + g_limit(p, alpha) * nbar) ** 0.25


def zeta_max_general(levels: Sequence[float], probabilities: Sequence[float], nbar: float) -> float:
    """
    Full-data RGL for an arbitrary discrete brightness law P(q).

    A frame of n photons from emitters with brightness (q₁, q₂) is
    Poisson(n̄(q₁ + q₂)); with Q = (q₁ - q₂)/(q₁ + q₂),
    ζ⁴ = 1 + ⟨⟨Q²⟩ₙ² n(n-1)⟩ / ⟨n⟩ where ⟨Q²⟩ₙ is the posterior mean
    given n photons. Reduces to ``zeta_max`` for two levels with
    q_on + q_off = 1.
    """
    q = np.asarray(levels, dtype=float)
    w = np.asarray(probabilities, dtype=float)
    if q.shape != w.shape or np.any(q < 0) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise InvalidParameterError("levels and probabilities must be matching non-negative arrays summing to 1")
    if not nbar > 0:
        raise InvalidParameterError(f"nbar must be positive, got {nbar}")

    q1, q2 = np.meshgrid(q, q, indexing="ij")
    weight = np.outer(w, w).ravel()
    total = (q1 + q2).ravel()
    active = (total > 0) & (weight > 0)
    weight, total = weight[active], total[active]
    contrast = ((q1 - q2).ravel()[active] / total) ** 2

    mean_photons = nbar * float(weight @ total)
    n = _poisson_window(nbar * total.min(), nbar * total.max())
    n = n[n >= 2]
    # log of weight_c · Pois(n; n̄ s_c) for every configuration c.
    log_joint = np.log(weight)[:, None] + stats.poisson.logpmf(n[None, :], nbar * total[:, None])
    log_marginal = special.logsumexp(log_joint, axis=0)
    posterior = np.exp(log_joint - log_marginal)
    q2_mean = contrast @ posterior
    gain = float(np.sum(np.exp(log_marginal) * n * (n - 1) * q2_mean**2)) / mean_photons
    return (1 + gain) ** 0.25


def full_data_fi_series(
    theta: float,
    levels: Sequence[float],
    probabilities: Sequence[float],
    nbar: float,
    sigma: float = 1.0,
) -> float:
    """Leading small-θ full-data FI per photon, ζ_max⁴ θ²/8σ⁴."""
    return zeta_max_general(levels, probabilities, nbar) ** 4 * theta**2 / (8 * sigma**4)


def optimal_frame_time(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    model: EmitterModel,
    tau_bounds: tuple[float, float] = TAU_LIMITS,
    psf: PsfGaussian | None = None,
    pix: bool = False,
) -> FrameTimeOptimum:
    """
    Frame time maximizing ζ for the Markov kind.

    A log-spaced scan with 9 points per decade brackets the maximum, which
    golden-section search on log τ then refines to 1% in τ. A maximizer on
    either end of the bounds is flagged.
    """
    if model.kind != "markov":
        raise InvalidParameterError("optimal_frame_time requires the markov kind")
    lo, hi = tau_bounds
    if not TAU_LIMITS[0] <= lo < hi <= TAU_LIMITS[1]:
        raise InvalidParameterError(f"tau_bounds must satisfy {TAU_LIMITS[0]} <= lo < hi <= {TAU_LIMITS[1]}")

    extract = rgl_pix if pix else rgl
    cache: dict[float, float] = {}

    def zeta_at(log_tau: float) -> float:
        if log_tau not in cache:
            g = geometry.model_copy(update={"frame_time": math.exp(log_tau)})
            cache[log_tau] = extract(scheme, g, model, psf).zeta
        return cache[log_tau]

    n_scan = max(3, round(SCAN_PER_DECADE * math.log10(hi / lo)) + 1)
    grid = np.linspace(math.log(lo), math.log(hi), n_scan)
    scan = [zeta_at(float(x)) for x in grid]
    best = int(np.argmax(scan))
    at_boundary = best in (0, n_scan - 1)

    a = float(grid[max(best - 1, 0)])
    b = float(grid[min(best + 1, n_scan - 1)])
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    while b - a > math.log(1.01):
        if zeta_at(c) > zeta_at(d):
            b, d = d, c
            c = b - GOLDEN * (b - a)
        else:
            a, c = c, d
            d = a + GOLDEN * (b - a)

    log_opt = max(cache, key=cache.get)
    if at_boundary:
        log.warning("frame-time maximum on the search boundary", {"tau": math.exp(log_opt)})
    return FrameTimeOptimum(
        tau_opt=math.exp(log_opt),
        zeta=cache[log_opt],
        at_boundary=at_boundary,
        scan=tuple((math.exp(float(x)), z) for x, z in zip(grid, scan)),
    )


def antibunching_density(x1, x2, theta: float, sigma: float = 1.0):
    """
    Two-photon frame density of two single-photon emitters.

    p_θ(x₁, x₂) = ½[U(x₁ + θ/2)U(x₂ - θ/2) + U(x₁ - θ/2)U(x₂ + θ/2)].
    """
    psf = PsfGaussian(sigma=sigma)
    h = theta / 2
    return 0.5 * (psf.value(x1 + h) * psf.value(x2 - h) + psf.value(x1 - h) * psf.value(x2 + h))


def antibunching_fi(theta: float, sigma: float = 1.0) -> float:
    """FI of one two-photon frame, ∫∫ (∂_θ p_θ)² / p_θ."""
    if theta < 0:
        raise InvalidParameterError(f"theta must be non-negative, got {theta}")
    psf = PsfGaussian(sigma=sigma)
    h = theta / 2
    s2 = sigma**2

    def integrand(x2, x1):
        a1, b1 = psf.value(x1 + h), psf.value(x1 - h)
        a2, b2 = psf.value(x2 - h), psf.value(x2 + h)
        density = 0.5 * (a1 * a2 + b1 * b2)
        # dU(x ± θ/2)/dθ = ∓(x ± θ/2)U/(2σ²)
        slope = 0.25 * ((-(x1 + h) * a2 + (x2 - h) * a2) * a1 + ((x1 - h) - (x2 + h)) * b1 * b2) / s2
        return slope**2 / density if density > 0 else 0.0

    bound = 10 * sigma
    return _quad(integrate.dblquad, integrand, -bound, bound, -bound, bound, epsabs=0.0, epsrel=1e-8)


def antibunching_rgl(sigma: float = 1.0, thetas: Sequence[float] = RGL_THETAS) -> RglReport:
    """ζ from ½F₂/(θ²/8σ⁴), extrapolated to θ → 0."""
    grid = np.asarray(thetas, dtype=float) * sigma
    ratios = np.array([0.5 * antibunching_fi(t, sigma) / (t**2 / (8 * sigma**4)) for t in grid])
    return _report("zeta", grid, ratios)
