"""
Self-checks against independent oracles.

Each suite compares a fast closed-form or moment-based result with a
brute-force reference (quadrature, Monte Carlo, asymptotics) and reports
pass/fail with the tolerance used. ``sofi-fisher validate`` runs them and
exits with status 3 when any fails.
"""
import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .blinking import EmitterModel, chi_quadrature, chi_set
from .errors import InvalidParameterError
from .fisher import (
    antibunching_rgl,
    g_factor,
    g_limit,
    si_fisher_exact,
    si_fisher_series,
    zeta_max,
)
from .log import get_logger
from .mc import (
    cumulant_image_check,
    empirical_summary,
    fit_gaussian_width,
    score_fi_oracle,
    simulate_frames,
)
from .model import DetectorGeometry
from .summary import SchemeSpec, build_summary

log = get_logger(__name__)

MC_Z_LIMIT = 5.0
MC_SCHEMES = ("M", "M+AC2", "M+XC2S")


@dataclass(frozen=True)
class ValidationResult:
    name: str
    passed: bool
    value: float
    expected: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "value": self.value,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


def _si_series(**_) -> ValidationResult:
    theta = 0.1
    value = si_fisher_exact(theta)
    expected = si_fisher_series(theta)
    rel = abs(value - expected) / expected
    return ValidationResult("si-series", rel < 1e-5, value, expected, 1e-5, f"relative error {rel:.3g}")


def _zeta_max_asymptote(**_) -> ValidationResult:
    gaps = []
    for alpha, nbar in ((0.2, 2500.0), (1.0, 50.0)):
        limit = g_limit(0.5, alpha)
        gaps.append(abs(g_factor(0.5, alpha, nbar) - limit) / limit)
    worst = max(gaps)
    return ValidationResult("zeta-max-asymptote", worst < 0.01, worst, 0.0, 0.01, f"δG = {gaps}")


def _chi_quadrature(**_) -> ValidationResult:
    model = EmitterModel.from_alpha(0.8, kind="markov", mean_power=1.0, tau_on=1.0, tau_off=2.0)
    tau = 0.7
    chi = chi_set(model, tau, max_lag=2)
    closed = {
        (1, 1): chi.chi1,
        (2, 1): chi.chi2[0],
        (3, 1): chi.chi3[0],
        (4, 1): chi.chi4[0],
        (2, 2): chi.chi2[1],
        (3, 2): chi.chi3[1],
    }
    errors = []
    for (order, lag), value in closed.items():
        reference = chi_quadrature(model, tau, order, lag=lag, epsrel=1e-8)
        errors.append(abs(value - reference) / abs(reference))
    worst = max(errors)
    return ValidationResult("chi-quadrature", worst < 1e-6, worst, 0.0, 1e-6, "max relative error over χ orders and lags")


def _mc_consistency(kind: str, n_frames: int, seed: int) -> ValidationResult:
    model = EmitterModel.from_alpha(0.9, kind=kind, mean_power=100.0)
    geometry = DetectorGeometry.covering(pixel_size=0.5, theta_max=0.2)
    theta = 0.2
    batch = simulate_frames(model, geometry, theta, n_frames, seed)
    worst = {}
    for name in MC_SCHEMES:
        scheme = SchemeSpec.parse(name)
        analytic = build_summary(scheme, geometry, model, theta)
        empirical = empirical_summary(batch, scheme, n_groups=50)
        z_mean, z_sigma = empirical.z_scores(analytic)
        worst[name] = float(max(z_mean.max(), z_sigma.max()))
    value = max(worst.values())
    return ValidationResult(
        f"mc-{kind}",
        value < MC_Z_LIMIT,
        value,
        0.0,
        MC_Z_LIMIT,
        f"max z over μ and Σ₁ at {n_frames} frames: " + ", ".join(f"{k} {v:.2f}" for k, v in worst.items()),
    )


def _mc_simplified(n_frames: int, seed: int, **_) -> ValidationResult:
    return _mc_consistency("simplified", n_frames, seed)


def _mc_markov(n_frames: int, seed: int, **_) -> ValidationResult:
    return _mc_consistency("markov", n_frames, seed)


def _score_oracle(n_samples: int, seed: int, **_) -> ValidationResult:
    model = EmitterModel.from_alpha(1.0, mean_power=20.0, p_off=0.5)
    estimate = score_fi_oracle(model, theta=0.01, n_samples=n_samples, seed=seed)
    expected = zeta_max(0.5, 1.0, 20.0)
    tolerance = 2 * estimate.zeta_stderr
    return ValidationResult(
        "score-oracle",
        abs(estimate.zeta - expected) <= tolerance,
        estimate.zeta,
        expected,
        tolerance,
        f"F = {estimate.fi_per_photon:.6g} ± {estimate.stderr:.2g}",
    )


def _cumulant_width(n_frames: int, seed: int, **_) -> ValidationResult:
    model = EmitterModel.from_alpha(1.0, mean_power=1000.0, p_off=0.5)
    geometry = DetectorGeometry.covering(pixel_size=0.25)
    batch = simulate_frames(model, geometry, 0.0, min(n_frames, 10**6), seed)
    second = cumulant_image_check(batch, 2)
    first = cumulant_image_check(batch, 1)
    width = fit_gaussian_width(geometry.centers, second.empirical - first.empirical)
    expected = 1 / math.sqrt(2)
    rel = abs(width - expected) / expected
    return ValidationResult("cumulant-width", rel < 0.02, width, expected, 0.02, "width of κ₂ - κ₁ image")


def _antibunching(**_) -> ValidationResult:
    value = antibunching_rgl().zeta
    expected = 2**0.25
    return ValidationResult("antibunching", abs(value - expected) < 1e-3, value, expected, 1e-3)


SUITES: dict[str, Callable[..., ValidationResult]] = {
    "si-series": _si_series,
    "zeta-max-asymptote": _zeta_max_asymptote,
    "chi-quadrature": _chi_quadrature,
    "mc-simplified": _mc_simplified,
    "mc-markov": _mc_markov,
    "score-oracle": _score_oracle,
    "cumulant-width": _cumulant_width,
    "antibunching": _antibunching,
}


def run_suite(
    names: Sequence[str] | None = None,
    n_frames: int = 10**6,
    n_samples: int = 10**6,
    seed: int = 1,
) -> list[ValidationResult]:
    """Run the named suites (all by default) in order."""
    names = list(names) if names else list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise InvalidParameterError(f"Unknown validation suites: {', '.join(unknown)}")

    results = []
    for name in names:
        log.info("running validation suite", {"suite": name})
        result = SUITES[name](n_frames=n_frames, n_samples=n_samples, seed=seed)
        if not result.passed:
            log.warning("validation suite failed", result.to_dict())
        results.append(result)
    return results

