"""
Physical scene: Gaussian PSF, two sources at ±θ/2 and a 1D pixel grid.

Lengths are in units of the PSF width σ and times in units of τ₀, so the
defaults (σ = 1, frame_time = 1) reproduce the internal unit system.
"""
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import ndtr

from .errors import CoverageError, InvalidParameterError, UnsupportedOrderError

SQRT_2PI = math.sqrt(2.0 * math.pi)

# Minimum half-extent of the grid beyond each source, in σ.
COVERAGE_MARGIN = 6.0
DEFAULT_EXTENT = 8.0
MAX_MOMENT_ORDER = 8


def _stirling2_table(kmax: int) -> np.ndarray:
    """S(k, i) for 0 <= i, k <= kmax via S(k, i) = i S(k-1, i) + S(k-1, i-1)."""
    table = np.zeros((kmax + 1, kmax + 1))
    table[0, 0] = 1.0
    for k in range(1, kmax + 1):
        for i in range(1, k + 1):
            table[k, i] = i * table[k - 1, i] + table[k - 1, i - 1]
    return table


STIRLING2 = _stirling2_table(MAX_MOMENT_ORDER)


def gaussian_psf_value(x, sigma: float = 1.0):
    """Normalized Gaussian PSF U(x); accepts scalars or arrays."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=float)
    value = np.exp(-0.5 * (x / sigma) ** 2) / (SQRT_2PI * sigma)
    return float(value) if value.ndim == 0 else value


class PsfGaussian(BaseModel):
    """Gaussian point spread function."""

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(1.0, gt=0)

    def value(self, x):
        return gaussian_psf_value(x, self.sigma)

    def interval_mass(self, a, b):
        """∫_a^b U(x) dx, evaluated on the short tail to keep relative accuracy."""
        a = np.asarray(a, dtype=float) / self.sigma
        b = np.asarray(b, dtype=float) / self.sigma
        return np.where(a > 0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


class DetectorGeometry(BaseModel):
    """
    Symmetric 1D pixel grid with a pixel edge at x = 0.

    Pixel j (0-based) spans [edges[j], edges[j+1]] and mirrors to pixel
    n_pixels - 1 - j.
    """

    model_config = ConfigDict(frozen=True)

    pixel_size: float = Field(0.5, gt=0)
    n_pixels: int = Field(32, gt=0)
    frame_time: float = Field(1.0, gt=0)
    background_mean: float = Field(0.0, ge=0)

    @field_validator("n_pixels")
    @classmethod
    def _even(cls, value: int) -> int:
        if value % 2:
            raise ValueError("n_pixels must be even so that x = 0 is a pixel edge")
        return value

    @classmethod
    def covering(
        cls,
        pixel_size: float = 0.5,
        theta_max: float = 0.0,
        frame_time: float = 1.0,
        background_mean: float = 0.0,
        extent: float = DEFAULT_EXTENT,
        sigma: float = 1.0,
    ) -> "DetectorGeometry":
        """Grid of ±max(extent, θ_max/2 + 6)σ rounded up to whole pixels."""
        if not pixel_size > 0:
            raise InvalidParameterError(f"pixel_size must be positive, got {pixel_size}")
        half = max(extent * sigma, theta_max / 2 + COVERAGE_MARGIN * sigma)
        n_half = math.ceil(half / pixel_size - 1e-9)
        return cls(
            pixel_size=pixel_size,
            n_pixels=2 * n_half,
            frame_time=frame_time,
            background_mean=background_mean,
        )

    @property
    def half_extent(self) -> float:
        return 0.5 * self.n_pixels * self.pixel_size

    @property
    def edges(self) -> np.ndarray:
        return (np.arange(self.n_pixels + 1) - self.n_pixels // 2) * self.pixel_size

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_pixels) - self.n_pixels // 2 + 0.5) * self.pixel_size

    def mirror(self, j):
        """Index of the pixel mirroring pixel j about x = 0."""
        return self.n_pixels - 1 - np.asarray(j)


@dataclass(frozen=True)
class SceneOverlaps:
    """Pixel-integrated PSF masses of both sources and their θ-derivatives."""

    theta: float
    u1: np.ndarray
    u2: np.ndarray
    du1_dtheta: np.ndarray
    du2_dtheta: np.ndarray

    @property
    def mass(self) -> float:
        """Smaller of the two captured source masses."""
        return float(min(self.u1.sum(), self.u2.sum()))

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "u1": self.u1.tolist(),
            "u2": self.u2.tolist(),
            "du1_dtheta": self.du1_dtheta.tolist(),
            "du2_dtheta": self.du2_dtheta.tolist(),
        }


def pixel_overlaps(
    geometry: DetectorGeometry,
    psf: PsfGaussian | None = None,
    theta: float = 0.0,
) -> SceneOverlaps:
    """
    Integrate both source PSFs over every pixel.

    Source 1 sits at -θ/2 and source 2 at +θ/2, so U_{j,1} = ∫ U(x + θ/2)
    and U_{j,2} = ∫ U(x - θ/2) over pixel j. Derivatives are the closed
    forms ±½[U(right edge ± θ/2) - U(left edge ± θ/2)].

    Raises:
        InvalidParameterError: negative θ.
        CoverageError: the grid does not extend θ/2 + 6σ past the origin.
    """
    psf = psf or PsfGaussian()
    if theta < 0:
        raise InvalidParameterError(f"theta must be non-negative, got {theta}")

    edges = geometry.edges
    half = theta / 2
    left, right = edges[:-1], edges[1:]

    u1 = psf.interval_mass(left + half, right + half)
    u2 = psf.interval_mass(left - half, right - half)

    required = half + COVERAGE_MARGIN * psf.sigma
    if geometry.half_extent < required:
        raise CoverageError(
            f"grid half-extent {geometry.half_extent:g} is below θ/2 + 6σ = {required:g}",
            achieved_mass=float(min(u1.sum(), u2.sum())),
        )

    du1 = 0.5 * (psf.value(right + half) - psf.value(left + half))
    du2 = -0.5 * (psf.value(right - half) - psf.value(left - half))
    return SceneOverlaps(theta=float(theta), u1=u1, u2=u2, du1_dtheta=du1, du2_dtheta=du2)


def _check_order(k: int) -> None:
    if k < 0:
        raise InvalidParameterError(f"moment order must be non-negative, got {k}")
    if k > MAX_MOMENT_ORDER:
        raise UnsupportedOrderError(
            f"Poisson raw moments are tabulated up to order {MAX_MOMENT_ORDER}, got {k}"
        )


def poisson_raw_moment(k: int, nu):
    """
    Raw moment E[n^k] of a Poisson variable with mean ν.

    Touchard expansion M_k(ν) = Σ_i S(k, i) ν^i with Stirling numbers of
    the second kind.
    """
    _check_order(k)
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0):
        raise InvalidParameterError("Poisson mean must be non-negative")
    value = P.polyval(nu, STIRLING2[k, : k + 1])
    return float(value) if value.ndim == 0 else value


def poisson_raw_moment_derivative(k: int, nu):
    """dM_k/dν."""
    _check_order(k)
    nu = np.asarray(nu, dtype=float)
    if k == 0:
        value = np.zeros_like(nu)
    else:
        value = P.polyval(nu, P.polyder(STIRLING2[k, : k + 1]))
    return float(value) if value.ndim == 0 else value
