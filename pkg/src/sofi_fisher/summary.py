"""
Asymptotic Gaussian summaries of per-frame statistic vectors.

A scheme turns the counts n_j of one frame into a vector of polynomial
statistics (means, auto-powers, pair products, centroid sums). In the
many-frame limit the frame average of that vector is Gaussian with mean μ
and covariance Σ₁/M_fr; this module computes μ, Σ₁ and ∂μ/∂θ exactly.

Every statistic is a linear combination of count monomials. Expectations of
monomials are evaluated conditionally on the per-frame yields (X, Y) of
the two emitters, where pixel counts are independent Poisson variables with
means ν_j = U_{j,1}X + U_{j,2}Y + μ_B, and then averaged over the
frame-yield measure of ``blinking.frame_yield_measure``. For the Markov
kind the inter-frame covariances are added through the geometric tail sums
of ``ChiSet``.
"""
import re
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .blinking import EmitterModel, chi_set, frame_yield_measure
from .errors import IllConditionedWeightsError, UnsupportedSchemeError
from .log import get_logger
from .model import (
    DetectorGeometry,
    PsfGaussian,
    SceneOverlaps,
    pixel_overlaps,
    poisson_raw_moment,
    poisson_raw_moment_derivative,
)

log = get_logger(__name__)

MAX_ACK_ORDER = 4
MAX_MARKOV_DEGREE = 2
DEGENERATE_MASS = 1e-14

# Monomials X^p Y^q of the two frame yields, degree ≤ 2.
_YIELD_POWERS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))

Monomial = tuple[int, ...]


class SchemeSpec(BaseModel):
    """Which statistics are formed per frame."""

    model_config = ConfigDict(frozen=True)

    id: Literal["M", "AC2", "M_ACK", "M_XC2", "M_XC2S", "M_XC2W"]
    order: int = Field(1, ge=1)

    @classmethod
    def parse(cls, text: str) -> "SchemeSpec":
        """Parse names such as ``M``, ``AC2``, ``M+AC2``, ``M+ACK3``, ``M+XC2S``."""
        name = text.strip().upper().replace("_", "+")
        match = re.fullmatch(r"M\+ACK\(?(\d+)\)?", name)
        if match:
            return cls(id="M_ACK", order=int(match.group(1)))
        aliases = {
            "M": cls(id="M"),
            "AC2": cls(id="AC2"),
            "M+AC2": cls(id="M_ACK", order=2),
            "M+XC2": cls(id="M_XC2"),
            "M+XC2S": cls(id="M_XC2S"),
            "M+XC2W": cls(id="M_XC2W"),
        }
        if name not in aliases:
            raise UnsupportedSchemeError(f"Unknown scheme: {text}")
        return aliases[name]

    @property
    def degree(self) -> int:
        """Highest total power of the counts among the statistics."""
        if self.id == "M":
            return 1
        if self.id == "M_ACK":
            return self.order
        return 2

    @property
    def label(self) -> str:
        if self.id == "M_ACK":
            return {1: "M", 2: "M+AC2"}.get(self.order, f"M+ACK{self.order}")
        return self.id.replace("_", "+")


@dataclass(frozen=True)
class Component:
    """
    One statistic: Σ coef·Π n_j over ``terms``.

    ``centered`` statistics are centered before squaring: the linearized
    variance n_j² - 2μ_j n_j + μ_j² of their pixel (the AC2 estimator).
    """

    kind: Literal["mean", "power", "product", "centroid"]
    terms: tuple[tuple[float, Monomial], ...]
    centered: bool = False

    @property
    def pixels(self) -> set[int]:
        return {j for _, mono in self.terms for j in mono}

    @property
    def label(self) -> str:
        if self.kind == "centroid":
            mono = self.terms[0][1]
            return f"S[{(mono[0] + mono[1]) / 2:g}]"
        mono = self.terms[0][1]
        if self.kind == "mean":
            return f"n[{mono[0]}]"
        if self.kind == "power":
            text = f"n[{mono[0]}]^{len(mono)}"
            return f"(n[{mono[0]}]-<n[{mono[0]}]>)^2" if self.centered else text
        return f"n[{mono[0]}]*n[{mono[1]}]"

    def reflected(self, n_pixels: int) -> "Component":
        """The same statistic on the mirrored grid."""
        terms = tuple(
            (coef, tuple(sorted(n_pixels - 1 - j for j in mono))) for coef, mono in self.terms
        )
        if self.kind == "centroid":
            terms = tuple(sorted(terms, key=lambda t: (t[1][1] - t[1][0], t[1])))
        return Component(self.kind, terms, self.centered)

    def restricted(self, kept: set[int]) -> "Component | None":
        """Drop terms touching removed pixels; None if nothing is left."""
        terms = tuple(t for t in self.terms if set(t[1]) <= kept)
        return Component(self.kind, terms, self.centered) if terms else None


def check_scheme(scheme: SchemeSpec, kind: str | None = None) -> SchemeSpec:
    """
    Refuse schemes the moment machinery cannot evaluate.

    Raises:
        UnsupportedSchemeError: K > 4, or a scheme of degree > 2 for the
            Markov kind.
    """
    if scheme.id == "M_ACK" and scheme.order > MAX_ACK_ORDER:
        raise UnsupportedSchemeError(f"M_ACK supports K ≤ {MAX_ACK_ORDER}, got {scheme.order}")
    if kind == "markov" and scheme.degree > MAX_MARKOV_DEGREE:
        raise UnsupportedSchemeError(
            f"{scheme.label} has count degree {scheme.degree}; the markov kind supports ≤ {MAX_MARKOV_DEGREE}"
        )
    return scheme


def statistic_components(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    kind: str | None = None,
) -> list[Component]:
    """
    Enumerate the statistics of a scheme on the full pixel grid.

    Pixels are 0-based. Centroid sums S_l collect the pair products
    n_i n_j (i ≤ j, self-pairs included) with (i + j)/2 = l, closest pair
    first.

    Raises:
        UnsupportedSchemeError: see ``check_scheme``.
    """
    check_scheme(scheme, kind)

    n = geometry.n_pixels
    means = [Component("mean", ((1.0, (j,)),)) for j in range(n)]

    if scheme.id == "M":
        return means
    if scheme.id == "AC2":
        return [Component("power", ((1.0, (j, j)),), centered=True) for j in range(n)]
    if scheme.id == "M_ACK":
        powers = [
            Component("power", ((1.0, (j,) * k),)) for k in range(2, scheme.order + 1) for j in range(n)
        ]
        return means + powers

    if scheme.id == "M_XC2":
        return means + [
            Component("product", ((1.0, (i, j)),)) for i in range(n) for j in range(i, n)
        ]

    centroids = []
    for s in range(2 * n - 1):
        pairs = [(i, s - i) for i in range(max(0, s - n + 1), s // 2 + 1)]
        pairs.sort(key=lambda ij: ij[1] - ij[0])
        centroids.append(Component("centroid", tuple((1.0, ij) for ij in pairs)))
    return means + centroids


@dataclass(frozen=True)
class GaussianSummary:
    """Mean, per-frame covariance and θ-derivative of a statistic vector."""

    scheme: SchemeSpec
    theta: float
    components: tuple[Component, ...]
    mu: np.ndarray
    sigma1: np.ndarray
    dmu_dtheta: np.ndarray
    mean_photons_per_frame: float
    weights: tuple[np.ndarray, ...] = field(default=(), repr=False)
    weights_fallback: int = 0

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.components]

    def reflection(self, n_pixels: int) -> np.ndarray:
        """Permutation mapping each statistic onto its mirror image."""
        index = {c.label: i for i, c in enumerate(self.components)}
        return np.array([index[c.reflected(n_pixels).label] for c in self.components])

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.label,
            "theta": self.theta,
            "labels": self.labels,
            "mu": self.mu.tolist(),
            "sigma1": self.sigma1.tolist(),
            "dmu_dtheta": self.dmu_dtheta.tolist(),
            "mean_photons_per_frame": self.mean_photons_per_frame,
        }


class _MomentEngine:
    """
    Expectations of count monomials under a discrete frame-yield measure.

    Monomials are rows of pixel indices padded with -1 (n_3^2 n_5 is
    [-1, 3, 3, 5]). Repeated indices are merged into powers before the
    Poisson raw moments are applied.
    """

    _CHUNK = 4_000_000

    def __init__(
        self,
        overlaps: SceneOverlaps,
        nodes: np.ndarray,
        weights: np.ndarray,
        background: float,
        max_order: int,
    ):
        x = np.repeat(nodes, len(nodes))
        y = np.tile(nodes, len(nodes))
        self.config_weights = np.outer(weights, weights).ravel()

        nu = np.outer(x, overlaps.u1) + np.outer(y, overlaps.u2) + background
        dnu = np.outer(x, overlaps.du1_dtheta) + np.outer(y, overlaps.du2_dtheta)
        orders = range(max_order + 1)
        self.raw = np.stack([poisson_raw_moment(k, nu) for k in orders], axis=-1)
        self.draw = np.stack([poisson_raw_moment_derivative(k, nu) * dnu for k in orders], axis=-1)

    @staticmethod
    def _runs(rows: np.ndarray):
        first = rows >= 0
        first[:, 1:] &= rows[:, 1:] != rows[:, :-1]
        counts = (rows[:, :, None] == rows[:, None, :]).sum(axis=2)
        return first, np.where(first, rows, 0), np.where(first, counts, 0)

    def expect(self, rows: np.ndarray, derivative: bool = False):
        """E[monomial] for each (sorted) row, and optionally d/dθ."""
        n_rows, width = rows.shape
        values = np.empty(n_rows)
        slopes = np.empty(n_rows) if derivative else None
        chunk = max(1, self._CHUNK // (len(self.config_weights) * max(width, 1)))

        for start in range(0, n_rows, chunk):
            block = slice(start, start + chunk)
            first, pix, cnt = self._runs(rows[block])
            factors = np.where(first[None], self.raw[:, pix, cnt], 1.0)
            values[block] = self.config_weights @ factors.prod(axis=2)
            if derivative:
                dfactors = np.where(first[None], self.draw[:, pix, cnt], 0.0)
                total = np.zeros(factors.shape[:2])
                for d in range(width):
                    total += dfactors[:, :, d] * np.delete(factors, d, axis=2).prod(axis=2)
                slopes[block] = self.config_weights @ total

        return (values, slopes) if derivative else values


def _pad(monomials: Sequence[Monomial], width: int) -> np.ndarray:
    rows = np.full((len(monomials), width), -1, dtype=np.int64)
    for r, mono in enumerate(monomials):
        if mono:
            rows[r, width - len(mono):] = sorted(mono)
    return rows


def _pair_moments(engine: _MomentEngine, rows: np.ndarray) -> np.ndarray:
    """Matrix of E[b_a b_b] over all basis monomial pairs."""
    nb = len(rows)
    ia, ib = np.triu_indices(nb)
    pairs = np.sort(np.concatenate([rows[ia], rows[ib]], axis=1), axis=1)
    values = engine.expect(pairs)
    out = np.empty((nb, nb))
    out[ia, ib] = values
    out[ib, ia] = values
    return out


def _yield_coefficients(rows: np.ndarray, overlaps: SceneOverlaps, background: float) -> np.ndarray:
    """
    Coefficients of E[b | X, Y] in the yield monomials ``_YIELD_POWERS``
    for basis monomials of degree ≤ 2.
    """
    nb = len(rows)
    if rows.shape[1] == 1:
        rows = np.hstack([np.full((nb, 1), -1, dtype=rows.dtype), rows])

    def linear(j: np.ndarray) -> np.ndarray:
        form = np.zeros((len(j), len(_YIELD_POWERS)))
        form[:, 0] = background
        form[:, 1] = overlaps.u1[j]
        form[:, 2] = overlaps.u2[j]
        return form

    i, j = rows[:, -2], rows[:, -1]
    lj = linear(j)
    single = i < 0
    li = linear(np.where(single, 0, i))

    c, a, b = li[:, 0], li[:, 1], li[:, 2]
    c2, a2, b2 = lj[:, 0], lj[:, 1], lj[:, 2]
    product = np.stack(
        [c * c2, c * a2 + c2 * a, c * b2 + c2 * b, a * a2, a * b2 + a2 * b, b * b2], axis=1
    )
    # n_j^2 = n_j(n_j - 1) + n_j contributes ν_j^2 + ν_j.
    product += np.where((i == j)[:, None], lj, 0.0)
    out = np.where(single[:, None], lj, product)
    return out.reshape(nb, len(_YIELD_POWERS))


def xc2_weights(kappas: np.ndarray, cov_of_kappas: np.ndarray) -> np.ndarray:
    """
    Centroid weights maximizing ⟨S⟩/√Var(S) for S = Σ w_i κ̂_i, with w₁ = 1.

    The stationarity conditions Σ_i w_i (A_mi/κ_m - A_1i/κ_1) = 0 say that
    A·w is proportional to κ, so the solution is w ∝ A⁻¹κ; A is
    equilibrated to a correlation matrix before solving.

    Raises:
        IllConditionedWeightsError: A is singular or the first weight of
            A⁻¹κ vanishes.
    """
    kappas = np.asarray(kappas, dtype=float)
    cov = np.asarray(cov_of_kappas, dtype=float)
    if len(kappas) == 1:
        return np.ones(1)
    if kappas[0] == 0:
        raise IllConditionedWeightsError("first covariance of the centroid is zero")

    scale = np.sqrt(np.diag(cov))
    if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
        raise IllConditionedWeightsError("pair-product variance is not positive")
    corr = cov / np.outer(scale, scale)
    if np.linalg.cond(corr) > 1e12:
        raise IllConditionedWeightsError("centroid weight system is singular")

    direction = np.linalg.solve(corr, kappas / scale) / scale
    if abs(direction[0]) <= 1e-14 * np.max(np.abs(direction)):
        raise IllConditionedWeightsError("weight system has no solution with w₁ = 1")
    return direction / direction[0]


def _kept_pixels(overlaps: SceneOverlaps, background: float) -> set[int]:
    if background > 0:
        return set(range(len(overlaps.u1)))
    mass = overlaps.u1 + overlaps.u2
    return set(np.flatnonzero(mass >= DEGENERATE_MASS).tolist())


def kept_components(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    kind: str,
    overlaps: SceneOverlaps,
) -> list[Component]:
    """
    Statistics of a scheme after dropping pixels that see neither source
    nor background (U_{j,1} + U_{j,2} < 1e-14 and μ_B = 0).
    """
    kept = _kept_pixels(overlaps, geometry.background_mean)
    if len(kept) < geometry.n_pixels:
        log.debug(
            "dropping degenerate pixels",
            {"dropped": geometry.n_pixels - len(kept), "theta": overlaps.theta},
        )
    return [r for c in statistic_components(scheme, geometry, kind) if (r := c.restricted(kept))]


def monomial_basis(components: Sequence[Component]) -> dict[Monomial, int]:
    """
    Index of every monomial the components use, plus the pixel means that
    centered and centroid statistics need.
    """
    monomials: dict[Monomial, int] = {}
    for comp in components:
        for _, mono in comp.terms:
            monomials.setdefault(mono, len(monomials))
        if comp.centered or comp.kind == "centroid":
            for j in sorted(comp.pixels):
                monomials.setdefault((j,), len(monomials))
    return monomials


def linear_map(
    components: Sequence[Component],
    monomials: dict[Monomial, int],
    weights: Sequence[np.ndarray] = (),
) -> np.ndarray:
    """Matrix L with statistic vector = L · basis monomials."""
    lin = np.zeros((len(components), len(monomials)))
    centroid = 0
    for r, comp in enumerate(components):
        coefs = [c for c, _ in comp.terms]
        if comp.kind == "centroid" and len(weights):
            coefs = weights[centroid]
            centroid += 1
        for c, (_, mono) in zip(coefs, comp.terms):
            lin[r, monomials[mono]] += c
    return lin


def center_statistics(
    lin: np.ndarray,
    components: Sequence[Component],
    monomials: dict[Monomial, int],
    means: np.ndarray,
) -> np.ndarray:
    """
    Fold the pixel-mean centering of centered statistics into ``lin``.

    Each centered row gains -2m_j on its mean monomial; the returned
    offset carries the constant m_j². ``means`` is indexed like the basis.
    """
    offset = np.zeros(len(components))
    for r, comp in enumerate(components):
        if comp.centered:
            j = monomials[(next(iter(comp.pixels)),)]
            lin[r, j] -= 2 * means[j]
            offset[r] = means[j] ** 2
    return offset


def basis_rows(monomials: dict[Monomial, int]) -> np.ndarray:
    """Basis monomials as sorted pixel-index rows padded with -1."""
    basis = list(monomials)
    return _pad(basis, max(len(m) for m in basis))


def _build(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    model: EmitterModel,
    theta: float,
    psf: PsfGaussian | None,
    forced_weights: float | None = None,
) -> GaussianSummary:
    overlaps = pixel_overlaps(geometry, psf, theta)
    background = geometry.background_mean
    tau = geometry.frame_time

    components = kept_components(scheme, geometry, model.kind, overlaps)
    monomials = monomial_basis(components)
    rows = basis_rows(monomials)

    nodes, node_weights = frame_yield_measure(model, tau)
    engine = _MomentEngine(overlaps, nodes, node_weights, background, max_order=2 * rows.shape[1])
    mu_b, dmu_b = engine.expect(rows, derivative=True)

    sigma_b = _pair_moments(engine, rows) - np.outer(mu_b, mu_b)
    if model.kind == "markov":
        chi = chi_set(model, tau)
        coef = _yield_coefficients(rows, overlaps, background)
        tails = np.array(
            [[chi.tail_sum(p, r, q, s) for (r, s) in _YIELD_POWERS] for (p, q) in _YIELD_POWERS]
        )
        cross = coef @ tails @ coef.T
        sigma_b = sigma_b + cross + cross.T

    weights: list[np.ndarray] = []
    fallback = 0
    if scheme.id == "M_XC2W":
        weights, fallback = _centroid_weights(components, monomials, mu_b, sigma_b, forced_weights)

    lin = linear_map(components, monomials, weights)
    offset = center_statistics(lin, components, monomials, mu_b)

    sigma1 = lin @ sigma_b @ lin.T
    return GaussianSummary(
        scheme=scheme,
        theta=float(theta),
        components=tuple(components),
        mu=lin @ mu_b + offset,
        sigma1=0.5 * (sigma1 + sigma1.T),
        dmu_dtheta=lin @ dmu_b,
        mean_photons_per_frame=float(2 * node_weights @ nodes),
        weights=tuple(weights),
        weights_fallback=fallback,
    )


def _centroid_weights(
    components: list[Component],
    monomials: dict[Monomial, int],
    mu_b: np.ndarray,
    sigma_b: np.ndarray,
    forced: float | None,
) -> tuple[list[np.ndarray], int]:
    """SNR-optimal weights per centroid from exact κ and cov(κ̂)."""
    weights = []
    fallback = 0
    for comp in components:
        if comp.kind != "centroid":
            continue
        if forced is not None:
            weights.append(np.full(len(comp.terms), float(forced)))
            continue

        kappas = np.empty(len(comp.terms))
        # Linear response of each pair covariance estimator to the basis.
        response = np.zeros((len(comp.terms), len(mu_b)))
        for t, (_, (i, j)) in enumerate(comp.terms):
            bi, bj, bij = monomials[(i,)], monomials[(j,)], monomials[(i, j)]
            kappas[t] = sigma_b[bi, bj]
            response[t, bij] += 1.0
            response[t, bi] -= mu_b[bj]
            response[t, bj] -= mu_b[bi]
        cov = response @ sigma_b @ response.T
        try:
            weights.append(xc2_weights(kappas, cov))
        except IllConditionedWeightsError:
            weights.append(np.ones(len(comp.terms)))
            fallback += 1

    if fallback:
        log.warning(
            "centroid weights fell back to uniform",
            {"centroids": fallback, "total": len(weights)},
        )
    return weights, fallback


def simplified_summary(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    model: EmitterModel,
    theta: float,
    psf: PsfGaussian | None = None,
) -> GaussianSummary:
    """
    Summary for independent frames with two-level brightness.

    Expectations are products of Poisson raw moments of
    ⟨n_j|q₁,q₂⟩ = (q₁U_{j,1} + q₂U_{j,2})P̄τ + μ_B averaged over the four
    (q₁, q₂) configurations with weights p², p(1-p), (1-p)p, (1-p)².
    """
    if model.kind != "simplified":
        raise UnsupportedSchemeError(f"simplified_summary needs the simplified kind, got {model.kind}")
    return _build(scheme, geometry, model, theta, psf)


def markov_summary(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    model: EmitterModel,
    theta: float,
    psf: PsfGaussian | None = None,
) -> GaussianSummary:
    """
    Summary for Markov blinking, including inter-frame correlations.

    Σ₁ = cov(v₁, v₁) + Σ_{m≥2}[cov(v₁, v_m) + cov(v_m, v₁)]. Same-frame
    moments come from the moment-matched yield measure; the lagged part
    expands E[v | X, Y] to second order in the yields and contracts it with
    the two-emitter tail sums.
    """
    if model.kind != "markov":
        raise UnsupportedSchemeError(f"markov_summary needs the markov kind, got {model.kind}")
    return _build(scheme, geometry, model, theta, psf)


def weighted_xc2s_summary(
    geometry: DetectorGeometry,
    model: EmitterModel,
    theta: float,
    forced_weight: float | None = None,
    psf: PsfGaussian | None = None,
) -> GaussianSummary:
    """
    M+XC2W summary: centroid sums with SNR-optimal weights.

    Weights are evaluated at θ from exact moments and held fixed in ∂μ/∂θ.
    ``forced_weight`` replaces every weight by a constant (1 reproduces
    M+XC2S).
    """
    return _build(SchemeSpec(id="M_XC2W"), geometry, model, theta, psf, forced_weight)


def build_summary(
    scheme: SchemeSpec,
    geometry: DetectorGeometry,
    model: EmitterModel,
    theta: float,
    psf: PsfGaussian | None = None,
) -> GaussianSummary:
    """Dispatch on the emitter kind."""
    if model.kind == "markov":
        return markov_summary(scheme, geometry, model, theta, psf)
    return simplified_summary(scheme, geometry, model, theta, psf)
