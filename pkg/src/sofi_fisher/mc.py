"""
Monte Carlo ground truth.

Frames are simulated exactly for both blinking kinds: the simplified kind
redraws each emitter's brightness per frame, the Markov kind integrates
an event-driven jump process over every frame. Every random stream comes
from a Philox generator seeded by ``SeedSequence(seed, spawn_key=(replica,))``
and spawned into one child per emitter plus one for shot noise, so a
(seed, replica, parameters) triple always reproduces the same counts.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .blinking import EmitterModel
from .errors import InvalidParameterError
from .fisher import si_fisher_exact
from .log import get_logger
from .model import STIRLING2, DetectorGeometry, PsfGaussian, pixel_overlaps
from .summary import (
    GaussianSummary,
    SchemeSpec,
    basis_rows,
    center_statistics,
    kept_components,
    linear_map,
    monomial_basis,
)

log = get_logger(__name__)

BATCH_FORMAT = "sofi-fisher-batch v1"
FRAME_CHUNK = 65536
MIN_BATCH_LENGTH = 50
ORACLE_MAX_NBAR = 200


def _generators(seed: int, replica: int, count: int) -> list[np.random.Generator]:
    root = np.random.SeedSequence(seed, spawn_key=(replica,))
    return [np.random.Generator(np.random.Philox(child)) for child in root.spawn(count)]


@dataclass(frozen=True)
class FrameBatch:
    """Photon counts of ``n_frames`` frames (rows) by pixel (columns)."""

    counts: np.ndarray
    seed: int
    theta: float
    model: EmitterModel
    geometry: DetectorGeometry
    replica: int = 0

    @property
    def n_frames(self) -> int:
        return self.counts.shape[0]

    def header(self) -> dict:
        return {
            "format": BATCH_FORMAT,
            "seed": self.seed,
            "replica": self.replica,
            "theta": self.theta,
            "n_frames": self.n_frames,
            "n_pixels": self.counts.shape[1],
            "dtype": "<i4",
            "model": self.model.model_dump(),
            "geometry": self.geometry.model_dump(),
        }


def _two_level_yields(rng: np.random.Generator, model: EmitterModel, n: int, tau: float) -> np.ndarray:
    off = rng.random(n) < model.p_off
    return model.mean_power * tau * np.where(off, model.q_off, model.q_on)


def _markov_yields(rng: np.random.Generator, model: EmitterModel, n: int, tau: float) -> np.ndarray:
    """Per-frame ∫P dt from exact jump times of the on/off process."""
    total = n * tau
    p_on = model.state_probabilities[1]
    start_on = bool(rng.random() < p_on)
    first, second = (model.tau_on, model.tau_off) if start_on else (model.tau_off, model.tau_on)

    block = max(16, int(1.2 * total / (first + second)) + 16)
    durations = []
    elapsed = 0.0
    while elapsed < total:
        pair = np.empty(2 * block)
        pair[0::2] = rng.exponential(first, block)
        pair[1::2] = rng.exponential(second, block)
        durations.append(pair)
        elapsed += pair.sum()
    durations = np.concatenate(durations)

    ends = np.cumsum(durations)
    on = (np.arange(len(durations)) % 2 == 0) == start_on
    on_after = np.cumsum(durations * on)

    # C(t) = on-time accumulated up to t, evaluated at every frame edge.
    edges = np.arange(n + 1) * tau
    seg = np.minimum(np.searchsorted(ends, edges, side="right"), len(ends) - 1)
    seg_start = np.where(seg > 0, ends[seg - 1], 0.0)
    on_before = np.where(seg > 0, on_after[seg - 1], 0.0)
    cumulative = on_before + on[seg] * (edges - seg_start)
    on_time = np.diff(cumulative)

    return model.mean_power * (model.q_on * on_time + model.q_off * (tau - on_time))


def simulate_frames(
    model: EmitterModel,
    geometry: DetectorGeometry,
    theta: float,
    n_frames: int,
    seed: int,
    replica: int = 0,
    psf: PsfGaussian | None = None,
) -> FrameBatch:
    """
    Simulate counts for two emitters at ±θ/2.

    Counts are Poisson(X U_{j,1} + Y U_{j,2} + μ_B) with X, Y the frame
    yields of the emitters.
    """
    if n_frames < 1:
        raise InvalidParameterError(f"n_frames must be at least 1, got {n_frames}")
    ov = pixel_overlaps(geometry, psf, theta)
    tau = geometry.frame_time
    first, second, shot = _generators(seed, replica, 3)

    yields = _two_level_yields if model.kind == "simplified" else _markov_yields
    x = yields(first, model, n_frames, tau)
    y = yields(second, model, n_frames, tau)

    counts = np.empty((n_frames, geometry.n_pixels), dtype=np.int32)
    for start in range(0, n_frames, FRAME_CHUNK):
        chunk = slice(start, start + FRAME_CHUNK)
        means = np.outer(x[chunk], ov.u1) + np.outer(y[chunk], ov.u2) + geometry.background_mean
        counts[chunk] = shot.poisson(means)
    counts.flags.writeable = False
    return FrameBatch(counts=counts, seed=seed, theta=float(theta), model=model, geometry=geometry, replica=replica)


def write_batch(batch: FrameBatch, path: str | Path) -> Path:
    """Write a JSON header line followed by little-endian int32 counts."""
    path = Path(path)
    with path.open("wb") as f:
        f.write(json.dumps(batch.header(), sort_keys=True).encode() + b"\n")
        f.write(np.ascontiguousarray(batch.counts, dtype="<i4").tobytes())
    return path


def read_batch(path: str | Path) -> FrameBatch:
    with Path(path).open("rb") as f:
        header = json.loads(f.readline())
        if header.get("format") != BATCH_FORMAT:
            raise InvalidParameterError(f"{path} is not a {BATCH_FORMAT} file")
        data = np.frombuffer(f.read(), dtype="<i4")
    counts = data.reshape(header["n_frames"], header["n_pixels"]).astype(np.int32)
    counts.flags.writeable = False
    return FrameBatch(
        counts=counts,
        seed=header["seed"],
        theta=header["theta"],
        model=EmitterModel(**header["model"]),
        geometry=DetectorGeometry(**header["geometry"]),
        replica=header.get("replica", 0),
    )


@dataclass(frozen=True)
class EmpiricalSummary:
    """Sample mean and per-frame covariance with group standard errors."""

    scheme: SchemeSpec
    labels: tuple[str, ...]
    mean: np.ndarray
    sigma1: np.ndarray
    mean_stderr: np.ndarray
    sigma1_stderr: np.ndarray
    n_frames: int

    def z_scores(self, summary: GaussianSummary, min_count: float = 100.0) -> tuple[np.ndarray, np.ndarray]:
        """
        (z of μ, z of Σ₁) against an analytic summary over the same statistics.

        Statistics whose expected sum over the batch is below ``min_count``
        are too rarely nonzero for a normal error estimate and get z = 0.
        """
        if tuple(summary.labels) != self.labels:
            raise InvalidParameterError("summaries describe different statistics")
        informative = np.abs(summary.mu) * self.n_frames >= min_count
        z_mean = np.where(informative, _z(self.mean - summary.mu, self.mean_stderr), 0.0)
        z_sigma = np.where(
            np.outer(informative, informative),
            _z(self.sigma1 - summary.sigma1, self.sigma1_stderr),
            0.0,
        )
        return z_mean, z_sigma

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.label,
            "labels": list(self.labels),
            "mean": self.mean.tolist(),
            "sigma1": self.sigma1.tolist(),
            "mean_stderr": self.mean_stderr.tolist(),
            "sigma1_stderr": self.sigma1_stderr.tolist(),
            "n_frames": self.n_frames,
        }


def _z(diff: np.ndarray, stderr: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(diff) / stderr
    return np.where(stderr > 0, z, np.where(np.abs(diff) > 0, np.inf, 0.0))


class _MomentAccumulator:
    """Running Σv and Σvvᵀ of row vectors, shifted by the first block's mean."""

    def __init__(self, size: int):
        self.count = 0
        self.shift = None
        self.total = np.zeros(size)
        self.outer = np.zeros((size, size))

    def add(self, rows: np.ndarray) -> None:
        if self.shift is None:
            self.shift = rows.mean(axis=0)
        shifted = rows - self.shift
        self.count += len(rows)
        self.total += shifted.sum(axis=0)
        self.outer += shifted.T @ shifted

    @property
    def mean(self) -> np.ndarray:
        return self.shift + self.total / self.count

    @property
    def cov(self) -> np.ndarray:
        m = self.total / self.count
        return (self.outer - self.count * np.outer(m, m)) / (self.count - 1)


def _group_estimate(
    counts: np.ndarray,
    rows: np.ndarray,
    lin: np.ndarray,
    batch_length: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and per-frame covariance of the statistics over one contiguous group of frames."""
    frames = _MomentAccumulator(lin.shape[0])
    batches = _MomentAccumulator(lin.shape[0])
    step = max(1, FRAME_CHUNK // batch_length) * batch_length

    for start in range(0, len(counts), step):
        block = counts[start:start + step].astype(float)
        # Index -1 in the padded basis rows selects the column of ones.
        ext = np.hstack([block, np.ones((len(block), 1))])
        basis_values = ext[:, rows].prod(axis=2)
        values = basis_values @ lin.T
        frames.add(values)
        if batch_length > 1:
            n_full = len(values) // batch_length
            if n_full:
                batches.add(values[: n_full * batch_length].reshape(n_full, batch_length, -1).mean(axis=1))

    if batch_length == 1:
        return frames.mean, frames.cov
    return frames.mean, batch_length * batches.cov


def empirical_summary(
    batch: FrameBatch,
    scheme: SchemeSpec,
    weights: Sequence[np.ndarray] = (),
    n_groups: int = 20,
    psf: PsfGaussian | None = None,
) -> EmpiricalSummary:
    """
    Frame-averaged statistics of a simulated batch.

    The statistics are those of the analytic summary at the batch's θ
    (same dropped pixels, same order; ``weights`` for centroid sums).
    Centered AC2 statistics are centered on the sample pixel mean of the
    whole batch in place of the exact one.
    Σ₁ is the sample covariance for independent frames and L times the
    covariance of length-L batch means for the Markov kind, with
    L = max(50, ⌈50/(λτ)⌉) spanning several correlation times. Standard
    errors come from the spread over ``n_groups`` contiguous groups.
    """
    if batch.n_frames < 2:
        raise InvalidParameterError("empirical_summary needs at least 2 frames")
    ov = pixel_overlaps(batch.geometry, psf, batch.theta)
    components = kept_components(scheme, batch.geometry, batch.model.kind, ov)
    monomials = monomial_basis(components)
    rows = basis_rows(monomials)
    lin = linear_map(components, monomials, weights)
    pixel_means = batch.counts.mean(axis=0)
    sample_means = np.array([pixel_means[m[0]] if len(m) == 1 else 0.0 for m in monomials])
    offset = center_statistics(lin, components, monomials, sample_means)

    if batch.model.kind == "markov":
        decay = batch.model.rate * batch.geometry.frame_time
        batch_length = max(MIN_BATCH_LENGTH, math.ceil(MIN_BATCH_LENGTH / decay))
    else:
        batch_length = 1

    n_groups = max(1, min(n_groups, batch.n_frames // (2 * batch_length)))
    groups = np.array_split(np.arange(batch.n_frames), n_groups)
    estimates = [_group_estimate(batch.counts[g], rows, lin, batch_length) for g in groups]

    sizes = np.array([len(g) for g in groups], dtype=float)
    group_means = np.array([e[0] for e in estimates])
    group_covs = np.array([e[1] for e in estimates])
    mean = np.average(group_means, axis=0, weights=sizes) + offset
    sigma1 = group_covs.mean(axis=0)
    if n_groups > 1:
        mean_stderr = group_means.std(axis=0, ddof=1) / math.sqrt(n_groups)
        sigma1_stderr = group_covs.std(axis=0, ddof=1) / math.sqrt(n_groups)
    else:
        mean_stderr = np.sqrt(np.clip(np.diag(sigma1), 0, None) / batch.n_frames)
        sigma1_stderr = np.full_like(sigma1, np.inf)

    return EmpiricalSummary(
        scheme=scheme,
        labels=tuple(c.label for c in components),
        mean=mean,
        sigma1=0.5 * (sigma1 + sigma1.T),
        mean_stderr=mean_stderr,
        sigma1_stderr=sigma1_stderr,
        n_frames=batch.n_frames,
    )


def lag_covariance(batch: FrameBatch, max_lag: int) -> np.ndarray:
    """cov(N_t, N_{t+k}) of the total count for k = 1..max_lag."""
    if not 1 <= max_lag < batch.n_frames:
        raise InvalidParameterError(f"max_lag must lie in [1, {batch.n_frames - 1}], got {max_lag}")
    total = batch.counts.sum(axis=1).astype(float)
    centered = total - total.mean()
    return np.array([np.mean(centered[:-k] * centered[k:]) for k in range(1, max_lag + 1)])


@dataclass(frozen=True)
class CumulantImage:
    """Per-pixel temporal cumulant of order k, sampled and analytic."""

    order: int
    centers: np.ndarray
    empirical: np.ndarray
    analytic: np.ndarray

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "centers": self.centers.tolist(),
            "empirical": self.empirical.tolist(),
            "analytic": self.analytic.tolist(),
        }


def _bernoulli_cumulants(r: float) -> list[float]:
    v = r * (1 - r)
    return [r, v, v * (1 - 2 * r), v * (1 - 6 * v)]


def analytic_cumulant_image(
    model: EmitterModel,
    geometry: DetectorGeometry,
    theta: float,
    order: int,
    psf: PsfGaussian | None = None,
) -> np.ndarray:
    """
    κ_k(n_j) = Σ_i S(k, i) κ_i(ν_j) for Poisson counts with random mean
    ν_j = P̄τ(q₁U_{j,1} + q₂U_{j,2}) + μ_B and independent two-level q.
    """
    if not 1 <= order <= 4:
        raise InvalidParameterError(f"cumulant order must be 1..4, got {order}")
    ov = pixel_overlaps(geometry, psf, theta)
    scale = model.mean_power * geometry.frame_time
    step = model.q_on - model.q_off
    bern = _bernoulli_cumulants(1.0 - model.p_off)

    def brightness_cumulant(i: int) -> float:
        if i == 1:
            return model.q_off + step * bern[0]
        return step**i * bern[i - 1]

    image = np.zeros(geometry.n_pixels)
    for i in range(1, order + 1):
        kappa_nu = scale**i * brightness_cumulant(i) * (ov.u1**i + ov.u2**i)
        if i == 1:
            kappa_nu = kappa_nu + geometry.background_mean
        image += STIRLING2[order, i] * kappa_nu
    return image


def cumulant_image_check(batch: FrameBatch, order: int, psf: PsfGaussian | None = None) -> CumulantImage:
    """Per-pixel k-statistics of the counts next to their analytic values."""
    if batch.model.kind != "simplified":
        raise InvalidParameterError("cumulant images assume independent frames (simplified kind)")
    if not 1 <= order <= 4:
        raise InvalidParameterError(f"cumulant order must be 1..4, got {order}")
    counts = batch.counts.astype(float)
    empirical = np.array([stats.kstat(counts[:, j], order) for j in range(counts.shape[1])])
    return CumulantImage(
        order=order,
        centers=batch.geometry.centers,
        empirical=empirical,
        analytic=analytic_cumulant_image(batch.model, batch.geometry, batch.theta, order, psf),
    )


def _gaussian(x, amplitude, center, width):
    return amplitude * np.exp(-0.5 * ((x - center) / width) ** 2)


def fit_gaussian_width(centers: np.ndarray, image: np.ndarray) -> float:
    """Width of a Gaussian fitted to an image profile."""
    p0 = [float(np.max(image)), float(centers[np.argmax(image)]), 1.0]
    popt, _ = optimize.curve_fit(_gaussian, centers, image, p0=p0)
    return abs(float(popt[2]))


@dataclass(frozen=True)
class OracleEstimate:
    """Full-data FI per photon from the score of the exact frame likelihood."""

    theta: float
    fi_per_photon: float
    stderr: float
    n_samples: int
    si_fisher: float = field(default=0.0)

    @property
    def zeta(self) -> float:
        return (self.fi_per_photon / self.si_fisher) ** 0.25

    @property
    def zeta_stderr(self) -> float:
        return self.zeta * self.stderr / (4 * self.fi_per_photon)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "fi_per_photon": self.fi_per_photon,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "zeta": self.zeta,
            "zeta_stderr": self.zeta_stderr,
        }


def _frame_log_likelihood(positions, mask, n, theta, levels, weights, scale, sigma):
    """log p(n, x₁..xₙ | θ) up to θ-independent terms, per frame."""
    psf = PsfGaussian(sigma=sigma)
    h = theta / 2
    u_left = psf.value(positions + h)
    u_right = psf.value(positions - h)
    terms = []
    for (q1, q2), w in zip(levels, weights):
        s = q1 + q2
        if s == 0:
            terms.append(np.where(n == 0, math.log(w), -np.inf))
            continue
        with np.errstate(divide="ignore"):
            density = np.log((q1 * u_left + q2 * u_right) / s)
        log_photons = np.where(mask, density, 0.0).sum(axis=1)
        terms.append(math.log(w) + stats.poisson.logpmf(n, scale * s) + log_photons)
    return np.logaddexp.reduce(np.stack(terms), axis=0)


def score_fi_oracle(
    model: EmitterModel,
    theta: float,
    n_samples: int,
    seed: int,
    frame_time: float = 1.0,
    sigma: float = 1.0,
    chunk: int = 100_000,
) -> OracleEstimate:
    """
    Estimate the full-data FI per photon by sampling frames of continuous
    photon positions.

    Each frame draws (q₁, q₂), photon numbers Poisson(P̄τq_i) and
    positions around ±θ/2; the score is the central difference of the
    exact four-configuration log-likelihood with Δθ = θ/20, and
    F = ⟨score²⟩/⟨n⟩.
    """
    if model.kind != "simplified":
        raise InvalidParameterError("score_fi_oracle requires the simplified kind")
    scale = model.mean_power * frame_time
    if scale > ORACLE_MAX_NBAR:
        raise InvalidParameterError(f"P̄τ must not exceed {ORACLE_MAX_NBAR}, got {scale}")
    if not 0 < theta <= 0.1 * sigma / math.sqrt(scale):
        raise InvalidParameterError(f"theta must lie in (0, 0.1σ/√(P̄τ)], got {theta}")
    if n_samples < 2:
        raise InvalidParameterError("n_samples must be at least 2")

    p = model.p_off
    levels = [(a, b) for a in (model.q_off, model.q_on) for b in (model.q_off, model.q_on)]
    weights = [wa * wb for wa in (p, 1 - p) for wb in (p, 1 - p)]
    delta = theta / 20
    brightness, counts_rng, position_rng = _generators(seed, 0, 3)

    squares = []
    for start in range(0, n_samples, chunk):
        size = min(chunk, n_samples - start)
        q1 = np.where(brightness.random(size) < p, model.q_off, model.q_on)
        q2 = np.where(brightness.random(size) < p, model.q_off, model.q_on)
        n1 = counts_rng.poisson(scale * q1)
        n2 = counts_rng.poisson(scale * q2)
        n = n1 + n2

        width = max(int(n.max()), 1)
        slot = np.arange(width)
        mask = slot[None, :] < n[:, None]
        origin = np.where(slot[None, :] < n1[:, None], -theta / 2, theta / 2)
        positions = origin + sigma * position_rng.standard_normal((size, width))

        args = (positions, mask, n)
        rest = (levels, weights, scale, sigma)
        upper = _frame_log_likelihood(*args, theta + delta, *rest)
        lower = _frame_log_likelihood(*args, theta - delta, *rest)
        squares.append(((upper - lower) / (2 * delta)) ** 2)

    squares = np.concatenate(squares)
    mean_photons = 2 * scale * model.mean_brightness
    fi = float(squares.mean() / mean_photons)
    stderr = float(squares.std(ddof=1) / math.sqrt(n_samples) / mean_photons)
    if stderr > 0.2 * fi:
        log.warning("score oracle has too few samples", {"fi": fi, "stderr": stderr, "n_samples": n_samples})
    return OracleEstimate(
        theta=float(theta),
        fi_per_photon=fi,
        stderr=stderr,
        n_samples=n_samples,
        si_fisher=si_fisher_exact(theta, sigma),
    )
