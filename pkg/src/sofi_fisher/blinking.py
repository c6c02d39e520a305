"""
Brightness fluctuation models.

Two kinds of emitter are supported:

* ``simplified``: the brightness is redrawn independently every frame,
  q_off with probability p and q_on with probability 1 - p.
* ``markov``: a two-state continuous-time Markov process with lifetimes
  τ_on and τ_off; the photon yield of a frame is the time integral of the
  brightness over the frame, and frames are correlated.

For the Markov kind every frame-integral moment is obtained from a single
block matrix exponential (Van Loan's construction), so no quadrature is
needed inside sweeps. ``chi_quadrature`` keeps the brute-force integrals
for testing.
"""
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate
from scipy.linalg import expm

from .errors import InvalidParameterError, QuadratureError, UnsupportedOrderError

# Highest power of a frame integral that the summaries need.
MAX_FRAME_POWER = 4


class EmitterModel(BaseModel):
    """
    Blinking parameters of one emitter (both emitters share them).

    q_on and q_off are relative brightness levels with q_on + q_off = 1;
    mean_power is P̄ in photons per τ₀. ``p_off`` is used by the simplified
    kind, ``tau_on``/``tau_off`` by the Markov kind.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["simplified", "markov"] = "simplified"
    q_on: float = Field(1.0, ge=0, le=1)
    q_off: float = Field(0.0, ge=0, le=1)
    mean_power: float = Field(1000.0, gt=0)
    p_off: float = Field(0.5, ge=0, le=1)
    tau_on: float = Field(1.0, gt=0)
    tau_off: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _levels(self) -> "EmitterModel":
        if abs(self.q_on + self.q_off - 1.0) > 1e-12:
            raise ValueError(f"q_on + q_off must equal 1, got {self.q_on + self.q_off}")
        if self.q_off > self.q_on:
            raise ValueError("q_off must not exceed q_on")
        return self

    @classmethod
    def from_alpha(cls, alpha: float, **kwargs) -> "EmitterModel":
        """Build the levels from the fluctuation strength α = 1 - q_off/q_on."""
        if not 0 <= alpha <= 1:
            raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
        q_on = 1.0 / (2.0 - alpha)
        return cls(q_on=q_on, q_off=1.0 - q_on, **kwargs)

    @property
    def alpha(self) -> float:
        return 1.0 - self.q_off / self.q_on

    @property
    def rate(self) -> float:
        """Relaxation rate λ = 1/τ_on + 1/τ_off of the Markov kind."""
        return 1.0 / self.tau_on + 1.0 / self.tau_off

    @property
    def state_probabilities(self) -> np.ndarray:
        """(P(off), P(on)) per frame or in the stationary state."""
        if self.kind == "simplified":
            return np.array([self.p_off, 1.0 - self.p_off])
        return stationary_state(self)

    @property
    def mean_brightness(self) -> float:
        """⟨q⟩."""
        p_off, p_on = self.state_probabilities
        return p_off * self.q_off + p_on * self.q_on

    def mean_photons(self, frame_time: float) -> float:
        """Mean source photons emitted by one emitter in a frame."""
        return self.mean_power * frame_time * self.mean_brightness


def _require_markov(model: EmitterModel) -> None:
    if model.kind != "markov":
        raise InvalidParameterError(f"operation requires the markov kind, got {model.kind}")


def stationary_state(model: EmitterModel) -> np.ndarray:
    """Stationary (p̃_off, p̃_on) = (τ_off, τ_on)/(τ_off + τ_on)."""
    _require_markov(model)
    total = model.tau_off + model.tau_on
    return np.array([model.tau_off / total, model.tau_on / total])


def generator(model: EmitterModel) -> np.ndarray:
    """Generator Q acting on column state vectors (p_off, p_on)."""
    _require_markov(model)
    k_off, k_on = 1.0 / model.tau_off, 1.0 / model.tau_on
    return np.array([[-k_off, k_on], [k_off, -k_on]])


def transition_matrix(dt: float, model: EmitterModel) -> np.ndarray:
    """
    T(dt) = exp(dt·Q), column-stochastic.

    Closed form from the spectrum {0, -λ}: T = Π + e^{-λ dt}(I - Π) where
    every column of Π is the stationary state.
    """
    if dt < 0:
        raise InvalidParameterError(f"dt must be non-negative, got {dt}")
    pi = stationary_state(model)
    proj = np.outer(pi, np.ones(2))
    return proj + math.exp(-model.rate * dt) * (np.eye(2) - proj)


def correlation_step(dt: float, model: EmitterModel) -> np.ndarray:
    """S(dt) = diag(q_off P̄, q_on P̄)·T(dt)ᵀ."""
    levels = model.mean_power * np.array([model.q_off, model.q_on])
    return np.diag(levels) @ transition_matrix(dt, model).T


def brightness_correlation(times: Sequence[float], model: EmitterModel) -> float:
    """⟨P(t₁)…P(t_r)⟩ for ordered times, r ≤ 4."""
    _require_markov(model)
    times = [float(t) for t in times]
    if len(times) > MAX_FRAME_POWER:
        raise UnsupportedOrderError(f"at most {MAX_FRAME_POWER} times supported, got {len(times)}")
    if any(b < a for a, b in zip(times, times[1:])):
        raise InvalidParameterError("times must be sorted ascending")
    if not times:
        return 1.0

    row = stationary_state(model)
    for a, b in zip(times, times[1:]):
        row = row @ correlation_step(b - a, model)
    levels = model.mean_power * np.array([model.q_off, model.q_on])
    return float(row @ levels)


def _van_loan_blocks(gen_row: np.ndarray, levels: np.ndarray, order: int) -> list[np.ndarray]:
    """
    Blocks (0, a) of exp(M) for the block-bidiagonal M with ``gen_row`` on
    the diagonal and diag(levels) on the superdiagonal.

    Block a equals the ordered a-fold integral over the unit interval of
    e^{G s₁} R e^{G(s₂-s₁)} R … R e^{G(1-s_a)}.
    """
    n = gen_row.shape[0]
    size = n * (order + 1)
    big = np.zeros((size, size))
    for a in range(order + 1):
        big[a * n:(a + 1) * n, a * n:(a + 1) * n] = gen_row
        if a < order:
            big[a * n:(a + 1) * n, (a + 1) * n:(a + 2) * n] = np.diag(levels)
    full = expm(big)
    return [full[:n, a * n:(a + 1) * n] for a in range(order + 1)]


@dataclass(frozen=True)
class ChiSet:
    """
    Frame-integral moments of one Markov emitter.

    With X_m the photon yield ∫P dt over frame m (frame 1 is [0, τ]):

    * ``moments[a]`` = E[X^a], a ≤ 4 (χ₁ = moments[1], χ_{3,1} = moments[3], ...)
    * ``couplings[a, b]`` = c_ab such that E[X₁^a X_m^b] = m_a m_b + c_ab ρ^{m-2}
      for m ≥ 2, ρ = e^{-λτ}
    * ``chi2[m-1]`` = E[X₁X_m], ``chi3[m-1]`` = E[X₁²X_m], ``chi4[m-1]`` = E[X₁²X_m²]
    * s1..s4: geometric tail sums over m ≥ 2 of the connected parts of
      χ₂, χ₃, χ₄ and of χ₂² (the two-emitter product)
    """

    tau: float
    decay: float
    moments: np.ndarray
    couplings: np.ndarray
    chi2: np.ndarray
    chi3: np.ndarray
    chi4: np.ndarray
    s1: float
    s2: float
    s3: float
    s4: float
    # Moments of the centered yield W = (1/τ)∫s dt with s = ±1, and the
    # affine map X = offset + halfwidth·W.
    shape_moments: np.ndarray = field(repr=False)
    offset: float = 0.0
    halfwidth: float = 0.0

    @property
    def rho(self) -> float:
        """Per-frame decay factor e^{-λτ} of connected correlations."""
        return math.exp(-self.decay)

    @property
    def chi1(self) -> float:
        return float(self.moments[1])

    @property
    def tail_sums(self) -> tuple[float, float, float, float]:
        return (self.s1, self.s2, self.s3, self.s4)

    def lag_moment(self, a: int, b: int, lag: int) -> float:
        """E[X₁^a X_lag^b]; lag 1 means both powers apply to the same frame."""
        if lag < 1:
            raise InvalidParameterError(f"lag must be at least 1, got {lag}")
        if lag == 1:
            if a + b > MAX_FRAME_POWER:
                raise UnsupportedOrderError(f"same-frame power {a + b} exceeds {MAX_FRAME_POWER}")
            return float(self.moments[a + b])
        return float(self.moments[a] * self.moments[b] + self.couplings[a, b] * self.rho ** (lag - 2))

    def tail_sum(self, a1: int, b1: int, a2: int, b2: int) -> float:
        """
        Σ_{m≥2} (E[X₁^{a1} X_m^{b1}]·E[Y₁^{a2} Y_m^{b2}] - m_{a1} m_{b1} m_{a2} m_{b2})

        for two independent, identically blinking emitters X and Y.
        """
        one_minus_rho = -math.expm1(-self.decay)
        one_minus_rho2 = -math.expm1(-2 * self.decay)
        c1 = self.couplings[a1, b1]
        c2 = self.couplings[a2, b2]
        if c1 == 0 and c2 == 0:
            return 0.0
        mean1 = self.moments[a1] * self.moments[b1]
        mean2 = self.moments[a2] * self.moments[b2]
        return float((mean1 * c2 + mean2 * c1) / one_minus_rho + c1 * c2 / one_minus_rho2)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "chi1": self.chi1,
            "chi2": self.chi2.tolist(),
            "chi3": self.chi3.tolist(),
            "chi4": self.chi4.tolist(),
            "tail_sums": list(self.tail_sums),
        }


def chi_set(model: EmitterModel, tau: float, max_lag: int = 1) -> ChiSet:
    """
    Closed-form frame integrals of the brightness correlations.

    The brightness is written P = P̄(c + h·s) with c = (q_on+q_off)/2,
    h = (q_on-q_off)/2 and s = ±1. Moments of the centered yield come from
    one 10×10 matrix exponential; connected inter-frame parts decay as
    ρ^{m-2}, so the tail sums are geometric. For α = 0 the half-width h is
    zero and every connected part vanishes exactly.
    """
    _require_markov(model)
    if not tau > 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    if max_lag < 1:
        raise InvalidParameterError(f"max_lag must be at least 1, got {max_lag}")

    order = MAX_FRAME_POWER
    pi = stationary_state(model)
    ones = np.ones(2)
    gen_row = generator(model).T * tau
    blocks = _van_loan_blocks(gen_row, np.array([-1.0, 1.0]), order)

    fact = [math.factorial(a) for a in range(order + 1)]
    rows = [pi @ blocks[a] for a in range(order + 1)]
    shape_moments = np.array([fact[a] * rows[a] @ ones for a in range(order + 1)])
    centered = [blocks[b] @ ones - (pi @ blocks[b] @ ones) * ones for b in range(order + 1)]
    shape_couplings = np.array(
        [[fact[a] * fact[b] * rows[a] @ centered[b] for b in range(order + 1)] for a in range(order + 1)]
    )
    shape_couplings[0, :] = 0.0
    shape_couplings[:, 0] = 0.0

    scale = model.mean_power * tau
    c = 0.5 * (model.q_on + model.q_off)
    h = 0.5 * (model.q_on - model.q_off)

    # X^a = scale^a Σ_k C(a,k) c^{a-k} h^k W^k
    expand = np.zeros((order + 1, order + 1))
    for a in range(order + 1):
        for k in range(a + 1):
            expand[a, k] = scale ** a * math.comb(a, k) * c ** (a - k) * h ** k
    moments = expand @ shape_moments
    couplings = expand @ shape_couplings @ expand.T

    decay = model.rate * tau
    rho = math.exp(-decay)
    lags = np.arange(1, max_lag + 1)

    def lagged(a: int, b: int) -> np.ndarray:
        out = moments[a] * moments[b] + couplings[a, b] * rho ** np.maximum(lags - 2, 0)
        out[0] = moments[a + b]
        return out

    chi = ChiSet(
        tau=float(tau),
        decay=decay,
        moments=moments,
        couplings=couplings,
        chi2=lagged(1, 1),
        chi3=lagged(2, 1),
        chi4=lagged(2, 2),
        s1=0.0,
        s2=0.0,
        s3=0.0,
        s4=0.0,
        shape_moments=shape_moments,
        offset=scale * c,
        halfwidth=scale * h,
    )
    # S1..S4 are the single-emitter and paired special cases of tail_sum.
    return replace(
        chi,
        s1=chi.tail_sum(1, 1, 0, 0),
        s2=chi.tail_sum(2, 1, 0, 0),
        s3=chi.tail_sum(2, 2, 0, 0),
        s4=chi.tail_sum(1, 1, 1, 1),
    )


def frame_yield_measure(model: EmitterModel, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Discrete (nodes, weights) measure for the per-frame photon yield X of
    one emitter.

    Simplified kind: the exact two-point law {q_off P̄τ: p, q_on P̄τ: 1-p}.
    Markov kind: five Chebyshev nodes on [q_off, q_on]·P̄τ with (signed)
    weights reproducing E[X^a] for a ≤ 4, which makes expectations of any
    polynomial of degree ≤ 4 in X exact.
    """
    if model.kind == "simplified":
        scale = model.mean_power * tau
        nodes = scale * np.array([model.q_off, model.q_on])
        return nodes, np.array([model.p_off, 1.0 - model.p_off])

    chi = chi_set(model, tau)
    if chi.halfwidth == 0:
        return np.array([chi.offset]), np.array([1.0])

    n = MAX_FRAME_POWER + 1
    shape_nodes = np.cos((2 * np.arange(n) + 1) * np.pi / (2 * n))
    vander = np.vander(shape_nodes, n, increasing=True).T
    weights = np.linalg.solve(vander, chi.shape_moments)
    return chi.offset + chi.halfwidth * shape_nodes, weights


def _quad(fn, *args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return fn(*args, **kwargs)[0]
        except integrate.IntegrationWarning as e:
            raise QuadratureError(str(e)) from e


def chi_quadrature(
    model: EmitterModel,
    tau: float,
    order: int,
    lag: int = 1,
    epsrel: float = 1e-10,
) -> float:
    """
    Brute-force χ by adaptive quadrature of ``brightness_correlation``.

    ``order`` 1..4 selects χ₁, E[X₁X_m], E[X₁²X_m], E[X₁²X_m²]. The
    integration runs over ordered time simplices so the integrand is smooth.
    """
    if order not in (1, 2, 3, 4):
        raise UnsupportedOrderError(f"order must be 1..4, got {order}")
    if lag < 1:
        raise InvalidParameterError(f"lag must be at least 1, got {lag}")

    def corr(*times):
        return brightness_correlation(times, model)

    lo, hi = (lag - 1) * tau, lag * tau
    opts = {"epsabs": 0.0, "epsrel": epsrel}

    if order == 1:
        return _quad(integrate.quad, lambda t: corr(t), 0.0, tau, **opts)

    if order == 2:
        if lag == 1:
            return 2 * _quad(integrate.dblquad, lambda t2, t1: corr(t1, t2), 0.0, tau,
                             lambda t1: t1, tau, **opts)
        return _quad(integrate.dblquad, lambda t2, t1: corr(t1, t2), 0.0, tau, lo, hi, **opts)

    if order == 3:
        if lag == 1:
            return 6 * _quad(integrate.tplquad, lambda t3, t2, t1: corr(t1, t2, t3), 0.0, tau,
                             lambda t1: t1, tau, lambda t1, t2: t2, tau, **opts)
        return 2 * _quad(integrate.tplquad, lambda t3, t2, t1: corr(t1, t2, t3), 0.0, tau,
                         lambda t1: t1, tau, lo, hi, **opts)

    if lag == 1:
        ranges = [
            lambda t3, t2, t1: (t3, tau),
            lambda t2, t1: (t2, tau),
            lambda t1: (t1, tau),
            (0.0, tau),
        ]
        return 24 * _quad(integrate.nquad, lambda t4, t3, t2, t1: corr(t1, t2, t3, t4),
                          ranges, opts=opts)
    ranges = [
        lambda t3, t2, t1: (t3, hi),
        lambda t2, t1: (lo, hi),
        lambda t1: (t1, tau),
        (0.0, tau),
    ]
    return 4 * _quad(integrate.nquad, lambda t4, t3, t2, t1: corr(t1, t2, t3, t4),
                     ranges, opts=opts)
