"""
Engine behind the command line.

``SweepConfig`` holds every parameter a command can take; ``FisherEngine``
turns one into a table of rows

    [axis, value, scheme, quantity, result, residual, flag]

in deterministic grid order. Sweep points are resolved into emitter models
and detector grids before anything is computed, so an invalid point fails
the whole run up front.
"""
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .blinking import EmitterModel
from .errors import InvalidParameterError, UnsupportedSchemeError
from .fisher import (
    RGL_THETAS,
    TAU_LIMITS,
    antibunching_rgl,
    fi_per_photon_curve,
    optimal_frame_time,
    pixelated_si_fisher,
    rgl,
    rgl_pix,
    zeta_max,
    zeta_max_asymptotic,
)
from .method import method
from .model import DetectorGeometry
from .service import Service
from .summary import SchemeSpec, check_scheme
from .validation import SUITES, run_suite

COLUMNS = ["axis", "value", "scheme", "quantity", "result", "residual", "flag"]
VALIDATION_COLUMNS = ["suite", "passed", "value", "expected", "tolerance", "detail"]

AXES = ("theta", "tau", "pbar", "nbar", "alpha", "dx", "p", "mu_b")
PSEUDO_SCHEMES = ("ZETA_MAX", "ZETA_MAX_ASYMPTOTIC")
SI_SCHEME = "SI"
MAX_GRID_POINTS = 10_000

_GRID = re.compile(r"^\s*([^:]+):([^:]+):(log|lin)(\d+)\s*$")

Command = Literal["fi-curve", "rgl", "zeta-max", "sweep", "tau-opt", "validate", "antibunching"]


def parse_grid(text: str) -> list[float]:
    """
    Parse a grid spec.

    ``a:b:logN`` gives N log-spaced points, ``a:b:linN`` N evenly spaced
    points, and a comma list (or a single number) is taken as is. Log grids
    must be positive; other grids non-negative.
    """
    text = str(text).strip()
    match = _GRID.match(text)
    try:
        if match:
            start, stop = float(match.group(1)), float(match.group(2))
            spacing, count = match.group(3), int(match.group(4))
        else:
            values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise InvalidParameterError(f"cannot parse grid {text!r}") from e

    if match:
        if not 1 <= count <= MAX_GRID_POINTS:
            raise InvalidParameterError(f"grid {text!r} needs 1 to {MAX_GRID_POINTS} points")
        if spacing == "log":
            if not (start > 0 and stop > 0):
                raise InvalidParameterError(f"log grid {text!r} must be positive")
            values = np.geomspace(start, stop, count).tolist()
        else:
            values = np.linspace(start, stop, count).tolist()

    if not values:
        raise InvalidParameterError("grid is empty")
    if len(values) > MAX_GRID_POINTS:
        raise InvalidParameterError(f"grid {text!r} exceeds {MAX_GRID_POINTS} points")
    if any(not math.isfinite(v) or v < 0 for v in values):
        raise InvalidParameterError(f"grid {text!r} must hold finite non-negative values")
    return values


def _split(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


class SweepConfig(BaseModel):
    """
    Parameters of one run.

    P̄ is ``pbar`` unless ``nbar`` is given, in which case P̄ = nbar/tau.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Command = "sweep"

    # Emitters
    model: Literal["simplified", "markov"] = "simplified"
    p: float = Field(0.5, ge=0, le=1, description="P(off) per frame (simplified kind)")
    alpha: float = Field(1.0, ge=0, le=1, description="fluctuation strength 1 - q_off/q_on")
    pbar: float = Field(1000.0, gt=0, description="mean power in photons per τ₀")
    nbar: float | None = Field(None, gt=0, description="photons per frame; overrides pbar")
    tau: float = Field(1.0, gt=0, description="frame time in units of τ₀")
    tau_on: float = Field(1.0, gt=0)
    tau_off: float = Field(1.0, gt=0)

    # Detector
    dx: float = Field(0.5, gt=0, description="pixel size in units of σ")
    mu_b: float = Field(0.0, ge=0, description="background photons per pixel per frame")

    # What to compute
    schemes: list[str] = Field(default_factory=lambda: ["M+AC2"])
    axis: Literal[AXES] = "theta"
    range: str | None = Field(None, description="grid spec of the swept axis")
    thetas: str = Field("0.05:5:log40", description="grid spec of θ for fi-curve")
    tau_min: float = TAU_LIMITS[0]
    tau_max: float = TAU_LIMITS[1]
    pix: bool = False
    optimize_tau: bool = False
    rescale: bool = False

    # Validation
    frames: int = Field(10**6, gt=0)
    samples: int = Field(10**6, gt=0)
    seed: int = Field(1, ge=0)
    suites: list[str] = Field(default_factory=list)

    # Execution and output
    threads: int | None = Field(None, gt=0)
    output: str | None = None
    format: Literal["csv", "json"] = "csv"

    @field_validator("schemes", "suites", mode="before")
    @classmethod
    def _comma_list(cls, value):
        return _split(value)

    @field_validator("schemes")
    @classmethod
    def _known_schemes(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("at least one scheme is required")
        names = []
        for name in value:
            upper = name.strip().upper()
            if upper in PSEUDO_SCHEMES or upper == SI_SCHEME:
                names.append(upper)
                continue
            try:
                names.append(SchemeSpec.parse(name).label)
            except UnsupportedSchemeError as e:
                raise ValueError(str(e)) from None
        return names

    @field_validator("suites")
    @classmethod
    def _known_suites(cls, value: list[str]) -> list[str]:
        unknown = [s for s in value if s not in SUITES]
        if unknown:
            raise ValueError(f"unknown suites {unknown}; choose from {list(SUITES)}")
        return value

    @field_validator("range", "thetas", mode="before")
    @classmethod
    def _grid_text(cls, value):
        # YAML hands over numbers and lists for single values and comma lists
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return str(value)
        if isinstance(value, (list, tuple)):
            return ",".join(str(v) for v in value)
        return value

    @field_validator("range", "thetas")
    @classmethod
    def _grid(cls, value: str | None) -> str | None:
        if value is not None:
            try:
                parse_grid(value)
            except InvalidParameterError as e:
                raise ValueError(str(e)) from None
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "SweepConfig":
        if not TAU_LIMITS[0] <= self.tau_min < self.tau_max <= TAU_LIMITS[1]:
            raise ValueError(f"tau_min < tau_max must lie in [{TAU_LIMITS[0]}, {TAU_LIMITS[1]}]")
        if self.command == "sweep" and self.range is None:
            raise ValueError("sweep needs a range")
        if self.axis == "pbar" and self.nbar is not None:
            raise ValueError("axis pbar conflicts with a fixed nbar")
        if self.optimize_tau or self.command == "tau-opt":
            if self.model != "markov":
                raise ValueError("frame-time optimization needs model markov")
            if self.axis == "tau" and self.range is not None:
                raise ValueError("cannot sweep tau while optimizing it")
        if SI_SCHEME in self.schemes and self.command != "fi-curve":
            raise ValueError("scheme SI is only available to fi-curve")
        if self.command == "fi-curve" and any(s in PSEUDO_SCHEMES for s in self.schemes):
            raise ValueError("fi-curve does not take the ZETA_MAX pseudo-schemes")
        return self

    def mean_power(self, tau: float, pbar: float, nbar: float | None) -> float:
        return nbar / tau if nbar is not None else pbar

    def grid(self) -> list[float] | None:
        return parse_grid(self.range) if self.range is not None else None


@dataclass(frozen=True)
class SweepPoint:
    """One resolved grid point."""

    axis: str | None
    value: float | None
    model: EmitterModel
    geometry: DetectorGeometry
    theta: float | None = None

    @property
    def nbar(self) -> float:
        return self.model.mean_power * self.geometry.frame_time


def _resolve(config: SweepConfig, value: float | None, theta_max: float) -> SweepPoint:
    """Build the emitter model and detector grid of one point."""
    params = config.model_dump()
    axis = config.axis if value is not None else None
    theta = None
    if axis == "theta":
        theta = value
        theta_max = max(theta_max, value)
    elif axis is not None:
        params[axis] = value

    try:
        model = EmitterModel.from_alpha(
            params["alpha"],
            kind=config.model,
            mean_power=config.mean_power(params["tau"], params["pbar"], params["nbar"]),
            p_off=params["p"],
            tau_on=params["tau_on"],
            tau_off=params["tau_off"],
        )
        geometry = DetectorGeometry.covering(
            pixel_size=params["dx"],
            theta_max=theta_max,
            frame_time=params["tau"],
            background_mean=params["mu_b"],
        )
    except ValidationError as e:
        first = e.errors()[0]
        where = f"{axis}={value}: " if axis else ""
        raise InvalidParameterError(f"{where}{'.'.join(map(str, first['loc']))}: {first['msg']}") from e
    except InvalidParameterError as e:
        where = f"{axis}={value}: " if axis else ""
        raise InvalidParameterError(f"{where}{e}") from e
    return SweepPoint(axis=axis, value=value, model=model, geometry=geometry, theta=theta)


class FisherEngine(Service):
    """Fisher information and resolution gain limits of blinking emitters."""

    name = "sofi-fisher"
    version = "0.1.0"

    # ------------------------------------------------------------------ helpers

    def _workers(self, config: SweepConfig) -> int:
        return config.threads or os.cpu_count() or 1

    def _points(self, config: SweepConfig, theta_max: float = max(RGL_THETAS)) -> list[SweepPoint]:
        grid = config.grid()
        if grid is None:
            return [_resolve(config, None, theta_max)]
        if config.axis == "theta" and min(grid) <= 0:
            raise InvalidParameterError("theta grid must be positive")
        return [_resolve(config, v, theta_max) for v in grid]

    def _specs(self, config: SweepConfig) -> dict[str, SchemeSpec | None]:
        specs: dict[str, SchemeSpec | None] = {}
        for name in config.schemes:
            pseudo = name in PSEUDO_SCHEMES or name == SI_SCHEME
            specs[name] = None if pseudo else check_scheme(SchemeSpec.parse(name), config.model)
        return specs

    def _rows_at(self, config: SweepConfig, point: SweepPoint, specs: dict, optimize: bool) -> list[list]:
        rows = []
        head = [point.axis, point.value]
        suffix = "_rescaled" if config.rescale else ""

        for name, spec in specs.items():
            if spec is None:
                p_off = float(point.model.state_probabilities[0])
                fn = zeta_max if name == "ZETA_MAX" else zeta_max_asymptotic
                value = fn(p_off, point.model.alpha, point.nbar)
                if config.rescale:
                    value /= point.nbar**0.25
                # The two-level law ignores inter-frame correlations.
                flag = "exact" if point.model.kind == "simplified" else "approx"
                rows.append(head + [name, name.lower() + suffix, value, None, flag])
                continue

            if point.theta is not None:
                curve = fi_per_photon_curve(spec, point.geometry, point.model, [point.theta])
                rows.append(head + [name, "fi_per_photon", float(curve.fi_per_photon[0]), None, "ok"])
                continue

            quantity = "zeta_pix" if config.pix else "zeta"
            if optimize:
                bounds = (config.tau_min, config.tau_max)
                best = optimal_frame_time(spec, point.geometry, point.model, bounds, pix=config.pix)
                zeta = best.zeta
                if config.rescale:
                    zeta /= (point.model.mean_power * best.tau_opt) ** 0.25
                rows.append(head + [name, quantity + suffix, zeta, None, best.flag])
                rows.append(head + [name, "tau_opt", best.tau_opt, None, best.flag])
                continue

            report = (rgl_pix if config.pix else rgl)(spec, point.geometry, point.model)
            zeta = report.zeta / point.nbar**0.25 if config.rescale else report.zeta
            rows.append(head + [name, quantity + suffix, zeta, report.ratio_extrapolation_residual, report.flag])
        return rows

    def _table(self, config: SweepConfig, optimize: bool = False) -> dict:
        points = self._points(config)
        specs = self._specs(config)
        self.log.info(
            "evaluating grid",
            {"command": config.command, "points": len(points), "schemes": list(specs)},
        )

        def evaluate(point: SweepPoint) -> list[list]:
            rows = self._rows_at(config, point, specs, optimize)
            self.log.info("point done", {"axis": point.axis, "value": point.value})
            return rows

        with ThreadPoolExecutor(max_workers=self._workers(config)) as pool:
            chunks = list(pool.map(evaluate, points))
        return {
            "columns": COLUMNS,
            "rows": [row for chunk in chunks for row in chunk],
            "params": config.model_dump(),
        }

    # ---------------------------------------------------------------- endpoints

    @method(command="fi-curve")
    def fi_curve(self, config: SweepConfig) -> dict:
        """
        Fisher information per photon against separation.

        Args:
            config: run parameters; θ comes from ``thetas``, scheme ``SI`` is
                standard imaging on the same pixel grid
        """
        thetas = parse_grid(config.thetas)
        if min(thetas) <= 0:
            raise InvalidParameterError("thetas must be positive")
        point = _resolve(config.model_copy(update={"range": None}), None, max(thetas))
        specs = self._specs(config)

        def evaluate(name: str) -> list[float]:
            spec = specs[name]
            if spec is None:
                return [pixelated_si_fisher(point.geometry, t) for t in thetas]
            return fi_per_photon_curve(spec, point.geometry, point.model, thetas).fi_per_photon.tolist()

        with ThreadPoolExecutor(max_workers=self._workers(config)) as pool:
            curves = dict(zip(specs, pool.map(evaluate, specs)))

        rows = [
            ["theta", theta, name, "fi_per_photon", curves[name][i], None, "ok"]
            for i, theta in enumerate(thetas)
            for name in specs
        ]
        return {"columns": COLUMNS, "rows": rows, "params": config.model_dump()}

    @method
    def rgl(self, config: SweepConfig) -> dict:
        """
        Resolution gain limit ζ of each scheme.

        Args:
            config: run parameters; an optional ``range`` sweeps ``axis``
        """
        return self._table(config, optimize=config.optimize_tau)

    @method(command="zeta-max")
    def zeta_max(self, config: SweepConfig) -> dict:
        """
        Full-data RGL ζ_max of two-level blinking and its large-n̄ form.

        Args:
            config: run parameters; schemes are ignored
        """
        config = config.model_copy(update={"schemes": list(PSEUDO_SCHEMES)})
        return self._table(config)

    @method
    def sweep(self, config: SweepConfig) -> dict:
        """
        ζ of each scheme over a grid of one parameter.

        Args:
            config: run parameters; ``axis`` and ``range`` define the grid
        """
        return self._table(config, optimize=config.optimize_tau)

    @method(command="tau-opt")
    def tau_opt(self, config: SweepConfig) -> dict:
        """
        Frame time maximizing ζ for Markov blinking.

        Args:
            config: run parameters; searched between ``tau_min`` and ``tau_max``
        """
        return self._table(config, optimize=True)

    @method
    def validate(self, config: SweepConfig) -> dict:
        """
        Run the self-check suites.

        Args:
            config: ``suites`` (all when empty), ``frames``, ``samples`` and ``seed``
        """
        results = run_suite(config.suites or None, config.frames, config.samples, config.seed)
        rows = [[r.name, r.passed, r.value, r.expected, r.tolerance, r.detail] for r in results]
        return {
            "columns": VALIDATION_COLUMNS,
            "rows": rows,
            "params": config.model_dump(),
            "failed": sum(not r.passed for r in results),
        }

    @method
    def antibunching(self, config: SweepConfig) -> dict:
        """
        ζ of two-photon frames from two single-photon emitters.

        Args:
            config: run parameters; only the output settings are used
        """
        report = antibunching_rgl()
        rows = [[
            None, None, "ANTIBUNCHING", "zeta",
            report.zeta, report.ratio_extrapolation_residual, report.flag,
        ]]
        return {"columns": COLUMNS, "rows": rows, "params": config.model_dump()}
