"""
Exception hierarchy for sofi-fisher.

The CLI maps these onto exit codes (see ``protocol.exit_code_for``).
"""


class SofiFisherError(Exception):
    """Base class for all sofi-fisher errors."""


class InvalidParameterError(SofiFisherError, ValueError):
    """A physical or numerical parameter is outside its allowed range."""


class CoverageError(SofiFisherError):
    """The pixel grid does not cover the scene."""

    def __init__(self, message: str, achieved_mass: float):
        super().__init__(f"{message} (achieved mass {achieved_mass:.12g})")
        self.achieved_mass = achieved_mass


class UnsupportedOrderError(SofiFisherError):
    """Requested moment order is not tabulated."""


class UnsupportedSchemeError(SofiFisherError):
    """Scheme is unknown or not available for the emitter model."""


class DegenerateSummaryError(SofiFisherError):
    """Covariance has no direction above the pseudo-inverse threshold."""


class IllConditionedWeightsError(SofiFisherError):
    """The centroid weight system is singular."""


class QuadratureError(SofiFisherError):
    """Adaptive quadrature did not reach the requested tolerance."""
