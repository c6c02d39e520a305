"""
sofi-fisher: Fisher information and resolution gain limits for
fluctuation-based super-resolution of two blinking emitters.

Usage:
    from sofi_fisher import DetectorGeometry, EmitterModel, SchemeSpec, rgl

    model = EmitterModel.from_alpha(1.0, mean_power=1e5, p_off=0.5)
    geometry = DetectorGeometry.covering(pixel_size=0.5)
    report = rgl(SchemeSpec.parse("M+AC2"), geometry, model)
    print(report.zeta, report.flag)

Command line:
    sofi-fisher rgl --scheme AC2 --p 0.5 --alpha 1 --nbar 1e5
    sofi-fisher run figs/fig2a.cfg
"""

from .blinking import ChiSet, EmitterModel, chi_quadrature, chi_set, frame_yield_measure, transition_matrix
from .engine import FisherEngine, SweepConfig, parse_grid
from .errors import (
    CoverageError,
    DegenerateSummaryError,
    IllConditionedWeightsError,
    InvalidParameterError,
    QuadratureError,
    SofiFisherError,
    UnsupportedOrderError,
    UnsupportedSchemeError,
)
from .fisher import (
    FiCurve,
    FrameTimeOptimum,
    RglReport,
    antibunching_rgl,
    fi_per_photon_curve,
    gaussian_fi,
    optimal_frame_time,
    pixelated_si_fisher,
    rgl,
    rgl_pix,
    si_fisher_exact,
    zeta_max,
    zeta_max_asymptotic,
    zeta_max_general,
)
from .mc import empirical_summary, score_fi_oracle, simulate_frames
from .method import method
from .model import DetectorGeometry, PsfGaussian, pixel_overlaps
from .service import Service
from .summary import GaussianSummary, SchemeSpec, build_summary

__version__ = "0.1.0"
__all__ = [
    "PsfGaussian", "DetectorGeometry", "pixel_overlaps",
    "EmitterModel", "ChiSet", "chi_set", "chi_quadrature", "frame_yield_measure", "transition_matrix",
    "SchemeSpec", "GaussianSummary", "build_summary",
    "FiCurve", "RglReport", "FrameTimeOptimum",
    "gaussian_fi", "fi_per_photon_curve", "pixelated_si_fisher", "si_fisher_exact",
    "rgl", "rgl_pix", "zeta_max", "zeta_max_asymptotic", "zeta_max_general",
    "optimal_frame_time", "antibunching_rgl",
    "simulate_frames", "empirical_summary", "score_fi_oracle",
    "Service", "method", "FisherEngine", "SweepConfig", "parse_grid",
    "SofiFisherError", "InvalidParameterError", "CoverageError", "UnsupportedOrderError",
    "UnsupportedSchemeError", "DegenerateSummaryError", "IllConditionedWeightsError", "QuadratureError",
    "__version__",
]
