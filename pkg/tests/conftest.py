"""
Shared fixtures.
"""
import pytest

from sofi_fisher import DetectorGeometry, EmitterModel
from sofi_fisher import log as sofi_log


@pytest.fixture
def geometry():
    """Default grid: Δx = 0.5σ over ±8σ."""
    return DetectorGeometry.covering(pixel_size=0.5)


@pytest.fixture
def simplified():
    """Fully blinking two-level emitters, P(off) = 0.5, n̄ = 1000."""
    return EmitterModel.from_alpha(1.0, mean_power=1000.0, p_off=0.5)


@pytest.fixture
def markov():
    """Markov blinking with unequal lifetimes."""
    return EmitterModel.from_alpha(0.8, kind="markov", mean_power=100.0, tau_on=1.0, tau_off=2.0)


@pytest.fixture(autouse=True)
def quiet_logs():
    """Keep the global log threshold from leaking between tests."""
    threshold = sofi_log._threshold
    yield
    sofi_log._threshold = threshold
