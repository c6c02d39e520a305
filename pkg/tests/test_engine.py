"""
Tests for run configuration and the engine endpoints.
"""
import pytest
from pydantic import ValidationError

from sofi_fisher.engine import COLUMNS, MAX_GRID_POINTS, FisherEngine, SweepConfig, parse_grid
from sofi_fisher.errors import InvalidParameterError
from sofi_fisher import engine
from sofi_fisher.fisher import RglReport, zeta_max
from sofi_fisher.protocol import EXIT_USAGE, Protocol


def call(command: str, **params) -> dict:
    return Protocol(FisherEngine()).handle_call(command, {"config": {"command": command, **params}})


class TestParseGrid:
    def test_log_grid(self):
        """a:b:logN is geometric with exact ends."""
        assert parse_grid("0.01:100:log5") == pytest.approx([0.01, 0.1, 1.0, 10.0, 100.0])

    def test_lin_grid(self):
        """a:b:linN is evenly spaced and may start at zero."""
        assert parse_grid("0:1:lin5") == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])

    def test_lists(self):
        """Comma lists and single numbers are taken as given."""
        assert parse_grid("0, 1, 5,20") == [0.0, 1.0, 5.0, 20.0]
        assert parse_grid("1e5") == [1e5]

    def test_limits(self):
        """Too many points, non-positive log ends and negative values are refused."""
        with pytest.raises(InvalidParameterError):
            parse_grid(f"1:2:lin{MAX_GRID_POINTS + 1}")
        with pytest.raises(InvalidParameterError):
            parse_grid("0:10:log5")
        with pytest.raises(InvalidParameterError):
            parse_grid("-1,2")
        with pytest.raises(InvalidParameterError):
            parse_grid("one:two:log3")


class TestSweepConfig:
    def test_defaults(self):
        """Defaults follow the usual parameter choices."""
        config = SweepConfig(command="rgl")
        assert (config.dx, config.p, config.mu_b, config.tau_on, config.tau_off) == (0.5, 0.5, 0.0, 1.0, 1.0)
        assert config.schemes == ["M+AC2"]

    def test_scheme_lists(self):
        """Comma-separated schemes are parsed and normalized."""
        config = SweepConfig(command="rgl", schemes="m+ac2, M_XC2S,zeta_max")
        assert config.schemes == ["M+AC2", "M+XC2S", "ZETA_MAX"]

    def test_unknown_scheme(self):
        """Unknown schemes fail validation."""
        with pytest.raises(ValidationError):
            SweepConfig(command="rgl", schemes="XC9")

    def test_yaml_numbers(self):
        """Ranges given as numbers or lists become grid specs."""
        assert SweepConfig(command="rgl", axis="mu_b", range=5).range == "5"
        assert SweepConfig(command="rgl", axis="mu_b", range=[0, 1, 5]).range == "0,1,5"

    def test_inconsistent(self):
        """Contradictory settings are rejected up front."""
        with pytest.raises(ValidationError):
            SweepConfig(command="sweep")
        with pytest.raises(ValidationError):
            SweepConfig(command="tau-opt", model="simplified")
        with pytest.raises(ValidationError):
            SweepConfig(command="sweep", axis="pbar", range="1,2", nbar=10)
        with pytest.raises(ValidationError):
            SweepConfig(command="rgl", schemes="SI")
        with pytest.raises(ValidationError):
            SweepConfig(command="rgl", unknown_key=1)

    def test_nbar_sets_power(self):
        """With n̄ fixed, P̄ = n̄/τ."""
        config = SweepConfig(command="rgl", nbar=100.0, tau=4.0)
        assert config.mean_power(config.tau, config.pbar, config.nbar) == 25.0


class TestEndpoints:
    def test_zeta_max_without_fluctuations(self):
        """ζ_max is exactly 1 at α = 0."""
        response = call("zeta-max", p=0.5, alpha=0.0, nbar=1000.0)
        assert response["ok"]
        result = response["result"]
        assert result["columns"] == COLUMNS
        row = dict(zip(COLUMNS, result["rows"][0]))
        assert (row["scheme"], row["quantity"], row["result"]) == ("ZETA_MAX", "zeta_max", 1.0)

    def test_pseudo_scheme_sweep(self):
        """ZETA_MAX rows follow n̄ along the grid."""
        response = call("sweep", axis="nbar", range="10,100", schemes="ZETA_MAX", alpha=1.0)
        rows = response["result"]["rows"]
        assert [r[1] for r in rows] == [10.0, 100.0]
        assert rows[1][4] == pytest.approx(zeta_max(0.5, 1.0, 100.0))

    def test_markov_zeta_max_is_approximate(self):
        """The two-level law is exact for independent frames only."""
        simplified = call("zeta-max", alpha=1.0, nbar=100.0)["result"]["rows"]
        markov = call("zeta-max", model="markov", alpha=1.0, nbar=100.0)["result"]["rows"]
        assert {r[6] for r in simplified} == {"exact"}
        assert {r[6] for r in markov} == {"approx"}

    def test_antibunching_reports_fit(self, monkeypatch):
        """The antibunching row carries the extrapolation residual and flag."""
        report = RglReport(zeta=1.19, kind="zeta", theta_grid_used=(0.08,), ratio_extrapolation_residual=0.5)
        monkeypatch.setattr(engine, "antibunching_rgl", lambda: report)
        (row,) = call("antibunching")["result"]["rows"]
        assert row[4:] == [1.19, 0.5, "unconverged"]

    def test_rescale(self):
        """--rescale divides ζ by n̄^(1/4)."""
        plain = call("zeta-max", alpha=1.0, nbar=256.0)["result"]["rows"][0]
        scaled = call("zeta-max", alpha=1.0, nbar=256.0, rescale=True)["result"]["rows"][0]
        assert scaled[3] == "zeta_max_rescaled"
        assert scaled[4] == pytest.approx(plain[4] / 4.0)

    def test_rgl_rows(self):
        """One row per scheme with residual and flag."""
        response = call("rgl", schemes="M,M+AC2", alpha=1.0, nbar=1000.0)
        rows = response["result"]["rows"]
        assert [r[2] for r in rows] == ["M", "M+AC2"]
        assert all(r[3] == "zeta" and r[6] in ("converged", "unconverged") for r in rows)
        assert rows[0][4] <= rows[1][4] + 1e-4

    def test_alpha_sweep_order_and_threads(self):
        """Rows come out in grid order whatever the thread count."""
        params = dict(axis="alpha", range="0,1", schemes="M+AC2", nbar=1000.0)
        one = call("sweep", threads=1, **params)["result"]["rows"]
        many = call("sweep", threads=4, **params)["result"]["rows"]
        assert one == many
        assert one[0][4] == pytest.approx(1.0, abs=2e-3)
        assert one[1][4] > 1.0

    def test_fi_curve_with_si(self):
        """fi-curve interleaves schemes per θ, SI included."""
        response = call("fi-curve", schemes="M,SI", thetas="0.5,1", alpha=0.0)
        rows = response["result"]["rows"]
        assert [(r[1], r[2]) for r in rows] == [(0.5, "M"), (0.5, "SI"), (1.0, "M"), (1.0, "SI")]
        # Constant emitters: the mean image is standard imaging.
        assert rows[0][4] == pytest.approx(rows[1][4], rel=1e-6)

    def test_invalid_point_fails_before_compute(self):
        """A bad grid value is a usage error naming the axis."""
        response = call("sweep", axis="p", range="0.5,1.5", schemes="M")
        assert not response["ok"]
        assert response["error"]["exit_code"] == EXIT_USAGE
        assert "p=1.5" in response["error"]["message"]

    def test_invalid_field(self):
        """Pydantic errors name the offending field."""
        response = call("rgl", alpha=2.0)
        assert response["error"]["exit_code"] == EXIT_USAGE
        assert "alpha" in response["error"]["message"]

    def test_markov_degree_limit(self):
        """Third-order statistics are refused for Markov blinking."""
        response = call("rgl", model="markov", schemes="M+ACK3")
        assert response["error"]["type"] == "UnsupportedSchemeError"
        assert response["error"]["exit_code"] == EXIT_USAGE

    def test_validate(self):
        """validate reports each suite and the number failed."""
        result = call("validate", suites="si-series,zeta-max-asymptote")["result"]
        assert [r[0] for r in result["rows"]] == ["si-series", "zeta-max-asymptote"]
        assert result["failed"] == 0

    @pytest.mark.slow
    def test_tau_sweep_returns_to_one(self):
        """ζ tends to 1 at very short and very long frame times."""
        result = call(
            "sweep", model="markov", axis="tau", range="0.01:100:log25",
            schemes="M+AC2,M+XC2", pbar=300.0,
        )["result"]
        rows = result["rows"]
        assert len(rows) == 50
        for row in rows[:2] + rows[-2:]:
            assert row[4] == pytest.approx(1.0, abs=0.05)
