import numpy as np
import pytest

from emvrs.errors import NumericalDomainError
from emvrs.odes import (TimeGrid, cd_integral_form, emv_closed_form,
                        solve_phcd, solve_phcd_arrays)
from emvrs.policy import MarketParams
from emvrs.regimes import GeneratorMatrix

GRID = TimeGrid(T=1.0, dt=0.1, substeps=10)
Q2 = GeneratorMatrix([[-1.0, 1.0], [1.0, -1.0]])
TOY = MarketParams(sigma=[0.2, 0.2], rho=[1.0, -0.5], r=[0.0, 0.0])


def random_two_regime(rng):
    return MarketParams(sigma=rng.uniform(0.1, 1.0, 2),
                        rho=rng.uniform(-2.0, 2.0, 2),
                        r=rng.uniform(0.0, 0.1, 2))


class TestTimeGrid:
    def test_step_count(self):
        assert GRID.K == 10
        assert len(GRID.times) == 11
        assert len(GRID.fine_times) == 101

    def test_rejects_non_multiple_horizon(self):
        with pytest.raises(ValueError, match="integer multiple"):
            TimeGrid(T=1.0, dt=0.3)

    def test_rejects_bad_substeps(self):
        with pytest.raises(ValueError, match="substeps"):
            TimeGrid(T=1.0, dt=0.1, substeps=0)


class TestSolvePhcd:
    def test_terminal_conditions(self):
        co = solve_phcd(TOY, Q2, GRID, xi=0.5)
        assert np.allclose(co.P[-1], 1.0, atol=1e-10)
        assert np.allclose(co.H[-1], 1.0, atol=1e-10)
        assert np.allclose(co.C[-1], 0.0, atol=1e-10)
        assert np.allclose(co.D[-1], 0.0, atol=1e-10)

    def test_single_regime_matches_closed_form(self):
        theta = MarketParams(sigma=[0.2], rho=[1.0], r=[0.0])
        g1 = GeneratorMatrix([[0.0]])
        co = solve_phcd(theta, g1, GRID, xi=0.5)
        cf = emv_closed_form(0.2, 1.0, 0.0, 0.5, GRID)
        for name in "PHCD":
            assert np.max(np.abs(getattr(co, name) - getattr(cf, name))) < 1e-6

    def test_single_regime_p0_value(self):
        # P(0) = exp(-(rho^2 - 2r) T) = e^{-1} for rho=1, r=0, T=1
        theta = MarketParams(sigma=[0.5], rho=[1.0], r=[0.0])
        co = solve_phcd(theta, GeneratorMatrix([[0.0]]), GRID, xi=0.5)
        assert abs(co.P[0, 0] - np.exp(-1.0)) < 1e-6

    def test_order_four_grid_convergence(self):
        theta = MarketParams(sigma=[0.3], rho=[1.5], r=[0.05])
        g1 = GeneratorMatrix([[0.0]])
        errs = []
        for sub in (2, 4, 8):
            grid = TimeGrid(T=1.0, dt=0.1, substeps=sub)
            co = solve_phcd(theta, g1, grid, xi=0.5)
            cf = emv_closed_form(0.3, 1.5, 0.05, 0.5, grid)
            errs.append(max(np.max(np.abs(co.P - cf.P)),
                            np.max(np.abs(co.D - cf.D))))
        assert errs[0] / errs[1] >= 8.0
        assert errs[1] / errs[2] >= 8.0

    def test_zero_generator_decouples_c(self):
        theta = MarketParams(sigma=[0.2, 0.4], rho=[1.0, -0.5], r=[0.0, 0.02])
        co = solve_phcd(theta, GeneratorMatrix(np.zeros((2, 2))), GRID, xi=0.5)
        assert np.allclose(co.C, 0.0, atol=1e-12)

    def test_equal_rates_make_h_regime_independent(self):
        # with r1 = r2 the H system collapses and C vanishes identically
        co = solve_phcd(TOY, Q2, GRID, xi=0.5)
        assert np.allclose(co.H[:, 0], co.H[:, 1], atol=1e-12)
        assert np.allclose(co.C, 0.0, atol=1e-12)

    def test_p_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            co = solve_phcd(random_two_regime(rng), Q2, GRID, xi=0.5)
            assert np.all(co.P > 0.0)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError, match="> 0"):
            solve_phcd_arrays(np.array([[0.0, 0.2]]), np.array([[1.0, -0.5]]),
                              np.zeros(2), Q2, GRID, xi=0.5)

    def test_unstable_config_raises_domain_error(self):
        # violently stiff regime coupling on a coarse step drives one P
        # component negative; the solver must refuse, naming (t, regime)
        theta = MarketParams(sigma=[0.2, 0.2], rho=[2.0, 0.1], r=[0.0, 0.0])
        stiff = GeneratorMatrix([[-200.0, 200.0], [200.0, -200.0]])
        with pytest.raises(NumericalDomainError, match=r"P\(t=.*regime="):
            solve_phcd(theta, stiff, TimeGrid(T=1.0, dt=0.1, substeps=1), xi=0.5)


class TestEmvClosedForm:
    def test_zero_rate_makes_h_one(self):
        cf = emv_closed_form(0.2, 1.0, 0.0, 0.5, GRID)
        assert np.allclose(cf.H, 1.0, atol=1e-15)

    def test_terminal_row(self):
        cf = emv_closed_form(0.2, 1.0, 0.0, 0.5, GRID)
        assert cf.P[-1, 0] == 1.0 and cf.H[-1, 0] == 1.0
        assert cf.C[-1, 0] == 0.0 and abs(cf.D[-1, 0]) < 1e-15

    def test_d_at_origin_frozen_value(self):
        # direct evaluation of the exploration-cost closed form at t=0:
        # D(0) = xi/4 - (xi/2) (1 - log(sigma^2/(pi xi))) with these inputs
        cf = emv_closed_form(0.2, 1.0, 0.0, 0.5, GRID)
        expected = 0.125 - 0.25 * (1.0 - np.log(0.04 / (np.pi * 0.5)))
        assert abs(expected - (-1.0426146325394139)) < 1e-12
        assert abs(cf.D[0, 0] - expected) < 1e-12

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            emv_closed_form(0.0, 1.0, 0.0, 0.5, GRID)


class TestCdIntegralForm:
    def test_terminal_values_zero(self):
        grid = TimeGrid(T=1.0, dt=0.1, substeps=20)
        theta = MarketParams(sigma=[0.2, 0.3], rho=[0.95, -0.8], r=[0.01, 0.05])
        co = solve_phcd(theta, Q2, grid, xi=0.5)
        c_int, d_int = cd_integral_form(theta, Q2, grid, co, xi=0.5)
        assert np.allclose(c_int[-1], 0.0) and np.allclose(d_int[-1], 0.0)

    def test_equal_h_crushes_c(self):
        # duplicated single-regime parameters keep H equal across regimes
        theta = MarketParams(sigma=[0.2, 0.2], rho=[1.0, 1.0], r=[0.0, 0.0])
        co = solve_phcd(theta, Q2, GRID, xi=0.5)
        c_int, _ = cd_integral_form(theta, Q2, GRID, co, xi=0.5)
        assert np.max(np.abs(c_int)) < 1e-12

    def test_matches_ode_route_on_random_configs(self):
        rng = np.random.default_rng(123)
        grid = TimeGrid(T=1.0, dt=0.1, substeps=40)
        for _ in range(5):
            theta = random_two_regime(rng)
            co = solve_phcd(theta, Q2, grid, xi=0.5)
            c_int, d_int = cd_integral_form(theta, Q2, grid, co, xi=0.5)
            scale_c = max(np.max(np.abs(co.C)), 1e-9)
            scale_d = max(np.max(np.abs(co.D)), 1e-9)
            assert np.max(np.abs(c_int - co.C)) / scale_c < 1e-4
            assert np.max(np.abs(d_int - co.D)) / scale_d < 1e-4


class TestCsvExport:
    def test_round_trip_columns(self, tmp_path):
        co = solve_phcd(TOY, Q2, GRID, xi=0.5)
        path = tmp_path / "coeffs.csv"
        co.to_csv(path)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "t,regime,P,H,C,D"
        assert len(rows) == 1 + 11 * 2
        first = rows[1].split(",")
        assert float(first[0]) == 0.0 and int(first[1]) == 1
        assert abs(float(first[2]) - co.P[0, 0]) < 1e-15
