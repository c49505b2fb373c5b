import math
import warnings

import numpy as np
import pytest

from tvo.hjb import HjbModeError, PdeGrid, solve_reduced_hjb
from tvo.market import bundled_market, covariance, discount
from tvo.pricing import TvoSpec, black_formula, bs_closed_price
from tvo.simulator import UnsupportedModeError

from helpers import bs_market


@pytest.fixture(scope="module")
def bs2():
    return bundled_market("bs_2asset")


def solve(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_reduced_hjb(*args, **kw)


class TestAgainstClosedForm:
    def test_zero_carry_call_is_black(self):
        m = bs_market([0.0, 0.0], [0.2, 0.3], corr=0.3, rate=0.01)
        tvo = TvoSpec()
        ref = black_formula(math.exp(0.02), 1.0, 2.0, 0.05, discount(m, 0, 2))
        assert solve(m, tvo).value == pytest.approx(ref, rel=1e-3)

    def test_call_monotone(self, bs2):
        tvo = TvoSpec()
        assert solve(bs2, tvo).value == pytest.approx(bs_closed_price(bs2, tvo), rel=1e-3)

    def test_put_monotone(self, bs2):
        tvo = TvoSpec(payoff="put")
        assert solve(bs2, tvo).value == pytest.approx(bs_closed_price(bs2, tvo), rel=1e-3)

    def test_grid_convergence(self, bs2):
        tvo = TvoSpec()
        ref = bs_closed_price(bs2, tvo)
        coarse = abs(solve(bs2, tvo, PdeGrid(100, 100)).value - ref)
        fine = abs(solve(bs2, tvo, PdeGrid(200, 200)).value - ref)
        assert coarse / fine >= 3


class TestPointwise:
    def test_call_matches_monotone(self, bs2):
        tvo = TvoSpec()
        grid = PdeGrid(200, 200)
        mono = solve(bs2, tvo, grid).value
        assert solve(bs2, tvo, grid, mode="pointwise").value == pytest.approx(mono, rel=1e-10)

    def test_comparison_principle(self, bs2):
        tvo = TvoSpec()
        grid = PdeGrid(150, 150)
        mu, sig = bs2.mu(0.0), covariance(bs2, 0.0)
        bound = math.sqrt(mu @ np.linalg.solve(sig, mu))
        top = solve(bs2, tvo, grid, mode="pointwise").value
        for s in np.linspace(-bound, bound, 5):
            assert top >= solve(bs2, tvo, grid, fixed_objective=float(s)).value - 1e-12

    def test_straddle_needs_pointwise(self, bs2):
        tvo = TvoSpec()

        def straddle(level):
            return np.abs(level - 1.0)

        with pytest.raises(HjbModeError):
            solve(bs2, tvo, payoff_fn=straddle)
        both = solve(bs2, tvo, PdeGrid(150, 150), mode="pointwise", payoff_fn=straddle).value
        call = solve(bs2, tvo, PdeGrid(150, 150)).value
        put = solve(bs2, TvoSpec(payoff="put"), PdeGrid(150, 150)).value
        assert both <= call + put + 1e-9
        assert both >= call


class TestValidation:
    def test_local_vol_rejected(self):
        with pytest.raises(UnsupportedModeError):
            solve(bundled_market("lv_2asset"), TvoSpec())

    @pytest.mark.parametrize("kw", [dict(n_space=40), dict(n_time=10), dict(width_sd=4.0)])
    def test_grid_bounds(self, kw):
        with pytest.raises(ValueError):
            PdeGrid(**kw)

    def test_unknown_mode(self, bs2):
        with pytest.raises(HjbModeError):
            solve(bs2, TvoSpec(), mode="implicit")

    def test_zero_target_vol(self, bs2):
        with pytest.raises(ValueError):
            solve(bs2, TvoSpec(sigma_bar=0.0))

    def test_surface_dump(self, bs2, tmp_path):
        res = solve(bs2, TvoSpec(), PdeGrid(50, 50))
        res.to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "t,I,V"
        assert len(lines) == 1 + 51 * 51
