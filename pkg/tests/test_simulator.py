import math

import numpy as np
import pytest

from tvo.market import bundled_market
from tvo.pricing import TvoSpec
from tvo.simulator import (
    SimConfig,
    UnsupportedModeError,
    fixing_grid,
    omega,
    realized_vol,
    simulate_projection,
    simulate_tvs,
)
from tvo.strategy import ConstantStrategy, DegenerateAllocationError, OptimalFreeStrategy

from helpers import bs_market, flat_lv_market


class TestOmega:
    def test_single_asset(self):
        assert omega([1.0], [[0.2]], 0.05) == pytest.approx(0.25)

    def test_norm_equal_to_target(self):
        assert omega([1.0], [[0.05]], 0.05) == 1.0

    @pytest.mark.parametrize("cap, expected", [(True, 1.0), (False, 1.25)])
    def test_cap(self, cap, expected):
        assert omega([1.0], [[0.04]], 0.05, cap=cap) == pytest.approx(expected)

    def test_degenerate(self):
        with pytest.raises(DegenerateAllocationError):
            omega([0.0, 0.0], np.eye(2), 0.05)


class TestConfig:
    def test_grid_must_start_at_zero(self):
        with pytest.raises(ValueError):
            SimConfig(10, (0.5, 1.0))

    def test_grid_must_match_maturity(self):
        m = bs_market([0.0], [0.2])
        with pytest.raises(ValueError):
            simulate_tvs(m, ConstantStrategy([1.0]), TvoSpec(T=2.0), SimConfig(10, (0.0, 1.0)))

    def test_fixing_grid_merges_pillars(self):
        m = bs_market([[(0, 0.01), (0.3, 0.02)]], [0.2])
        assert 0.3 in fixing_grid(1.0, 4, m)
        assert fixing_grid(1.0, 4) == (0.0, 0.25, 0.5, 0.75, 1.0)


class TestSimulateTvs:
    def test_single_euler_step(self):
        m = bs_market([0.0], [0.2])
        tvo = TvoSpec(T=1.0)
        cfg = SimConfig(1, (0.0, 1.0))
        ps = simulate_tvs(m, ConstantStrategy([1.0]), tvo, cfg, normals=np.ones((1, 1, 1)))
        assert math.log(ps.terminal[0]) == pytest.approx(0.04875, abs=1e-15)
        assert ps.terminal[0] == pytest.approx(1.049958, abs=1e-6)

    def test_zero_target_vol_is_deterministic(self):
        m = bundled_market("bs_2asset")
        tvo = TvoSpec(sigma_bar=0.0)
        ps = simulate_tvs(m, ConstantStrategy([1.0, 0.5]), tvo, SimConfig(50, fixing_grid(2.0), 3, seed=4))
        growth = math.exp(m.rate.integral(0, 2) - m.fee.integral(0, 2))
        np.testing.assert_allclose(ps.terminal, growth, rtol=1e-14)
        assert np.std(ps.terminal) < 1e-15

    def test_flat_lv_reproduces_bs_bitwise(self):
        bs = bs_market([0.01, 0.02], [0.2, 0.3], corr=0.5, rate=0.01)
        lv = flat_lv_market([0.01, 0.02], [0.2, 0.3], corr=[[1, 0.5], [0.5, 1]], rate=0.01)
        tvo = TvoSpec()
        cfg = SimConfig(300, fixing_grid(2.0), 4, seed=11)
        a = simulate_tvs(bs, ConstantStrategy([1.0, -0.4]), tvo, cfg)
        b = simulate_tvs(lv, ConstantStrategy([1.0, -0.4]), tvo, cfg)
        np.testing.assert_array_equal(a.index, b.index)
        np.testing.assert_array_equal(a.spots, b.spots)

    def test_martingale_without_carry(self):
        m = bs_market([0.0, 0.0], [0.2, 0.3], corr=0.3)
        ps = simulate_tvs(m, ConstantStrategy([1.0, 1.0]), TvoSpec(), SimConfig(20_000, fixing_grid(2.0), 5, seed=2))
        se = ps.terminal.std(ddof=1) / math.sqrt(ps.paths)
        assert abs(ps.terminal.mean() - 1.0) < 3 * se

    def test_reproducible_and_thread_invariant(self):
        m = bundled_market("lv_2asset")
        strat = OptimalFreeStrategy(m)
        base = dict(paths=2500, grid=fixing_grid(2.0), substeps=2, seed=9, block_size=700)
        a = simulate_tvs(m, strat, TvoSpec(), SimConfig(**base, threads=1))
        b = simulate_tvs(m, strat, TvoSpec(), SimConfig(**base, threads=3))
        np.testing.assert_array_equal(a.index, b.index)
        np.testing.assert_array_equal(a.spots, b.spots)

    def test_path_zero_reproducible_with_same_seed(self):
        m = bundled_market("bs_2asset")
        cfg = SimConfig(10, fixing_grid(2.0), 1, seed=5)
        a = simulate_tvs(m, ConstantStrategy([1.0, 1.0]), TvoSpec(), cfg)
        b = simulate_tvs(m, ConstantStrategy([1.0, 1.0]), TvoSpec(), cfg)
        np.testing.assert_array_equal(a.index[0], b.index[0])

    def test_degenerate_allocation_reports_location(self):
        m = bundled_market("bs_2asset")
        with pytest.raises(DegenerateAllocationError, match="fixing 0"):
            simulate_tvs(m, ConstantStrategy([0.0, 0.0]), TvoSpec(), SimConfig(5, fixing_grid(2.0)))

    def test_capped_omega_never_exceeds_one(self):
        m = bs_market([0.0], [0.02])
        ps = simulate_tvs(m, ConstantStrategy([1.0]), TvoSpec(), SimConfig(20, fixing_grid(2.0), cap_omega=True))
        assert np.all(ps.omega <= 1.0)

    def test_csv_dump(self, tmp_path):
        m = bundled_market("bs_2asset")
        ps = simulate_tvs(m, ConstantStrategy([1.0, 1.0]), TvoSpec(), SimConfig(3, fixing_grid(2.0)))
        ps.to_csv(tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "path,fixing,t,S_1,S_2,I,omega"
        assert len(lines) == 1 + 3 * 9


class TestProjection:
    def test_lv_unsupported(self):
        m = bundled_market("lv_2asset")
        with pytest.raises(UnsupportedModeError):
            simulate_projection(m, ConstantStrategy([1.0, 1.0]), TvoSpec(), SimConfig(5, fixing_grid(2.0)))

    def test_zero_drift_is_gbm(self):
        m = bs_market([0.0, 0.0], [0.2, 0.3])
        ps = simulate_projection(m, ConstantStrategy([1.0, 2.0]), TvoSpec(), SimConfig(20_000, fixing_grid(2.0), 2, seed=3))
        logs = np.log(ps.terminal)
        assert logs.std(ddof=1) == pytest.approx(0.05 * math.sqrt(2.0), rel=0.02)
        assert abs(logs.mean() + 0.5 * 0.05 ** 2 * 2) < 3 * logs.std() / math.sqrt(ps.paths)

    def test_zero_target_vol(self):
        m = bundled_market("bs_2asset")
        ps = simulate_projection(m, ConstantStrategy([1.0, 1.0]), TvoSpec(sigma_bar=0.0), SimConfig(10, fixing_grid(2.0)))
        assert np.ptp(ps.terminal) == 0.0


class TestRealizedVol:
    def test_zero_target_vol(self):
        m = bs_market([0.0], [0.2])
        ps = simulate_tvs(m, ConstantStrategy([1.0]), TvoSpec(sigma_bar=0.0), SimConfig(5, fixing_grid(2.0), 3))
        np.testing.assert_array_equal(realized_vol(ps), 0.0)

    def test_projection_paths(self):
        m = bundled_market("bs_2asset")
        ps = simulate_projection(m, OptimalFreeStrategy(m), TvoSpec(), SimConfig(2000, fixing_grid(2.0), 125, seed=1))
        assert realized_vol(ps).mean() == pytest.approx(0.05, rel=0.01)
