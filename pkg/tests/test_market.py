import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvo.market import (
    CorrelationMatrix,
    MarketDataError,
    NonPositiveDefiniteError,
    TermStructure,
    build_nu,
    bundled_market,
    covariance,
    discount,
    integrate_curve,
    load_market,
    market_to_dict,
    save_market,
)

from helpers import bs_market, flat_lv_market


class TestTermStructure:
    def test_piecewise_constant_right_open(self):
        c = TermStructure.from_pillars([[0, 0.01], [1, 0.03]])
        assert c(0.0) == 0.01
        assert c(0.999) == 0.01
        assert c(1.0) == 0.03
        assert c(50.0) == 0.03

    def test_rejects_unsorted_pillars(self):
        with pytest.raises(MarketDataError):
            TermStructure.from_pillars([[0, 0.01], [1, 0.02], [0.5, 0.03]])

    def test_rejects_empty(self):
        with pytest.raises(MarketDataError):
            TermStructure.from_pillars([])


class TestIntegrateCurve:
    def test_flat(self):
        assert integrate_curve(TermStructure.flat(0.01), 0, 2) == pytest.approx(0.02, abs=1e-15)

    def test_two_segments(self):
        c = TermStructure.from_pillars([[0, 0.01], [1, 0.03]])
        assert integrate_curve(c, 0, 2) == pytest.approx(0.04, abs=1e-15)

    def test_empty_interval(self):
        c = TermStructure.from_pillars([[0, 0.01], [1, 0.03]])
        assert integrate_curve(c, 0.7, 0.7) == 0.0

    def test_reversed_interval_is_an_error(self):
        with pytest.raises(ValueError):
            integrate_curve(TermStructure.flat(0.01), 2, 1)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 3))
    def test_additive(self, a, b, c):
        a, b, c = sorted((a, b, c))
        curve = TermStructure.from_pillars([[0, 0.01], [0.5, -0.02], [1.3, 0.04], [2.0, 0.0]])
        whole = integrate_curve(curve, a, c)
        assert whole == pytest.approx(integrate_curve(curve, a, b) + integrate_curve(curve, b, c), abs=1e-14)


class TestCorrelation:
    def test_out_of_range_entry(self):
        with pytest.raises(MarketDataError, match="correlation"):
            CorrelationMatrix(np.array([[1.0, 1.2], [1.2, 1.0]]))

    def test_not_positive_definite(self):
        bad = np.array([[1, 0.9, -0.9], [0.9, 1, 0.9], [-0.9, 0.9, 1.0]])
        with pytest.raises(NonPositiveDefiniteError):
            CorrelationMatrix(bad)

    def test_asymmetric(self):
        with pytest.raises(MarketDataError, match="correlation"):
            CorrelationMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]))


class TestBuildNu:
    def test_two_asset_example(self):
        m = bs_market([0.0, 0.0], [0.2, 0.3], corr=0.5)
        nu = build_nu(m, 0.0)
        np.testing.assert_allclose(nu, [[0.2, 0.0], [0.15, 0.3 * math.sqrt(0.75)]], atol=1e-15)
        np.testing.assert_allclose(covariance(m, 0.0), [[0.04, 0.03], [0.03, 0.09]], atol=1e-15)

    def test_identity_correlation_gives_diagonal(self):
        m = bs_market([0.0] * 3, [0.1, 0.2, 0.3])
        np.testing.assert_array_equal(build_nu(m, 1.0), np.diag([0.1, 0.2, 0.3]))

    def test_flat_lv_equals_bs(self):
        bs = bs_market([0.01, 0.02], [0.2, 0.3], corr=0.5)
        lv = flat_lv_market([0.01, 0.02], [0.2, 0.3], corr=[[1, 0.5], [0.5, 1]])
        spots = np.array([[0.7, 1.4], [1.1, 0.9]])
        np.testing.assert_array_equal(build_nu(lv, 0.3, spots), np.broadcast_to(build_nu(bs, 0.3), (2, 2, 2)))

    def test_lv_needs_spots(self):
        with pytest.raises(MarketDataError):
            build_nu(bundled_market("lv_2asset"), 0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 2.5), st.floats(-0.5, 0.5))
    def test_rows_and_covariance(self, t, shift):
        m = bundled_market("lv_2asset")
        spots = m.forward(t) * np.exp([shift, -shift])
        nu = build_nu(m, t, spots)
        sig = m.vols(t, spots)
        np.testing.assert_allclose(np.linalg.norm(nu, axis=1), sig, rtol=1e-12)
        rho = m.correlation.entries
        np.testing.assert_allclose(nu @ nu.T, np.outer(sig, sig) * rho, atol=1e-12)


class TestDiscount:
    @pytest.mark.parametrize("spread, expected", [(0.0, math.exp(-0.02)), (0.005, math.exp(-0.03))])
    def test_flat(self, spread, expected):
        m = bs_market([0.0], [0.2], rate=0.01, spread=spread)
        assert discount(m, 0, 2) == pytest.approx(expected, rel=1e-15)
        assert discount(m, 0, 2) == pytest.approx(0.980199 if spread == 0 else 0.970446, abs=1e-6)

    def test_empty(self):
        assert discount(bundled_market("bs_2asset"), 1.3, 1.3) == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 3))
    def test_multiplicative(self, a, b, c):
        a, b, c = sorted((a, b, c))
        m = bundled_market("bs_3asset")
        assert discount(m, a, c) == pytest.approx(discount(m, a, b) * discount(m, b, c), rel=1e-12)


class TestMarketFile:
    def test_minimal_one_asset(self, tmp_path):
        doc = {"assets": [{"spot": 1.0, "carry_pillars": [[0, 0.01]], "vol": {"type": "bs", "pillars": [[0, 0.2]]}}],
               "rate_pillars": [[0, 0.0]], "correlation": [[1.0]]}
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        assert load_market(p).n == 1

    def test_bad_correlation_names_field(self, tmp_path):
        doc = market_to_dict(bundled_market("bs_2asset"))
        doc["correlation"] = [[1.0, 1.2], [1.2, 1.0]]
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(MarketDataError, match="correlation"):
            load_market(p)

    def test_unsorted_lv_times_names_asset_and_axis(self, tmp_path):
        doc = market_to_dict(bundled_market("lv_2asset"))
        doc["assets"][1]["vol"]["times"] = [0.0, 1.0, 0.5, 1.5, 2.0]
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(MarketDataError, match=r"assets\[1\].*times"):
            load_market(p)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{not json")
        with pytest.raises(MarketDataError):
            load_market(p)

    @pytest.mark.parametrize("name", ["bs_2asset", "bs_3asset", "lv_2asset"])
    def test_round_trip(self, tmp_path, name):
        m = bundled_market(name)
        save_market(m, tmp_path / "m.json")
        back = load_market(tmp_path / "m.json")
        assert market_to_dict(back) == market_to_dict(m)
        assert back.digest() == m.digest()


def test_forward_at_zero_is_spot():
    m = bs_market([0.01, 0.02], [0.2, 0.2], spot=[1.5, 0.5], rate=0.03)
    np.testing.assert_array_equal(m.forward(0.0), m.spot)
