import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varsmc.data import (
    CsvSchema,
    DgpConfig,
    MarketSeries,
    SampleSplit,
    build_har_inputs,
    filter_true_variance,
    generate_synthetic_market,
    load_market_csv,
    split,
    trailing_mean,
    write_market_csv,
)
from varsmc.errors import ConfigError, DataError


def _write(tmp_path, text, name="m.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_constant_prices_give_zero_returns(self, tmp_path):
        path = _write(
            tmp_path,
            "date,price,rv\n2020-01-01,100,1.0\n2020-01-02,100,1.0\n2020-01-03,100,1.0\n",
        )
        s = load_market_csv(path, CsvSchema(price="price"))
        assert np.array_equal(s.returns, [0.0, 0.0])
        assert len(s.dates) == 2

    def test_log_return_scaling(self, tmp_path):
        p1 = 100.0 * math.exp(0.01)
        path = _write(tmp_path, f"date,price,rv\n2020-01-01,100,1.0\n2020-01-02,{p1!r},1.0\n")
        s = load_market_csv(path, CsvSchema(price="price"))
        assert s.returns.shape == (1,)
        assert abs(s.returns[0] - 1.0) < 1e-12

    def test_malformed_date_names_row(self, tmp_path):
        path = _write(
            tmp_path,
            "date,return,rv\n2020-01-01,0.5,1.0\nnot-a-date,0.2,1.0\n2020-01-03,0.1,1.0\n",
        )
        with pytest.raises(DataError, match="row 2"):
            load_market_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_market_csv(tmp_path / "nope.csv")

    def test_non_monotone_dates_rejected(self, tmp_path):
        path = _write(
            tmp_path, "date,return,rv\n2020-01-02,0.5,1.0\n2020-01-01,0.2,1.0\n"
        )
        with pytest.raises(DataError, match="increasing"):
            load_market_csv(path)

    def test_negative_rv_rejected(self, tmp_path):
        path = _write(tmp_path, "date,return,rv\n2020-01-01,0.5,-1.0\n")
        with pytest.raises(DataError, match="negative"):
            load_market_csv(path)

    def test_missing_values_dropped_with_count(self, tmp_path, caplog):
        path = _write(
            tmp_path,
            "date,return,rv\n2020-01-01,0.5,1.0\n2020-01-02,,1.0\n2020-01-03,0.1,1.0\n",
        )
        with caplog.at_level("WARNING"):
            s = load_market_csv(path)
        assert len(s) == 2
        assert "dropped 1" in caplog.text

    def test_round_trip_exact(self, tmp_path, small_series):
        path = tmp_path / "rt.csv"
        write_market_csv(small_series, path)
        back = load_market_csv(path, name=small_series.name)
        assert np.array_equal(back.returns, small_series.returns)
        assert np.array_equal(back.rv, small_series.rv)
        assert back.dates == small_series.dates


class TestHarInputs:
    def test_weekly_mean_example(self):
        rv = np.arange(1.0, 41.0)
        s = MarketSeries(
            "t", [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(40)],
            np.zeros(40), rv,
        )
        inputs = build_har_inputs(s)
        assert inputs.rv_w[4] == pytest.approx(3.0, abs=1e-14)
        assert inputs.valid_from == 22

    def test_positive_returns_no_leverage_terms(self):
        n = 60
        rng = np.random.default_rng(1)
        s = MarketSeries(
            "t", [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(n)],
            rng.uniform(0.1, 1.0, n), rng.uniform(0.5, 2.0, n),
        )
        inputs = build_har_inputs(s)
        assert np.all(inputs.neg_ret_d == 0.0)
        assert np.all(inputs.neg_ret_w[inputs.valid_from:] == 0.0)
        assert np.all(inputs.neg_ret_m[inputs.valid_from:] == 0.0)

    def test_constant_rv_constant_aggregates(self):
        n = 50
        s = MarketSeries(
            "t", [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(n)],
            np.zeros(n), np.full(n, 2.5),
        )
        inputs = build_har_inputs(s)
        v = inputs.valid_from
        assert np.allclose(inputs.rv_w[v:], 2.5, rtol=0, atol=1e-14)
        assert np.allclose(inputs.rv_m[v:], 2.5, rtol=0, atol=1e-14)

    def test_too_short_rejected(self):
        n = 22
        s = MarketSeries(
            "t", [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(n)],
            np.zeros(n), np.ones(n),
        )
        with pytest.raises(DataError, match="short"):
            build_har_inputs(s)

    def test_negative_return_aggregates_nonpositive(self, small_inputs):
        v = small_inputs.valid_from
        for arr in (small_inputs.neg_ret_d, small_inputs.neg_ret_w, small_inputs.neg_ret_m):
            assert np.all(arr[v:] <= 0.0)

    @given(c=st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=100, deadline=None)
    def test_aggregation_linearity(self, c):
        rng = np.random.default_rng(11)
        rv = rng.uniform(0.2, 3.0, 60)
        base = trailing_mean(rv, 5)
        scaled = trailing_mean(c * rv, 5)
        assert np.allclose(scaled[4:], c * base[4:], rtol=1e-12)

    @given(k=st.integers(min_value=1, max_value=30))
    @settings(max_examples=100, deadline=None)
    def test_shift_consistency_exact(self, k, small_series):
        full = build_har_inputs(small_series)
        shifted = build_har_inputs(small_series.slice(k, len(small_series)))
        v = shifted.valid_from
        for name in ("rv_w", "rv_m", "neg_ret_w", "neg_ret_m"):
            a = getattr(full, name)[k + v :]
            b = getattr(shifted, name)[v:]
            assert np.array_equal(a, b), name


class TestSplit:
    def _series(self, n):
        return MarketSeries(
            "t", [dt.date(2010, 1, 1) + dt.timedelta(days=i) for i in range(n)],
            np.zeros(n), np.ones(n),
        )

    def test_standard_split(self):
        ins, outs = split(self._series(3000), SampleSplit(2000, 1000))
        assert len(ins) == 2000 and len(outs) == 1000
        assert outs.dates[0] > ins.dates[-1]

    def test_short_market_split(self):
        ins, outs = split(self._series(2398), SampleSplit(1398, 1000))
        assert len(ins) == 1398 and len(outs) == 1000

    def test_overflow_rejected(self):
        with pytest.raises(DataError):
            split(self._series(3000), SampleSplit(3000, 1000))

    def test_long_series_trims_from_the_front(self):
        s = self._series(3500)
        ins, outs = split(s, SampleSplit(2000, 1000))
        assert ins.dates[0] == s.dates[500]
        assert outs.dates[-1] == s.dates[-1]

    def test_views_are_contiguous(self, small_series):
        ins, outs = split(small_series, SampleSplit(300, 100))
        joined = np.concatenate([ins.returns, outs.returns])
        assert np.array_equal(joined, small_series.returns)


class TestSyntheticDgp:
    def test_same_seed_identical(self):
        a = generate_synthetic_market(5, 150)
        b = generate_synthetic_market(5, 150)
        assert np.array_equal(a.returns, b.returns)
        assert np.array_equal(a.rv, b.rv)

    def test_different_seed_differs(self):
        a = generate_synthetic_market(5, 150)
        b = generate_synthetic_market(6, 150)
        assert not np.array_equal(a.returns, b.returns)

    def test_zero_noise_rv_equals_conditional_variance(self):
        dgp = DgpConfig(rv_noise=0.0)
        s = generate_synthetic_market(3, 200, dgp)
        assert np.array_equal(s.rv, filter_true_variance(dgp, s.returns))

    def test_nonstationary_rejected(self):
        with pytest.raises(ConfigError, match="non-stationary"):
            DgpConfig(a1=0.3, b1=0.7)

    def test_short_length_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic_market(1, 50)

    def test_filter_recovers_simulated_variance(self):
        dgp = DgpConfig()
        s = generate_synthetic_market(9, 300, dgp)
        sigma2 = filter_true_variance(dgp, s.returns)
        noiseless = generate_synthetic_market(9, 300, DgpConfig(rv_noise=0.0))
        assert np.allclose(sigma2, noiseless.rv, rtol=1e-12)
