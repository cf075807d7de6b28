import math
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanf.data import (Normalization, OhlcvSeries, load_ohlcv_csv, load_series_csv, log_returns,
                       make_windows, realized_volatility, split_index, synth_generate,
                       train_test_windows, write_ohlcv_csv, write_series_csv)
from kanf.errors import EmptyDataError, FormatError, InvalidDataError, InvalidInputError


def test_log_returns_examples():
    assert np.all(log_returns(np.full(5, 3.2)) == 0.0)
    np.testing.assert_allclose(log_returns([1.0, math.e, math.e]), [1.0, 0.0], atol=1e-15)
    assert log_returns([1.0, 0.5])[0] == pytest.approx(-0.6931, abs=1e-4)


def test_log_returns_rejects_non_positive_close():
    with pytest.raises(InvalidDataError) as err:
        log_returns([1.0, 2.0, 0.0, 3.0])
    assert err.value.row == 2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=2, max_size=60))
def test_log_returns_reconstruct_prices(close):
    c = np.array(close)
    rebuilt = np.concatenate([[1.0], np.exp(np.cumsum(log_returns(c)))])
    np.testing.assert_allclose(rebuilt, c / c[0], rtol=1e-12)


def test_realized_volatility_examples():
    assert np.all(realized_volatility(np.zeros(30), 21) == 0.0)
    assert realized_volatility([3.0, 4.0], 2).tolist() == [5.0]
    assert realized_volatility([1.0, 0.0, 0.0], 2).tolist() == [1.0, 0.0]
    with pytest.raises(InvalidInputError):
        realized_volatility([1.0], 2)
    with pytest.raises(InvalidInputError):
        realized_volatility([1.0], 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=50), st.integers(1, 3))
def test_realized_volatility_non_negative_with_length(r, n):
    v = realized_volatility(r, n)
    assert v.shape == (len(r) - n + 1,)
    assert np.all(v >= 0)


def test_window_counts():
    s = np.arange(105.0)
    assert len(make_windows(s, 84, 21)) == 1
    assert len(make_windows(np.arange(106.0), 84, 21)) == 2
    assert len(make_windows(np.arange(120.0), 84, 21, stride=5)) == 4
    with pytest.raises(InvalidInputError, match="h\\+T = 105"):
        make_windows(np.arange(104.0), 84, 21)


def test_windows_standardized_over_series():
    s = np.random.default_rng(0).normal(3.0, 2.0, 400)
    ds = make_windows(s, 10, 5)
    z = (s - ds.mean[0]) / ds.std[0]
    assert abs(z.mean()) < 1e-10 and abs(z.std() - 1.0) < 1e-10
    assert ds.normalization.input_scale == pytest.approx(1 / 3)
    np.testing.assert_allclose(ds.net_inputs, ds.inputs / 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 12), st.integers(1, 6), st.integers(1, 4))
def test_window_pairs_overlap_correctly(seed, h, T, stride):
    s = np.random.default_rng(seed).normal(size=60)
    ds = make_windows(s, h, T, stride)
    n = (60 - h - T) // stride + 1
    assert len(ds) == n
    for i in range(n):
        np.testing.assert_allclose(ds.inputs[i] * ds.std[0] + ds.mean[0], s[i * stride:i * stride + h])
        np.testing.assert_allclose(ds.targets[i] * ds.std[0] + ds.mean[0],
                                   s[i * stride + h:i * stride + h + T])


def test_multivariate_windows_are_variable_major():
    a = np.arange(10.0)
    b = 100 + np.arange(10.0)
    norm = Normalization([0.0, 0.0], [1.0, 1.0])
    ds = make_windows(np.column_stack([a, b]), 3, 2, normalization=norm)
    assert ds.inputs[0].tolist() == [0, 1, 2, 100, 101, 102]
    assert ds.targets[0].tolist() == [3, 4, 103, 104]


def test_constant_series_keeps_level():
    ds = make_windows(np.full(50, 7.5), 5, 2)
    assert ds.std[0] == 1.0 and ds.mean[0] == 7.5
    assert np.all(ds.inputs == 0.0)


def test_normalization_validation_and_round_trip():
    with pytest.raises(InvalidInputError):
        Normalization([0.0], [0.0])
    n = Normalization.fit(np.random.default_rng(0).normal(size=(30, 2)))
    back = Normalization.from_dict(n.to_dict())
    np.testing.assert_array_equal(back.mean, n.mean)
    x = np.random.default_rng(1).normal(size=(4, 2))
    np.testing.assert_allclose(n.destandardize(n.standardize(x)), x)


def test_chronological_split():
    s = np.arange(500.0)
    assert split_index(500) == 400
    train, test = train_test_windows(s, 20, 5)
    assert train.targets.max() * train.std[0] + train.mean[0] < 400
    first_target = test.targets[0, 0] * test.std[0] + test.mean[0]
    assert first_target == pytest.approx(400.0)
    np.testing.assert_array_equal(test.mean, train.mean)
    assert len(test) == 100 - 5 + 1


def _ohlcv(n=5):
    d0 = date(2024, 1, 1)
    close = np.linspace(10, 14, n)
    return OhlcvSeries("T", [d0 + timedelta(days=i) for i in range(n)], close, close + 1, close - 1,
                       close, np.full(n, 1000.0))


def test_ohlcv_invariants():
    s = _ohlcv()
    with pytest.raises(InvalidDataError):
        OhlcvSeries("T", list(reversed(s.dates)), s.open, s.high, s.low, s.close, s.volume)
    bad = s.close.copy()
    bad[2] = -1
    with pytest.raises(InvalidDataError):
        OhlcvSeries("T", s.dates, s.open, s.high, s.low, bad, s.volume)


def test_ohlcv_csv_round_trip(tmp_path):
    s = _ohlcv(8)
    path = write_ohlcv_csv(tmp_path / "t.csv", s)
    back = load_ohlcv_csv(path, ticker="T")
    assert back.dates == s.dates
    for col in ("open", "high", "low", "close", "volume"):
        np.testing.assert_array_equal(getattr(back, col), getattr(s, col))


def test_ohlcv_loader_rules(tmp_path):
    p = tmp_path / "AAA.csv"
    p.write_text("date,OPEN,High,low,Close,Volume\n"
                 "2024-01-03,1,2,0.5,1.5,10\n"
                 "2024-01-01,1,2,0.5,1.2,10\n"
                 "2024-01-02,1,2,0.5,,10\n"
                 "2024-01-04,1,2,0.5,1.7,10\n")
    s = load_ohlcv_csv(p)
    assert s.ticker == "AAA"
    assert len(s) == 3 and s.dropped_rows == 1
    assert s.dates == sorted(s.dates)
    assert s.close.tolist() == [1.2, 1.5, 1.7]


def test_ohlcv_loader_errors(tmp_path):
    (tmp_path / "a.csv").write_text("Date,Open,Close\n2024-01-01,1,1\n")
    with pytest.raises(FormatError):
        load_ohlcv_csv(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("Date,Open,High,Low,Close,Volume\n2024-01-01,1,1,1,,1\n")
    with pytest.raises(EmptyDataError):
        load_ohlcv_csv(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("")
    with pytest.raises(FormatError):
        load_ohlcv_csv(tmp_path / "c.csv")


def test_series_csv_round_trip(tmp_path):
    cols = {"A": np.random.default_rng(0).normal(size=20), "B": np.arange(20.0)}
    back = load_series_csv(write_series_csv(tmp_path / "s.csv", cols))
    assert list(back) == ["A", "B"]
    for k in cols:
        np.testing.assert_array_equal(back[k], cols[k])


def test_synth_sine_exact():
    s = synth_generate("sine", {"length": 200, "period": 25.0})
    t = np.arange(200)
    assert np.array_equal(s.values, np.sin(2 * np.pi * t / 25.0))


def test_synth_regime_switch_construction():
    s = synth_generate("regime_switch", {"length": 300, "switch_at": 120,
                                         "first": {"kind": "sine", "period": 30.0},
                                         "second": {"kind": "trend", "slope": 0.5}})
    assert s.switch_index == 120
    np.testing.assert_array_equal(s.values[:120], np.sin(2 * np.pi * np.arange(120) / 30.0))
    np.testing.assert_array_equal(s.values[120:], 0.5 * np.arange(180))


def test_synth_lead_lag():
    s = synth_generate("lead_lag", {"noise": 0.0, "length": 100}, seed=3)
    assert s.lag == 3
    np.testing.assert_array_equal(s.series["B"][3:], s.series["A"][:-3])


def test_synth_deterministic():
    a = synth_generate("ar1", {"phi": 0.9}, seed=5).values
    b = synth_generate("ar1", {"phi": 0.9}, seed=5).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, synth_generate("ar1", {"phi": 0.9}, seed=6).values)


@pytest.mark.parametrize("kind,params", [
    ("nope", {}),
    ("sine", {"bogus": 1}),
    ("sine", {"period": 0}),
    ("ar1", {"phi": 1.0}),
    ("sine", {"length": 0}),
    ("regime_switch", {"switch_at": 0}),
    ("regime_switch", {"second": {"kind": "lead_lag"}}),
    ("lead_lag", {"lag": -1}),
])
def test_synth_invalid_params(kind, params):
    with pytest.raises(InvalidInputError):
        synth_generate(kind, params)
