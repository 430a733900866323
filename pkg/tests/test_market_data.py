import datetime as dt
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emvrs.errors import IngestionError
from emvrs.market_data import (HmmModel, MarketSeries, WindowSpec, fit_hmm,
                               label_regimes, load_series, make_synthetic_series,
                               monthly_indices, rolling_windows,
                               states_to_regimes, viterbi)
from emvrs.regimes import GeneratorMatrix


def write_csv(path, rows, header="date,price,rate"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


def brute_force_viterbi(model, x):
    """Exhaustive argmax over all state paths; ties to the first (lowest) path."""
    n, k = len(x), model.n_states
    with np.errstate(divide="ignore"):
        lt = np.log(model.trans)
        li = np.log(model.init)
    le = -0.5 * (np.log(2 * np.pi * model.variances)[None, :]
                 + (x[:, None] - model.means[None, :]) ** 2 / model.variances[None, :])
    best, best_score = None, -np.inf
    for path in itertools.product(range(k), repeat=n):
        score = li[path[0]] + le[0, path[0]]
        for t in range(1, n):
            score += lt[path[t - 1], path[t]] + le[t, path[t]]
        if score > best_score:
            best, best_score = path, score
    return np.array(best)


def random_model(rng, k):
    trans = rng.uniform(0.05, 1.0, (k, k))
    trans /= trans.sum(axis=1, keepdims=True)
    init = rng.uniform(0.05, 1.0, k)
    init /= init.sum()
    return HmmModel(n_states=k, means=rng.normal(0, 0.02, k),
                    variances=rng.uniform(1e-5, 4e-4, k), trans=trans, init=init)


class TestLoadSeries:
    def test_three_row_file(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["2020-01-02,100.0,0.01", "2020-01-03,101.0,0.01",
                      "2020-01-06,99.5,0.012"])
        s = load_series(f)
        assert len(s) == 3
        assert s.dates[0] == dt.date(2020, 1, 2)
        assert s.prices[2] == 99.5

    def test_duplicate_date_names_row(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["2020-01-02,100,0", "2020-01-02,101,0"])
        with pytest.raises(IngestionError, match="row 3"):
            load_series(f)

    def test_unsorted_date_names_row(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["2020-01-03,100,0", "2020-01-02,101,0"])
        with pytest.raises(IngestionError, match="row 3"):
            load_series(f)

    def test_nonpositive_price_names_row(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["2020-01-02,100,0", "2020-01-03,-5,0"])
        with pytest.raises(IngestionError, match="row 3"):
            load_series(f)

    def test_percent_rates_converted(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["2020-01-02,100,4.85", "2020-01-03,101,4.85"])
        s = load_series(f, rate_unit="percent")
        assert abs(s.rates[0] - 0.0485) < 1e-15

    def test_missing_rate_column_defaults_zero(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["2020-01-02,100", "2020-01-03,101"], header="date,price")
        s = load_series(f)
        assert np.all(s.rates == 0.0)

    def test_malformed_number_names_row(self, tmp_path):
        f = tmp_path / "m.csv"
        write_csv(f, ["2020-01-02,100,0", "2020-01-03,abc,0"])
        with pytest.raises(IngestionError, match="row 3"):
            load_series(f)


class TestFitHmm:
    def test_generate_and_recover_two_states(self):
        rng = np.random.default_rng(11)
        n = 2500
        states = np.empty(n, dtype=int)
        states[0] = 0
        for t in range(1, n):
            stay = rng.random() < 0.95
            states[t] = states[t - 1] if stay else 1 - states[t - 1]
        means_true = np.array([0.01, -0.01])
        stds_true = np.array([0.005, 0.02])
        x = means_true[states] + stds_true[states] * rng.standard_normal(n)
        model = fit_hmm(x, n_states=2)
        order = np.argsort(-model.means)  # align by descending mean
        rec_means = model.means[order]
        assert np.all(np.abs(rec_means - means_true) / np.abs(means_true) < 0.2)
        labels = viterbi(model, x)
        aligned = np.argsort(order)[labels]
        err = np.mean(aligned != states)
        assert min(err, 1 - err) < 0.1

    def test_single_state_matches_sample_moments(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0.002, 0.01, 400)
        model = fit_hmm(x, n_states=1)
        assert abs(model.means[0] - x.mean()) < 1e-10
        assert abs(model.variances[0] - x.var()) < 1e-10

    def test_loglik_monotone(self):
        rng = np.random.default_rng(9)
        x = np.concatenate([rng.normal(0.01, 0.005, 300),
                            rng.normal(-0.01, 0.02, 300)])
        model = fit_hmm(x, n_states=2)
        assert np.all(np.diff(model.loglik_trace) >= -1e-8)

    def test_too_short_series_rejected(self):
        with pytest.raises(ValueError, match="observations"):
            fit_hmm(np.zeros(15), n_states=2)


class TestViterbi:
    def test_matches_brute_force_small(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            k = int(rng.integers(2, 4))
            n = int(rng.integers(2, 9))
            model = random_model(rng, k)
            x = rng.normal(0, 0.02, n)
            assert np.array_equal(viterbi(model, x), brute_force_viterbi(model, x))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(2, 3), st.integers(2, 10))
    def test_matches_brute_force_property(self, key, k, n):
        rng = np.random.default_rng(key)
        model = random_model(rng, k)
        x = rng.normal(0, 0.02, n)
        assert np.array_equal(viterbi(model, x), brute_force_viterbi(model, x))

    def test_single_state_constant(self):
        model = HmmModel(1, np.array([0.0]), np.array([1e-4]),
                         np.array([[1.0]]), np.array([1.0]))
        assert np.all(viterbi(model, np.random.default_rng(0).normal(0, 0.01, 30)) == 0)

    def test_uniform_tie_takes_lowest_state(self):
        model = HmmModel(2, np.array([0.0, 0.0]), np.array([1e-4, 1e-4]),
                         np.full((2, 2), 0.5), np.array([0.5, 0.5]))
        assert np.all(viterbi(model, np.zeros(6)) == 0)

    def test_dominant_emissions_follow_argmax(self):
        model = HmmModel(2, np.array([0.05, -0.05]), np.array([1e-6, 1e-6]),
                         np.full((2, 2), 0.5), np.array([0.5, 0.5]))
        x = np.array([0.05, -0.05, -0.05, 0.05])
        assert np.array_equal(viterbi(model, x), [0, 1, 1, 0])

    def test_states_to_regimes_orders_by_mean(self):
        model = HmmModel(2, np.array([-0.01, 0.01]), np.array([1e-4, 1e-4]),
                         np.full((2, 2), 0.5), np.array([0.5, 0.5]))
        regs = states_to_regimes(model, np.array([0, 1, 0]))
        assert regs.tolist() == [2, 1, 2]  # state 1 has the higher mean


class TestRollingWindows:
    def make_series(self, years, start=dt.date(2006, 1, 2)):
        gen = GeneratorMatrix([[0.0]])
        series, _ = make_synthetic_series(years, [0.05], [0.15], [0.01], gen,
                                          seed=1, start=start)
        return series

    def test_twelve_years_span_ten_gives_25(self):
        series = self.make_series(12)
        wins = rolling_windows(series, WindowSpec(span_years=10, step_months=1))
        assert len(wins) == 25

    def test_two_year_roll_gives_24(self):
        series = self.make_series(11.93)  # ends just before the 25th start+span
        wins = rolling_windows(series, WindowSpec(span_years=10, step_months=1))
        assert len(wins) == 24

    def test_step_larger_than_residue_single_window(self):
        series = self.make_series(10.02)
        wins = rolling_windows(series, WindowSpec(span_years=10, step_months=6))
        assert len(wins) == 1

    def test_insufficient_data_reports_requirement(self):
        series = self.make_series(5)
        with pytest.raises(ValueError, match="needs at least"):
            rolling_windows(series, WindowSpec(span_years=10))

    def test_window_spans_and_starts(self):
        series = self.make_series(12)
        wins = rolling_windows(series, WindowSpec(span_years=10, step_months=1))
        starts = [w.dates[0] for w in wins]
        assert len(set(starts)) == len(starts)
        for w in wins:
            span_days = (w.dates[-1] - w.dates[0]).days
            assert 3645 <= span_days <= 3653

    def test_count_respected(self):
        series = self.make_series(12)
        wins = rolling_windows(series, WindowSpec(span_years=10, step_months=1,
                                                  count=3))
        assert len(wins) == 3


class TestMonthlySampling:
    def test_first_day_plus_month_ends(self):
        series, _ = make_synthetic_series(1.0, [0.05], [0.15], [0.01],
                                          GeneratorMatrix([[0.0]]), seed=2,
                                          start=dt.date(2010, 1, 4))
        idx = monthly_indices(series.dates)
        assert idx[0] == 0
        months = [(series.dates[i].year, series.dates[i].month) for i in idx[1:]]
        assert len(set(months)) == len(months)
        for j in idx[1:]:
            d = series.dates[j]
            later_same_month = [e for e in series.dates
                                if (e.year, e.month) == (d.year, d.month) and e > d]
            assert not later_same_month


class TestLabelRegimes:
    def test_bullish_is_regime_one(self):
        gen = GeneratorMatrix([[-2.0, 2.0], [2.0, -2.0]])
        series, true_path = make_synthetic_series(
            4.0, [0.25, -0.25], [0.1, 0.3], [0.01, 0.02], gen, seed=3)
        model, labels = label_regimes(series, n_states=2)
        assert len(labels) == len(series)
        # regime 1 must carry the higher mean return
        rets = series.log_returns()
        m1 = rets[labels[1:] == 1].mean()
        m2 = rets[labels[1:] == 2].mean()
        assert m1 > m2
        err = np.mean(labels != true_path)
        assert min(err, 1 - err) < 0.15
