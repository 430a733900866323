"""Market-data ingestion, regime labeling and rolling-window slicing.

Price and rate series come from CSV files (columns ``date,price,rate``;
ISO-8601 dates; rates annualized, decimal or percent).  Regimes are labeled
on daily log returns by a Gaussian hidden Markov model fitted with
Baum-Welch and decoded with the Viterbi algorithm.  A synthetic
regime-switching generator keeps tests and fixtures hermetic.
"""
from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError
from .regimes import GeneratorMatrix, sample_regime_path
from .rng import as_generator, substream

_VAR_FLOOR = 1e-8
_VAR_DEGENERATE = 1e-10


@dataclass
class MarketSeries:
    """Aligned daily dates, index levels and annualized risk-free rates."""

    dates: list
    prices: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64)
        self.rates = np.asarray(self.rates, dtype=np.float64)
        n = len(self.dates)
        if len(self.prices) != n or len(self.rates) != n:
            raise IngestionError("dates, prices and rates must have equal length")
        if n == 0:
            raise IngestionError("series is empty")
        for k in range(1, n):
            if self.dates[k] <= self.dates[k - 1]:
                raise IngestionError(
                    f"row {k + 1}: date {self.dates[k]} not strictly increasing")
        if np.any(self.prices <= 0):
            bad = int(np.argmax(self.prices <= 0))
            raise IngestionError(f"row {bad + 1}: non-positive price {self.prices[bad]}")

    def __len__(self) -> int:
        return len(self.dates)

    def slice(self, start: dt.date, end: dt.date) -> "MarketSeries":
        """Rows with start <= date <= end."""
        idx = [k for k, d in enumerate(self.dates) if start <= d <= end]
        if not idx:
            raise IngestionError(f"no data between {start} and {end}")
        lo, hi = idx[0], idx[-1] + 1
        return MarketSeries(self.dates[lo:hi], self.prices[lo:hi], self.rates[lo:hi])

    def log_returns(self) -> np.ndarray:
        return np.diff(np.log(self.prices))


@dataclass
class HmmModel:
    """Gaussian-emission hidden Markov model on returns."""

    n_states: int
    means: np.ndarray
    variances: np.ndarray
    trans: np.ndarray
    init: np.ndarray
    loglik_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if np.any(self.variances <= 0):
            raise ValueError("emission variances must be positive")
        if not np.allclose(self.trans.sum(axis=1), 1.0, atol=1e-10):
            raise ValueError("transition rows must sum to 1")


@dataclass(frozen=True)
class WindowSpec:
    """Rolling-window protocol: span in years, step in months."""

    span_years: int
    step_months: int = 1
    count: int | None = None

    def __post_init__(self):
        if self.span_years <= 0 or self.step_months <= 0:
            raise ValueError("span and step must be positive")


def load_series(path, rate_unit: str = "decimal") -> MarketSeries:
    """Read a CSV with columns date, price and optional rate.

    ``rate_unit='percent'`` divides the rate column by 100.  Raises
    IngestionError with the offending row number on malformed input.
    """
    if rate_unit not in ("decimal", "percent"):
        raise ValueError(f"rate_unit must be 'decimal' or 'percent', got {rate_unit!r}")
    dates, prices, rates = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        cols = [c.strip().lower() for c in header]
        if "date" not in cols or "price" not in cols:
            raise IngestionError(f"{path}: header must contain 'date' and 'price'")
        i_date, i_price = cols.index("date"), cols.index("price")
        i_rate = cols.index("rate") if "rate" in cols else None
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                d = dt.date.fromisoformat(row[i_date].strip())
                p = float(row[i_price])
                r = float(row[i_rate]) if i_rate is not None and row[i_rate].strip() else 0.0
            except (ValueError, IndexError) as exc:
                raise IngestionError(f"{path}: row {row_no}: {exc}") from exc
            if dates and d <= dates[-1]:
                raise IngestionError(
                    f"{path}: row {row_no}: date {d} duplicates or precedes {dates[-1]}")
            if p <= 0:
                raise IngestionError(f"{path}: row {row_no}: non-positive price {p}")
            dates.append(d)
            prices.append(p)
            rates.append(r / 100.0 if rate_unit == "percent" else r)
    if not dates:
        raise IngestionError(f"{path}: no data rows")
    return MarketSeries(dates, np.array(prices), np.array(rates))


def _kmeans_1d(x: np.ndarray, k: int, iters: int = 50) -> np.ndarray:
    """Deterministic 1-D k-means; centers initialized at quantiles."""
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    for _ in range(iters):
        assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        new = np.array([x[assign == j].mean() if np.any(assign == j) else centers[j]
                        for j in range(k)])
        if np.allclose(new, centers):
            break
        centers = new
    return centers


def _gauss_logpdf(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    # x: (n,), mean/var: (k,) -> (n, k)
    d = x[:, None] - mean[None, :]
    return -0.5 * (np.log(2.0 * np.pi * var)[None, :] + d * d / var[None, :])


def fit_hmm(returns: np.ndarray, n_states: int = 2, tol: float = 1e-6,
            max_iter: int = 200, seed: int = 0) -> HmmModel:
    """Baum-Welch EM for a Gaussian HMM on a return series.

    Initialization is deterministic: emission means from a k-means split of
    the returns by value, sticky transitions (0.9 on the diagonal) and a
    uniform initial distribution.  The log-likelihood is non-decreasing
    across iterations; iteration stops at relative improvement below ``tol``
    or at ``max_iter``.
    """
    x = np.asarray(returns, dtype=np.float64)
    if len(x) < 10 * n_states:
        raise ValueError(f"need at least {10 * n_states} observations for "
                         f"{n_states} states, got {len(x)}")
    means = _kmeans_1d(x, n_states)
    variances = np.full(n_states, max(x.var(), _VAR_FLOOR))
    for j in range(n_states):
        d = np.abs(x[:, None] - means[None, :]).argmin(axis=1) == j
        if d.sum() > 1:
            variances[j] = max(x[d].var(), _VAR_FLOOR)
    trans = np.full((n_states, n_states), 0.1 / max(n_states - 1, 1))
    np.fill_diagonal(trans, 0.9 if n_states > 1 else 1.0)
    init = np.full(n_states, 1.0 / n_states)

    n = len(x)
    logliks = []
    for _ in range(max_iter):
        emit = np.exp(_gauss_logpdf(x, means, variances))  # (n, k)
        # scaled forward-backward
        alpha = np.empty((n, n_states))
        scale = np.empty(n)
        alpha[0] = init * emit[0]
        scale[0] = alpha[0].sum()
        alpha[0] /= scale[0]
        for t in range(1, n):
            a = (alpha[t - 1] @ trans) * emit[t]
            scale[t] = a.sum()
            alpha[t] = a / scale[t]
        beta = np.empty((n, n_states))
        beta[-1] = 1.0
        for t in range(n - 2, -1, -1):
            beta[t] = (trans @ (emit[t + 1] * beta[t + 1])) / scale[t + 1]
        ll = float(np.sum(np.log(scale)))
        logliks.append(ll)

        gamma = alpha * beta
        gamma /= gamma.sum(axis=1, keepdims=True)
        # expected transition counts
        xi_num = np.einsum("ti,ij,tj->ij", alpha[:-1], trans,
                           emit[1:] * beta[1:] / scale[1:, None])
        trans = xi_num / np.maximum(xi_num.sum(axis=1, keepdims=True), 1e-300)
        init = gamma[0]
        w = gamma.sum(axis=0)
        means = (gamma * x[:, None]).sum(axis=0) / w
        variances = (gamma * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / w
        if np.any(variances < _VAR_DEGENERATE):
            warnings.warn("degenerate emission variance floored at 1e-8",
                          RuntimeWarning, stacklevel=2)
            variances = np.maximum(variances, _VAR_FLOOR)
        if len(logliks) > 1:
            prev = logliks[-2]
            if abs(ll - prev) <= tol * max(abs(prev), 1.0):
                break
    return HmmModel(n_states=n_states, means=means, variances=variances,
                    trans=trans, init=init, loglik_trace=np.array(logliks))


def viterbi(model: HmmModel, returns: np.ndarray) -> np.ndarray:
    """Most probable hidden-state path (0-based states).

    Log-space dynamic program; ties break toward the lower state index.
    """
    x = np.asarray(returns, dtype=np.float64)
    n, k = len(x), model.n_states
    log_emit = _gauss_logpdf(x, model.means, model.variances)
    with np.errstate(divide="ignore"):
        log_trans = np.log(model.trans)
        log_init = np.log(model.init)
    delta = log_init + log_emit[0]
    back = np.zeros((n, k), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + log_trans  # (from, to)
        back[t] = np.argmax(cand, axis=0)  # first max -> lower index on ties
        delta = cand[back[t], np.arange(k)] + log_emit[t]
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(n - 2, -1, -1):
        path[t] = back[t + 1, path[t + 1]]
    return path


def states_to_regimes(model: HmmModel, states: np.ndarray) -> np.ndarray:
    """Map HMM states to 1-based regimes, highest emission mean first.

    Regime 1 is the bullish (highest-mean) state.
    """
    order = np.argsort(-model.means)
    regime_of = np.empty(model.n_states, dtype=np.int64)
    regime_of[order] = np.arange(1, model.n_states + 1)
    return regime_of[np.asarray(states, dtype=np.int64)]


def label_regimes(series: MarketSeries, n_states: int = 2, tol: float = 1e-6,
                  max_iter: int = 200, seed: int = 0):
    """Fit an HMM on log returns and return (model, per-row 1-based labels).

    Row k carries the regime of the return ending at k; row 0 repeats the
    first label.
    """
    returns = series.log_returns()
    model = fit_hmm(returns, n_states=n_states, tol=tol, max_iter=max_iter,
                    seed=seed)
    regs = states_to_regimes(model, viterbi(model, returns))
    labels = np.concatenate([[regs[0]], regs])
    return model, labels


def _add_months(d: dt.date, months: int) -> dt.date:
    m = d.month - 1 + months
    y = d.year + m // 12
    m = m % 12 + 1
    day = min(d.day, [31, 29 if y % 4 == 0 and (y % 100 != 0 or y % 400 == 0)
                      else 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31][m - 1])
    return dt.date(y, m, day)


def rolling_windows(series: MarketSeries, spec: WindowSpec) -> list[MarketSeries]:
    """Monthly-stepped calendar slices of ``span_years`` each.

    Window k starts at the series start shifted by k steps and covers span
    years (inclusive of the day before the next window-start anniversary).
    """
    start0 = series.dates[0]
    last = series.dates[-1]
    windows = []
    k = 0
    while True:
        if spec.count is not None and len(windows) >= spec.count:
            break
        start = _add_months(start0, k * spec.step_months)
        end = _add_months(start, 12 * spec.span_years) - dt.timedelta(days=1)
        if end > last:
            break
        windows.append(series.slice(start, end))
        k += 1
    if not windows:
        need = _add_months(start0, 12 * spec.span_years) - dt.timedelta(days=1)
        raise ValueError(
            f"series ends {last}, needs at least {need} for a "
            f"{spec.span_years}-year window")
    if spec.count is not None and len(windows) < spec.count:
        raise ValueError(f"only {len(windows)} of {spec.count} requested "
                         f"windows fit the series")
    return windows


def _next_weekday(d: dt.date) -> dt.date:
    d = d + dt.timedelta(days=1)
    while d.weekday() >= 5:
        d += dt.timedelta(days=1)
    return d


def monthly_indices(dates: list) -> np.ndarray:
    """Indices of the first row plus each month's last trading day.

    A trailing month fragment (window ending mid-month) contributes no
    sample: the final date counts only if the following weekday falls in a
    different calendar month.
    """
    idx = [0]
    for k in range(1, len(dates)):
        if k < len(dates) - 1:
            boundary = (dates[k + 1].year, dates[k + 1].month) != (
                dates[k].year, dates[k].month)
        else:
            nxt = _next_weekday(dates[k])
            boundary = (nxt.year, nxt.month) != (dates[k].year, dates[k].month)
        if boundary and k != idx[-1]:
            idx.append(k)
    return np.asarray(idx, dtype=np.int64)


def make_synthetic_series(years: float, mu, sigma, rates, gen: GeneratorMatrix,
                          seed: int, start: dt.date = dt.date(2000, 1, 3),
                          days_per_year: int = 252, s0: float = 100.0):
    """Regime-switching geometric Brownian price series on a weekday calendar.

    Spans ``years`` calendar years from ``start``.  Returns (MarketSeries,
    daily 1-based regime labels).  ``mu``, ``sigma`` and ``rates`` are
    per-regime annualized parameters; each weekday advances model time by
    1/``days_per_year`` years.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    rates_arr = np.atleast_1d(np.asarray(rates, dtype=np.float64))
    end = _add_months(start, int(round(years * 12))) - dt.timedelta(days=1)
    dates = []
    d = start
    while d <= end:
        if d.weekday() < 5:
            dates.append(d)
        d += dt.timedelta(days=1)
    n_days = len(dates) - 1
    dt_y = 1.0 / days_per_year

    regime_rng = substream(seed, "synth_regimes")
    path = sample_regime_path(gen, dt_y, n_days, 1, regime_rng).alphas
    price_rng = substream(seed, "synth_prices")
    z = price_rng.standard_normal(n_days)
    log_s = np.empty(n_days + 1)
    log_s[0] = np.log(s0)
    for k in range(n_days):
        i = path[k] - 1
        log_s[k + 1] = log_s[k] + (mu[i] - 0.5 * sigma[i] ** 2) * dt_y \
            + sigma[i] * np.sqrt(dt_y) * z[k]
    series = MarketSeries(dates, np.exp(log_s), rates_arr[path - 1])
    return series, path
