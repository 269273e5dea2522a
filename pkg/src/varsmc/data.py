"""Market data ingestion, heterogeneous aggregates, and sample splitting.

All series live on a shared daily axis: ``returns[t]`` is the percentage log
return of day t and ``rv[t]`` the realized variance of day t (percent^2).
Aggregates are trailing means inclusive of the evaluation day: the 5-day
("weekly") value at t averages days t-4..t, the 22-day ("monthly") value
averages days t-21..t. Every aggregate is therefore observable at day t.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

WEEK = 5
MONTH = 22
LEV_MONTH = 20  # leverage variant aggregates returns/RV over 20 days, not 22


@dataclass(frozen=True)
class MarketSeries:
    """Aligned daily returns and realized variances for one market."""

    name: str
    dates: tuple
    returns: np.ndarray
    rv: np.ndarray

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=np.float64)
        rv = np.asarray(self.rv, dtype=np.float64)
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "rv", rv)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(returns) or len(returns) != len(rv):
            raise DataError("dates, returns and rv must have equal length")
        if not (np.all(np.isfinite(returns)) and np.all(np.isfinite(rv))):
            raise DataError("returns/rv contain non-finite values")
        if np.any(rv < 0):
            raise DataError("realized variance must be nonnegative")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.returns)

    def slice(self, start: int, stop: int, suffix: str = "") -> "MarketSeries":
        return MarketSeries(
            name=self.name + suffix,
            dates=self.dates[start:stop],
            returns=self.returns[start:stop],
            rv=self.rv[start:stop],
        )


@dataclass(frozen=True)
class HarInputs:
    """Daily/weekly/monthly RV means and negative-return aggregates.

    ``neg_ret_d/w/m`` hold mean(returns over the trailing 1/5/20 days) kept
    only when negative (zero otherwise), so all three are <= 0 everywhere.
    Entries before ``valid_from`` may be NaN; every aggregate is defined from
    ``valid_from`` (= 21 + 1 lag day = index 22) onward.
    """

    rv_d: np.ndarray
    rv_w: np.ndarray
    rv_m: np.ndarray
    neg_ret_d: np.ndarray
    neg_ret_w: np.ndarray
    neg_ret_m: np.ndarray
    valid_from: int

    def __len__(self) -> int:
        return len(self.rv_d)


@dataclass(frozen=True)
class SampleSplit:
    """Contiguous in-sample / out-of-sample lengths (defaults 2000/1000)."""

    in_sample_len: int = 2000
    out_sample_len: int = 1000

    def __post_init__(self):
        if self.in_sample_len < 1 or self.out_sample_len < 1:
            raise ConfigError("split lengths must both be >= 1")

    @property
    def total(self) -> int:
        return self.in_sample_len + self.out_sample_len


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping for :func:`load_market_csv`.

    Exactly one of ``ret``/``price`` is used: when ``price`` is set, returns
    are computed as 100 * (log p_t - log p_{t-1}) and the first row only
    anchors the price level.
    """

    date: str = "date"
    ret: str = "return"
    price: str | None = None
    rv: str = "rv"


def trailing_mean(x, window: int) -> np.ndarray:
    """Trailing mean inclusive of the current index; NaN before window-1.

    Computed window-by-window (not by cumulative sums) so the value at a day
    depends only on that day's window: dropping leading rows reproduces the
    surviving aggregates bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.full(len(x), np.nan)
    if len(x) >= window:
        out[window - 1 :] = np.lib.stride_tricks.sliding_window_view(x, window).mean(axis=1)
    return out


def load_market_csv(path, schema: CsvSchema | None = None, name: str | None = None) -> MarketSeries:
    """Read one market from a UTF-8 CSV with a header row.

    Rows with missing values in the mapped columns are dropped (count
    logged); malformed cells raise :class:`DataError` naming the 1-based
    data row. Dates must be ISO-8601 and strictly increasing; negative
    realized variances are rejected.
    """
    schema = schema or CsvSchema()
    value_col = schema.price if schema.price else schema.ret
    path = str(path)
    dates, values, rvs = [], [], []
    n_dropped = 0
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (schema.date, value_col, schema.rv):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r} (header: {header})")
        for i, row in enumerate(reader, start=1):
            raw = (row.get(schema.date), row.get(value_col), row.get(schema.rv))
            if any(v is None or v.strip() == "" or v.strip().lower() == "nan" for v in raw):
                n_dropped += 1
                continue
            try:
                d = dt.date.fromisoformat(raw[0].strip())
                v = float(raw[1])
                r = float(raw[2])
            except ValueError as exc:
                raise DataError(f"{path}: unparseable row {i}: {exc}") from None
            if not (math.isfinite(v) and math.isfinite(r)):
                n_dropped += 1
                continue
            if r < 0:
                raise DataError(f"{path}: negative realized variance at row {i}")
            dates.append(d)
            values.append(v)
            rvs.append(r)
    if n_dropped:
        log.warning("%s: dropped %d rows with missing values", path, n_dropped)
    if not dates:
        raise DataError(f"{path}: no usable rows")
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise DataError(f"{path}: dates are not strictly increasing")

    if schema.price:
        if len(values) < 2:
            raise DataError(f"{path}: need at least two prices to form returns")
        if min(values) <= 0:
            raise DataError(f"{path}: nonpositive price encountered")
        logp = np.log(np.asarray(values, dtype=np.float64))
        returns = 100.0 * np.diff(logp)
        dates, rvs = dates[1:], rvs[1:]
    else:
        returns = np.asarray(values, dtype=np.float64)

    if name is None:
        stem = path.rsplit("/", 1)[-1]
        name = stem.rsplit(".", 1)[0]
    return MarketSeries(name=name, dates=dates, returns=returns, rv=np.asarray(rvs))


def write_market_csv(series: MarketSeries, path) -> None:
    """Write a series in the load_market_csv layout at full float precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "return", "rv"])
        for d, y, r in zip(series.dates, series.returns, series.rv):
            w.writerow([d.isoformat(), repr(float(y)), repr(float(r))])


def build_har_inputs(series: MarketSeries) -> HarInputs:
    """Construct the trailing aggregates consumed by every model.

    Requires at least 23 observations (a full 22-day window plus the one-day
    lag every regression uses). ``valid_from`` is 22: the first index where
    the monthly mean is fully backed by data.
    """
    if len(series) < MONTH + 1:
        raise DataError(f"series too short: need >= {MONTH + 1} observations, got {len(series)}")
    rv = series.rv
    y = series.returns

    def neg_part(agg):
        with np.errstate(invalid="ignore"):
            return np.where(agg < 0, agg, 0.0)

    return HarInputs(
        rv_d=rv.copy(),
        rv_w=trailing_mean(rv, WEEK),
        rv_m=trailing_mean(rv, MONTH),
        neg_ret_d=neg_part(y.copy()),
        neg_ret_w=neg_part(trailing_mean(y, WEEK)),
        neg_ret_m=neg_part(trailing_mean(y, LEV_MONTH)),
        valid_from=MONTH,
    )


def split(series: MarketSeries, sample_split: SampleSplit):
    """Split into (in-sample, out-of-sample) views.

    When the series is longer than the split total, the last
    ``in + out`` observations are used (series lengths are standardized
    from the end).
    """
    total = sample_split.total
    if total > len(series):
        raise DataError(
            f"split {sample_split.in_sample_len}/{sample_split.out_sample_len} "
            f"exceeds series length {len(series)}"
        )
    start = len(series) - total
    cut = start + sample_split.in_sample_len
    return series.slice(start, cut), series.slice(cut, len(series))


@dataclass(frozen=True)
class DgpConfig:
    """GARCH(1,1) data-generating process with standardized Student-t shocks.

    y_t = sigma_t * eps_t with eps_t ~ t(nu) scaled to unit variance, and
    sigma2_{t+1} = omega + a1 * y_t^2 + b1 * sigma2_t starting from the
    unconditional variance. The recorded realized variance is the true
    conditional variance times ``rv_bias`` times mean-one lognormal noise
    exp(tau*z - tau^2/2). ``rv_bias < 1`` mimics a realized measure that
    misses part of the daily variance (overnight moves); the true
    conditional quantile at any level stays recoverable in closed form by
    re-filtering sigma2 from the returns alone.
    """

    omega: float = 0.05
    a1: float = 0.10
    b1: float = 0.86
    nu: float = 6.0
    rv_noise: float = 0.5
    rv_bias: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if self.omega <= 0 or self.a1 < 0 or self.b1 < 0:
            raise ConfigError("omega must be > 0 and a1, b1 >= 0")
        if self.a1 + self.b1 >= 1.0:
            raise ConfigError(f"non-stationary DGP: a1 + b1 = {self.a1 + self.b1} >= 1")
        if self.nu <= 2.0:
            raise ConfigError("nu must exceed 2 for a finite variance")
        if self.rv_noise < 0:
            raise ConfigError("rv_noise must be >= 0")
        if self.rv_bias <= 0:
            raise ConfigError("rv_bias must be positive")

    @property
    def uncond_var(self) -> float:
        return self.omega / (1.0 - self.a1 - self.b1)


def generate_synthetic_market(
    seed: int, length: int, dgp: DgpConfig | None = None, name: str = "synthetic"
) -> MarketSeries:
    """Simulate a MarketSeries from the documented DGP; same seed, same series."""
    dgp = dgp or DgpConfig()
    if length < 100:
        raise ConfigError("synthetic series length must be >= 100")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5D]))
    scale = math.sqrt((dgp.nu - 2.0) / dgp.nu)
    eps = rng.standard_t(dgp.nu, size=length) * scale
    z = rng.standard_normal(length)

    y = np.empty(length)
    sigma2 = np.empty(length)
    s2 = dgp.uncond_var
    for t in range(length):
        sigma2[t] = s2
        y[t] = dgp.mu + math.sqrt(s2) * eps[t]
        innov = y[t] - dgp.mu
        s2 = dgp.omega + dgp.a1 * innov * innov + dgp.b1 * s2
    tau = dgp.rv_noise
    rv = dgp.rv_bias * sigma2 * np.exp(tau * z - 0.5 * tau * tau)

    start = dt.date(2012, 1, 2)
    dates = [start + dt.timedelta(days=i) for i in range(length)]
    return MarketSeries(name=name, dates=dates, returns=y, rv=rv)


def filter_true_variance(dgp: DgpConfig, returns) -> np.ndarray:
    """Recover the DGP's conditional variance path from recorded returns."""
    y = np.asarray(returns, dtype=np.float64)
    sigma2 = np.empty(len(y))
    s2 = dgp.uncond_var
    for t in range(len(y)):
        sigma2[t] = s2
        innov = y[t] - dgp.mu
        s2 = dgp.omega + dgp.a1 * innov * innov + dgp.b1 * s2
    return sigma2


def true_var_quantile(dgp: DgpConfig, returns, alpha: float) -> np.ndarray:
    """True conditional alpha-quantile of each day's return under the DGP."""
    from scipy.stats import t as student_t

    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    sigma2 = filter_true_variance(dgp, returns)
    q_eps = student_t.ppf(alpha, dgp.nu) * math.sqrt((dgp.nu - 2.0) / dgp.nu)
    return dgp.mu + np.sqrt(sigma2) * q_eps
