"""Expanding-window one-step-ahead VaR forecasting for all models.

Every run works on the last ``in_sample + out_sample`` observations of a
market. ``q_hat[i]`` is the VaR forecast for test day i, always computed
from information through the previous day only. The recurrent quantile
model is estimated once by likelihood annealing and then tracked through
the test window by data annealing; the classical baselines are refit each
day (default) or once, and their RV forecasts convert to VaR via the
normal-quantile map.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import models, rnn_har
from .data import MarketSeries, SampleSplit, build_har_inputs
from .errors import ConfigError, EstimationError, NumericalError
from .inference import Prior, SmcConfig, smc_data_annealing, smc_likelihood_annealing

log = logging.getLogger(__name__)

MODEL_IDS = ("rnn-har", "har", "sqrthar", "levhar", "rhargarch")
BASELINE_IDS = ("har", "sqrthar", "levhar", "rhargarch")


@dataclass
class ForecastRun:
    """Aligned VaR point forecasts over a test window for one model."""

    model_id: str
    alpha: float
    q_hat: np.ndarray
    dates: tuple
    returns: np.ndarray
    predictive_draws: np.ndarray | None = None
    timings: dict = field(default_factory=dict)
    seed: int | None = None
    fallback_days: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def _trim(series: MarketSeries, split: SampleSplit) -> MarketSeries:
    if split.total > len(series):
        raise ConfigError(
            f"split {split.in_sample_len}/{split.out_sample_len} exceeds series "
            f"length {len(series)}"
        )
    return series.slice(len(series) - split.total, len(series))


def forecast_rnn_har(
    series: MarketSeries,
    split: SampleSplit,
    alpha: float,
    prior: Prior | None = None,
    config: SmcConfig | None = None,
    keep_draws: bool = False,
) -> ForecastRun:
    """Posterior-predictive VaR forecasts from the recurrent quantile model.

    One likelihood-annealing pass on the in-sample window, then per test
    day: each particle's VaR for the next day is computed from its carried
    hidden state, the point forecast is the arithmetic mean of those draws,
    and the day's return is absorbed by data annealing.
    """
    prior = prior or Prior()
    config = config or SmcConfig()
    if split.in_sample_len < 100:
        raise ConfigError("rnn-har needs an in-sample window of >= 100 observations")
    trimmed = _trim(series, split)
    inputs = build_har_inputs(trimmed)
    t_ins = split.in_sample_len
    n_test = split.out_sample_len

    t0 = time.perf_counter()
    cloud = smc_likelihood_annealing(
        inputs, trimmed.returns, t_ins, alpha, prior, config
    )
    t_anneal = time.perf_counter() - t0

    q_hat = np.empty(n_test)
    draws = np.empty((n_test, config.particles)) if keep_draws else None
    t0 = time.perf_counter()
    for i, t in enumerate(range(t_ins, t_ins + n_test)):
        _, q = rnn_har.batch_step(cloud.particles, inputs, t - 1, cloud.hidden)
        q_hat[i] = float(np.mean(q))
        if not math.isfinite(q_hat[i]):
            raise NumericalError(f"non-finite VaR forecast at test day {i}")
        if keep_draws:
            draws[i] = q
        cloud = smc_data_annealing(cloud, inputs, trimmed.returns, t, alpha, prior, config)
    t_update = time.perf_counter() - t0

    return ForecastRun(
        model_id="rnn-har",
        alpha=alpha,
        q_hat=q_hat,
        dates=trimmed.dates[t_ins:],
        returns=trimmed.returns[t_ins:].copy(),
        predictive_draws=draws,
        timings={
            "likelihood_annealing_s": t_anneal,
            "data_annealing_s": t_update,
            "total_s": t_anneal + t_update,
        },
        seed=config.seed,
        trace=cloud.trace,
    )


def forecast_baseline(
    series: MarketSeries,
    split: SampleSplit,
    alpha: float,
    variant: str,
    refit: str = "daily",
    mu_mode: str = "insample",
    seed: int = 0,
) -> ForecastRun:
    """VaR forecasts from one classical baseline (har/sqrthar/levhar/rhargarch).

    ``refit="daily"`` re-estimates on the expanding window before every test
    day; ``"once"`` keeps the in-sample fit. A failed daily re-fit falls back
    to the previous day's forecast and is recorded in ``fallback_days``.
    """
    if variant not in BASELINE_IDS:
        raise ConfigError(f"unknown baseline {variant!r} (expected one of {BASELINE_IDS})")
    if refit not in ("daily", "once"):
        raise ConfigError("refit must be 'daily' or 'once'")
    if mu_mode not in ("insample", "zero"):
        raise ConfigError("mu_mode must be 'insample' or 'zero'")

    trimmed = _trim(series, split)
    inputs = build_har_inputs(trimmed)
    t_ins = split.in_sample_len
    n_test = split.out_sample_len
    mu = float(np.mean(trimmed.returns[:t_ins])) if mu_mode == "insample" else 0.0

    t0 = time.perf_counter()
    q_hat = np.empty(n_test)
    fallback_days: list[int] = []

    if variant == "rhargarch":
        fit = models.fit_rhargarch(trimmed, inputs, t_end=t_ins, seed=seed)
        h_run = float(fit.h_path[-1])  # conditional variance at day t_ins - 1
        params_prev = fit.params()
        for i, t in enumerate(range(t_ins, t_ins + n_test)):
            if refit == "daily" and i > 0:
                try:
                    fit = models.fit_rhargarch(
                        trimmed, inputs, t_end=t, n_restarts=1, seed=seed, x0=params_prev
                    )
                    params_prev = fit.params()
                    h_run = float(fit.h_path[-1])
                except (EstimationError, np.linalg.LinAlgError):
                    fallback_days.append(i)
            h_next = (
                fit.omega
                + fit.beta * h_run
                + fit.gamma_d * float(inputs.rv_d[t - 1])
                + fit.gamma_w * float(inputs.rv_w[t - 1])
                + fit.gamma_m * float(inputs.rv_m[t - 1])
            )
            q_hat[i] = fit.mu + models.inv_norm_cdf(alpha) * math.sqrt(max(h_next, models.RV_FLOOR))
            h_run = h_next
    else:
        fit = models.fit_linear_har(inputs, trimmed.rv, variant, t_end=t_ins)
        for i, t in enumerate(range(t_ins, t_ins + n_test)):
            if refit == "daily" and i > 0:
                try:
                    fit = models.fit_linear_har(inputs, trimmed.rv, variant, t_end=t)
                except EstimationError:
                    fallback_days.append(i)
            f_next = models.forecast_rv(fit, inputs, t - 1)
            q_hat[i] = models.var_from_rv(f_next, mu, alpha)

    if fallback_days:
        log.warning("%s: carried forward forecasts on %d days", variant, len(fallback_days))
    if not np.all(np.isfinite(q_hat)):
        raise NumericalError(f"{variant}: non-finite VaR forecast")

    return ForecastRun(
        model_id=variant,
        alpha=alpha,
        q_hat=q_hat,
        dates=trimmed.dates[t_ins:],
        returns=trimmed.returns[t_ins:].copy(),
        timings={"total_s": time.perf_counter() - t0},
        seed=seed,
        fallback_days=fallback_days,
    )


def write_forecast_csv(run: ForecastRun, path, draw_quantiles: bool = False) -> None:
    """Forecast path as CSV: date, return, q_hat, violation (+draw 5/95% bands)."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["date", "return", "q_hat", "violation"]
        bands = draw_quantiles and run.predictive_draws is not None
        if bands:
            header += ["draw_q05", "draw_q95"]
        w.writerow(header)
        for i, (d, y, q) in enumerate(zip(run.dates, run.returns, run.q_hat)):
            row = [d.isoformat(), repr(float(y)), repr(float(q)), int(y < q)]
            if bands:
                lo, hi = np.quantile(run.predictive_draws[i], [0.05, 0.95])
                row += [repr(float(lo)), repr(float(hi))]
            w.writerow(row)
