"""Classical HAR-family baselines and the RV -> VaR conversion.

Three linear regressions fit by OLS:

* ``har``      next-day RV on the daily value and the 5/22-day trailing means.
* ``sqrthar``  same regression on square roots of RV (forecasts are squared back).
* ``levhar``   RV on daily RV, 5/20-day RV means, and 1/5/20-day negative-return
               aggregates (leverage terms).

plus ``rhargarch``: a GARCH-type conditional variance driven by the three RV
aggregates, with a contemporaneous measurement equation for RV, estimated by
Gaussian quasi-likelihood. Variance forecasts convert to VaR through
``var_from_rv`` (mu + z_alpha * sqrt(F)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .data import LEV_MONTH, HarInputs, MarketSeries, trailing_mean
from .errors import EstimationError
from . import data as _data

RV_FLOOR = 1e-8

LINEAR_VARIANTS = ("har", "sqrthar", "levhar")
_N_COEFFS = {"har": 4, "sqrthar": 4, "levhar": 7}


# --------------------------------------------------------------------------
# standard-normal quantile
# --------------------------------------------------------------------------

_INVNORM_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_INVNORM_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_INVNORM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_INVNORM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)


def inv_norm_cdf(p: float) -> float:
    """Standard-normal quantile function.

    Rational approximation refined by one Newton step through the exact CDF
    (``math.erfc``); absolute error is far below 1e-9 across (0, 1).
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    p_low, p_high = 0.02425, 1.0 - 0.02425
    a, b, c, d = _INVNORM_A, _INVNORM_B, _INVNORM_C, _INVNORM_D
    if p < p_low:
        qv = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * qv + c[1]) * qv + c[2]) * qv + c[3]) * qv + c[4]) * qv + c[5]) / (
            (((d[0] * qv + d[1]) * qv + d[2]) * qv + d[3]) * qv + 1.0
        )
    elif p <= p_high:
        qv = p - 0.5
        r = qv * qv
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * qv / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        )
    else:
        qv = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * qv + c[1]) * qv + c[2]) * qv + c[3]) * qv + c[4]) * qv + c[5]) / (
            (((d[0] * qv + d[1]) * qv + d[2]) * qv + d[3]) * qv + 1.0
        )
    # Newton refinement: Phi(x) - p over the exact density.
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        x -= err / pdf
    return x


def var_from_rv(rv_forecast: float, mu: float, alpha: float) -> float:
    """VaR = mu + Phi^-1(alpha) * sqrt(F) for an RV forecast F > 0."""
    if not rv_forecast > 0.0:
        raise ValueError("rv_forecast must be positive")
    return mu + inv_norm_cdf(alpha) * math.sqrt(rv_forecast)


# --------------------------------------------------------------------------
# linear HAR family
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearHarFit:
    variant: str
    coeffs: np.ndarray
    residual_variance: float
    n_obs: int

    def __post_init__(self):
        if self.variant not in LINEAR_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        c = np.asarray(self.coeffs, dtype=np.float64)
        object.__setattr__(self, "coeffs", c)
        if c.shape != (_N_COEFFS[self.variant],):
            raise ValueError(
                f"{self.variant} expects {_N_COEFFS[self.variant]} coefficients, got {c.shape}"
            )
        if self.residual_variance < 0:
            raise ValueError("residual_variance must be >= 0")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "coeffs": self.coeffs.tolist(),
            "residual_variance": float(self.residual_variance),
            "n_obs": int(self.n_obs),
        }


def _regressor_matrix(inputs: HarInputs, variant: str, t_idx: np.ndarray) -> np.ndarray:
    """Design rows for targets at days ``t_idx``; every regressor is observed at t-1."""
    lag = t_idx - 1
    if variant == "har":
        cols = [inputs.rv_d[lag], inputs.rv_w[lag], inputs.rv_m[lag]]
    elif variant == "sqrthar":
        sq = np.sqrt(inputs.rv_d)
        cols = [sq[lag], trailing_mean(sq, _data.WEEK)[lag], trailing_mean(sq, _data.MONTH)[lag]]
    elif variant == "levhar":
        rv20 = trailing_mean(inputs.rv_d, LEV_MONTH)
        cols = [
            inputs.rv_d[lag],
            inputs.rv_w[lag],
            rv20[lag],
            inputs.neg_ret_d[lag],
            inputs.neg_ret_w[lag],
            inputs.neg_ret_m[lag],
        ]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return np.column_stack([np.ones(len(t_idx))] + cols)


def fit_linear_har(
    inputs: HarInputs, targets, variant: str, t_start: int | None = None, t_end: int | None = None
) -> LinearHarFit:
    """OLS fit of one linear variant over target days [t_start, t_end).

    ``targets`` is the full RV series on the same axis as ``inputs``; the
    target at day t is regressed on aggregates observed at day t-1. The
    default window is every day with valid aggregates.
    """
    targets = np.asarray(targets, dtype=np.float64)
    t_start = inputs.valid_from + 1 if t_start is None else t_start
    t_end = len(targets) if t_end is None else t_end
    if t_start <= inputs.valid_from:
        raise EstimationError(f"t_start must exceed valid_from={inputs.valid_from}")
    t_idx = np.arange(t_start, t_end)
    p = _N_COEFFS[variant]
    if len(t_idx) < 2 * p:
        raise EstimationError(
            f"{variant}: need >= {2 * p} observations, got {len(t_idx)}"
        )
    x = _regressor_matrix(inputs, variant, t_idx)
    ytgt = targets[t_idx]
    if variant == "sqrthar":
        ytgt = np.sqrt(ytgt)
    if np.linalg.matrix_rank(x) < p:
        raise EstimationError(f"{variant}: rank-deficient design (collinear inputs)")
    coeffs, _, _, _ = np.linalg.lstsq(x, ytgt, rcond=None)
    resid = ytgt - x @ coeffs
    dof = len(t_idx) - p
    return LinearHarFit(
        variant=variant,
        coeffs=coeffs,
        residual_variance=float(resid @ resid / dof) if dof > 0 else 0.0,
        n_obs=len(t_idx),
    )


def forecast_rv(fit: LinearHarFit, inputs: HarInputs, t_obs: int) -> float:
    """One-step RV forecast for day t_obs + 1 from aggregates observed at t_obs.

    The sqrt variant predicts sqrt(RV) and squares back; every forecast is
    floored at a small positive value so downstream sqrt() stays finite.
    """
    if t_obs < inputs.valid_from:
        raise EstimationError(f"aggregates at day {t_obs} undefined (valid_from={inputs.valid_from})")
    row = _regressor_matrix(inputs, fit.variant, np.array([t_obs + 1]))[0]
    pred = float(row @ fit.coeffs)
    if fit.variant == "sqrthar":
        pred = pred * pred
    return max(pred, RV_FLOOR)


# --------------------------------------------------------------------------
# realized HAR-GARCH
# --------------------------------------------------------------------------

RHG_PARAM_NAMES = (
    "mu", "omega", "beta", "gamma_d", "gamma_w", "gamma_m",
    "xi", "phi", "tau1", "tau2", "sigma_u2",
)


@dataclass(frozen=True)
class RharGarchFit:
    mu: float
    omega: float
    beta: float
    gamma_d: float
    gamma_w: float
    gamma_m: float
    xi: float
    phi: float
    tau1: float
    tau2: float
    sigma_u2: float
    h_path: np.ndarray = field(repr=False)
    t_start: int = 0
    loglik: float = float("nan")
    converged: bool = True
    n_obs: int = 0

    def params(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in RHG_PARAM_NAMES])

    def to_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in RHG_PARAM_NAMES}
        d.update(loglik=float(self.loglik), converged=bool(self.converged), n_obs=int(self.n_obs))
        return d


def _rhg_filter(params, y, rv_d, rv_w, rv_m, t_start, t_end, h0):
    """Conditional-variance path over [t_start, t_end).

    h_t = omega + beta*h_{t-1} + gamma.(RV aggregates at t-1); a first-order
    linear recursion, so the whole path comes out of one IIR filter call.
    """
    mu, omega, beta, gd, gw, gm = params[:6]
    drive = (
        omega
        + gd * rv_d[t_start - 1 : t_end - 1]
        + gw * rv_w[t_start - 1 : t_end - 1]
        + gm * rv_m[t_start - 1 : t_end - 1]
    )
    h, _ = lfilter([1.0], [1.0, -beta], drive, zi=np.array([beta * h0]))
    return h


def _rhg_neg_loglik(params, y, rv_d, rv_w, rv_m, t_start, t_end, h0):
    mu, omega, beta, gd, gw, gm, xi, phi, tau1, tau2, su2 = params
    if su2 <= 0 or omega <= 0 or beta < 0 or gd < 0 or gw < 0 or gm < 0 or beta >= 1:
        return 1e12
    h = _rhg_filter(params, y, rv_d, rv_w, rv_m, t_start, t_end, h0)
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        # penalized, not fatal: keeps derivative-free search inside the valid region
        return 1e12
    yw = y[t_start:t_end]
    rvw = rv_d[t_start:t_end]
    z = (yw - mu) / np.sqrt(h)
    u = rvw - xi - phi * h - tau1 * z - tau2 * (z * z - 1.0)
    n = t_end - t_start
    ll = -0.5 * np.sum(np.log(h) + z * z) - 0.5 * np.sum(u * u) / su2 - 0.5 * n * math.log(su2)
    ll -= n * math.log(2.0 * math.pi)
    return -ll if np.isfinite(ll) else 1e12


def _rhg_pack(params):
    """Map natural parameters to the unconstrained search space."""
    mu, omega, beta, gd, gw, gm, xi, phi, tau1, tau2, su2 = params
    eps = 1e-12
    return np.array([
        mu, math.log(max(omega, eps)),
        math.log(max(beta, eps) / max(1.0 - beta, eps)),
        math.log(max(gd, eps)), math.log(max(gw, eps)), math.log(max(gm, eps)),
        xi, phi, tau1, tau2, math.log(max(su2, eps)),
    ])


def _rhg_unpack(w):
    return np.array([
        w[0], math.exp(w[1]),
        1.0 / (1.0 + math.exp(-w[2])),
        math.exp(w[3]), math.exp(w[4]), math.exp(w[5]),
        w[6], w[7], w[8], w[9], math.exp(w[10]),
    ])


def _rhg_initial_guess(y, rv_d, t_start, t_end):
    yw = y[t_start:t_end]
    rvw = rv_d[t_start:t_end]
    vy = float(np.var(yw))
    mrv = float(np.mean(rvw))
    return np.array([
        float(np.mean(yw)), 0.1 * vy, 0.5, 0.15, 0.15, 0.1,
        0.1 * mrv, 0.8, 0.0, 0.0, max(0.25 * float(np.var(rvw)), 1e-4),
    ])


def fit_rhargarch(
    series: MarketSeries,
    inputs: HarInputs,
    t_start: int | None = None,
    t_end: int | None = None,
    n_restarts: int = 10,
    seed: int = 0,
    x0: np.ndarray | None = None,
) -> RharGarchFit:
    """Quasi-maximum-likelihood fit of the realized HAR-GARCH model.

    Derivative-free simplex search with ``n_restarts`` randomized starts;
    positivity of omega/gammas/sigma_u2 and beta in (0,1) is enforced by a
    log/logit reparameterization. ``x0`` (natural scale) warm-starts the
    first run. Non-convergence is reported through ``converged`` on the best
    iterate rather than raised.
    """
    y, rv_d, rv_w, rv_m = series.returns, inputs.rv_d, inputs.rv_w, inputs.rv_m
    t_start = inputs.valid_from + 1 if t_start is None else t_start
    t_end = len(y) if t_end is None else t_end
    n = t_end - t_start
    if n < 250:
        raise EstimationError(f"rhargarch needs >= 250 in-sample observations, got {n}")
    h0 = float(np.var(y[t_start:t_end]))

    args = (y, rv_d, rv_w, rv_m, t_start, t_end, h0)

    def objective(w):
        return _rhg_neg_loglik(_rhg_unpack(w), *args)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9A6]))
    base = _rhg_pack(x0 if x0 is not None else _rhg_initial_guess(y, rv_d, t_start, t_end))
    best, best_val, any_ok = None, np.inf, False
    for k in range(max(n_restarts, 1)):
        w0 = base if k == 0 else base + rng.normal(0.0, 0.35, size=len(base))
        res = minimize(objective, w0, method="Nelder-Mead",
                       options={"maxiter": 4000, "xatol": 1e-7, "fatol": 1e-9})
        if res.fun < best_val:
            best, best_val = res.x, res.fun
            any_ok = any_ok or bool(res.success)
    # polish the winner
    res = minimize(objective, best, method="Nelder-Mead",
                   options={"maxiter": 4000, "xatol": 1e-8, "fatol": 1e-10})
    if res.fun < best_val:
        best, best_val = res.x, res.fun
    converged = any_ok or bool(res.success)

    params = _rhg_unpack(best)
    h = _rhg_filter(params, *args)
    return RharGarchFit(
        **dict(zip(RHG_PARAM_NAMES, params)),
        h_path=h,
        t_start=t_start,
        loglik=-best_val,
        converged=converged,
        n_obs=n,
    )


def rhargarch_forecast_variance(fit: RharGarchFit, inputs: HarInputs, t_obs: int) -> float:
    """One-step conditional variance h_{t_obs+1} from the fitted recursion."""
    if t_obs < fit.t_start or t_obs - fit.t_start >= len(fit.h_path):
        raise EstimationError(f"day {t_obs} outside the filtered range")
    h_t = float(fit.h_path[t_obs - fit.t_start])
    return (
        fit.omega
        + fit.beta * h_t
        + fit.gamma_d * float(inputs.rv_d[t_obs])
        + fit.gamma_w * float(inputs.rv_w[t_obs])
        + fit.gamma_m * float(inputs.rv_m[t_obs])
    )


def rhargarch_standard_errors(
    fit: RharGarchFit, series: MarketSeries, inputs: HarInputs,
    t_end: int | None = None,
) -> np.ndarray:
    """Asymptotic standard errors from the numerically inverted Hessian."""
    y, rv_d, rv_w, rv_m = series.returns, inputs.rv_d, inputs.rv_w, inputs.rv_m
    t_start = fit.t_start
    t_end = len(y) if t_end is None else t_end
    h0 = float(np.var(y[t_start:t_end]))
    args = (y, rv_d, rv_w, rv_m, t_start, t_end, h0)
    p = fit.params()
    k = len(p)
    steps = np.maximum(np.abs(p), 0.05) * 1e-3
    hess = np.empty((k, k))

    def f(q):
        return _rhg_neg_loglik(q, *args)

    f0 = f(p)
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k); ei[i] = steps[i]
            ej = np.zeros(k); ej[j] = steps[j]
            if i == j:
                val = (f(p + ei) - 2.0 * f0 + f(p - ei)) / steps[i] ** 2
            else:
                val = (
                    f(p + ei + ej) - f(p + ei - ej) - f(p - ei + ej) + f(p - ei - ej)
                ) / (4.0 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = val
    try:
        cov = np.linalg.inv(hess)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(k, np.nan)
    return se
