"""VaR forecast evaluation: quantile score, violation rate, DQ tests, tail loss.

Conventions follow the defining formulas literally: the violation rate uses
the strict indicator 1[r_t < q_t]; the mean quantile score uses
1[y_t <= q_t] (the two differ only on ties, where the score factor is zero
anyway). DQ regresses centered hits on an intercept, lagged hits and the
VaR value itself, and refers the projection statistic to a chi-square with
one degree of freedom per regressor column.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

from .errors import ConfigError, DataError

DQ_VARIANTS = ("DQ1", "DQ2", "DQ3", "DQ4")
DQ_LAGS = {"DQ1": 1, "DQ2": 2, "DQ3": 3, "DQ4": 4}
DQ_REJECT_LEVEL = 0.05
_DQ_RIDGE = 1e-10


@dataclass
class DqResult:
    statistic: float
    dof: int
    p_value: float
    ridged: bool = False


@dataclass
class BacktestReport:
    """All evaluation metrics for one (model, alpha) forecast path."""

    model_id: str
    alpha: float
    qs: float
    vrate: float
    vrate_ratio: float
    dq: dict
    tail_loss_ratio: float
    tail_loss_defined: bool
    n_test: int
    fallback_days: int = 0

    def dq_rejections(self, level: float = DQ_REJECT_LEVEL) -> int:
        return sum(1 for r in self.dq.values() if r.p_value < level)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "alpha": self.alpha,
            "qs": self.qs,
            "vrate": self.vrate,
            "vrate_ratio": self.vrate_ratio,
            "dq": {
                k: {
                    "statistic": r.statistic,
                    "dof": r.dof,
                    "p_value": r.p_value,
                    "ridged": r.ridged,
                }
                for k, r in self.dq.items()
            },
            "tail_loss_ratio": self.tail_loss_ratio,
            "tail_loss_defined": self.tail_loss_defined,
            "n_test": self.n_test,
            "fallback_days": self.fallback_days,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def _check_paths(returns, q_hat):
    y = np.asarray(returns, dtype=np.float64)
    q = np.asarray(q_hat, dtype=np.float64)
    if y.shape != q.shape or y.ndim != 1:
        raise DataError(f"returns and forecasts must be equal-length 1-d arrays, got {y.shape} vs {q.shape}")
    if len(y) < 1:
        raise DataError("empty forecast path")
    return y, q


def mean_quantile_score(returns, q_hat, alpha: float) -> float:
    """(1/T) sum (y_t - q_t)(alpha - 1[y_t <= q_t])."""
    y, q = _check_paths(returns, q_hat)
    e = y - q
    return float(np.mean(np.where(e > 0.0, alpha * e, (alpha - 1.0) * e)))


def vrate(returns, q_hat, alpha: float | None = None):
    """Fraction of days with r_t strictly below the forecast.

    Returns (rate, rate/alpha) when alpha is given, else the rate alone.
    """
    y, q = _check_paths(returns, q_hat)
    rate = float(np.mean(y < q))
    if alpha is None:
        return rate
    return rate, rate / alpha


def chi2_upper_tail(statistic: float, dof: int) -> float:
    """Upper-tail probability of a chi-square distribution."""
    if statistic < 0:
        raise ValueError("chi-square statistic must be >= 0")
    return float(gammaincc(dof / 2.0, statistic / 2.0))


def dq_test(returns, q_hat, alpha: float, variant: str = "DQ1") -> DqResult:
    """Regression-based test that VaR violations are unpredictable.

    Builds H_t = 1[y_t < q_t] - alpha, regressors (1, H_{t-1}, ..., H_{t-k},
    q_t) with k lags per variant, and the statistic
    H'W (W'W)^-1 W'H / (alpha (1 - alpha)), chi-square with one dof per
    column of W. A singular cross-product gets a tiny ridge and is flagged.
    """
    if variant not in DQ_VARIANTS:
        raise ConfigError(f"unknown DQ variant {variant!r}")
    y, q = _check_paths(returns, q_hat)
    k = DQ_LAGS[variant]
    n_cols = k + 2
    if len(y) <= 4 + n_cols:
        raise DataError(f"{variant} needs more than {4 + n_cols} observations, got {len(y)}")
    hits = (y < q).astype(np.float64) - alpha
    h = hits[k:]
    cols = [np.ones(len(h))]
    cols += [hits[k - lag : len(hits) - lag] for lag in range(1, k + 1)]
    cols.append(q[k:])
    w = np.column_stack(cols)

    wtw = w.T @ w
    wth = w.T @ h
    ridged = False
    try:
        sol = np.linalg.solve(wtw, wth)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.solve(wtw + _DQ_RIDGE * np.eye(n_cols), wth)
        ridged = True
    stat = float(wth @ sol) / (alpha * (1.0 - alpha))
    stat = max(stat, 0.0)
    return DqResult(statistic=stat, dof=n_cols, p_value=chi2_upper_tail(stat, n_cols), ridged=ridged)


def tail_loss_ratio(returns, q_hat):
    """sum max(0, y_t - q_t) / sum y_t; flagged undefined when sum y_t == 0.

    Returns (ratio, defined). The ratio keeps the literal sign of the
    denominator (it can be negative when the test-window returns sum to a
    loss); flagged undefined instead of raising when the denominator is 0.
    """
    y, q = _check_paths(returns, q_hat)
    denom = float(np.sum(y))
    num = float(np.sum(np.maximum(0.0, y - q)))
    if denom == 0.0:
        return math.nan, False
    return num / denom, True


def evaluate(run, model_id: str | None = None) -> BacktestReport:
    """Full report for one ForecastRun (or any object with returns/q_hat/alpha)."""
    y = np.asarray(run.returns, dtype=np.float64)
    q = np.asarray(run.q_hat, dtype=np.float64)
    alpha = float(run.alpha)
    rate, ratio = vrate(y, q, alpha)
    tlr, defined = tail_loss_ratio(y, q)
    return BacktestReport(
        model_id=model_id or run.model_id,
        alpha=alpha,
        qs=mean_quantile_score(y, q, alpha),
        vrate=rate,
        vrate_ratio=ratio,
        dq={v: dq_test(y, q, alpha, v) for v in DQ_VARIANTS},
        tail_loss_ratio=tlr,
        tail_loss_defined=defined,
        n_test=len(y),
        fallback_days=len(getattr(run, "fallback_days", ())),
    )


@dataclass
class ComparisonTable:
    """Cross-model ranking at one quantile level."""

    alpha: float
    rows: list = field(default_factory=list)  # one dict per model
    favoured: dict = field(default_factory=dict)  # metric -> list of model ids
    ties: dict = field(default_factory=dict)  # metric -> bool

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "rows": self.rows,
            "favoured": self.favoured,
            "ties": self.ties,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path) -> None:
        import csv

        metrics = ["qs", "vrate", "vrate_ratio", "dq_rejections", "tail_loss_ratio"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["model_id"] + metrics + [f"favoured_{m}" for m in self.favoured])
            for row in self.rows:
                w.writerow(
                    [row["model_id"]]
                    + [repr(row[m]) for m in metrics]
                    + [int(row["model_id"] in self.favoured[m]) for m in self.favoured]
                )


def _mark_min(values: dict) -> list:
    finite = {k: v for k, v in values.items() if v is not None and math.isfinite(v)}
    if not finite:
        return []
    best = min(finite.values())
    return [k for k, v in finite.items() if v == best]


def compare(reports) -> ComparisonTable:
    """Rank >= 2 same-alpha reports: lowest QS, VRate/alpha closest to 1,
    fewest DQ rejections at 5%, lowest tail loss ratio among defined values.
    Ties mark every tied model.
    """
    reports = list(reports)
    if len(reports) < 2:
        raise ConfigError("compare needs at least two reports")
    alphas = {r.alpha for r in reports}
    if len(alphas) != 1:
        raise ConfigError(f"compare requires a single alpha level, got {sorted(alphas)}")
    alpha = reports[0].alpha

    rows = []
    for r in reports:
        rows.append(
            {
                "model_id": r.model_id,
                "qs": r.qs,
                "vrate": r.vrate,
                "vrate_ratio": r.vrate_ratio,
                "dq_rejections": r.dq_rejections(),
                "tail_loss_ratio": r.tail_loss_ratio if r.tail_loss_defined else None,
            }
        )
    favoured = {
        "qs": _mark_min({r["model_id"]: r["qs"] for r in rows}),
        "vrate_ratio": _mark_min({r["model_id"]: abs(r["vrate_ratio"] - 1.0) for r in rows}),
        "dq_rejections": _mark_min({r["model_id"]: float(r["dq_rejections"]) for r in rows}),
        "tail_loss_ratio": _mark_min(
            {r["model_id"]: r["tail_loss_ratio"] for r in rows if r["tail_loss_ratio"] is not None}
        ),
    }
    ties = {metric: len(winners) > 1 for metric, winners in favoured.items()}
    return ComparisonTable(alpha=alpha, rows=rows, favoured=favoured, ties=ties)
