"""Recurrent HAR quantile model: forward VaR recursion and check loss.

The model maps daily/weekly/monthly realized-variance aggregates through
three scalar tanh cells and combines the hidden states linearly into a
one-step-ahead VaR value:

    h_t[x] = tanh(a0[x] + a1[x] * rv_x[t-1] + a2[x] * h_{t-1}[x]),  x in {d, w, m}
    q_t    = b0 + b1*h_t[d] + b2*h_t[w] + b3*h_t[m]

so q_t depends only on information observable at day t-1. Training is
simulation-based (see ``inference``); this module is purely deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import HarInputs
from .errors import DataError

N_PARAMS = 13

# Layout of the flat parameter vector.
BETA = slice(0, 4)
CELL_D = slice(4, 7)
CELL_W = slice(7, 10)
CELL_M = slice(10, 13)


@dataclass(frozen=True)
class RnnHarParams:
    """The 13 model parameters: output weights plus one (a0, a1, a2) per cell."""

    beta: np.ndarray
    cell_d: np.ndarray
    cell_w: np.ndarray
    cell_m: np.ndarray

    def __post_init__(self):
        for name, n in (("beta", 4), ("cell_d", 3), ("cell_w", 3), ("cell_m", 3)):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, v)

    @classmethod
    def from_vector(cls, v) -> "RnnHarParams":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (N_PARAMS,):
            raise ValueError(f"parameter vector must have shape ({N_PARAMS},)")
        return cls(beta=v[BETA], cell_d=v[CELL_D], cell_w=v[CELL_W], cell_m=v[CELL_M])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.cell_d, self.cell_w, self.cell_m])

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "cell_d": self.cell_d.tolist(),
            "cell_w": self.cell_w.tolist(),
            "cell_m": self.cell_m.tolist(),
        }


@dataclass
class VarForecastPath:
    """Per-day VaR values plus the hidden state at the last processed day."""

    q: np.ndarray
    final_hidden: np.ndarray
    alpha: float | None = None
    t_start: int = 0
    t_end: int = 0


def _check_range(inputs: HarInputs, t_start: int, t_end: int):
    if t_start <= inputs.valid_from:
        raise DataError(
            f"window start {t_start} needs aggregates at day {t_start - 1}, "
            f"before valid_from={inputs.valid_from}"
        )
    if t_end > len(inputs.rv_d):
        raise DataError(f"window end {t_end} exceeds input length {len(inputs.rv_d)}")
    if t_end <= t_start:
        raise DataError("empty time window")


def forward(
    params: RnnHarParams,
    inputs: HarInputs,
    t_start: int,
    t_end: int,
    init_hidden=None,
    alpha: float | None = None,
) -> VarForecastPath:
    """Run the recursion over days [t_start, t_end) and return the VaR path.

    ``q[i]`` is the VaR for day ``t_start + i``, computed from aggregates at
    day ``t_start + i - 1``; the recursion is strictly causal. Hidden states
    start at ``init_hidden`` (zeros when omitted) and the state at day
    ``t_end - 1`` is returned so a caller can continue the recursion.

    Implemented as a scalar python loop with ``math.tanh``: this is the
    reference path (used by tests and single-parameter evaluations); batch
    evaluation over many parameter vectors goes through ``_kernels``.
    """
    _check_range(inputs, t_start, t_end)
    if init_hidden is None:
        hd = hw = hm = 0.0
    else:
        hd, hw, hm = (float(x) for x in init_hidden)
        if not (abs(hd) < 1.0 and abs(hw) < 1.0 and abs(hm) < 1.0):
            raise ValueError("init_hidden components must lie in (-1, 1)")
    b0, b1, b2, b3 = (float(x) for x in params.beta)
    a0d, a1d, a2d = (float(x) for x in params.cell_d)
    a0w, a1w, a2w = (float(x) for x in params.cell_w)
    a0m, a1m, a2m = (float(x) for x in params.cell_m)
    rv_d, rv_w, rv_m = inputs.rv_d, inputs.rv_w, inputs.rv_m

    q = np.empty(t_end - t_start)
    for i, t in enumerate(range(t_start, t_end)):
        hd = math.tanh(a0d + a1d * rv_d[t - 1] + a2d * hd)
        hw = math.tanh(a0w + a1w * rv_w[t - 1] + a2w * hw)
        hm = math.tanh(a0m + a1m * rv_m[t - 1] + a2m * hm)
        q[i] = b0 + b1 * hd + b2 * hw + b3 * hm
    return VarForecastPath(
        q=q,
        final_hidden=np.array([hd, hw, hm]),
        alpha=alpha,
        t_start=t_start,
        t_end=t_end,
    )


def quantile_score(y, q, alpha: float):
    """Check loss (y - q) * (alpha - 1[y < q]); nonnegative, zero iff y == q.

    Accepts scalars or arrays (broadcast).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    e = np.asarray(y, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    out = np.where(e >= 0.0, alpha * e, (alpha - 1.0) * e)
    return float(out) if out.ndim == 0 else out


def aggregate_loss(
    params: RnnHarParams,
    inputs: HarInputs,
    returns,
    t_start: int,
    t_end: int,
    alpha: float,
    init_hidden=None,
) -> float:
    """Total check loss of the model's VaR path against returns over the window."""
    path = forward(params, inputs, t_start, t_end, init_hidden=init_hidden)
    y = np.asarray(returns, dtype=np.float64)[t_start:t_end]
    return float(np.sum(quantile_score(y, path.q, alpha)))


def batch_loss(theta, inputs: HarInputs, returns, t_start: int, t_end: int,
               alpha: float, h0=None):
    """Aggregate loss + final hidden state for a (M, 13) batch of parameter rows.

    Dispatches to the selected kernel backend; semantics match running
    :func:`forward` + :func:`quantile_score` per row.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    _check_range(inputs, t_start, t_end)
    if h0 is None:
        h0 = np.zeros((theta.shape[0], 3))
    y = np.ascontiguousarray(returns, dtype=np.float64)
    return _kernels.batch_loss(
        theta, inputs.rv_d, inputs.rv_w, inputs.rv_m, y, t_start, t_end, alpha, h0
    )


def batch_step(theta, inputs: HarInputs, t_obs: int, h):
    """One-day advance for a particle batch using aggregates observed at t_obs.

    Returns (h_new, q) where q is the VaR forecast for day t_obs + 1.
    """
    if t_obs < 0 or t_obs >= len(inputs.rv_d):
        raise DataError(f"t_obs={t_obs} outside the data range")
    if t_obs < inputs.valid_from:
        raise DataError(f"aggregates at day {t_obs} are undefined (valid_from={inputs.valid_from})")
    return _kernels.batch_step(
        np.atleast_2d(np.asarray(theta, dtype=np.float64)),
        float(inputs.rv_d[t_obs]),
        float(inputs.rv_w[t_obs]),
        float(inputs.rv_m[t_obs]),
        np.atleast_2d(np.asarray(h, dtype=np.float64)),
    )
