"""Pure-numpy reference implementation of the hot kernels.

Loops over time (the recurrence is inherently sequential) and vectorizes
across particles. Semantics are identical to the compiled backend in
``_core.pyx``; the compiled module is preferred at import when available.
"""

import numpy as np

BACKEND = "python"


def batch_loss(theta, rv_d, rv_w, rv_m, y, t_start, t_end, alpha, h0):
    """Aggregate quantile loss and final hidden state for a batch of parameter vectors.

    For each day t in [t_start, t_end) the three recurrent cells are advanced
    using the realized-measure aggregates observed at t-1,

        h_t[x] = tanh(a0[x] + a1[x] * rv_x[t-1] + a2[x] * h_{t-1}[x]),

    the VaR value q_t = b0 + b1*h_t[d] + b2*h_t[w] + b3*h_t[m] is formed, and
    the check loss (y[t] - q_t)(alpha - 1[y[t] < q_t]) is accumulated.

    Parameters
    ----------
    theta : (M, 13) array
        Rows are parameter vectors laid out as
        [b0, b1, b2, b3, a0_d, a1_d, a2_d, a0_w, a1_w, a2_w, a0_m, a1_m, a2_m].
    rv_d, rv_w, rv_m, y : (T,) arrays
        Realized-measure aggregates and returns on a shared global time axis.
    t_start, t_end : int
        Half-open scored window; requires t_start >= 1.
    alpha : float
        Quantile level in (0, 1).
    h0 : (M, 3) array
        Hidden state at day t_start - 1.

    Returns
    -------
    loss : (M,) array
    h_out : (M, 3) array
        Hidden state at day t_end - 1.
    """
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if t_start < 1:
        raise ValueError("t_start must be >= 1 (the recursion reads day t-1)")
    if t_end > len(y):
        raise ValueError("t_end exceeds the data length")
    m = theta.shape[0]
    b0, b1, b2, b3 = (theta[:, k] for k in range(4))
    a0d, a1d, a2d = (theta[:, 4 + k] for k in range(3))
    a0w, a1w, a2w = (theta[:, 7 + k] for k in range(3))
    a0m, a1m, a2m = (theta[:, 10 + k] for k in range(3))

    hd = np.array(h0[:, 0], dtype=np.float64)
    hw = np.array(h0[:, 1], dtype=np.float64)
    hm = np.array(h0[:, 2], dtype=np.float64)
    loss = np.zeros(m)
    for t in range(t_start, t_end):
        hd = np.tanh(a0d + a1d * rv_d[t - 1] + a2d * hd)
        hw = np.tanh(a0w + a1w * rv_w[t - 1] + a2w * hw)
        hm = np.tanh(a0m + a1m * rv_m[t - 1] + a2m * hm)
        q = b0 + b1 * hd + b2 * hw + b3 * hm
        e = y[t] - q
        loss += np.where(e >= 0.0, alpha * e, (alpha - 1.0) * e)
    h_out = np.column_stack([hd, hw, hm])
    return loss, h_out


def batch_step(theta, rvd_t, rvw_t, rvm_t, h):
    """Advance every particle's hidden state one day; return (h_new, q).

    ``q`` is the VaR value implied by the advanced state, i.e. the one-step
    forecast made from the day whose aggregates are passed in.
    """
    theta = np.asarray(theta, dtype=np.float64)
    hd = np.tanh(theta[:, 4] + theta[:, 5] * rvd_t + theta[:, 6] * h[:, 0])
    hw = np.tanh(theta[:, 7] + theta[:, 8] * rvw_t + theta[:, 9] * h[:, 1])
    hm = np.tanh(theta[:, 10] + theta[:, 11] * rvm_t + theta[:, 12] * h[:, 2])
    q = theta[:, 0] + theta[:, 1] * hd + theta[:, 2] * hw + theta[:, 3] * hm
    return np.column_stack([hd, hw, hm]), q
