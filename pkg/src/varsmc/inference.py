"""Loss-based generalized Bayesian inference via sequential Monte Carlo.

The working likelihood is the product of asymmetric-Laplace densities of the
returns at the model-implied VaR path, with the AL scale integrated out
against an inverse-Gamma(a, b) prior. That integral is available in closed
form: with n scored days and aggregate check loss S(theta),

    p(y | theta) = (alpha(1-alpha))^n * b^a * Gamma(n+a)
                   / (Gamma(a) * (S + b)^(n+a)),

so the whole posterior geometry flows through S. Two samplers share the
reweight / resample / move machinery:

* likelihood annealing: bridges prior -> posterior through tempered targets
  p(y|theta)^gamma p(theta) with gamma chosen adaptively so the effective
  sample size lands on c*M at each level; used on the in-sample window.
* data annealing: absorbs one observation per step, reweighting by the
  predictive factor p(y_t | y_{1:t-1}, theta); used to track the posterior
  through the test window.

Both trigger resample + random-walk Metropolis moves only when the ESS
drops below c*M. All weight arithmetic is in log space; all randomness is
drawn from counter-based Philox streams keyed by (seed, purpose, level), so
runs are reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import rnn_har
from .data import HarInputs
from .errors import ConfigError, DataError, NumericalError
from .rnn_har import N_PARAMS, RnnHarParams

_TAG_PRIOR = 1
_TAG_RESAMPLE = 2
_TAG_PROPOSAL = 3

_PRIOR_JUMP_TOL = 1e-12


@dataclass(frozen=True)
class Prior:
    """Independent zero-mean normal priors plus the inverse-Gamma scale prior.

    The nine recurrent-cell parameters get sd ``recurrent_sd`` (default 0.1,
    variance 0.01); the four output weights get sd ``beta_sd`` (default 1);
    ``sigma_ig`` holds the (shape, scale) of the inverse-Gamma prior on the
    AL scale that is integrated out analytically.
    """

    recurrent_sd: float = 0.1
    beta_sd: float = 1.0
    sigma_ig: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.recurrent_sd <= 0 or self.beta_sd <= 0:
            raise ConfigError("prior standard deviations must be positive")
        a, b = self.sigma_ig
        if a <= 0 or b <= 0:
            raise ConfigError("inverse-Gamma hyperparameters must be positive")

    @property
    def sd_vector(self) -> np.ndarray:
        sd = np.empty(N_PARAMS)
        sd[rnn_har.BETA] = self.beta_sd
        sd[4:] = self.recurrent_sd
        return sd


@dataclass(frozen=True)
class SmcConfig:
    particles: int = 2000
    ess_frac: float = 0.8
    mh_steps_lik: int = 10
    mh_steps_data: int = 20
    max_levels: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.ess_frac < 1.0:
            raise ConfigError("ess_frac must lie strictly between 0 and 1")
        for name in ("particles", "mh_steps_lik", "mh_steps_data", "max_levels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.particles < 2:
            raise ConfigError("particles must be >= 2")

    @property
    def ess_target(self) -> float:
        return self.ess_frac * self.particles


@dataclass
class LevelRecord:
    """One line of the sampler diagnostics trace."""

    level: int
    kind: str  # "anneal" or "data"
    gamma: float
    t_horizon: int
    ess: float
    resampled: bool
    acceptance: float  # mean MH acceptance rate; NaN when no move ran


@dataclass
class ParticleCloud:
    """Weighted particle approximation of a generalized posterior.

    Alongside the particles and normalized log weights, the cloud caches the
    per-particle aggregate loss, log likelihood, log prior and hidden state
    at the current data horizon so the samplers never recompute a quantity
    the last kernel pass already produced. ``seed``/``level`` identify the
    reproducibility stream; ``level`` advances by one per annealing level or
    absorbed observation.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    gamma: float = 1.0
    t_first: int = 0
    t_horizon: int = 0
    hidden: np.ndarray | None = None
    loss: np.ndarray | None = None
    log_lik: np.ndarray | None = None
    log_prior_vec: np.ndarray | None = None
    seed: int = 0
    level: int = 0
    free_mask: np.ndarray | None = None
    theta_base: np.ndarray | None = None
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=np.float64))
        m = self.particles.shape[0]
        if m < 2:
            raise ValueError("a particle cloud needs M >= 2")
        if self.particles.shape[1] != N_PARAMS:
            raise ValueError(f"particles must have {N_PARAMS} columns")
        self.log_weights = np.asarray(self.log_weights, dtype=np.float64)
        if self.hidden is None:
            self.hidden = np.zeros((m, 3))
        if self.loss is None:
            self.loss = np.zeros(m)
        if self.log_lik is None:
            self.log_lik = np.zeros(m)
        if self.log_prior_vec is None:
            self.log_prior_vec = np.zeros(m)
        if self.free_mask is None:
            self.free_mask = np.ones(N_PARAMS, dtype=bool)
        if self.theta_base is None:
            self.theta_base = np.zeros(N_PARAMS)

    @property
    def m(self) -> int:
        return self.particles.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def ess_value(self) -> float:
        return float(np.exp(-logsumexp(2.0 * self.log_weights)))

    def posterior_mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def posterior_sd(self) -> np.ndarray:
        mean = self.posterior_mean()
        var = self.weights @ (self.particles - mean) ** 2
        return np.sqrt(var)

    def validate(self):
        if not np.all(np.isfinite(self.particles)):
            raise NumericalError("non-finite particle values")
        if abs(np.sum(self.weights) - 1.0) > 1e-12:
            raise NumericalError("weights are not normalized")


def _stream(seed: int, tag: int, level: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0x7FFFFFFF, tag, int(level)])
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------
# likelihood, prior, weights
# --------------------------------------------------------------------------


def log_ml_from_loss(loss, n: int, alpha: float, sigma_ig) -> np.ndarray:
    """Closed-form integrated-scale log likelihood as a function of the loss."""
    a, b = sigma_ig
    loss = np.asarray(loss, dtype=np.float64)
    if not np.all(np.isfinite(loss)):
        raise NumericalError("non-finite aggregate loss")
    const = (
        n * math.log(alpha * (1.0 - alpha))
        + a * math.log(b)
        - math.lgamma(a)
        + math.lgamma(n + a)
    )
    return const - (n + a) * np.log(loss + b)


def log_marginal_likelihood(
    params: RnnHarParams,
    inputs: HarInputs,
    returns,
    t_start: int,
    t_end: int,
    alpha: float,
    prior: Prior | None = None,
) -> float:
    """log p(y_{t_start:t_end} | theta) with the AL scale integrated out."""
    prior = prior or Prior()
    if t_end == t_start:
        return 0.0
    loss = rnn_har.aggregate_loss(params, inputs, returns, t_start, t_end, alpha)
    return float(log_ml_from_loss(loss, t_end - t_start, alpha, prior.sigma_ig))


def log_prior(params, prior: Prior | None = None) -> float:
    """Sum of independent normal log densities over all 13 parameters."""
    prior = prior or Prior()
    v = params.to_vector() if isinstance(params, RnnHarParams) else np.asarray(params, dtype=np.float64)
    sd = prior.sd_vector
    return float(-0.5 * np.sum((v / sd) ** 2 + np.log(2.0 * math.pi * sd * sd)))


def ess(weights) -> float:
    """Effective sample size 1 / sum(w^2) of normalized weights."""
    w = np.asarray(weights, dtype=np.float64)
    if abs(float(np.sum(w)) - 1.0) > 1e-9:
        raise ValueError("weights must be normalized to sum to 1")
    return float(1.0 / np.sum(w * w))


def normalize_log_weights(log_w) -> np.ndarray:
    """Renormalize log weights by max-subtraction; error on total degeneracy."""
    lw = np.asarray(log_w, dtype=np.float64)
    if np.all(np.isneginf(lw)) or np.all(np.isnan(lw)):
        raise NumericalError("all particle weights vanished (total degeneracy)")
    return lw - logsumexp(lw)


def reweight(cloud: ParticleCloud, increments) -> ParticleCloud:
    """Apply per-particle log-weight increments and renormalize in place."""
    inc = np.asarray(increments, dtype=np.float64)
    if np.any(np.isnan(inc)) or np.any(np.isposinf(inc)):
        raise NumericalError("log-weight increments must be finite or -inf")
    cloud.log_weights = normalize_log_weights(cloud.log_weights + inc)
    return cloud


def _ess_from_log(lw: np.ndarray) -> float:
    return float(np.exp(-logsumexp(2.0 * lw)))


def next_temperature(cloud: ParticleCloud, target: float) -> float:
    """Smallest temperature increase whose reweighted ESS lands on ``target``.

    Bisects on the ESS of the candidate weights W * p(y|theta)^(g - gamma);
    returns 1.0 outright when even the full jump keeps ESS at or above the
    target. The returned level sits on the at-or-below-target side of the
    crossing (within +-1), so the resample trigger fires on interior levels.
    """
    if cloud.gamma >= 1.0:
        raise ValueError("temperature schedule already complete")
    lw, ll, gamma = cloud.log_weights, cloud.log_lik, cloud.gamma

    def candidate_ess(g: float) -> float:
        return _ess_from_log(normalize_log_weights(lw + (g - gamma) * ll))

    if candidate_ess(1.0) >= target - _PRIOR_JUMP_TOL:
        return 1.0
    lo, hi = gamma, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        e = candidate_ess(mid)
        if e <= target:
            hi = mid
            if e >= target - 1.0:
                return mid
        else:
            lo = mid
        if hi - lo < 1e-14:
            break
    return hi


def systematic_resample_indices(weights: np.ndarray, u: float, n_out: int | None = None) -> np.ndarray:
    """Systematic resampling: offspring counts are floor/ceil of n_out * w."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise NumericalError("degenerate weights in resampling")
    total = float(np.sum(w))
    if total <= 0:
        raise NumericalError("degenerate weights in resampling")
    n_out = len(w) if n_out is None else int(n_out)
    positions = (u + np.arange(n_out)) / n_out
    idx = np.searchsorted(np.cumsum(w / total), positions, side="left")
    return np.minimum(idx, len(w) - 1)


def resample(cloud: ParticleCloud) -> ParticleCloud:
    """Systematic resample; resets weights to 1/M and gathers all caches."""
    rng = _stream(cloud.seed, _TAG_RESAMPLE, cloud.level)
    idx = systematic_resample_indices(cloud.weights, float(rng.random()))
    cloud.particles = cloud.particles[idx].copy()
    cloud.hidden = cloud.hidden[idx].copy()
    cloud.loss = cloud.loss[idx].copy()
    cloud.log_lik = cloud.log_lik[idx].copy()
    cloud.log_prior_vec = cloud.log_prior_vec[idx].copy()
    cloud.log_weights = np.full(cloud.m, -math.log(cloud.m))
    return cloud


# --------------------------------------------------------------------------
# random-walk Metropolis
# --------------------------------------------------------------------------


def _proposal_chol(particles: np.ndarray, free_idx: np.ndarray) -> np.ndarray:
    """Cholesky factor of the scaled empirical covariance over free dims."""
    d = len(free_idx)
    x = particles[:, free_idx]
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    scale = 2.38**2 / d
    sigma = scale * (cov + 1e-9 * np.eye(d))
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        sigma = scale * (np.diag(np.clip(np.diag(cov), 1e-12, None)) + 1e-9 * np.eye(d))
        try:
            return np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("proposal covariance is not positive definite") from exc


def mh_move(cloud: ParticleCloud, target_log_density, n_steps: int) -> np.ndarray:
    """Advance each particle by ``n_steps`` random-walk Metropolis steps.

    ``target_log_density`` maps an (M, 13) parameter batch to (M,) log
    densities; the proposal is N(theta, s^2 (Cov + jitter I)) over the free
    dimensions with the usual s^2 = 2.38^2 / d scaling. Requires an equally
    weighted cloud (run :func:`resample` first). Returns the per-particle
    acceptance rates; likelihood caches are NOT maintained here (the SMC
    drivers use their own fused sweep for that).
    """
    if abs(cloud.ess_value - cloud.m) > 1e-6 * cloud.m:
        raise ValueError("mh_move expects an equally weighted (resampled) cloud")
    free_idx = np.flatnonzero(cloud.free_mask)
    chol = _proposal_chol(cloud.particles, free_idx)
    rng = _stream(cloud.seed, _TAG_PROPOSAL, cloud.level)
    z = rng.standard_normal((n_steps, cloud.m, len(free_idx)))
    u = rng.random((n_steps, cloud.m))

    current = np.asarray(target_log_density(cloud.particles), dtype=np.float64)
    accepted = np.zeros(cloud.m)
    for k in range(n_steps):
        prop = cloud.particles.copy()
        prop[:, free_idx] += z[k] @ chol.T
        cand = np.asarray(target_log_density(prop), dtype=np.float64)
        take = np.log(u[k]) < cand - current
        cloud.particles[take] = prop[take]
        current[take] = cand[take]
        accepted += take
    return accepted / n_steps


# --------------------------------------------------------------------------
# posterior target with kernel-backed batch evaluation
# --------------------------------------------------------------------------


class _Target:
    """Bundles data, prior and clamping; evaluates particle batches."""

    def __init__(self, inputs, returns, alpha, prior, t_first, free_mask, theta_base):
        self.inputs = inputs
        self.returns = np.ascontiguousarray(returns, dtype=np.float64)
        self.alpha = float(alpha)
        self.prior = prior
        self.t_first = int(t_first)
        self.free_mask = (
            np.ones(N_PARAMS, dtype=bool) if free_mask is None else np.asarray(free_mask, dtype=bool)
        )
        if self.free_mask.shape != (N_PARAMS,) or not self.free_mask.any():
            raise ConfigError("free_mask must be a 13-vector with at least one free entry")
        self.theta_base = (
            np.zeros(N_PARAMS) if theta_base is None else np.asarray(theta_base, dtype=np.float64)
        )
        sd = prior.sd_vector
        self._lp_const = -0.5 * np.sum(np.log(2.0 * math.pi * sd * sd))
        self._inv_var = 1.0 / (sd * sd)

    def sample_prior(self, m: int, rng: np.random.Generator) -> np.ndarray:
        theta = np.tile(self.theta_base, (m, 1))
        free = np.flatnonzero(self.free_mask)
        sd = self.prior.sd_vector[free]
        theta[:, free] = rng.standard_normal((m, len(free))) * sd
        return theta

    def log_prior_batch(self, theta: np.ndarray) -> np.ndarray:
        return self._lp_const - 0.5 * (theta * theta) @ self._inv_var

    def eval_batch(self, theta: np.ndarray, t_end: int):
        """(loss, log_lik, log_prior, hidden_at_t_end-1) for a parameter batch."""
        loss, hidden = rnn_har.batch_loss(
            theta, self.inputs, self.returns, self.t_first, t_end, self.alpha
        )
        ll = log_ml_from_loss(loss, t_end - self.t_first, self.alpha, self.prior.sigma_ig)
        return loss, ll, self.log_prior_batch(theta), hidden

    def move_sweep(self, cloud: ParticleCloud, gamma: float, t_end: int, n_steps: int) -> np.ndarray:
        """Fused RW-MH sweep that keeps the cloud's likelihood caches exact."""
        free_idx = np.flatnonzero(self.free_mask)
        chol = _proposal_chol(cloud.particles, free_idx)
        rng = _stream(cloud.seed, _TAG_PROPOSAL, cloud.level)
        z = rng.standard_normal((n_steps, cloud.m, len(free_idx)))
        u = rng.random((n_steps, cloud.m))

        th = cloud.particles
        accepted = np.zeros(cloud.m)
        for k in range(n_steps):
            prop = th.copy()
            prop[:, free_idx] += z[k] @ chol.T
            loss_p, ll_p, lp_p, hid_p = self.eval_batch(prop, t_end)
            log_ratio = gamma * (ll_p - cloud.log_lik) + (lp_p - cloud.log_prior_vec)
            take = np.log(u[k]) < log_ratio
            th[take] = prop[take]
            cloud.loss[take] = loss_p[take]
            cloud.log_lik[take] = ll_p[take]
            cloud.log_prior_vec[take] = lp_p[take]
            cloud.hidden[take] = hid_p[take]
            accepted += take
        return accepted / n_steps


# --------------------------------------------------------------------------
# SMC drivers
# --------------------------------------------------------------------------


def smc_likelihood_annealing(
    inputs: HarInputs,
    returns,
    t_end: int,
    alpha: float,
    prior: Prior | None = None,
    config: SmcConfig | None = None,
    *,
    t_start: int | None = None,
    free_mask=None,
    theta_base=None,
) -> ParticleCloud:
    """Sample the generalized posterior on [t_start, t_end) by tempering.

    Starts from the prior at temperature 0 and raises the temperature
    adaptively (ESS pinned near c*M per level) until it reaches exactly 1,
    resampling and running ``mh_steps_lik`` Metropolis steps whenever the
    ESS dips below c*M. The returned cloud carries the full diagnostics
    trace (level, gamma, ESS, acceptance).
    """
    prior = prior or Prior()
    config = config or SmcConfig()
    t_start = inputs.valid_from + 1 if t_start is None else t_start
    if t_end - t_start < 30:
        raise DataError(
            f"likelihood annealing needs >= 30 scored days, got {t_end - t_start}"
        )
    target = _Target(inputs, returns, alpha, prior, t_start, free_mask, theta_base)

    m = config.particles
    rng = _stream(config.seed, _TAG_PRIOR, 0)
    theta = target.sample_prior(m, rng)
    loss, ll, lp, hidden = target.eval_batch(theta, t_end)
    cloud = ParticleCloud(
        particles=theta,
        log_weights=np.full(m, -math.log(m)),
        gamma=0.0,
        t_first=t_start,
        t_horizon=t_end,
        hidden=hidden,
        loss=loss,
        log_lik=ll,
        log_prior_vec=lp,
        seed=config.seed,
        level=0,
        free_mask=target.free_mask,
        theta_base=target.theta_base,
    )

    while cloud.gamma < 1.0:
        cloud.level += 1
        if cloud.level > config.max_levels:
            raise NumericalError(
                f"annealing cap {config.max_levels} exhausted at gamma={cloud.gamma:.6g}"
            )
        gamma_new = next_temperature(cloud, config.ess_target)
        reweight(cloud, (gamma_new - cloud.gamma) * cloud.log_lik)
        cloud.gamma = gamma_new
        level_ess = cloud.ess_value
        acc = math.nan
        resampled = level_ess < config.ess_target
        if resampled:
            resample(cloud)
            acc = float(np.mean(target.move_sweep(cloud, cloud.gamma, t_end, config.mh_steps_lik)))
        cloud.trace.append(
            LevelRecord(cloud.level, "anneal", cloud.gamma, t_end, level_ess, resampled, acc)
        )
    return cloud


def smc_data_annealing(
    cloud: ParticleCloud,
    inputs: HarInputs,
    returns,
    t_new: int,
    alpha: float,
    prior: Prior | None = None,
    config: SmcConfig | None = None,
) -> ParticleCloud:
    """Absorb the observation of day ``t_new`` into the posterior.

    The per-particle log-weight increment is the predictive factor
    log p(y_{1:t}|theta) - log p(y_{1:t-1}|theta), exact under the
    integrated-scale likelihood because the cached loss and hidden state
    advance by one causal step. Resample + ``mh_steps_data`` Metropolis
    moves (targeting the full posterior at the new horizon) run only when
    the ESS falls below c*M.
    """
    prior = prior or Prior()
    config = config or SmcConfig()
    if cloud.gamma < 1.0:
        raise ValueError("data annealing requires a completed (gamma=1) cloud")
    if t_new != cloud.t_horizon:
        raise ValueError(
            f"observations must be absorbed in order: expected day {cloud.t_horizon}, got {t_new}"
        )
    target = _Target(inputs, returns, alpha, prior, cloud.t_first, cloud.free_mask, cloud.theta_base)
    y = target.returns
    if t_new >= len(y):
        raise DataError(f"day {t_new} beyond the data range")

    hidden_new, q_new = rnn_har.batch_step(cloud.particles, inputs, t_new - 1, cloud.hidden)
    step_loss = rnn_har.quantile_score(y[t_new], q_new, alpha)
    n_old = cloud.t_horizon - cloud.t_first
    loss_new = cloud.loss + step_loss
    ll_new = log_ml_from_loss(loss_new, n_old + 1, alpha, prior.sigma_ig)

    cloud.level += 1
    increments = ll_new - cloud.log_lik
    cloud.hidden = hidden_new
    cloud.loss = loss_new
    cloud.log_lik = ll_new
    cloud.t_horizon = t_new + 1
    reweight(cloud, increments)

    level_ess = cloud.ess_value
    acc = math.nan
    resampled = level_ess < config.ess_target
    if resampled:
        resample(cloud)
        acc = float(
            np.mean(target.move_sweep(cloud, 1.0, cloud.t_horizon, config.mh_steps_data))
        )
    cloud.trace.append(
        LevelRecord(cloud.level, "data", 1.0, cloud.t_horizon, level_ess, resampled, acc)
    )
    return cloud


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def save_cloud(cloud: ParticleCloud, path) -> None:
    """Checkpoint a cloud to .npz (resumable data annealing)."""
    np.savez_compressed(
        path,
        particles=cloud.particles,
        log_weights=cloud.log_weights,
        gamma=cloud.gamma,
        t_first=cloud.t_first,
        t_horizon=cloud.t_horizon,
        hidden=cloud.hidden,
        loss=cloud.loss,
        log_lik=cloud.log_lik,
        log_prior_vec=cloud.log_prior_vec,
        seed=cloud.seed,
        level=cloud.level,
        free_mask=cloud.free_mask,
        theta_base=cloud.theta_base,
    )


def load_cloud(path) -> ParticleCloud:
    with np.load(path) as z:
        return ParticleCloud(
            particles=z["particles"],
            log_weights=z["log_weights"],
            gamma=float(z["gamma"]),
            t_first=int(z["t_first"]),
            t_horizon=int(z["t_horizon"]),
            hidden=z["hidden"],
            loss=z["loss"],
            log_lik=z["log_lik"],
            log_prior_vec=z["log_prior_vec"],
            seed=int(z["seed"]),
            level=int(z["level"]),
            free_mask=z["free_mask"],
            theta_base=z["theta_base"],
        )


def write_trace_csv(trace, path) -> None:
    """Diagnostics trace as CSV: level, kind, gamma, horizon, ESS, acceptance."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "kind", "gamma", "t_horizon", "ess", "resampled", "acceptance"])
        for r in trace:
            w.writerow(
                [r.level, r.kind, repr(r.gamma), r.t_horizon, repr(r.ess), int(r.resampled),
                 repr(r.acceptance)]
            )
