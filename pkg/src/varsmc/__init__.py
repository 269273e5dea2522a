"""Sequential Monte Carlo VaR forecasting with a recurrent HAR quantile model.

Public surface:

* :mod:`varsmc.data`      -- CSV ingestion, realized-measure aggregates, splits,
                             synthetic GARCH-t market generator.
* :mod:`varsmc.models`    -- HAR / SqrtHAR / LevHAR OLS fits, realized
                             HAR-GARCH quasi-likelihood, RV -> VaR conversion.
* :mod:`varsmc.rnn_har`   -- the recurrent quantile model (forward recursion,
                             check loss).
* :mod:`varsmc.inference` -- generalized Bayesian posterior and the two SMC
                             samplers (likelihood annealing, data annealing).
* :mod:`varsmc.forecast`  -- expanding-window one-step-ahead forecast drivers.
* :mod:`varsmc.backtest`  -- quantile score, violation rate, DQ tests, tail
                             loss ratio, cross-model comparison.
* :mod:`varsmc.cli`       -- the ``varsmc`` command-line pipeline.
"""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    CsvSchema,
    DgpConfig,
    HarInputs,
    MarketSeries,
    SampleSplit,
    build_har_inputs,
    generate_synthetic_market,
    load_market_csv,
    split,
    write_market_csv,
)
from .rnn_har import RnnHarParams, VarForecastPath, aggregate_loss, forward, quantile_score  # noqa: F401
from .inference import (  # noqa: F401
    ParticleCloud,
    Prior,
    SmcConfig,
    ess,
    log_marginal_likelihood,
    log_prior,
    mh_move,
    next_temperature,
    resample,
    reweight,
    smc_data_annealing,
    smc_likelihood_annealing,
)
from .models import (  # noqa: F401
    LinearHarFit,
    RharGarchFit,
    fit_linear_har,
    fit_rhargarch,
    forecast_rv,
    inv_norm_cdf,
    var_from_rv,
)
from .forecast import ForecastRun, forecast_baseline, forecast_rnn_har  # noqa: F401
from .backtest import (  # noqa: F401
    BacktestReport,
    compare,
    dq_test,
    mean_quantile_score,
    tail_loss_ratio,
    vrate,
)
