"""Batch front-end: fit -> forecast -> backtest -> report, plus utilities.

Configuration is resolved in precedence order: built-in defaults, then a
YAML config file (--config), then VARSMC_* environment variables, then
command-line flags. All randomness flows from the single seed; each
(market, model, alpha) job derives its own stream, so results are identical
whatever the --jobs level.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import yaml

from . import __version__, backtest
from ._kernels import BACKEND
from .data import (
    CsvSchema,
    DgpConfig,
    SampleSplit,
    build_har_inputs,
    generate_synthetic_market,
    load_market_csv,
    write_market_csv,
)
from .errors import ConfigError, DataError, EstimationError, NumericalError, VarsmcError
from .forecast import MODEL_IDS, forecast_baseline, forecast_rnn_har, write_forecast_csv
from .inference import Prior, SmcConfig, save_cloud, smc_likelihood_annealing, write_trace_csv
from .models import fit_linear_har, fit_rhargarch

DEFAULT_ALPHAS = (0.01, 0.025, 0.05)

_ENV_PREFIX = "VARSMC_"

_EXIT_BY_ERROR = (
    (ConfigError, 1),
    (DataError, 2),
    ((EstimationError, NumericalError), 3),
)


@dataclass
class RunConfig:
    data: list = field(default_factory=list)
    models: list = field(default_factory=lambda: list(MODEL_IDS))
    alpha: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    in_sample: int = 2000
    out_sample: int = 1000
    particles: int = 2000
    ess_frac: float = 0.8
    mh_steps_lik: int = 10
    mh_steps_data: int = 20
    max_levels: int = 10000
    seed: int | None = None
    jobs: int = 1
    out: str = "runs"
    refit: str = "daily"
    mu_mode: str = "insample"
    keep_draws: bool = False
    recurrent_sd: float = 0.1
    beta_sd: float = 1.0
    sigma_a: float = 1.0
    sigma_b: float = 1.0
    col_date: str = "date"
    col_return: str = "return"
    col_price: str | None = None
    col_rv: str = "rv"

    def validate(self) -> None:
        if not self.models:
            raise ConfigError("at least one model is required")
        unknown = [m for m in self.models if m not in MODEL_IDS]
        if unknown:
            raise ConfigError(
                f"unknown model(s) {unknown}; valid models: {', '.join(MODEL_IDS)}"
            )
        if not self.alpha:
            raise ConfigError("at least one alpha level is required")
        for a in self.alpha:
            if not 0.0 < a < 1.0:
                raise ConfigError(f"alpha must lie in (0, 1), got {a}")
        if not 0.0 < self.ess_frac < 1.0:
            raise ConfigError(f"ess_frac must lie in (0, 1), got {self.ess_frac}")
        if self.in_sample < 1 or self.out_sample < 1:
            raise ConfigError("in_sample and out_sample must be >= 1")
        if self.particles < 2:
            raise ConfigError("particles must be >= 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.refit not in ("daily", "once"):
            raise ConfigError("refit must be 'daily' or 'once'")
        if self.mu_mode not in ("insample", "zero"):
            raise ConfigError("mu_mode must be 'insample' or 'zero'")
        if "rnn-har" in self.models and self.seed is None:
            raise ConfigError("--seed is mandatory when SMC models are requested")

    def split(self) -> SampleSplit:
        return SampleSplit(self.in_sample, self.out_sample)

    def schema(self) -> CsvSchema:
        return CsvSchema(
            date=self.col_date, ret=self.col_return, price=self.col_price, rv=self.col_rv
        )

    def prior(self) -> Prior:
        return Prior(
            recurrent_sd=self.recurrent_sd,
            beta_sd=self.beta_sd,
            sigma_ig=(self.sigma_a, self.sigma_b),
        )

    def smc(self, seed: int) -> SmcConfig:
        return SmcConfig(
            particles=self.particles,
            ess_frac=self.ess_frac,
            mh_steps_lik=self.mh_steps_lik,
            mh_steps_data=self.mh_steps_data,
            max_levels=self.max_levels,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_hash(config: RunConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def job_seed(root_seed: int, market: str, model: str, alpha: float) -> int:
    digest = hashlib.sha256(f"{root_seed}|{market}|{model}|{alpha:g}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# --------------------------------------------------------------------------
# configuration resolution
# --------------------------------------------------------------------------

_LIST_KEYS = {"data", "models", "alpha"}
_TYPES = {
    "in_sample": int, "out_sample": int, "particles": int, "mh_steps_lik": int,
    "mh_steps_data": int, "max_levels": int, "seed": int, "jobs": int,
    "ess_frac": float, "recurrent_sd": float, "beta_sd": float,
    "sigma_a": float, "sigma_b": float, "keep_draws": bool,
}


def _coerce(key: str, value):
    if value is None:
        return None
    if key in _LIST_KEYS:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        value = list(value)
        if key == "alpha":
            try:
                value = [float(v) for v in value]
            except ValueError as exc:
                raise ConfigError(f"bad alpha value: {exc}") from None
        return value
    typ = _TYPES.get(key)
    if typ is bool and isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if typ is not None:
        try:
            return typ(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    fields = {f.name for f in dataclasses.fields(RunConfig)}

    file_path = getattr(args, "config", None)
    if file_path:
        try:
            with open(file_path, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {file_path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        for key, value in loaded.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, value))

    for key in fields:
        env = os.environ.get(_ENV_PREFIX + key.upper())
        if env is not None:
            setattr(cfg, key, _coerce(key, env))

    for key in fields:
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, _coerce(key, value))

    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); config errors are exit 1
        raise ConfigError(message)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--data", help="comma-separated market CSV paths")
    p.add_argument("--models", help=f"comma-separated model ids ({','.join(MODEL_IDS)})")
    p.add_argument("--alpha", help="comma-separated quantile levels")
    p.add_argument("--in-sample", dest="in_sample", type=int)
    p.add_argument("--out-sample", dest="out_sample", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--ess-frac", dest="ess_frac", type=float)
    p.add_argument("--mh-steps-lik", dest="mh_steps_lik", type=int)
    p.add_argument("--mh-steps-data", dest="mh_steps_data", type=int)
    p.add_argument("--max-levels", dest="max_levels", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--refit", choices=["daily", "once"])
    p.add_argument("--mu-mode", dest="mu_mode", choices=["insample", "zero"])
    p.add_argument("--keep-draws", dest="keep_draws", action="store_const", const=True)
    p.add_argument("--col-date", dest="col_date")
    p.add_argument("--col-return", dest="col_return")
    p.add_argument("--col-price", dest="col_price")
    p.add_argument("--col-rv", dest="col_rv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="varsmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("run", "full pipeline: forecast, backtest, compare, manifest"),
        ("validate", "resolve the configuration, check it, print it"),
        ("fit", "in-sample fits only (baseline fit JSON, SMC cloud checkpoints)"),
        ("forecast", "forecast CSVs for every (market, model, alpha)"),
        ("backtest", "evaluation reports from previously written forecasts"),
        ("report", "cross-model comparison tables from previously written reports"),
    ):
        p = sub.add_parser(name, help=desc)
        _add_common_flags(p)
    sim = sub.add_parser("simulate", help="write a synthetic market CSV")
    _add_common_flags(sim)
    sim.add_argument("--length", type=int, default=3000)
    sim.add_argument("--dgp-omega", type=float, default=DgpConfig.omega)
    sim.add_argument("--dgp-a1", type=float, default=DgpConfig.a1)
    sim.add_argument("--dgp-b1", type=float, default=DgpConfig.b1)
    sim.add_argument("--dgp-nu", type=float, default=DgpConfig.nu)
    sim.add_argument("--rv-noise", type=float, default=DgpConfig.rv_noise)
    sim.add_argument("--rv-bias", type=float, default=DgpConfig.rv_bias)
    sim.add_argument("--csv", help="output CSV path (default <out>/synthetic_market.csv)")
    return parser


# --------------------------------------------------------------------------
# pipeline stages
# --------------------------------------------------------------------------


def _load_markets(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("no input data: pass --data or a config entry")
    markets = []
    for path in cfg.data:
        markets.append(load_market_csv(path, schema=cfg.schema()))
    names = [m.name for m in markets]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate market names: {names}")
    return markets


def _alpha_token(alpha: float) -> str:
    return f"{alpha:g}".replace(".", "p")


def _forecast_one(cfg: RunConfig, series, model: str, alpha: float):
    seed = job_seed(cfg.seed or 0, series.name, model, alpha)
    if model == "rnn-har":
        return forecast_rnn_har(
            series, cfg.split(), alpha, cfg.prior(), cfg.smc(seed), keep_draws=cfg.keep_draws
        )
    return forecast_baseline(
        series, cfg.split(), alpha, model, refit=cfg.refit, mu_mode=cfg.mu_mode, seed=seed
    )


def _job_paths(out: str, market: str, model: str, alpha: float):
    tok = _alpha_token(alpha)
    return (
        os.path.join(out, "forecasts", f"{market}__{model}__a{tok}.csv"),
        os.path.join(out, "reports", f"{market}__{model}__a{tok}.json"),
    )


def _execute_job(payload: dict) -> dict:
    """One (market, model, alpha) unit: forecast + backtest + artifact files.

    Module-level (picklable) so a process pool can run it; everything needed
    is inside the payload.
    """
    cfg = RunConfig(**payload["config"])
    market_path = payload["market_path"]
    model = payload["model"]
    alpha = payload["alpha"]
    series = load_market_csv(market_path, schema=cfg.schema())
    run = _forecast_one(cfg, series, model, alpha)
    fc_path, rep_path = _job_paths(cfg.out, series.name, model, alpha)
    os.makedirs(os.path.dirname(fc_path), exist_ok=True)
    os.makedirs(os.path.dirname(rep_path), exist_ok=True)
    write_forecast_csv(run, fc_path, draw_quantiles=cfg.keep_draws)
    report = backtest.evaluate(run)
    report.to_json(rep_path)
    if run.trace:
        trace_path = fc_path[:-4] + "__trace.csv"
        write_trace_csv(run.trace, trace_path)
    else:
        trace_path = None
    return {
        "market": series.name,
        "model": model,
        "alpha": alpha,
        "forecast_csv": fc_path,
        "report_json": rep_path,
        "trace_csv": trace_path,
        "report": report.to_dict(),
        "timings": run.timings,
    }


def _run_jobs(cfg: RunConfig, markets) -> list:
    payloads = []
    by_name = {}
    for path in cfg.data:
        series = load_market_csv(path, schema=cfg.schema())
        by_name[series.name] = path
    for market in sorted(m.name for m in markets):
        for model in cfg.models:
            for alpha in cfg.alpha:
                payloads.append(
                    {
                        "config": cfg.to_dict(),
                        "market_path": by_name[market],
                        "model": model,
                        "alpha": alpha,
                    }
                )
    if cfg.jobs == 1:
        return [_execute_job(p) for p in payloads]
    with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(_execute_job, payloads))


def _write_comparisons(cfg: RunConfig, results) -> list:
    artifacts = []
    markets = sorted({r["market"] for r in results})
    for alpha in cfg.alpha:
        tok = _alpha_token(alpha)
        per_market = {}
        for market in markets:
            reports = [
                _report_from_dict(r["report"])
                for r in results
                if r["market"] == market and r["alpha"] == alpha
            ]
            if len(reports) >= 2:
                per_market[market] = backtest.compare(reports)
        if not per_market:
            continue
        path_json = os.path.join(cfg.out, f"compare__a{tok}.json")
        payload = {m: t.to_dict() for m, t in sorted(per_market.items())}
        with open(path_json, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        artifacts.append(path_json)
        for market, table in sorted(per_market.items()):
            path_csv = os.path.join(cfg.out, f"compare__{market}__a{tok}.csv")
            table.to_csv(path_csv)
            artifacts.append(path_csv)
    return artifacts


def _report_from_dict(d: dict) -> backtest.BacktestReport:
    dq = {
        k: backtest.DqResult(
            statistic=v["statistic"], dof=v["dof"], p_value=v["p_value"], ridged=v["ridged"]
        )
        for k, v in d["dq"].items()
    }
    return backtest.BacktestReport(
        model_id=d["model_id"],
        alpha=d["alpha"],
        qs=d["qs"],
        vrate=d["vrate"],
        vrate_ratio=d["vrate_ratio"],
        dq=dq,
        tail_loss_ratio=d["tail_loss_ratio"] if d["tail_loss_ratio"] is not None else float("nan"),
        tail_loss_defined=d["tail_loss_defined"],
        n_test=d["n_test"],
        fallback_days=d.get("fallback_days", 0),
    )


def _write_manifest(cfg: RunConfig, artifacts, status: str, wall_clock: float, error: str | None = None):
    import numpy
    import scipy

    manifest = {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "versions": {
            "varsmc": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
        },
        "kernel_backend": BACKEND,
        "wall_clock_s": wall_clock,
        "status": status,
        "error": error,
        "artifacts": sorted(a for a in artifacts if a),
    }
    path = os.path.join(cfg.out, "manifest.json")
    os.makedirs(cfg.out, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_validate(cfg: RunConfig) -> int:
    cfg.validate()
    print("configuration ok")
    print(f"data: {cfg.data}")
    print(f"models: {','.join(cfg.models)}")
    print(f"alpha: {','.join(f'{a:g}' for a in cfg.alpha)}")
    print(f"in_sample: {cfg.in_sample}  out_sample: {cfg.out_sample}")
    print(f"particles M={cfg.particles}")
    print(f"ess threshold c={cfg.ess_frac:g}")
    print(f"mh steps N_lik={cfg.mh_steps_lik} N_data={cfg.mh_steps_data}")
    print(f"annealing cap K_max={cfg.max_levels}")
    print(f"seed: {cfg.seed}  jobs: {cfg.jobs}  refit: {cfg.refit}  out: {cfg.out}")
    print(f"kernel backend: {BACKEND}")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    dgp = DgpConfig(
        omega=args.dgp_omega, a1=args.dgp_a1, b1=args.dgp_b1,
        nu=args.dgp_nu, rv_noise=args.rv_noise, rv_bias=args.rv_bias,
    )
    seed = cfg.seed if cfg.seed is not None else 0
    series = generate_synthetic_market(seed, args.length, dgp, name="synthetic")
    path = args.csv or os.path.join(cfg.out, "synthetic_market.csv")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    write_market_csv(series, path)
    print(f"wrote {path} ({len(series)} rows, seed {seed})")
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    cfg.validate()
    markets = _load_markets(cfg)
    os.makedirs(os.path.join(cfg.out, "fits"), exist_ok=True)
    for series in markets:
        from .data import split as split_series

        ins, _ = split_series(series, cfg.split())
        inputs = build_har_inputs(ins)
        for model in cfg.models:
            if model == "rnn-har":
                for alpha in cfg.alpha:
                    seed = job_seed(cfg.seed or 0, series.name, model, alpha)
                    cloud = smc_likelihood_annealing(
                        inputs, ins.returns, len(ins), alpha, cfg.prior(), cfg.smc(seed)
                    )
                    tok = _alpha_token(alpha)
                    base = os.path.join(cfg.out, "fits", f"{series.name}__rnn-har__a{tok}")
                    save_cloud(cloud, base + ".npz")
                    write_trace_csv(cloud.trace, base + "__trace.csv")
                    print(f"saved {base}.npz (levels: {len(cloud.trace)})")
                continue
            if model == "rhargarch":
                fit = fit_rhargarch(ins, inputs, seed=cfg.seed or 0)
                doc = fit.to_dict()
            else:
                doc = fit_linear_har(inputs, ins.rv, model).to_dict()
            path = os.path.join(cfg.out, "fits", f"{series.name}__{model}.json")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
            print(f"saved {path}")
    return 0


def cmd_forecast(cfg: RunConfig) -> int:
    cfg.validate()
    markets = _load_markets(cfg)
    results = _run_jobs(cfg, markets)
    index = [
        {k: r[k] for k in ("market", "model", "alpha", "forecast_csv", "report_json")}
        for r in results
    ]
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "forecast_index.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(index, sort_keys=True, indent=2) + "\n")
    for r in results:
        print(f"{r['market']} {r['model']} alpha={r['alpha']:g}: {r['forecast_csv']}")
    return 0


def cmd_backtest(cfg: RunConfig) -> int:
    # standalone re-evaluation of previously written forecast CSVs
    index_path = os.path.join(cfg.out, "forecast_index.json")
    if not os.path.exists(index_path):
        raise DataError(f"no forecast index at {index_path}; run 'forecast' first")
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    import csv as _csv

    for entry in index:
        with open(entry["forecast_csv"], newline="", encoding="utf-8") as fh:
            rows = list(_csv.DictReader(fh))
        y = [float(r["return"]) for r in rows]
        q = [float(r["q_hat"]) for r in rows]

        class _PathLike:
            returns = y
            q_hat = q
            alpha = entry["alpha"]
            model_id = entry["model"]
            fallback_days = ()

        report = backtest.evaluate(_PathLike())
        os.makedirs(os.path.dirname(entry["report_json"]), exist_ok=True)
        report.to_json(entry["report_json"])
        print(f"wrote {entry['report_json']}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    index_path = os.path.join(cfg.out, "forecast_index.json")
    if not os.path.exists(index_path):
        raise DataError(f"no forecast index at {index_path}; run 'forecast' first")
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    results = []
    for entry in index:
        with open(entry["report_json"], encoding="utf-8") as fh:
            results.append(
                {
                    "market": entry["market"],
                    "model": entry["model"],
                    "alpha": entry["alpha"],
                    "report": json.load(fh),
                }
            )
    artifacts = _write_comparisons(cfg, results)
    for a in artifacts:
        print(f"wrote {a}")
    return 0


def cmd_run(cfg: RunConfig) -> int:
    cfg.validate()
    started = time.perf_counter()
    artifacts: list = []
    try:
        markets = _load_markets(cfg)
        results = _run_jobs(cfg, markets)
        for r in results:
            artifacts += [r["forecast_csv"], r["report_json"], r.get("trace_csv")]
        index_path = os.path.join(cfg.out, "forecast_index.json")
        index = [
            {k: r[k] for k in ("market", "model", "alpha", "forecast_csv", "report_json")}
            for r in results
        ]
        with open(index_path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(index, sort_keys=True, indent=2) + "\n")
        artifacts.append(index_path)
        artifacts += _write_comparisons(cfg, results)
    except VarsmcError as exc:
        wall = time.perf_counter() - started
        _write_manifest(cfg, artifacts, "failed", wall, error=str(exc))
        raise
    wall = time.perf_counter() - started
    manifest_path = _write_manifest(cfg, artifacts, "ok", wall)
    print(f"run complete: {len(artifacts)} artifacts, manifest at {manifest_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        cfg_needs_out = args.command in ("run", "fit", "forecast", "backtest", "report")
        if cfg_needs_out:
            os.makedirs(cfg.out, exist_ok=True)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "forecast":
            return cmd_forecast(cfg)
        if args.command == "backtest":
            return cmd_backtest(cfg)
        if args.command == "report":
            return cmd_report(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except VarsmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for types, code in _EXIT_BY_ERROR:
            if isinstance(exc, types):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
