"""Experiment driver: synthetic data, fitting, benchmark repetitions and
chain summaries, with the file formats used by the command line.

Random streams are derived from one master seed by
``SeedSequence(seed, spawn_key=(rep, stream))`` with streams

* 0: data generation,
* 1: prior draw and the approximate start-up chain,
* 2: the main chain (the same stream for either method).

Repetition ``rep`` of a benchmark therefore reproduces ``generate`` and
``fit`` run with the same master seed when ``rep == 0``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .gauss_field import NumericalError
from .geometry import ConfigurationError, SiteSet
from .inference import (Observation, PriorSpec, ProposalSpec, run_latent_chain,
                        run_observable_chain)
from .risk import RiskSpec, check_target, evaluate_on_fine
from .spectral import ModelParams, sample_r_pareto

logger = logging.getLogger(__name__)

METHODS = ("conditional", "approx")
PARAMS = ("beta", "c", "alpha")
STREAM_DATA, STREAM_INIT, STREAM_CHAIN = 0, 1, 2
CHAIN_HEADER = ["iter", "beta", "c", "alpha", "log_posterior", "accepted", "n_exceedances"]
DATASET_HEADER = ["obs_id", "site_id", "value"]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class GeometryConfig:
    side_counts: list = field(default_factory=lambda: [9, 9])
    spacing: float | list = 1.0
    coarse: int | str | list = 3
    s0: int | list | None = None
    origin: list | None = None


@dataclass
class ModelConfig:
    c: float = 3.0
    beta: float = 0.5
    alpha: float = 2.0
    risk: str | dict = "fine_mean"


@dataclass
class DataConfig:
    m: int = 100
    u: float = 1.0
    burn_in: int = 500
    seed: int = 1
    missing_rate: float = 0.0
    archive: bool = True


@dataclass
class InferenceConfig:
    method: str = "conditional"
    prior: dict = field(default_factory=dict)
    log_c_step: float = 0.1
    log_alpha_step: float = 0.1
    beta_half_width: float = 0.1
    beta_boundary: str = "reflect"
    n_mcmc: int = 10_000
    burn_in: int = 1_000
    n_init: int = 1_000
    n_condx: int = 100
    n_condgauss: int = 2_000
    q: float = 0.01
    n_min: int = 500
    n_max: int = 50_000
    warm_start: bool = True
    approx_risk: str | dict | None = None
    sampler: str = "auto"


@dataclass
class BenchmarkConfig:
    repetitions: int = 100
    summary: str = "median"
    keep_chains: bool = True


_BLOCKS = {"geometry": GeometryConfig, "model": ModelConfig, "data": DataConfig,
           "inference": InferenceConfig, "benchmark": BenchmarkConfig}


@dataclass
class ExperimentConfig:
    """All settings of one experiment; defaults reproduce the 9x9 study."""

    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - set(_BLOCKS)
        if unknown:
            raise ConfigurationError(f"unknown config blocks: {sorted(unknown)}")
        blocks = {}
        for name, block_cls in _BLOCKS.items():
            values = dict(raw.get(name, {}))
            allowed = {f.name for f in fields(block_cls)}
            bad = set(values) - allowed
            if bad:
                raise ConfigurationError(f"unknown keys in {name!r}: {sorted(bad)}")
            blocks[name] = block_cls(**values)
        return cls(**blocks)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        d, inf, b = self.data, self.inference, self.benchmark
        if d.m < 0:
            raise ConfigurationError("data.m must be >= 0")
        if not d.u > 0:
            raise ConfigurationError("data.u must be positive")
        if d.burn_in < 1 or inf.n_init < 0 or inf.n_condx < 1 or inf.n_condgauss < 1:
            raise ConfigurationError("chain lengths and sample sizes must be positive")
        if not 0 <= d.missing_rate < 1:
            raise ConfigurationError("data.missing_rate must lie in [0, 1)")
        if inf.n_mcmc < 1 or not 0 <= inf.burn_in < inf.n_mcmc:
            raise ConfigurationError("need n_mcmc >= 1 and 0 <= burn_in < n_mcmc")
        if inf.method not in METHODS:
            raise ConfigurationError(f"inference.method must be one of {METHODS}")
        if not (inf.q > 0 and 1 <= inf.n_min <= inf.n_max):
            raise ConfigurationError("need q > 0 and 1 <= n_min <= n_max")
        if b.repetitions < 1 or b.summary not in ("mean", "median"):
            raise ConfigurationError("benchmark needs repetitions >= 1 and summary mean|median")
        ModelParams(self.model.c, self.model.beta, self.model.alpha)
        self.proposal()
        self.prior()

    # typed views
    def sites(self) -> SiteSet:
        g = self.geometry
        return SiteSet.from_dict({"side_counts": g.side_counts, "spacing": g.spacing,
                                  "coarse": g.coarse, "s0": g.s0, "origin": g.origin})

    def truth(self) -> ModelParams:
        return ModelParams(self.model.c, self.model.beta, self.model.alpha)

    def risk(self) -> RiskSpec:
        return RiskSpec.from_config(self.model.risk)

    def prior(self) -> PriorSpec:
        try:
            return PriorSpec(**self.inference.prior)
        except TypeError as exc:
            raise ConfigurationError(f"bad prior block: {exc}") from exc

    def proposal(self) -> ProposalSpec:
        i = self.inference
        return ProposalSpec(i.log_c_step, i.log_alpha_step, i.beta_half_width, i.beta_boundary)

    def with_overrides(self, seed=None, method=None, beta_boundary=None) -> "ExperimentConfig":
        data, inf = self.data, self.inference
        if seed is not None:
            data = replace(data, seed=int(seed))
        if method is not None:
            inf = replace(inf, method=method)
        if beta_boundary is not None:
            inf = replace(inf, beta_boundary=beta_boundary)
        return replace(self, data=data, inference=inf)


def approx_risk(config: ExperimentConfig, sites: SiteSet) -> RiskSpec:
    """Observable stand-in for the model risk used by the ``approx`` method.

    With every fine site observed the model risk itself is observable and
    is used unchanged. Otherwise the mean (or supremum) is taken over
    ``s0`` and the coarse sites unless ``inference.approx_risk`` says
    otherwise.
    """
    spec = config.risk()
    if config.inference.approx_risk is not None:
        return RiskSpec.from_config(config.inference.approx_risk)
    if sites.fully_observed and spec.target == "fine":
        return spec
    if spec.kind in ("fine_mean", "coarse_mean"):
        return RiskSpec("coarse_mean")
    if spec.kind == "sup":
        return RiskSpec("sup", "coarse")
    raise ConfigurationError("weighted risks need an explicit inference.approx_risk")


def stream(seed: int, rep: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(rep), which)))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Coarse observations with the fine fields they were cut from."""

    sites: SiteSet
    observations: list
    fields: np.ndarray

    @property
    def m(self) -> int:
        return len(self.observations)


def generate_dataset(config: ExperimentConfig, rep: int = 0) -> Dataset:
    """Draw ``m`` r-Pareto fields at threshold ``u`` and keep the coarse values.

    Field ``i`` is ``u`` times a draw of the r-Pareto process, so its risk
    exceeds ``u``. Missing coarse values (if ``missing_rate > 0``) are
    blanked independently per entry; ``s0`` is never missing.
    """
    sites, spec = config.sites(), config.risk()
    check_target(spec, sites)
    rng = stream(config.data.seed, rep, STREAM_DATA)
    m = config.data.m
    if m == 0:
        return Dataset(sites, [], np.zeros((0, sites.n_fine)))
    fields_ = config.data.u * sample_r_pareto(sites, config.truth(), spec, config.data.burn_in,
                                              rng, size=m, method=config.inference.sampler)
    xs = fields_[:, sites.coarse_in_fine].copy()
    if config.data.missing_rate > 0:
        xs[rng.random(xs.shape) < config.data.missing_rate] = np.nan
    obs = [Observation(float(fields_[i, sites.s0_index]), xs[i], i) for i in range(m)]
    return Dataset(sites, obs, fields_)


def _fmt(x) -> str:
    x = float(x)
    return "NA" if math.isnan(x) else repr(x)


def _parse(s: str) -> float:
    return math.nan if s == "NA" else float(s)


def write_dataset(ds: Dataset, out_dir, config: ExperimentConfig | None = None) -> dict:
    """Write ``dataset.csv`` (and ``archive.csv`` with the fine fields)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    observed = ds.sites.observed_in_fine
    with open(out / "dataset.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for o in ds.observations:
            for site, value in zip(observed, np.concatenate([[o.x0], o.xs])):
                w.writerow([o.id, int(site), _fmt(value)])
    paths = {"dataset": str(out / "dataset.csv")}
    if config is None or config.data.archive:
        with open(out / "archive.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DATASET_HEADER)
            for i, row in enumerate(ds.fields):
                for site, value in enumerate(row):
                    w.writerow([i, site, _fmt(value)])
        paths["archive"] = str(out / "archive.csv")
    return paths


def read_dataset(path, sites: SiteSet) -> list:
    """Read ``obs_id,site_id,value`` rows back into observations."""
    pos = {int(k): j for j, k in enumerate(sites.coarse_in_fine)}
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise ConfigurationError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        for obs_id, site_id, value in reader:
            i, k = int(obs_id), int(site_id)
            entry = rows.setdefault(i, [math.nan, np.full(sites.n_coarse, np.nan)])
            if k == sites.s0_index:
                entry[0] = _parse(value)
            elif k in pos:
                entry[1][pos[k]] = _parse(value)
            else:
                raise ConfigurationError(f"{path}: site {k} is not an observation site")
    return [Observation(x0, xs, i) for i, (x0, xs) in sorted(rows.items())]


def read_archive(path, n_fine: int) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return np.zeros((0, n_fine))
    return data[:, 2].reshape(-1, n_fine)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def summarize_chain(samples, burn_in: int = 0) -> dict:
    """Posterior mean, median and 2.5% / 97.5% quantiles per parameter.

    ``samples`` is a sequence of :class:`ChainState`, a mapping of
    parameter name to values, or an array with columns ``beta, c, alpha``.
    """
    if isinstance(samples, dict):
        cols = {p: np.asarray(samples[p], dtype=float) for p in PARAMS}
    elif len(samples) and hasattr(samples[0], "params"):
        cols = {p: np.array([getattr(s.params, p) for s in samples]) for p in PARAMS}
    else:
        arr = np.asarray(samples, dtype=float).reshape(-1, 3)
        cols = dict(zip(PARAMS, arr.T))
    n = len(next(iter(cols.values())))
    if not 0 <= burn_in < n:
        raise ConfigurationError(f"burn_in={burn_in} leaves no states out of {n}")
    out = {}
    for p, v in cols.items():
        v = v[burn_in:]
        lo, hi = np.quantile(v, [0.025, 0.975])
        out[p] = {"mean": float(np.mean(v)), "median": float(np.median(v)),
                  "q025": float(lo), "q975": float(hi)}
    return out


@dataclass
class FitResult:
    method: str
    start: ModelParams
    states: list
    summary: dict
    diagnostics: dict


def starting_values(config: ExperimentConfig, observations, sites: SiteSet, rep: int = 0):
    """Prior draw followed by ``n_init`` steps of the approximate chain."""
    inf = config.inference
    rng = stream(config.data.seed, rep, STREAM_INIT)
    start = config.prior().sample(rng)
    complete = [o for o in observations if not np.any(np.isnan(o.xs))]
    if inf.n_init == 0 or not complete:
        return start
    states = run_observable_chain(complete, config.data.u, approx_risk(config, sites), sites,
                                  config.prior(), config.proposal(), inf.n_init, rng, start,
                                  inf.q, inf.n_min, inf.n_max, inf.sampler)
    return states[-1].params


def run_method(config: ExperimentConfig, observations, sites: SiteSet, method: str,
               start: ModelParams, rep: int = 0) -> FitResult:
    inf = config.inference
    rng = stream(config.data.seed, rep, STREAM_CHAIN)
    diag = {}
    common = dict(u=config.data.u, sites=sites, prior=config.prior(), proposal=config.proposal(),
                  n_mcmc=inf.n_mcmc, rng=rng, start=start, q=inf.q, n_min=inf.n_min,
                  n_max=inf.n_max, method=inf.sampler, diagnostics=diag)
    if method == "approx":
        states = run_observable_chain(observations, spec=approx_risk(config, sites), **common)
    elif method == "conditional":
        states = run_latent_chain(observations, spec=config.risk(), n_condx=inf.n_condx,
                                  n_condgauss=inf.n_condgauss, warm_start=inf.warm_start,
                                  **common)
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    return FitResult(method, start, states, summarize_chain(states, inf.burn_in), diag)


def fit(config: ExperimentConfig, observations=None, rep: int = 0) -> FitResult:
    """Starting-value procedure followed by the configured method."""
    sites = config.sites()
    check_target(config.risk(), sites)
    if observations is None:
        observations = generate_dataset(config, rep).observations
    start = starting_values(config, observations, sites, rep)
    return run_method(config, observations, sites, config.inference.method, start, rep)


def write_chain(states, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHAIN_HEADER)
        for i, s in enumerate(states):
            p = s.params
            w.writerow([i, repr(p.beta), repr(p.c), repr(p.alpha), repr(float(s.log_posterior)),
                        int(s.accepted), s.exceedance_count])


def read_chain(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CHAIN_HEADER:
            raise ConfigurationError(f"{path}: expected header {','.join(CHAIN_HEADER)}")
        rows = list(reader)
    cols = {name: [r[j] for r in rows] for j, name in enumerate(CHAIN_HEADER)}
    return {name: np.array(v, dtype=float) for name, v in cols.items()}


def write_summary(summary: dict, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "mean", "median", "q025", "q975"])
        for p in PARAMS:
            s = summary[p]
            w.writerow([p, repr(s["mean"]), repr(s["median"]), repr(s["q025"]), repr(s["q975"])])


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def metadata(config: ExperimentConfig, command: str, **extra) -> dict:
    meta = {"command": command, "package_version": __version__, "config": config.to_dict(),
            "seed": config.data.seed, "sites": config.sites().to_dict()}
    meta.update(extra)
    return meta


def write_fit(result: FitResult, config: ExperimentConfig, out_dir, dataset_path=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_chain(result.states, out / "chain.csv")
    write_summary(result.summary, out / "summary.csv")
    write_json(metadata(config, "fit", method=result.method, start=asdict(result.start),
                        burn_in=config.inference.burn_in, diagnostics=result.diagnostics,
                        dataset=None if dataset_path is None else os.path.basename(dataset_path),
                        summary=result.summary),
               out / "fit_meta.json")
    return {"chain": str(out / "chain.csv"), "summary": str(out / "summary.csv")}


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def _repetition(config: ExperimentConfig, rep: int):
    """Both methods on one synthetic data set from a shared start."""
    truth = config.truth()
    rows, chains = [], {}
    try:
        ds = generate_dataset(config, rep)
        start = starting_values(config, ds.observations, ds.sites, rep)
        results = [run_method(config, ds.observations, ds.sites, m, start, rep) for m in METHODS]
    except (NumericalError, FloatingPointError) as exc:
        logger.warning("repetition %d failed: %s", rep, exc)
        return [{"rep": rep, "method": m, "status": "failed", "error": str(exc)}
                for m in METHODS], chains
    for res in results:
        row = {"rep": rep, "method": res.method, "status": "ok", "error": ""}
        for stat in ("median", "mean"):
            for p in PARAMS:
                est = res.summary[p][stat]
                row[f"{p}_{stat}"] = est
                row[f"{p}_{stat}_sqerr"] = (est - getattr(truth, p)) ** 2
        row["acceptance_rate"] = res.diagnostics.get("acceptance_rate", float("nan"))
        rows.append(row)
        chains[res.method] = res.states
    return rows, chains


def rmse_table(rows) -> dict:
    """``{method: {stat: {param: rmse}}}`` over completed repetitions."""
    table = {}
    for method in METHODS:
        ok = [r for r in rows if r["method"] == method and r["status"] == "ok"]
        table[method] = {
            stat: {p: (math.sqrt(np.mean([r[f"{p}_{stat}_sqerr"] for r in ok])) if ok
                       else float("nan")) for p in PARAMS}
            for stat in ("median", "mean")}
    return table


def format_rmse_table(table: dict) -> str:
    lines = [f"{'':12s}|{'Median':^27s}|{'Mean':^27s}",
             f"{'Method':12s}|" + "".join(f"{p:>9s}" for p in PARAMS) + "|"
             + "".join(f"{p:>9s}" for p in PARAMS)]
    for method in METHODS:
        t = table[method]
        lines.append(f"{method:12s}|" + "".join(f"{t['median'][p]:9.3f}" for p in PARAMS) + "|"
                     + "".join(f"{t['mean'][p]:9.3f}" for p in PARAMS))
    return "\n".join(lines)


@dataclass
class BenchmarkResult:
    rows: list
    table: dict
    chains: dict

    @property
    def failed(self) -> list:
        return sorted({r["rep"] for r in self.rows if r["status"] != "ok"})


def benchmark(config: ExperimentConfig, threads: int = 1) -> BenchmarkResult:
    """Generate, start and fit both methods for every repetition.

    Repetitions may run on several threads; results are merged in
    repetition order so the output does not depend on ``threads``.
    """
    reps = range(config.benchmark.repetitions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(lambda r: _repetition(config, r), reps))
    else:
        outputs = [_repetition(config, r) for r in reps]
    rows = [row for rs, _ in outputs for row in rs]
    chains = {rep: ch for rep, (_, ch) in zip(reps, outputs)}
    result = BenchmarkResult(rows, rmse_table(rows), chains)
    if result.failed:
        logger.warning("%d repetition(s) failed and were excluded: %s", len(result.failed),
                       result.failed)
    return result


REP_COLUMNS = (["rep", "method", "status"]
               + [f"{p}_{s}" for s in ("median", "mean") for p in PARAMS]
               + [f"{p}_{s}_sqerr" for s in ("median", "mean") for p in PARAMS]
               + ["acceptance_rate", "error"])


def write_benchmark(result: BenchmarkResult, config: ExperimentConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "repetitions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REP_COLUMNS)
        for r in result.rows:
            w.writerow([_cell(r.get(k, "")) for k in REP_COLUMNS])
    with open(out / "rmse.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method"] + [f"{s}_{p}" for s in ("median", "mean") for p in PARAMS])
        for method in METHODS:
            t = result.table[method]
            w.writerow([method] + [repr(t[s][p]) for s in ("median", "mean") for p in PARAMS])
    if config.benchmark.keep_chains:
        (out / "chains").mkdir(exist_ok=True)
        for rep, chains in result.chains.items():
            for method, states in chains.items():
                write_chain(states, out / "chains" / f"rep{rep:03d}_{method}.csv")
    write_json(metadata(config, "benchmark", failed=result.failed, rmse=result.table,
                        headline=config.benchmark.summary),
               out / "benchmark_meta.json")
    return {"repetitions": str(out / "repetitions.csv"), "rmse": str(out / "rmse.csv")}


def _cell(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return v


def archive_risks(fields_: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    """Model risk of every archived fine field (for validation)."""
    return evaluate_on_fine(config.risk(), config.sites(), fields_)
