"""Experiment orchestration: seeded multi-trial runs, per-iteration
metrics, CSV persistence, and cross-trial aggregates.

Each trial draws its own generator from the base seed (published
mixing: ``SeedSequence(base_seed, spawn_key=(trial,))`` feeding a
Philox generator), samples the initial ensemble from the prior, and
iterates the selected method, recording one metrics row per iteration
including the initial state. Metrics follow the ensemble mean (the
bare iterate for the derivative methods, with cov_frob written as 0
so every run shares one CSV schema).

A diverged trial keeps the rows recorded before the failure and the
iteration index where it failed; aggregation only ever sees finite
rows. The manifest is written after all CSVs as a completion marker.
"""

import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .linalg import mahalanobis_sqnorm, sample_gaussian
from .ensemble import check_members, DivergenceError
from .ensemble_methods import METHODS, EnsMethodConfig, make_state
from .derivative_methods import DERIVATIVE_METHODS, jacobian_fn
from .problems import get_problem, data_misfit, tikhonov_phillips

CSV_COLUMNS = ("iter", "t", "rel_err", "j_dm", "j_tp", "cov_frob")
METRIC_COLUMNS = CSV_COLUMNS[2:]
OUTPUT_DIR_ENV = "EKOPT_OUT"


class ConfigError(ValueError):
    """Invalid experiment configuration (unknown ids, bad sizes)."""


@dataclass
class ExperimentConfig:
    """One experiment: a (problem, method) pair run over several trials.

    T is an optional time horizon; when given it must satisfy
    n_iters = round(T / alpha). initial_ensemble optionally names a
    .npy file with a (d, N) array used for every trial instead of
    prior draws.
    """

    problem_id: str
    method_id: str
    alpha: float
    n_members: int = 50
    n_iters: int = 100
    n_trials: int = 10
    base_seed: int = 0
    output_dir: str = None
    T: float = None
    problem_params: dict = field(default_factory=dict)
    initial_ensemble: str = None
    rtol_pinv: float = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.n_iters < 0:
            raise ConfigError("n_iters must be >= 0")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if self.method_id not in METHODS and self.method_id not in DERIVATIVE_METHODS:
            raise ConfigError("unknown method %r; known: %s" % (
                self.method_id,
                ", ".join(sorted(list(METHODS) + list(DERIVATIVE_METHODS)))))
        if self.T is not None and int(round(self.T / self.alpha)) != self.n_iters:
            raise ConfigError(
                "n_iters=%d inconsistent with T=%g at alpha=%g (expect %d)"
                % (self.n_iters, self.T, self.alpha,
                   int(round(self.T / self.alpha))))


@dataclass
class RunTrace:
    """Per-iteration metrics of one trial. Arrays share length; rows
    stop at the divergence point when diverged_at is set."""

    iters: np.ndarray
    t: np.ndarray
    rel_err: np.ndarray
    j_dm: np.ndarray
    j_tp: np.ndarray
    cov_frob: np.ndarray
    diverged_at: int = None

    def column(self, name):
        return getattr(self, "iters" if name == "iter" else name)


def trial_rng(base_seed, trial_index):
    """Per-trial generator: SeedSequence(base_seed, spawn_key=(trial,))
    feeding Philox. Stable across platforms and numpy versions."""
    seq = np.random.SeedSequence(base_seed, spawn_key=(trial_index,))
    return np.random.Generator(np.random.Philox(seq))


def _load_problem(cfg):
    try:
        return get_problem(cfg.problem_id, **cfg.problem_params)
    except KeyError as exc:
        raise ConfigError(exc.args[0])


def _initial_members(cfg, problem, rng):
    if cfg.initial_ensemble is not None:
        members = np.load(cfg.initial_ensemble)
        if members.ndim != 2 or members.shape[0] != problem.dim_u or members.shape[1] < 2:
            raise ConfigError("initial ensemble %r must be (d=%d, N>=2), got %s"
                              % (cfg.initial_ensemble, problem.dim_u,
                                 members.shape))
        return np.array(members, dtype=float)
    return sample_gaussian(problem.prior, cfg.n_members, rng)


def _metrics(problem, mean, cov_frob):
    h_mean = np.asarray(problem.forward(mean), dtype=float).ravel()
    truth = problem.truth
    rel_err = (np.linalg.norm(mean - truth) / np.linalg.norm(truth)
               if truth is not None else np.nan)
    j_dm = data_misfit(mean, problem, h_mean)
    j_tp = tikhonov_phillips(mean, problem, h_mean)
    # rel_err is NaN by design when the problem has no stored truth
    checked = (j_dm, j_tp, cov_frob) if truth is None else (rel_err, j_dm, j_tp, cov_frob)
    if not np.all(np.isfinite(np.asarray(checked, dtype=float))):
        raise ArithmeticError("non-finite metrics")
    return rel_err, j_dm, j_tp, cov_frob


def run_trial(cfg, trial_index):
    """Run one seeded trial of cfg.method_id on cfg.problem_id.

    Args:
        cfg: ExperimentConfig.
        trial_index: nonnegative integer selecting the trial stream.

    Returns:
        RunTrace with one row per iteration 0..n_iters, truncated at
        the divergence point when the method blows up.
    """
    problem = _load_problem(cfg)
    rng = trial_rng(cfg.base_seed, trial_index)

    if cfg.method_id in DERIVATIVE_METHODS:
        step_fn = DERIVATIVE_METHODS[cfg.method_id]
        jac = jacobian_fn(problem)
        u = problem.prior.mean.copy()

        def current():
            return u, 0.0

        def advance():
            nonlocal u
            u = step_fn(u, problem, jac, cfg.alpha)
            check_members(u, cfg.method_id, i)
    else:
        step_fn = METHODS[cfg.method_id]
        members = _initial_members(cfg, problem, rng)
        state = make_state(members)
        mcfg = EnsMethodConfig(alpha=cfg.alpha, n_members=members.shape[1],
                               max_iters=cfg.n_iters, rtol_pinv=cfg.rtol_pinv,
                               method_id=cfg.method_id)

        def current():
            mean = state.current.mean(axis=1)
            dev = state.current - mean[:, None]
            cov = dev @ dev.T / state.current.shape[1]
            return mean, float(np.linalg.norm(cov))

        def advance():
            step_fn(state, problem, mcfg, rng)

    rows = []
    diverged_at = None
    for i in range(cfg.n_iters + 1):
        try:
            mean, cov_frob = current()
            rows.append((i, i * cfg.alpha) + _metrics(problem, mean, cov_frob))
        except (DivergenceError, ArithmeticError):
            diverged_at = i
            break
        if i == cfg.n_iters:
            break
        try:
            advance()
        except (DivergenceError, ArithmeticError):
            diverged_at = i
            break

    data = np.array(rows, dtype=float).reshape(len(rows), len(CSV_COLUMNS))
    return RunTrace(iters=data[:, 0].astype(int), t=data[:, 1],
                    rel_err=data[:, 2], j_dm=data[:, 3], j_tp=data[:, 4],
                    cov_frob=data[:, 5], diverged_at=diverged_at)


def prior_penalty(u, problem):
    """The prior half of the regularized objective, recomputed
    independently of the trace: 1/2 |u - m|^2_P."""
    return 0.5 * mahalanobis_sqnorm(u - problem.prior.mean, problem.prior.cov)


@dataclass
class ExperimentResult:
    """Cross-trial aggregate: per-iteration mean and 10/90 quantiles of
    each metric over the trials still alive at that iteration."""

    config: ExperimentConfig
    traces: list
    agg_iters: np.ndarray
    agg_t: np.ndarray
    agg: dict
    agg_count: np.ndarray
    divergence_count: int
    output_dir: str = None


def aggregate_traces(cfg, traces):
    """Mean / q10 / q90 per iteration across trials, excluding rows a
    diverged trial never produced."""
    n_rows = max(tr.iters.size for tr in traces)
    iters = np.arange(n_rows)
    agg = {name: {"mean": np.full(n_rows, np.nan),
                  "q10": np.full(n_rows, np.nan),
                  "q90": np.full(n_rows, np.nan)} for name in METRIC_COLUMNS}
    count = np.zeros(n_rows, dtype=int)
    for i in range(n_rows):
        alive = [tr for tr in traces if tr.iters.size > i]
        count[i] = len(alive)
        for name in METRIC_COLUMNS:
            vals = np.array([tr.column(name)[i] for tr in alive])
            agg[name]["mean"][i] = vals.mean()
            agg[name]["q10"][i] = np.quantile(vals, 0.1)
            agg[name]["q90"][i] = np.quantile(vals, 0.9)
    return ExperimentResult(
        config=cfg, traces=traces, agg_iters=iters, agg_t=iters * cfg.alpha,
        agg=agg, agg_count=count,
        divergence_count=sum(tr.diverged_at is not None for tr in traces))


def _open_out(path):
    try:
        return open(path, "w", newline="\n")
    except OSError as exc:
        raise OSError("while writing %s: %s" % (path, exc)) from exc


def write_trace_csv(path, trace):
    """One row per recorded iteration, %.17g floats, LF endings."""
    with _open_out(path) as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for j in range(trace.iters.size):
            vals = ["%d" % trace.iters[j]]
            vals += ["%.17g" % trace.column(name)[j] for name in CSV_COLUMNS[1:]]
            fh.write(",".join(vals) + "\n")


def write_aggregate_csv(path, result):
    header = ["iter", "t"]
    for name in METRIC_COLUMNS:
        header += ["%s_mean" % name, "%s_q10" % name, "%s_q90" % name]
    header.append("n_trials")
    with _open_out(path) as fh:
        fh.write(",".join(header) + "\n")
        for i in range(result.agg_iters.size):
            vals = ["%d" % result.agg_iters[i], "%.17g" % result.agg_t[i]]
            for name in METRIC_COLUMNS:
                vals += ["%.17g" % result.agg[name][stat][i]
                         for stat in ("mean", "q10", "q90")]
            vals.append("%d" % result.agg_count[i])
            fh.write(",".join(vals) + "\n")


def _library_versions():
    import scipy
    versions = {"numpy": np.__version__, "scipy": scipy.__version__}
    try:
        from importlib.metadata import version
        versions["artifact"] = version("artifact")
    except Exception:
        versions["artifact"] = "unknown"
    return versions


def resolve_output_dir(requested):
    """Output directory with the environment override applied; the env
    var wins over the flag or config-file value."""
    return os.environ.get(OUTPUT_DIR_ENV) or requested


def run_experiment(cfg):
    """Run all trials, aggregate, and (when an output dir is set)
    persist trial_<k>.csv, aggregate.csv, and manifest.json. The
    manifest is written last as the completion marker.

    Returns:
        ExperimentResult.
    """
    t0 = time.perf_counter()
    traces = [run_trial(cfg, k) for k in range(cfg.n_trials)]
    result = aggregate_traces(cfg, traces)

    out_dir = cfg.output_dir
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        files = []
        for k, trace in enumerate(traces):
            name = "trial_%d.csv" % k
            write_trace_csv(os.path.join(out_dir, name), trace)
            files.append(name)
        write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), result)
        files.append("aggregate.csv")
        manifest = {
            "config": asdict(cfg),
            "seeds": {
                "base_seed": cfg.base_seed,
                "derivation": "SeedSequence(base_seed, spawn_key=(trial,)) -> Philox",
                "trial_keys": list(range(cfg.n_trials)),
            },
            "trials": [{"trial": k, "rows": int(tr.iters.size),
                        "diverged_at": tr.diverged_at}
                       for k, tr in enumerate(traces)],
            "divergence_count": result.divergence_count,
            "versions": _library_versions(),
            "wall_clock_s": time.perf_counter() - t0,
            "files": files,
        }
        path = os.path.join(out_dir, "manifest.json")
        with _open_out(path) as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        result.output_dir = out_dir
    return result
