"""Command line front end.

Subcommands:
    run     one experiment from flags and/or a JSON config file
    suite   the full benchmark grid with the default settings
    oracle  print analytic moment trajectories for a linear problem
    list    registered method and problem ids

Exit codes: 0 success, 1 configuration or usage error, 2 when every
trial of some experiment diverged.
"""

import argparse
import json
import sys

import numpy as np

from .harness import (ExperimentConfig, ConfigError, run_experiment,
                      resolve_output_dir)
from .ensemble_methods import METHODS
from .derivative_methods import DERIVATIVE_METHODS
from .problems import PROBLEMS, get_problem
from . import moments

# CLI flag -> ExperimentConfig field
_RUN_FIELDS = (
    ("problem", "problem_id"),
    ("method", "method_id"),
    ("alpha", "alpha"),
    ("members", "n_members"),
    ("iters", "n_iters"),
    ("trials", "n_trials"),
    ("seed", "base_seed"),
    ("out", "output_dir"),
    ("T", "T"),
    ("init_ensemble", "initial_ensemble"),
    ("rtol_pinv", "rtol_pinv"),
)

# problem id -> (methods, alpha, horizon T); one benchmark per problem
_SENSITIVE_NOISE = ("iekf", "eki", "teki", "iekf_sl", "eki_sl")
SUITE = (
    ("elliptic2d", ("iekf", "iekf_rzl", "eki", "teki", "iekf_sl", "eki_sl"),
     0.1, 10.0),
    ("elliptic1d", _SENSITIVE_NOISE, 0.05, 30.0),
    ("lorenz96", _SENSITIVE_NOISE, 0.05, 30.0),
    ("oscillatory_regression", _SENSITIVE_NOISE, 0.05, 30.0),
)

ORACLES = {
    "eki": lambda t, pb, H: moments.eki_moments(
        t, pb.prior.mean, pb.prior.cov.mat, H, pb.noise.mat, pb.y),
    "teki": lambda t, pb, H: moments.teki_moments(
        t, pb.prior.mean, pb.prior.cov.mat, H, pb.noise.mat,
        pb.prior.cov.mat, pb.prior.mean, pb.y),
    "iekf_sl": lambda t, pb, H: moments.iekf_sl_moments(
        t, pb.prior.mean, pb.prior.cov.mat, H, pb.noise.mat,
        pb.prior.cov.mat, pb.prior.mean, pb.y),
    "eki_sl": lambda t, pb, H: moments.eki_sl_moments(
        t, pb.prior.mean, pb.prior.cov.mat, H, pb.noise.mat,
        pb.prior.cov.mat, pb.y),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ekopt",
        description="Ensemble Kalman and derivative-based least-squares solvers.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="JSON file with ExperimentConfig fields")
    run.add_argument("--problem", help="problem id")
    run.add_argument("--method", help="method id")
    run.add_argument("--alpha", type=float, help="length step")
    run.add_argument("--members", type=int, help="ensemble size N")
    run.add_argument("--iters", type=int, help="iteration count")
    run.add_argument("--T", type=float, help="time horizon; iters = round(T/alpha)")
    run.add_argument("--trials", type=int, help="number of trials (default 10)")
    run.add_argument("--seed", type=int, help="base seed (default 0)")
    run.add_argument("--out", help="output directory")
    run.add_argument("--init-ensemble", dest="init_ensemble",
                     help=".npy file with a (d, N) initial ensemble")
    run.add_argument("--rtol-pinv", dest="rtol_pinv", type=float,
                     help="pseudoinverse eigenvalue cutoff")

    suite = sub.add_parser("suite", help="run the full benchmark grid")
    suite.add_argument("--out", required=True, help="base output directory")
    suite.add_argument("--seed", type=int, default=0)
    suite.add_argument("--trials", type=int, default=10)
    suite.add_argument("--members", type=int, default=50)
    suite.add_argument("--max-iters", dest="max_iters", type=int,
                       help="cap per-experiment iterations (smoke runs)")

    oracle = sub.add_parser("oracle",
                            help="analytic moment trajectories, linear problem")
    oracle.add_argument("--method", required=True, choices=sorted(ORACLES))
    oracle.add_argument("--times", default="0,0.5,1,2,5,10",
                        help="comma-separated times")
    oracle.add_argument("--dim", type=int, default=10)
    oracle.add_argument("--obs", type=int, default=7)
    oracle.add_argument("--seed", type=int, default=0)

    sub.add_parser("list", help="print method and problem ids")
    return parser


def _cmd_run(args):
    fields = {}
    if args.config is not None:
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - {f for _, f in _RUN_FIELDS} - {"problem_params"}
        if unknown:
            raise ConfigError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        fields.update(loaded)
    for flag, field in _RUN_FIELDS:
        value = getattr(args, flag)
        if value is not None:
            fields[field] = value

    for required in ("problem_id", "method_id", "alpha"):
        if required not in fields:
            raise ConfigError("missing required setting %r" % required)
    if "n_iters" not in fields:
        if fields.get("T") is None:
            raise ConfigError("give --iters or --T")
        fields["n_iters"] = int(round(fields["T"] / fields["alpha"]))
    fields["output_dir"] = resolve_output_dir(fields.get("output_dir"))

    cfg = ExperimentConfig(**fields)
    result = run_experiment(cfg)
    final = result.agg["rel_err"]["mean"][-1] if result.agg_iters.size else float("nan")
    print("%s/%s: %d trials, %d diverged, final rel_err mean %.3g%s"
          % (cfg.problem_id, cfg.method_id, cfg.n_trials,
             result.divergence_count, final,
             "" if cfg.output_dir is None else ", wrote %s" % cfg.output_dir))
    return 2 if result.divergence_count == cfg.n_trials else 0


def _cmd_suite(args):
    import os

    base = resolve_output_dir(args.out)
    code = 0
    for problem_id, methods, alpha, horizon in SUITE:
        n_iters = int(round(horizon / alpha))
        if args.max_iters is not None:
            n_iters = min(n_iters, args.max_iters)
        for method_id in methods:
            cfg = ExperimentConfig(
                problem_id=problem_id, method_id=method_id, alpha=alpha,
                n_members=args.members, n_iters=n_iters, n_trials=args.trials,
                base_seed=args.seed,
                output_dir=os.path.join(base, problem_id, method_id))
            result = run_experiment(cfg)
            final = (result.agg["rel_err"]["mean"][-1]
                     if result.agg_iters.size else float("nan"))
            print("[suite] %s/%s: %d trials, %d diverged, final rel_err mean %.3g"
                  % (problem_id, method_id, cfg.n_trials,
                     result.divergence_count, final))
            if result.divergence_count == cfg.n_trials:
                code = 2
    return code


def _cmd_oracle(args):
    try:
        times = [float(s) for s in args.times.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("bad --times value %r" % args.times)
    problem = get_problem("linear_gaussian", d=args.dim, k=args.obs,
                          seed=args.seed)
    H = problem.jac(problem.prior.mean)
    fn = ORACLES[args.method]
    print("t," + ",".join("m_%d" % j for j in range(args.dim)) + ",cov_frob")
    for t in times:
        mean, cov = fn(t, problem, H)
        cells = ["%.17g" % t]
        cells += ["%.17g" % v for v in mean]
        cells.append("%.17g" % np.linalg.norm(cov))
        print(",".join(cells))
    return 0


def _cmd_list(args):
    print("methods:")
    for name in list(DERIVATIVE_METHODS) + list(METHODS):
        print("  %s" % name)
    print("problems:")
    for name in PROBLEMS:
        print("  %s" % name)
    return 0


def cli_main(argv=None):
    """Parse argv and dispatch; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors (already printed); 0 for --help
        return 0 if exc.code == 0 else 1
    handler = {"run": _cmd_run, "suite": _cmd_suite,
               "oracle": _cmd_oracle, "list": _cmd_list}[args.command]
    try:
        return handler(args)
    except (ConfigError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
