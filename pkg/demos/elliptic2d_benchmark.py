#!/usr/bin/env python3
"""Desk-scale run of the two-parameter elliptic benchmark.

All six ensemble methods attack the same two-point boundary value
problem (50 members, alpha = 0.1, 100 iterations, 10 trials). The
printed table reproduces the qualitative picture on this problem:

  * the fixed-linearization variant (iekf_rzl) blows up in nearly
    every trial and is recorded as diverged, not crashed;
  * everything else lands within a few percent of the truth;
  * the inversion methods (eki, teki) end almost collapsed while the
    sampler variants (iekf_sl, eki_sl) retain posterior-sized spread.
"""

import numpy as np

from ekopt.harness import ExperimentConfig, run_experiment

METHOD_IDS = ("iekf", "iekf_rzl", "eki", "teki", "iekf_sl", "eki_sl")


def main():
    print("%-9s %9s %16s %16s" % ("method", "diverged",
                                  "median rel_err", "mean cov_frob"))
    for method_id in METHOD_IDS:
        result = run_experiment(ExperimentConfig(
            problem_id="elliptic2d", method_id=method_id, alpha=0.1,
            n_members=50, n_iters=100, n_trials=10, base_seed=0))
        alive = [tr for tr in result.traces if tr.iters.size == 101]
        if alive:
            err = np.median([tr.column("rel_err")[-1] for tr in alive])
            cov = np.mean([tr.column("cov_frob")[-1] for tr in alive])
            print("%-9s %6d/10 %16.3g %16.3g"
                  % (method_id, result.divergence_count, err, cov))
        else:
            print("%-9s %6d/10 %16s %16s"
                  % (method_id, result.divergence_count, "-", "-"))
    print()
    print("same run via the command line, with CSVs and a manifest:")
    print("  ekopt run --problem elliptic2d --method eki --alpha 0.1 \\")
    print("       --members 50 --iters 100 --trials 10 --out results/")


if __name__ == "__main__":
    main()
