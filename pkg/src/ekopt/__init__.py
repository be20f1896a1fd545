"""Iterative ensemble Kalman methods for nonlinear least squares,
their derivative-based counterparts, analytic moment oracles for the
linear case, benchmark inverse problems, and a seeded experiment
harness with CSV output."""

from .linalg import (SpdMatrix, Gaussian, sample_gaussian, mahalanobis_sqnorm,
                     kalman_gain, posterior_linear, pseudo_inverse, symmetrize)
from .ensemble import (EnsembleStats, compute_stats, stat_linearize, augment,
                       check_members, DivergenceError, MAX_MEMBER_NORM)
from .derivative_methods import (fd_jacobian, jacobian_fn, iexkf_step,
                                 ilm_dm_step, ilm_tp_step, DERIVATIVE_METHODS)
from .ensemble_methods import (EnsMethodConfig, MethodState, make_state,
                               iekf_step, iekf_rzl_step, eki_step, teki_step,
                               iekf_sl_step, eki_sl_step, subspace_check,
                               METHODS)
from .moments import (posterior_fixed_point, eki_moments, teki_moments,
                      iekf_sl_moments, eki_sl_moments)
from .problems import (Problem, Lorenz96Config, get_problem, PROBLEMS,
                       forward_all, data_misfit, tikhonov_phillips)
from .harness import (ExperimentConfig, RunTrace, ExperimentResult,
                      ConfigError, run_trial, run_experiment,
                      aggregate_traces, trial_rng, prior_penalty,
                      write_trace_csv, write_aggregate_csv,
                      resolve_output_dir, CSV_COLUMNS)
from .cli import cli_main
