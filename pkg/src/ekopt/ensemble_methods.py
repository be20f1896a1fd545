"""Ensemble Kalman iterations for nonlinear least squares.

Six update rules on a (d, N) ensemble, split by the objective they
descend and by how the prior enters:

* ``iekf_step``: statistical linearization, gain built from the initial
  ensemble covariance, update anchored to the initial members.
* ``iekf_rzl_step``: like ``iekf_step`` but preconditioned by a matrix
  computed once from the initial ensemble; prone to blow-up at small
  observation noise, which the divergence guard reports.
* ``eki_step``: data-misfit-only update from the current cross
  covariances; no linearization matrix needed.
* ``teki_step``: ``eki_step`` on the augmented system z = [y; m],
  g(u) = [h(u); u], Q = blockdiag(R, P), restoring the prior term.
* ``iekf_sl_step``: statistical linearization with the true prior
  covariance in the gain and doubled perturbation noise; holds the
  ensemble spread at the posterior instead of collapsing it.
* ``eki_sl_step``: data-misfit analogue of ``iekf_sl_step`` with the
  (1 + alpha) innovation scaling.

Every step runs the same phase order: forward evaluations, ensemble
statistics, linearization, gain, perturbation draws, member update.
Draws consume the generator in a fixed order (data draws first, prior
draws second), so runs are reproducible given the seed. Perturbation
covariances scale with 1/alpha, doubled for the two
statistical-linearization methods.

Steps take a MethodState and return the updated (d, N) ensemble; the
state is advanced in place. A non-finite member or a member norm above
MAX_MEMBER_NORM raises DivergenceError tagged with the iteration.
"""

import numpy as np
from dataclasses import dataclass
from scipy.linalg import cho_factor, cho_solve

from .linalg import symmetrize, kalman_gain, pseudo_inverse
from .ensemble import (compute_stats, stat_linearize, augment,
                       check_members, DivergenceError)
from .problems import forward_all


@dataclass
class EnsMethodConfig:
    """Per-run settings shared by the six step functions.

    suppress_perturbations is a test hook: it replaces every
    perturbation draw by its exact center, exposing the noise-free
    skeleton of an update for fixed-point checks. Never set in
    experiments.
    """

    alpha: float
    n_members: int
    max_iters: int = 0
    rtol_pinv: float = None
    method_id: str = None
    suppress_perturbations: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.n_members < 2:
            raise ValueError("at least 2 ensemble members required")
        if self.method_id is not None and self.method_id not in METHODS:
            raise ValueError("unknown method %r; known: %s"
                             % (self.method_id, ", ".join(sorted(METHODS))))


@dataclass
class MethodState:
    """State threaded through an ensemble run.

    current: (d, N) ensemble, replaced by each step.
    initial: (d, N) initial ensemble, never mutated; the anchored
        methods read u_0 and the initial covariances from it.
    iter: completed step count.

    The anchor fields are computed on demand from ``initial`` by the
    first iekf / iekf_rzl step and cached.
    """

    current: np.ndarray
    initial: np.ndarray
    iter: int = 0
    P0_uu: np.ndarray = None
    rzl_cstar: np.ndarray = None
    rzl_prec0: np.ndarray = None


def make_state(members):
    """Fresh MethodState from a (d, N) initial ensemble."""
    members = np.asarray(members, dtype=float)
    if members.ndim != 2 or members.shape[1] < 2:
        raise ValueError("ensemble must be (d, N) with N >= 2")
    return MethodState(current=members.copy(), initial=members.copy())


def _forward_ensemble(problem, members, method, iteration):
    try:
        h_evals = forward_all(problem, members)
    except ArithmeticError as exc:
        raise DivergenceError(method, iteration, str(exc))
    if not np.all(np.isfinite(h_evals)):
        raise DivergenceError(method, iteration, "non-finite forward evaluation")
    return h_evals


def _draws(center, chol, scale, count, rng, cfg):
    """count draws around center with covariance scale^2 chol chol^T;
    collapsed to the exact center under suppress_perturbations."""
    center = np.asarray(center, dtype=float).ravel()
    if cfg.suppress_perturbations:
        return np.repeat(center[:, None], count, axis=1)
    xi = rng.standard_normal((center.size, count))
    return center[:, None] + scale * (chol @ xi)


def _advance(state, members, method):
    check_members(members, method, state.iter)
    state.current = members
    state.iter += 1
    return members


def _anchor_cov(state):
    """Initial-ensemble covariance P0^uu, computed once and cached."""
    if state.P0_uu is None:
        dev = state.initial - state.initial.mean(axis=1, keepdims=True)
        state.P0_uu = symmetrize(dev @ dev.T) / state.initial.shape[1]
    return state.P0_uu


def iekf_step(state, problem, cfg, rng):
    """Anchored statistical-linearization update. With H_i the current
    linearization and P0 the initial ensemble covariance,

        K = P0 H_i^T (H_i P0 H_i^T + R)^{-1},
        u+ = u + alpha * ( K (y^(n) - h(u)) + (I - K H_i)(u_0^(n) - u) ),

    with member-wise draws y^(n) ~ N(y, R/alpha).
    """
    u = state.current
    h_evals = _forward_ensemble(problem, u, "iekf", state.iter)
    stats = compute_stats(u, h_evals)
    H = stat_linearize(stats, cfg.rtol_pinv)
    K = kalman_gain(_anchor_cov(state), H, problem.noise)
    Y = _draws(problem.y, problem.noise.chol, cfg.alpha ** -0.5,
               u.shape[1], rng, cfg)
    r = state.initial - u
    upd = u + cfg.alpha * (K @ (Y - h_evals) + r - K @ (H @ r))
    return _advance(state, upd, "iekf")


def _rzl_anchor(state, problem, rtol):
    """Fixed preconditioner C* = P0^uu - P0^uy (R + P0^yy)^{-1} (P0^uy)^T
    and pinv(P0^uu), both from the initial ensemble, cached."""
    if state.rzl_cstar is None:
        h0 = _forward_ensemble(problem, state.initial, "iekf_rzl", state.iter)
        s0 = compute_stats(state.initial, h0)
        S = cho_factor(symmetrize(problem.noise.mat + s0.P_yy),
                       lower=True, check_finite=False)
        state.rzl_cstar = symmetrize(
            s0.P_uu - s0.P_uy @ cho_solve(S, s0.P_uy.T, check_finite=False))
        state.rzl_prec0 = pseudo_inverse(s0.P_uu, rtol)
    return state.rzl_cstar, state.rzl_prec0


def iekf_rzl_step(state, problem, cfg, rng):
    """Like iekf_step but the gain is replaced by a fixed preconditioner
    C* on the exact gradient of the linearized objective:

        u+ = u + alpha * C* ( H_i^T R^{-1} (y^(n) - h(u))
                              + pinv(P0^uu) (u_0^(n) - u) ),

    y^(n) ~ N(y, R/alpha). C* is computed once from the initial
    ensemble. Known to blow up when R is small; the guard reports it.
    """
    u = state.current
    h_evals = _forward_ensemble(problem, u, "iekf_rzl", state.iter)
    stats = compute_stats(u, h_evals)
    H = stat_linearize(stats, cfg.rtol_pinv)
    cstar, prec0 = _rzl_anchor(state, problem, cfg.rtol_pinv)
    Y = _draws(problem.y, problem.noise.chol, cfg.alpha ** -0.5,
               u.shape[1], rng, cfg)
    grad = H.T @ problem.noise.solve(Y - h_evals) + prec0 @ (state.initial - u)
    return _advance(state, u + cfg.alpha * (cstar @ grad), "iekf_rzl")


def eki_step(state, problem, cfg, rng):
    """Data-misfit update with the current cross covariances:

        K = P^uy (P^yy + R/alpha)^{-1},
        u+ = u + K (y^(n) - h(u)),   y^(n) ~ N(y, R/alpha).
    """
    u = state.current
    h_evals = _forward_ensemble(problem, u, "eki", state.iter)
    stats = compute_stats(u, h_evals)
    S = cho_factor(symmetrize(stats.P_yy + problem.noise.mat / cfg.alpha),
                   lower=True, check_finite=False)
    K = cho_solve(S, stats.P_uy.T, check_finite=False).T
    Y = _draws(problem.y, problem.noise.chol, cfg.alpha ** -0.5,
               u.shape[1], rng, cfg)
    return _advance(state, u + K @ (Y - h_evals), "eki")


def teki_step(state, problem, cfg, rng):
    """eki_step in the augmented variables z = [y; m], g = [h(u); u],
    Q = blockdiag(R, P), with draws z^(n) ~ N(z, Q/alpha)."""
    u = state.current
    h_evals = _forward_ensemble(problem, u, "teki", state.iter)
    aug, stats = augment(u, h_evals, problem.y, problem.noise,
                         problem.prior.mean, problem.prior.cov)
    S = cho_factor(symmetrize(stats.P_yy + aug.Q.mat / cfg.alpha),
                   lower=True, check_finite=False)
    K = cho_solve(S, stats.P_uy.T, check_finite=False).T
    Z = _draws(aug.z, aug.Q.chol, cfg.alpha ** -0.5, u.shape[1], rng, cfg)
    return _advance(state, u + K @ (Z - aug.g_evals), "teki")


def iekf_sl_step(state, problem, cfg, rng):
    """Statistical linearization with the true prior covariance P in the
    gain and doubled perturbation noise:

        K = P H_i^T (H_i P H_i^T + R)^{-1},
        u+ = u + alpha * ( K (y^(n) - h(u)) + (I - K H_i)(m^(n) - u) ),

    y^(n) ~ N(y, 2R/alpha), m^(n) ~ N(m, 2P/alpha). The factor-2 noise
    keeps the stationary spread at the posterior covariance.
    """
    u = state.current
    h_evals = _forward_ensemble(problem, u, "iekf_sl", state.iter)
    stats = compute_stats(u, h_evals)
    H = stat_linearize(stats, cfg.rtol_pinv)
    K = kalman_gain(problem.prior.cov, H, problem.noise)
    scale = (2.0 / cfg.alpha) ** 0.5
    Y = _draws(problem.y, problem.noise.chol, scale, u.shape[1], rng, cfg)
    M = _draws(problem.prior.mean, problem.prior.cov.chol, scale,
               u.shape[1], rng, cfg)
    r = M - u
    upd = u + cfg.alpha * (K @ (Y - h_evals) + r - K @ (H @ r))
    return _advance(state, upd, "iekf_sl")


def eki_sl_step(state, problem, cfg, rng):
    """Data-misfit analogue of iekf_sl_step:

        K = alpha P H_i^T ((1 + alpha) H_i P H_i^T + R)^{-1},
        u+ = u + K (y^(n) - h(u)),   y^(n) ~ N(y, 2R/alpha).
    """
    u = state.current
    h_evals = _forward_ensemble(problem, u, "eki_sl", state.iter)
    stats = compute_stats(u, h_evals)
    H = stat_linearize(stats, cfg.rtol_pinv)
    HP = H @ problem.prior.cov.mat
    S = cho_factor(symmetrize((1.0 + cfg.alpha) * (HP @ H.T) + problem.noise.mat),
                   lower=True, check_finite=False)
    K = cfg.alpha * cho_solve(S, HP, check_finite=False).T
    Y = _draws(problem.y, problem.noise.chol, (2.0 / cfg.alpha) ** 0.5,
               u.shape[1], rng, cfg)
    return _advance(state, u + K @ (Y - h_evals), "eki_sl")


def subspace_check(state, rtol=1e-8):
    """True iff every current member lies in the span of the initial
    members (projection residual <= rtol relative, Frobenius).

    Holds for iekf / eki / teki on every iteration; breaks for the
    statistical-linearization methods once prior draws inject fresh
    directions.
    """
    U, s, _ = np.linalg.svd(state.initial, full_matrices=False)
    keep = s > (s[0] * max(state.initial.shape) * np.finfo(float).eps
                if s.size else 0.0)
    basis = U[:, keep]
    resid = state.current - basis @ (basis.T @ state.current)
    denom = max(np.linalg.norm(state.current), np.finfo(float).tiny)
    return bool(np.linalg.norm(resid) <= rtol * denom)


METHODS = {
    "iekf": iekf_step,
    "iekf_rzl": iekf_rzl_step,
    "eki": eki_step,
    "teki": teki_step,
    "iekf_sl": iekf_sl_step,
    "eki_sl": eki_sl_step,
}
