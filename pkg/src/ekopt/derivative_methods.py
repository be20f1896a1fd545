"""Derivative-based Gauss-Newton and Levenberg-Marquardt iterations.

All three methods see the same data model: y = h(u) + eta with
eta ~ N(0, R) and a Gaussian prior N(m, P) on u. They differ in the
objective and in where the prior enters:

* ``iexkf_step``: Gauss-Newton on the prior-regularized least squares
  1/2 |y - h(u)|^2_R + 1/2 |u - m|^2_P, written in gain form with a
  relaxation factor alpha.
* ``ilm_dm_step``: Levenberg-Marquardt on the pure data misfit
  1/2 |y - h(u)|^2_R, with the prior covariance P acting only as the
  trust-region weight (damping 1/alpha).
* ``ilm_tp_step``: the same Levenberg-Marquardt scheme applied to the
  augmented system z = [y; m], g(u) = [h(u); u], Q = blockdiag(R, P),
  which folds the prior back in as extra observations.

Iterates are plain (d,) vectors, initialized at the prior mean by the
harness. Jacobians come from the problem when it carries an analytic
one and from central finite differences otherwise.
"""

import numpy as np
from scipy.linalg import block_diag

from .linalg import kalman_gain, _mat


def fd_jacobian(forward, u, eps_rel=1e-6):
    """Central-difference Jacobian of a forward map.

    Args:
        forward: callable (d,) -> (k,).
        u: (d,) evaluation point.
        eps_rel: relative step; coordinate j is perturbed by
            eps_rel * (1 + |u_j|).

    Returns:
        (k, d) array.
    """
    u = np.asarray(u, dtype=float)
    cols = []
    for j in range(u.size):
        eps = eps_rel * (1.0 + abs(u[j]))
        up = u.copy()
        dn = u.copy()
        up[j] += eps
        dn[j] -= eps
        cols.append((np.asarray(forward(up)) - np.asarray(forward(dn))) / (2.0 * eps))
    return np.column_stack(cols)


def jacobian_fn(problem, eps_rel=1e-6):
    """Jacobian provider: the problem's analytic Jacobian when present,
    central finite differences otherwise."""
    if problem.jac is not None:
        return problem.jac
    return lambda u: fd_jacobian(problem.forward, u, eps_rel)


def _forward(problem, u):
    hu = np.asarray(problem.forward(u), dtype=float).ravel()
    if not np.all(np.isfinite(hu)):
        raise ArithmeticError("forward evaluation returned non-finite values")
    return hu


def iexkf_step(u, problem, jac, alpha):
    """One Gauss-Newton step on the prior-regularized objective:

        u+ = u + alpha * ( K (y - h(u)) + (I - K H)(m - u) ),
        K = P H^T (H P H^T + R)^{-1},  H = jac(u).

    Args:
        u: (d,) current iterate.
        problem: Problem.
        jac: callable u -> (k, d).
        alpha: relaxation in (0, 1].

    Returns:
        (d,) next iterate.
    """
    u = np.asarray(u, dtype=float)
    hu = _forward(problem, u)
    H = np.atleast_2d(jac(u))
    K = kalman_gain(problem.prior.cov, H, problem.noise)
    r = problem.prior.mean - u
    return u + alpha * (K @ (problem.y - hu) + r - K @ (H @ r))


def ilm_dm_step(u, problem, jac, alpha):
    """One Levenberg-Marquardt step on the data misfit:

        u+ = u + K (y - h(u)),
        K = alpha P H^T (alpha H P H^T + R)^{-1}.

    The gain is the Kalman gain with prior covariance alpha * P.
    """
    u = np.asarray(u, dtype=float)
    hu = _forward(problem, u)
    H = np.atleast_2d(jac(u))
    K = kalman_gain(alpha * _mat(problem.prior.cov), H, problem.noise)
    return u + K @ (problem.y - hu)


def ilm_tp_step(u, problem, jac, alpha):
    """One Levenberg-Marquardt step on the augmented system
    z = [y; m], g(u) = [h(u); u], Q = blockdiag(R, P):

        u+ = u + K (z - g(u)),
        K = alpha P G^T (alpha G P G^T + Q)^{-1},  G = [H; I].
    """
    u = np.asarray(u, dtype=float)
    hu = _forward(problem, u)
    H = np.atleast_2d(jac(u))
    G = np.vstack([H, np.eye(u.size)])
    Q = block_diag(_mat(problem.noise), _mat(problem.prior.cov))
    z = np.concatenate([problem.y, problem.prior.mean])
    gu = np.concatenate([hu, u])
    K = kalman_gain(alpha * _mat(problem.prior.cov), G, Q)
    return u + K @ (z - gu)


DERIVATIVE_METHODS = {
    "iexkf": iexkf_step,
    "ilm_dm": ilm_dm_step,
    "ilm_tp": ilm_tp_step,
}
