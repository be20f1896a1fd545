"""Closed-form linear-case mean/covariance trajectories of the continuum
limits, used as ground truth when testing the ensemble methods.

All functions are pure and take plain arrays. Time t is the continuous
time of the limiting dynamics; an iteration i at length-step alpha sits
at t = i * alpha.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve, expm
from scipy.integrate import solve_ivp

from .linalg import Gaussian, symmetrize, posterior_linear, _mat


def posterior_fixed_point(H, R, P, m, y):
    """Posterior mean and covariance of the linear-Gaussian model.

    Returns:
        (mu, C) with mu (d,) and C (d, d).
    """
    post = posterior_linear(H, R, Gaussian(m, P), y)
    return post.mu, post.C.mat


def _precision_pair(C0, H, R):
    """C0^{-1} and A = H^T R^{-1} H, both via Cholesky solves."""
    C0 = _mat(C0)
    R = _mat(R)
    H = np.asarray(H, dtype=float)
    d = C0.shape[0]
    c0 = cho_factor(C0, lower=True, check_finite=False)
    prec0 = symmetrize(cho_solve(c0, np.eye(d), check_finite=False))
    r = cho_factor(R, lower=True, check_finite=False)
    A = symmetrize(H.T @ cho_solve(r, H, check_finite=False))
    return prec0, A, r


def eki_moments(t, m0, C0, H, R, y):
    """Mean-field moments of the ensemble Kalman inversion flow:
    the precision grows linearly with tempered-likelihood time,

        cov(t)  = (C0^{-1} + t H^T R^{-1} H)^{-1},
        mean(t) = cov(t) (C0^{-1} m0 + t H^T R^{-1} y).

    Args:
        t: nonnegative time.
        m0, C0: initial mean (d,) and SPD covariance (d, d).
        H: (k, d); R: (k, k) SPD; y: (k,) data.

    Returns:
        (mean, cov) at time t.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    m0 = np.asarray(m0, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    prec0, A, r = _precision_pair(C0, H, R)
    H = np.asarray(H, dtype=float)
    prec_t = cho_factor(prec0 + t * A, lower=True, check_finite=False)
    rhs = prec0 @ m0 + t * (H.T @ cho_solve(r, y, check_finite=False))
    mean = cho_solve(prec_t, rhs, check_finite=False)
    d = m0.shape[0]
    cov = symmetrize(cho_solve(prec_t, np.eye(d), check_finite=False))
    return mean, cov


def teki_moments(t, m0, C0, H, R, P, m, y):
    """EKI moments in the augmented variables G = [H; I], Q = blockdiag(R, P),
    z = [y; m]; the t -> infinity limit is the true posterior mean."""
    H = np.asarray(H, dtype=float)
    d = H.shape[1]
    G = np.vstack([H, np.eye(d)])
    R = _mat(R)
    P = _mat(P)
    Q = np.zeros((R.shape[0] + d, R.shape[0] + d))
    Q[:R.shape[0], :R.shape[0]] = R
    Q[R.shape[0]:, R.shape[0]:] = P
    z = np.concatenate([np.asarray(y, dtype=float).ravel(),
                        np.asarray(m, dtype=float).ravel()])
    return eki_moments(t, m0, C0, G, Q, z)


def iekf_sl_moments(t, m0, C0, H, R, P, m, y):
    """Moments of the statistically-linearized Gauss-Newton flow: plain
    exponential relaxation onto the posterior pair (mu, C),

        mean(t) = e^{-t} m0 + (1 - e^{-t}) mu,
        cov(t)  = e^{-2t} C0 + (1 - e^{-2t}) C.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    mu, C = posterior_fixed_point(H, R, P, m, y)
    m0 = np.asarray(m0, dtype=float).ravel()
    C0 = _mat(C0)
    w = np.exp(-t)
    return w * m0 + (1.0 - w) * mu, symmetrize(w**2 * C0 + (1.0 - w**2) * C)


def eki_sl_moments(t, m0, C0, H, R, P, y, ode_tol=1e-10):
    """Moments of the statistically-linearized inversion flow.

    With A = H^T R^{-1} H and C = (P^{-1} + A)^{-1} fixed, the mean obeys
    the affine ODE  dm/dt = C H^T R^{-1} y - C A m, solved here exactly
    through an augmented matrix exponential. The covariance obeys the
    Lyapunov ODE  dS/dt = -C A S - S A C + 2 C A C, which has no closed
    form stated; it is integrated numerically to tolerance ode_tol so it
    can serve as ground truth at looser test tolerances.

    Returns:
        (mean, cov) at time t.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    m0 = np.asarray(m0, dtype=float).ravel()
    C0 = _mat(C0)
    P = _mat(P)
    d = m0.shape[0]
    prec_prior, A, r = _precision_pair(P, H, R)
    H = np.asarray(H, dtype=float)
    c = cho_factor(symmetrize(prec_prior + A), lower=True, check_finite=False)
    C = symmetrize(cho_solve(c, np.eye(d), check_finite=False))

    # Mean: d/dt [m; 1] = [[-CA, b], [0, 0]] [m; 1] with b = C H^T R^{-1} y.
    CA = C @ A
    b = C @ (H.T @ cho_solve(r, np.asarray(y, dtype=float).ravel(),
                             check_finite=False))
    M = np.zeros((d + 1, d + 1))
    M[:d, :d] = -CA
    M[:d, d] = b
    mean = (expm(M * t) @ np.append(m0, 1.0))[:d]

    if t == 0:
        return mean, symmetrize(C0)
    CAC = symmetrize(CA @ C)

    def rhs(_, s):
        S = s.reshape(d, d)
        dS = -CA @ S - S @ CA.T + 2.0 * CAC
        return dS.ravel()

    sol = solve_ivp(rhs, (0.0, t), C0.ravel(), method="DOP853",
                    rtol=ode_tol, atol=ode_tol)
    if not sol.success:
        raise RuntimeError("covariance ODE integration failed: %s" % sol.message)
    return mean, symmetrize(sol.y[:, -1].reshape(d, d))
