"""Ensemble statistics, statistical linearization, and the augmented
(z, g, Q) construction.

An ensemble is a plain d x N array whose columns are the members u^(n).
All empirical covariances use the 1/N normalization (not 1/(N-1)).
"""

import numpy as np
from dataclasses import dataclass
from scipy.linalg import block_diag

from .linalg import SpdMatrix, symmetrize, pseudo_inverse, _mat

# A member whose norm passes this is counted as diverged even if finite.
MAX_MEMBER_NORM = 1e12


class DivergenceError(RuntimeError):
    """Raised when an update produces a non-finite or runaway iterate.

    The harness records the method and iteration and stops the trial
    instead of crashing.
    """

    def __init__(self, method, iteration, detail="non-finite or oversized member"):
        super().__init__("%s diverged at iteration %d: %s" % (method, iteration, detail))
        self.method = method
        self.iteration = iteration


def check_members(members, method, iteration):
    """Divergence guard, applied after every update: all entries finite
    and every column norm below MAX_MEMBER_NORM. Accepts a single (d,)
    iterate or a (d, N) ensemble."""
    members = np.asarray(members)
    if not np.all(np.isfinite(members)):
        raise DivergenceError(method, iteration)
    cols = members if members.ndim == 2 else members[:, None]
    if np.any(np.linalg.norm(cols, axis=0) > MAX_MEMBER_NORM):
        raise DivergenceError(method, iteration, "member norm exceeds %g" % MAX_MEMBER_NORM)


@dataclass
class EnsembleStats:
    """Empirical moments of an ensemble and its forward evaluations.

    mean_u: (d,); mean_h: (k,); P_uu: (d, d); P_uy: (d, k); P_yy: (k, k).
    P_uu and P_yy are stored symmetrized.
    """

    mean_u: np.ndarray
    mean_h: np.ndarray
    P_uu: np.ndarray
    P_uy: np.ndarray
    P_yy: np.ndarray


def compute_stats(members, h_evals):
    """Empirical means and covariances of (u, h(u)) pairs.

    Args:
        members: (d, N) ensemble, N >= 2.
        h_evals: (k, N), column n = h(member n).

    Returns:
        EnsembleStats with 1/N-normalized covariances.
    """
    members = np.asarray(members, dtype=float)
    h_evals = np.asarray(h_evals, dtype=float)
    n = members.shape[1]
    if n < 2:
        raise ValueError("need at least 2 members, got %d" % n)
    if h_evals.shape[1] != n:
        raise ValueError("h_evals has %d columns, expected %d" % (h_evals.shape[1], n))
    mean_u = members.mean(axis=1)
    mean_h = h_evals.mean(axis=1)
    U = members - mean_u[:, None]
    Y = h_evals - mean_h[:, None]
    return EnsembleStats(
        mean_u=mean_u,
        mean_h=mean_h,
        P_uu=symmetrize(U @ U.T / n),
        P_uy=U @ Y.T / n,
        P_yy=symmetrize(Y @ Y.T / n),
    )


def stat_linearize(stats, rtol=None):
    """Statistical linearization H_i = (P^uy)^T pinv(P^uu): the linear
    least-squares fit of the (u, h(u)) pairs. Exact for linear h when the
    ensemble spans the input space.

    Args:
        stats: EnsembleStats.
        rtol: pseudoinverse eigenvalue cutoff; None for the default.

    Returns:
        (k, d) array.
    """
    return stats.P_uy.T @ pseudo_inverse(stats.P_uu, rtol)


@dataclass
class AugmentedSystem:
    """Augmented data z = [y; m], covariance Q = blockdiag(R, P), and the
    stacked evaluations g(u) = [h(u); u]."""

    z: np.ndarray
    Q: SpdMatrix
    g_evals: np.ndarray


def augment(members, h_evals, y, R, m, P):
    """Build the augmented system behind the Tikhonov-Phillips objective:
    |z - g(u)|^2_Q = |y - h(u)|^2_R + |u - m|^2_P.

    Args:
        members: (d, N) ensemble.
        h_evals: (k, N) forward evaluations.
        y: (k,) data; R: (k, k) SPD noise covariance.
        m: (d,) prior mean; P: (d, d) SPD prior covariance.

    Returns:
        (AugmentedSystem, EnsembleStats) where the stats are over the
        pairs (u, g(u)), so P_uy is P^uz and P_yy is P^zz.
    """
    y = np.asarray(y, dtype=float).ravel()
    m = np.asarray(m, dtype=float).ravel()
    z = np.concatenate([y, m])
    Q = SpdMatrix(block_diag(_mat(R), _mat(P)))
    g_evals = np.vstack([h_evals, members])
    return AugmentedSystem(z=z, Q=Q, g_evals=g_evals), compute_stats(members, g_evals)
