"""Dense SPD linear algebra: weighted norms, Gaussian sampling, and the
linear-Gaussian posterior in its two equivalent forms."""

import numpy as np
from dataclasses import dataclass
from scipy.linalg import cho_factor, cho_solve, eigh, solve_triangular

# Relative eigenvalue cutoff for the pseudoinverse is DEFAULT_PINV_RTOL * dim.
DEFAULT_PINV_RTOL = 1e-12


def symmetrize(M):
    """Average a matrix with its transpose. Covariance updates drift off
    symmetry over hundreds of iterations; every stored covariance goes
    through here."""
    return 0.5 * (M + M.T)


class SpdMatrix:
    """Symmetric positive definite matrix with a cached Cholesky factor.

    The entries are stored symmetrized. Construction fails (LinAlgError)
    if the matrix is not positive definite. All solves go through the
    factor; the matrix is never inverted explicitly.
    """

    def __init__(self, mat):
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("SpdMatrix must be square, got shape %s" % (mat.shape,))
        self.mat = symmetrize(mat)
        # Lower-triangular factor, also reused as the sampling square root.
        self.chol = np.linalg.cholesky(self.mat)
        self._cho = (self.chol, True)

    @property
    def dim(self):
        return self.mat.shape[0]

    def solve(self, b):
        """Return A^{-1} b via the Cholesky factor. b: (dim,) or (dim, m)."""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.dim:
            raise ValueError("dimension mismatch: %d vs %d" % (b.shape[0], self.dim))
        return cho_solve(self._cho, b, check_finite=False)

    def __repr__(self):
        return "SpdMatrix(dim=%d)" % self.dim


def as_spd(A):
    """Coerce an array (or SpdMatrix) to SpdMatrix."""
    return A if isinstance(A, SpdMatrix) else SpdMatrix(A)


def _mat(A):
    """Underlying ndarray of an SpdMatrix, or the array itself."""
    return A.mat if isinstance(A, SpdMatrix) else np.asarray(A, dtype=float)


@dataclass
class Gaussian:
    """Gaussian with mean (d,) and SPD covariance (d, d)."""

    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.cov = as_spd(self.cov)
        if self.mean.shape[0] != self.cov.dim:
            raise ValueError("mean length %d != cov dim %d"
                             % (self.mean.shape[0], self.cov.dim))

    @property
    def dim(self):
        return self.mean.shape[0]


def sample_gaussian(g, count, rng):
    """Draw i.i.d. samples from a Gaussian.

    Args:
        g: Gaussian.
        count: number of samples, >= 1.
        rng: numpy Generator.

    Returns:
        (d, count) array, column j an independent N(mean, cov) draw.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    xi = rng.standard_normal((g.dim, count))
    return g.mean[:, None] + g.cov.chol @ xi


def mahalanobis_sqnorm(v, A):
    """Squared weighted norm |v|^2_A = v^T A^{-1} v, computed via a
    Cholesky solve.

    Args:
        v: (d,) vector.
        A: SpdMatrix (or SPD array), d x d.

    Returns:
        Nonnegative scalar.
    """
    A = as_spd(A)
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != A.dim:
        raise ValueError("dimension mismatch: %d vs %d" % (v.shape[0], A.dim))
    # Solve L w = v, so |v|^2_A = |w|^2 >= 0 exactly.
    w = solve_triangular(A.chol, v, lower=True, check_finite=False)
    return float(w @ w)


def kalman_gain(P, H, R):
    """Gain K = P H^T (H P H^T + R)^{-1} via a Cholesky solve.

    Args:
        P: (d, d) symmetric PSD array (rank deficiency allowed).
        H: (k, d) array.
        R: SPD (k, k); keeps the innovation matrix positive definite.

    Returns:
        (d, k) array.
    """
    P = _mat(P)
    R = _mat(R)
    H = np.asarray(H, dtype=float)
    HP = H @ P
    S = cho_factor(symmetrize(HP @ H.T + R), lower=True, check_finite=False)
    return cho_solve(S, HP, check_finite=False).T


@dataclass
class PosteriorResult:
    """Posterior of a linear-Gaussian model: mean mu, covariance C, and
    gain K = C H^T R^{-1}."""

    mu: np.ndarray
    C: SpdMatrix
    K: np.ndarray


def posterior_linear(H, R, prior, y):
    """Posterior for y = Hu + eta, eta ~ N(0, R), u ~ N(m, P).

    Computes both the precision form
        C^{-1} = H^T R^{-1} H + P^{-1},   C^{-1} mu = H^T R^{-1} y + P^{-1} m
    and the Kalman form
        mu = m + K(y - Hm),   C = (I - KH) P,   K = P H^T (H P H^T + R)^{-1}
    and asserts their agreement (1e-8 relative, debug builds only).

    Args:
        H: (k, d) array.
        R: SPD (k, k) noise covariance.
        prior: Gaussian N(m, P) on u.
        y: (k,) data vector.

    Returns:
        PosteriorResult. mu/C are taken from the precision form; K is
        C H^T R^{-1}, which equals the Kalman gain exactly in this model.
    """
    H = np.asarray(H, dtype=float)
    R = as_spd(R)
    y = np.asarray(y, dtype=float).ravel()
    m, P = prior.mean, prior.cov
    d = P.dim
    if H.shape != (R.dim, d) or y.shape[0] != R.dim:
        raise ValueError("inconsistent dimensions")

    Rinv_H = R.solve(H)
    prec = symmetrize(H.T @ Rinv_H + P.solve(np.eye(d)))
    rhs = H.T @ R.solve(y) + P.solve(m)
    prec_cho = cho_factor(prec, lower=True, check_finite=False)
    mu = cho_solve(prec_cho, rhs, check_finite=False)
    C = SpdMatrix(cho_solve(prec_cho, np.eye(d), check_finite=False))

    K = kalman_gain(P, H, R)
    mu_k = m + K @ (y - H @ m)
    C_k = symmetrize((np.eye(d) - K @ H) @ P.mat)
    assert np.allclose(mu, mu_k, rtol=1e-8, atol=1e-8 * (1 + np.linalg.norm(mu)))
    assert np.allclose(C.mat, C_k, rtol=1e-8, atol=1e-8 * (1 + np.linalg.norm(C.mat)))

    return PosteriorResult(mu=mu, C=C, K=R.solve(H @ C.mat).T)


def pseudo_inverse(M, rtol=None):
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix via
    eigendecomposition.

    Eigenvalues below rtol * lambda_max are treated as zero. Default
    rtol is DEFAULT_PINV_RTOL * dim.

    Args:
        M: (n, n) symmetric PSD array.
        rtol: relative eigenvalue cutoff, or None for the default.

    Returns:
        (n, n) symmetric array.
    """
    M = symmetrize(np.asarray(M, dtype=float))
    n = M.shape[0]
    if rtol is None:
        rtol = DEFAULT_PINV_RTOL * n
    vals, vecs = eigh(M, check_finite=False)
    lam_max = vals[-1]
    if lam_max <= 0.0:
        return np.zeros_like(M)
    inv_vals = np.where(vals > rtol * lam_max, 1.0 / np.where(vals > 0, vals, 1.0), 0.0)
    return symmetrize((vecs * inv_vals) @ vecs.T)
