"""Benchmark inverse problems behind one forward-map interface.

Each builder freezes its own data-generation seed so the observed data,
truth, and any random matrices are reproducible. Objective conventions:

    data_misfit        J_DM(u) = 1/2 |y - h(u)|^2_R
    tikhonov_phillips  J_TP(u) = J_DM(u) + 1/2 |u - m|^2_P
"""

import numpy as np
from dataclasses import dataclass
from scipy.linalg import solveh_banded

from .linalg import SpdMatrix, Gaussian, mahalanobis_sqnorm, as_spd


@dataclass
class Problem:
    """Inverse problem y = h(u) + eta, eta ~ N(0, R), with prior N(m, P).

    forward: u (d,) -> (k,). forward_batch, when set, maps (d, N) -> (k, N)
    columnwise and must agree with forward. jac, when set, returns the
    k x d Jacobian of h at u. truth is the parameter used to generate y,
    if known.
    """

    name: str
    dim_u: int
    dim_y: int
    prior: Gaussian
    noise: SpdMatrix
    y: np.ndarray
    forward: callable
    truth: np.ndarray = None
    jac: callable = None
    forward_batch: callable = None
    concurrency_safe: bool = True


def forward_all(problem, members):
    """Evaluate the forward map on every ensemble member.

    Args:
        problem: Problem.
        members: (d, N) array.

    Returns:
        (k, N) array.
    """
    if problem.forward_batch is not None:
        return problem.forward_batch(members)
    return np.stack([problem.forward(members[:, n])
                     for n in range(members.shape[1])], axis=1)


def data_misfit(u, problem, h_u=None):
    """J_DM(u) = 1/2 |y - h(u)|^2_R. Pass h_u to reuse a forward evaluation."""
    if h_u is None:
        h_u = problem.forward(u)
    return 0.5 * mahalanobis_sqnorm(problem.y - h_u, problem.noise)


def tikhonov_phillips(u, problem, h_u=None):
    """J_TP(u) = J_DM(u) + 1/2 |u - m|^2_P."""
    prior = problem.prior
    return data_misfit(u, problem, h_u) \
        + 0.5 * mahalanobis_sqnorm(np.asarray(u) - prior.mean, prior.cov)


def _random_spd(n, rng, lo=0.5, hi=5.0):
    """Random SPD matrix with eigenvalues in [lo, hi] (condition <= hi/lo)."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * rng.uniform(lo, hi, n)) @ q.T


def linear_gaussian(d=10, k=7, seed=0):
    """Random well-conditioned linear-Gaussian test problem."""
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((k, d))
    R = SpdMatrix(_random_spd(k, rng))
    P = SpdMatrix(_random_spd(d, rng))
    m = rng.standard_normal(d)
    truth = m + P.chol @ rng.standard_normal(d)
    y = H @ truth + R.chol @ rng.standard_normal(k)
    return Problem(
        name="linear_gaussian", dim_u=d, dim_y=k,
        prior=Gaussian(m, P), noise=R, y=y, truth=truth,
        forward=lambda u: H @ u, forward_batch=lambda U: H @ U,
        jac=lambda u: H,
    )


def elliptic2d(data_seed=0):
    """Two-parameter elliptic boundary value problem with explicit solution
    p_u(x) = u2 x - (1/2) e^{-u1} (x^2 - x), observed at x = 0.25 and 0.75."""
    xs = np.array([0.25, 0.75])
    gamma = 0.1

    def forward(u):
        # exp overflows for wildly negative u1 on diverging runs; the caller's
        # finite check turns the resulting inf into a divergence record.
        with np.errstate(over="ignore"):
            return u[1] * xs - 0.5 * np.exp(-u[0]) * (xs**2 - xs)

    def forward_batch(U):
        with np.errstate(over="ignore"):
            return np.outer(xs, U[1]) - 0.5 * np.outer(xs**2 - xs, np.exp(-U[0]))

    def jac(u):
        return np.column_stack([0.5 * np.exp(-u[0]) * (xs**2 - xs), xs])

    prior = Gaussian(np.array([0.0, 100.0]), np.diag([1.0, 16.0]))
    truth = np.array([-2.6, 104.5])
    rng = np.random.default_rng(data_seed)
    y = forward(truth) + gamma * rng.standard_normal(2)
    return Problem(
        name="elliptic2d", dim_u=2, dim_y=2,
        prior=prior, noise=SpdMatrix(gamma**2 * np.eye(2)), y=y, truth=truth,
        forward=forward, forward_batch=forward_batch, jac=jac,
    )


def elliptic1d(data_seed=0):
    """High-dimensional linear problem -p'' + p = u on (0, pi) with
    homogeneous Dirichlet conditions, observed at the 15 points j*pi/16.

    Discretization: piecewise-linear elements on 256 interior nodes
    (257 cells, w = pi/257) with lumped mass, so the operator matrix is
    A_h = tridiag(-1, 2, -1)/w^2 + I. The prior covariance is the kernel
    of the operator inverse 10 (A - I)^{-1} evaluated at the nodes,
    (C0)_ij = 10 x_i (pi - x_j) / pi for i <= j (a Brownian bridge scaled
    by 10); against the matrix this reads (A_h - I) C0 = (10/w) I, the
    1/w being the quadrature weight. Observation points fall between
    nodes and are read off by linear interpolation.
    """
    d, k = 256, 15
    w = np.pi / (d + 1)
    nodes = w * np.arange(1, d + 1)
    gamma = 0.01

    # Banded (upper) form of A_h for solveh_banded.
    ab = np.zeros((2, d))
    ab[0, 1:] = -1.0 / w**2
    ab[1, :] = 2.0 / w**2 + 1.0

    # Interpolation matrix O: p(x_obs) from nodal values, zero at the ends.
    x_obs = np.pi * np.arange(1, k + 1) / 16.0
    O = np.zeros((k, d))
    for j, x in enumerate(x_obs):
        i = int(x / w)  # x in [i*w, (i+1)*w), nodes i and i+1 (1-based)
        frac = x / w - i
        O[j, i - 1] = 1.0 - frac
        O[j, i] = frac

    def forward(u):
        return O @ solveh_banded(ab, u, check_finite=False)

    def forward_batch(U):
        return O @ solveh_banded(ab, U, check_finite=False)

    H = solveh_banded(ab, O.T, check_finite=False).T  # O A_h^{-1}, dense 15 x 256

    C0 = 10.0 * np.minimum.outer(nodes, nodes) \
        * (np.pi - np.maximum.outer(nodes, nodes)) / np.pi
    prior = Gaussian(np.zeros(d), C0)
    rng = np.random.default_rng(data_seed)
    truth = prior.cov.chol @ rng.standard_normal(d)
    y = forward(truth) + gamma * rng.standard_normal(k)
    return Problem(
        name="elliptic1d", dim_u=d, dim_y=k,
        prior=prior, noise=SpdMatrix(gamma**2 * np.eye(k)), y=y, truth=truth,
        forward=forward, forward_batch=forward_batch, jac=lambda u: H,
    )


@dataclass
class Lorenz96Config:
    d: int = 40
    F: float = 8.0
    obs_times: tuple = (0.3, 0.6)
    obs_coords: tuple = tuple(range(0, 40, 2))  # z_1, z_3, ..., z_39 as 0-based indices
    dt: float = 0.005  # divides both observation times exactly

    def __post_init__(self):
        if list(self.obs_times) != sorted(self.obs_times):
            raise ValueError("obs_times must be increasing")
        if any(c < 0 or c >= self.d for c in self.obs_coords):
            raise ValueError("obs_coords out of range")


def lorenz96(cfg=None, data_seed=0):
    """Recover the initial condition of the Lorenz-96 system from noisy
    observation of the odd coordinates at t = 0.3 and 0.6 (RK4, fixed step).

    The data vector stacks the observed coordinates time-major: all
    observed coordinates at the first time, then all at the second.
    """
    cfg = cfg or Lorenz96Config()
    coords = np.array(cfg.obs_coords)
    gamma = 0.01
    d = cfg.d
    k = len(coords) * len(cfg.obs_times)
    steps = [int(round(s / cfg.dt)) for s in cfg.obs_times]
    for s, n in zip(cfg.obs_times, steps):
        if abs(n * cfg.dt - s) > 1e-12:
            raise ValueError("dt=%g does not hit observation time %g" % (cfg.dt, s))

    def drift(z):
        return (np.roll(z, -1, axis=0) - np.roll(z, 2, axis=0)) \
            * np.roll(z, 1, axis=0) - z + cfg.F

    def forward_batch(U):
        z = np.array(U, dtype=float)
        out = []
        with np.errstate(over="ignore", invalid="ignore"):
            for step in range(1, steps[-1] + 1):
                k1 = drift(z)
                k2 = drift(z + 0.5 * cfg.dt * k1)
                k3 = drift(z + 0.5 * cfg.dt * k2)
                k4 = drift(z + cfg.dt * k3)
                z = z + cfg.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if step in steps:
                    out.append(z[coords])
        return np.concatenate(out, axis=0)

    def forward(u):
        out = forward_batch(np.asarray(u, dtype=float)[:, None])[:, 0]
        if not np.all(np.isfinite(out)):
            raise ArithmeticError("lorenz96 forward returned non-finite values")
        return out

    prior = Gaussian(np.zeros(d), 2.0 * np.eye(d))
    rng = np.random.default_rng(data_seed)
    truth = prior.cov.chol @ rng.standard_normal(d)
    y = forward(truth) + gamma * rng.standard_normal(k)
    return Problem(
        name="lorenz96", dim_u=d, dim_y=k,
        prior=prior, noise=SpdMatrix(gamma**2 * np.eye(k)), y=y, truth=truth,
        forward=forward, forward_batch=forward_batch,
    )


def oscillatory_regression(seed=0):
    """Nonlinear regression h(u) = Au + sin(20 Bu) with random A, B and a
    highly oscillatory loss landscape. d = 200, k = 150."""
    d, k, c = 200, 150, 20.0
    gamma = 0.01
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((k, d))
    B = rng.standard_normal((k, d))

    def forward_batch(U):
        return A @ U + np.sin(c * (B @ U))

    def forward(u):
        return A @ u + np.sin(c * (B @ u))

    def jac(u):
        return A + c * np.cos(c * (B @ u))[:, None] * B

    prior = Gaussian(np.zeros(d), 4.0 * np.eye(d))
    truth = 2.0 * np.ones(d)
    y = forward(truth) + gamma * rng.standard_normal(k)
    return Problem(
        name="oscillatory_regression", dim_u=d, dim_y=k,
        prior=prior, noise=SpdMatrix(gamma**2 * np.eye(k)), y=y, truth=truth,
        forward=forward, forward_batch=forward_batch, jac=jac,
    )


PROBLEMS = {
    "linear_gaussian": linear_gaussian,
    "elliptic2d": elliptic2d,
    "elliptic1d": elliptic1d,
    "lorenz96": lorenz96,
    "oscillatory_regression": oscillatory_regression,
}


def get_problem(name, **kwargs):
    if name not in PROBLEMS:
        raise KeyError("unknown problem %r; known: %s"
                       % (name, ", ".join(sorted(PROBLEMS))))
    return PROBLEMS[name](**kwargs)
