"""Tests for the benchmark problems: frozen analytic values, structural
identities (linearity, equivariance, operator inverses), Jacobians against
finite differences, integrator accuracy, and data reproducibility."""

import numpy as np
import pytest

from ekopt import (
    PROBLEMS,
    data_misfit,
    forward_all,
    get_problem,
    mahalanobis_sqnorm,
    tikhonov_phillips,
)
from ekopt.derivative_methods import fd_jacobian
from ekopt.problems import Lorenz96Config, Problem, lorenz96


def test_registry_contains_all_builders():
    assert sorted(PROBLEMS) == [
        "elliptic1d", "elliptic2d", "linear_gaussian",
        "lorenz96", "oscillatory_regression",
    ]
    with pytest.raises(KeyError, match="elliptic2d"):
        get_problem("nope")


def test_objectives_split_into_misfit_plus_penalty():
    pb = get_problem("linear_gaussian", d=4, k=3, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = rng.standard_normal(4)
        penalty = 0.5 * mahalanobis_sqnorm(u - pb.prior.mean, pb.prior.cov)
        assert tikhonov_phillips(u, pb) == pytest.approx(
            data_misfit(u, pb) + penalty, rel=1e-12)


def test_forward_all_falls_back_to_columnwise_loop():
    pb = get_problem("linear_gaussian", d=3, k=2, seed=1)
    loop_pb = Problem(
        name=pb.name, dim_u=pb.dim_u, dim_y=pb.dim_y, prior=pb.prior,
        noise=pb.noise, y=pb.y, forward=pb.forward, truth=pb.truth,
    )
    members = np.random.default_rng(2).standard_normal((3, 6))
    np.testing.assert_allclose(forward_all(loop_pb, members),
                               forward_all(pb, members), atol=1e-14)


def test_linear_gaussian_forward_is_its_jacobian():
    pb = get_problem("linear_gaussian", d=5, k=4, seed=3)
    H = pb.jac(None)
    rng = np.random.default_rng(3)
    u = rng.standard_normal(5)
    np.testing.assert_allclose(pb.forward(u), H @ u, atol=1e-14)
    U = rng.standard_normal((5, 8))
    np.testing.assert_allclose(pb.forward_batch(U), H @ U, atol=1e-14)


def test_linear_gaussian_is_reproducible_per_seed():
    a = get_problem("linear_gaussian", d=4, k=3, seed=9)
    b = get_problem("linear_gaussian", d=4, k=3, seed=9)
    c = get_problem("linear_gaussian", d=4, k=3, seed=10)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.truth, b.truth)
    assert not np.array_equal(a.y, c.y)


def test_elliptic2d_solution_values_at_observation_points():
    pb = get_problem("elliptic2d")
    # p_u(x) = u2 x - e^{-u1}(x^2 - x)/2 at x = 1/4, 3/4; both quadratic
    # terms equal 3/32 when u = 0.
    np.testing.assert_allclose(pb.forward(np.zeros(2)), [0.09375, 0.09375],
                               atol=0.0)
    np.testing.assert_allclose(
        pb.forward(np.array([-2.6, 104.5])),
        [27.387225440781407, 79.63722544078141], rtol=1e-13)


def test_elliptic2d_forward_is_linear_in_second_coordinate():
    pb = get_problem("elliptic2d")
    xs = np.array([0.25, 0.75])
    base = pb.forward(np.array([0.7, 0.0]))
    shifted = pb.forward(np.array([0.7, 5.5]))
    np.testing.assert_allclose(shifted - base, 5.5 * xs, atol=0.0)


def test_elliptic2d_jacobian_matches_finite_differences():
    pb = get_problem("elliptic2d")
    u = np.array([-1.0, 3.0])
    J = pb.jac(u)
    Jfd = fd_jacobian(pb.forward, u)
    assert np.linalg.norm(Jfd - J) / np.linalg.norm(J) < 1e-9


def test_elliptic2d_batch_forward_agrees_with_columnwise():
    pb = get_problem("elliptic2d")
    U = np.random.default_rng(4).standard_normal((2, 7))
    np.testing.assert_allclose(
        pb.forward_batch(U),
        np.stack([pb.forward(U[:, j]) for j in range(7)], axis=1),
        rtol=1e-13)


def test_elliptic2d_data_is_reproducible_and_near_truth_image():
    a = get_problem("elliptic2d")
    b = get_problem("elliptic2d")
    np.testing.assert_array_equal(a.y, b.y)
    # y = h(truth) + 0.1 xi with standard normal xi.
    assert np.linalg.norm(a.y - a.forward(a.truth)) < 0.5


def test_elliptic1d_recovers_analytic_sine_solution():
    # -p'' + p = sin has solution sin/2; nodal loading and interpolation
    # keep the discretization error well below the 0.01 noise level.
    pb = get_problem("elliptic1d")
    w = np.pi / 257.0
    nodes = w * np.arange(1, 257)
    x_obs = np.pi * np.arange(1, 16) / 16.0
    out = pb.forward(np.sin(nodes))
    assert np.abs(out - np.sin(x_obs) / 2.0).max() < 1e-4


def test_elliptic1d_forward_is_linear_and_matches_jacobian():
    pb = get_problem("elliptic1d")
    rng = np.random.default_rng(5)
    u, v = rng.standard_normal((2, 256))
    lhs = pb.forward(2.0 * u - 3.0 * v)
    rhs = 2.0 * pb.forward(u) - 3.0 * pb.forward(v)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    H = pb.jac(None)
    assert H.shape == (15, 256)
    np.testing.assert_allclose(H @ u, pb.forward(u), atol=1e-12)


def test_elliptic1d_prior_covariance_inverts_the_operator():
    # C0 is the kernel of 10 (A - I)^{-1} at the nodes, so the discrete
    # operator gives back (10/w) I, w being the quadrature weight.
    pb = get_problem("elliptic1d")
    d, w = 256, np.pi / 257.0
    T = (np.diag(np.full(d, 2.0)) - np.diag(np.ones(d - 1), 1)
         - np.diag(np.ones(d - 1), -1)) / w**2
    np.testing.assert_allclose(T @ pb.prior.cov.mat, (10.0 / w) * np.eye(d),
                               atol=1e-8)


def test_elliptic1d_covariance_is_scaled_brownian_bridge():
    pb = get_problem("elliptic1d")
    w = np.pi / 257.0
    C0 = pb.prior.cov.mat
    for i, j in ((0, 0), (3, 200), (255, 255), (128, 64)):
        xi, xj = w * (i + 1), w * (j + 1)
        lo, hi = min(xi, xj), max(xi, xj)
        assert C0[i, j] == pytest.approx(10.0 * lo * (np.pi - hi) / np.pi,
                                         rel=1e-12)


def test_lorenz96_constant_state_is_an_equilibrium():
    # drift((z_{i+1} - z_{i-2}) z_{i-1} - z_i + F) vanishes at z = F.
    pb = get_problem("lorenz96")
    np.testing.assert_allclose(pb.forward(np.full(40, 8.0)), 8.0, atol=1e-12)


def test_lorenz96_respects_cyclic_shift_symmetry():
    # Rotating the initial state by two sites rotates each observed
    # block (the even coordinates) by one slot, exactly.
    pb = get_problem("lorenz96")
    u = np.random.default_rng(7).standard_normal(40)
    base = pb.forward(u).reshape(2, 20)
    rolled = pb.forward(np.roll(u, 2)).reshape(2, 20)
    np.testing.assert_allclose(rolled, np.roll(base, 1, axis=1), atol=1e-12)


def test_lorenz96_integrator_has_fourth_order_steps():
    ic = np.random.default_rng(5).standard_normal(40) * 1.4
    ref = lorenz96(Lorenz96Config(dt=0.00125)).forward(ic)
    e_coarse = np.linalg.norm(lorenz96(Lorenz96Config(dt=0.02)).forward(ic) - ref)
    e_fine = np.linalg.norm(lorenz96(Lorenz96Config(dt=0.01)).forward(ic) - ref)
    assert 12.0 < e_coarse / e_fine < 20.0  # ~2^4 with reference error bias


def test_lorenz96_default_step_is_converged():
    ic = np.random.default_rng(5).standard_normal(40) * 1.4
    a = get_problem("lorenz96").forward(ic)
    b = lorenz96(Lorenz96Config(dt=0.0025)).forward(ic)
    assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-8


def test_lorenz96_raises_on_blowup_instead_of_returning_nan():
    # Constant states decay (drift there is F - z), so use an alternating
    # state large enough for the quadratic term to overflow.
    pb = get_problem("lorenz96")
    with pytest.raises(ArithmeticError):
        pb.forward(1e6 * (-1.0) ** np.arange(40))


def test_lorenz96_config_validation():
    with pytest.raises(ValueError):
        Lorenz96Config(obs_times=(0.6, 0.3))
    with pytest.raises(ValueError):
        Lorenz96Config(obs_coords=(0, 40))
    with pytest.raises(ValueError):
        lorenz96(Lorenz96Config(dt=0.007))  # does not divide 0.3


def test_lorenz96_data_layout_is_time_major():
    cfg = Lorenz96Config()
    pb = lorenz96(cfg)
    assert pb.dim_y == 40
    # First block: observation at t=0.3 only.
    short = lorenz96(Lorenz96Config(obs_times=(0.3,)))
    ic = np.random.default_rng(8).standard_normal(40)
    np.testing.assert_allclose(pb.forward(ic)[:20], short.forward(ic),
                               atol=1e-12)


def test_oscillatory_regression_structure():
    pb = get_problem("oscillatory_regression")
    assert pb.dim_u == 200 and pb.dim_y == 150
    np.testing.assert_allclose(pb.forward(np.zeros(200)), np.zeros(150),
                               atol=0.0)
    np.testing.assert_array_equal(pb.truth, 2.0 * np.ones(200))
    # Au + sin(20 Bu) is odd in u, and batch evaluation matches columnwise.
    rng = np.random.default_rng(9)
    u = rng.standard_normal(200)
    np.testing.assert_allclose(pb.forward(-u), -pb.forward(u), atol=1e-12)
    U = rng.standard_normal((200, 4))
    np.testing.assert_allclose(
        pb.forward_batch(U),
        np.stack([pb.forward(U[:, j]) for j in range(4)], axis=1),
        atol=1e-13)


def test_oscillatory_regression_jacobian_matches_finite_differences():
    pb = get_problem("oscillatory_regression")
    u = np.random.default_rng(3).standard_normal(200) * 0.5
    J = pb.jac(u)
    Jfd = fd_jacobian(pb.forward, u)
    assert np.linalg.norm(Jfd - J) / np.linalg.norm(J) < 1e-8


def test_oscillatory_regression_is_reproducible():
    a = get_problem("oscillatory_regression")
    b = get_problem("oscillatory_regression")
    np.testing.assert_array_equal(a.y, b.y)
    u = np.random.default_rng(11).standard_normal(200)
    np.testing.assert_array_equal(a.forward(u), b.forward(u))
