import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epiclt.builtin_models import build_seird
from epiclt.errors import OptimizationError
from epiclt.estimation import (fisher_information, gaussian_fim, hessian_fd, hessian_of, map_estimate,
                               sensitivities, soft_modes)
from epiclt.likelihood import ModelPosterior, ObservationSet, Problem
from epiclt.priors import PriorSpec
from epiclt.simulate import gillespie_ensemble


def _flat(n, lo=-50.0, hi=50.0):
    return [PriorSpec("normal", 0.0, 1e3, lo, hi) for _ in range(n)]


def linear_gaussian_toy():
    """``y ~ N(A theta, exp(theta_2) G0)``: mean linear in the first two coordinates, scale in the third."""
    A = np.array([[1.0, 0.5, 0.0], [0.2, 2.0, 0.0], [-0.7, 0.3, 0.0], [0.0, 1.0, 0.0]])
    G0 = np.array([[2.0, 0.3, 0.0, 0.1], [0.3, 1.0, 0.2, 0.0], [0.0, 0.2, 1.5, 0.4], [0.1, 0.0, 0.4, 0.8]])

    def moments(th):
        return A @ th, np.exp(th[2]) * G0

    def exact_fim(th):
        Gi = np.linalg.inv(np.exp(th[2]) * G0)
        fim = A.T @ Gi @ A
        fim[2, 2] += 0.5 * len(G0)   # dG/dtheta_2 = G, so the trace term is n / 2
        return fim

    return A, G0, moments, exact_fim


def test_fim_matches_linear_gaussian_formula():
    _, _, moments, exact = linear_gaussian_toy()
    th = np.array([0.3, -1.2, 0.4])
    fim = gaussian_fim(moments, th)
    assert np.max(np.abs(fim - exact(th))) <= 1e-4 * np.max(np.abs(exact(th)))


def test_fim_scalar_mean_only():
    fim = gaussian_fim(lambda th: (np.array([3.0 * th[0] ** 2]), np.array([[0.5]])), np.array([1.5]))
    assert fim[0, 0] == pytest.approx((6.0 * 1.5) ** 2 / 0.5, rel=1e-6)


def test_insensitive_parameter_has_zero_row():
    fim = gaussian_fim(lambda th: (np.array([th[0], 2 * th[0]]), np.eye(2)), np.array([1.0, 7.0]))
    assert np.all(fim[1] == 0) and np.all(fim[:, 1] == 0)


def test_hessian_of_loglik_equals_minus_fim_for_fixed_covariance():
    A, G0, _, _ = linear_gaussian_toy()
    Gi = np.linalg.inv(G0)
    y = np.array([0.4, -2.0, 1.0, 0.3])
    ll = lambda th: -0.5 * (y - A[:, :2] @ th) @ Gi @ (y - A[:, :2] @ th)  # noqa: E731
    H, clipped = hessian_fd(ll, np.array([0.2, 0.1]))
    assert not clipped
    assert np.allclose(H, -A[:, :2].T @ Gi @ A[:, :2], rtol=1e-4, atol=1e-6)


def test_hessian_of_quadratic_and_clipping():
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    c = np.array([0.5, 1.0])
    f = lambda th: -(th - c) @ Q @ (th - c)  # noqa: E731
    H, _ = hessian_fd(f, c)
    assert np.allclose(H, -2 * Q, rtol=1e-4)
    priors = [PriorSpec("normal", 0, 1, 0.5, 2.0), PriorSpec("normal", 0, 1, -5, 5)]
    H2, clipped = hessian_fd(f, c, priors)
    assert clipped == [0]
    assert np.allclose(H2, -2 * Q, rtol=1e-4)


def test_cma_finds_quadratic_maximum():
    Q = np.array([[3.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 2.0]])
    c = np.array([1.2, -0.7, 3.0])
    pb = Problem(_flat(3), lambda th: -(th - c) @ Q @ (th - c))
    res = map_estimate(pb, np.random.default_rng(0), x0=np.zeros(3))
    assert np.allclose(res.theta, c, rtol=1e-4, atol=1e-5)
    assert np.allclose(res.hessian, -2 * Q, rtol=1e-3, atol=1e-5)


def test_cma_with_constant_likelihood_returns_prior_mode():
    priors = [PriorSpec("normal", 0.3, 0.1, 0, 1), PriorSpec("normal", 5.0, 2.0, 0, 20)]
    res = map_estimate(Problem(priors, lambda th: 0.0), np.random.default_rng(1))
    assert np.allclose(res.theta, [0.3, 5.0], rtol=1e-4)


def test_cma_is_invariant_to_parameter_order():
    Q = np.diag([2.0, 0.5, 1.0])
    c = np.array([0.4, 2.0, -1.0])
    a = map_estimate(Problem(_flat(3), lambda th: -(th - c) @ Q @ (th - c)), np.random.default_rng(2))
    perm = [2, 0, 1]
    b = map_estimate(Problem(_flat(3), lambda th: -(th - c[perm]) @ Q[perm][:, perm] @ (th - c[perm])),
                     np.random.default_rng(2))
    assert np.allclose(a.theta[perm], b.theta, rtol=1e-3, atol=1e-4)


def test_cma_rejects_infeasible_start_and_survives_infeasible_regions():
    pb = Problem(_flat(2), lambda th: -np.inf if th[0] > 1.0 else -np.sum((th - 0.9) ** 2))
    res = map_estimate(pb, np.random.default_rng(3), x0=np.zeros(2))
    assert np.allclose(res.theta, 0.9, atol=1e-4)
    with pytest.raises(OptimizationError):
        map_estimate(pb, np.random.default_rng(3), x0=np.full(2, 2.0))


def test_sensitivities_and_modes():
    assert sensitivities(np.diag([25.0, 0.0]), [2.0, 3.0]).tolist() == [10.0, 0.0]
    modes = soft_modes(np.diag([1.0, 100.0]), [1.0, 1.0])
    assert np.allclose(modes[0].vector, [1, 0])
    M = np.array([[2.0, 1.0], [1.0, 2.0]])      # eigenpairs (1, [1,-1]/sqrt2) and (3, [1,1]/sqrt2)
    m = soft_modes(M, [1.0, 1.0])
    assert m[0].eigenvalue == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.abs(m[0].vector), [2 ** -0.5, 2 ** -0.5], atol=1e-8)
    assert m[0].vector[0] * m[0].vector[1] < 0
    tie = soft_modes(np.eye(2) * 4.0, [1.0, 1.0])
    assert len(tie) == 2 and all(t.degenerate for t in tie)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0))
def test_sensitivity_is_unit_invariant(scale):
    # theta' = scale * theta rescales the FIM row and column by 1 / scale
    _, _, moments, _ = linear_gaussian_toy()
    th = np.array([0.3, -1.2, 0.4])
    fim = gaussian_fim(moments, th)
    S = np.diag([scale, 1.0, 1.0])
    fim2 = gaussian_fim(lambda u: moments(np.linalg.solve(S, u)), S @ th)
    assert np.allclose(sensitivities(fim, th), sensitivities(fim2, S @ th), rtol=1e-5)
    assert np.max(np.abs(fim2 - fim2.T)) <= 1e-6 * np.max(np.abs(fim2))


def _seird_problem(omega, Y, days):
    spec = build_seird(omega, free=("beta", "gamma_I"))
    obs = ObservationSet(spec.filter_matrix(["D"]), days, Y, ("D",), True, np.array([0.0]))
    return spec, ModelPosterior(spec, obs)


def test_fim_matches_replica_averaged_hessian_on_seird():
    omega, days = 1e5, np.arange(1.0, 41.0)
    spec = build_seird(omega, free=("beta", "gamma_I"))
    theta = spec.default_theta()
    n0 = np.round(np.array(spec.init.x0) * omega).astype(np.int64)
    n0[0] = int(omega) - n0[1:].sum()
    reps = gillespie_ensemble(spec, theta, n0, days, 50, np.random.default_rng(4))[:, :, 4:5].astype(float)
    hs = []
    for Y in reps:
        _, pb = _seird_problem(omega, Y, days)
        hs.append(np.diag(hessian_of(pb, theta, likelihood_only=True)[0]))
    _, pb = _seird_problem(omega, reps[0], days)
    fim = fisher_information(pb, theta)
    assert np.allclose(-np.mean(hs, axis=0), np.diag(fim.fim), rtol=0.10)
    # the transmission rate is better determined (relative to its size) than the recovery rate
    s = dict(zip(pb.names, fim.sensitivities))
    assert s["beta"] > s["gamma_I"]
