import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtr

from epiclt.errors import EvidenceError
from epiclt.evidence import (Reference, attach_decomposition, build_reference, closure_ok, default_grid,
                             deviance_and_kl, entropy_knn, thermo_integrate, trapezoid_weights)
from epiclt.likelihood import Problem
from epiclt.priors import PriorSpec
from epiclt.sampler import run_ensemble

Y_OBS, SIGMA = 0.5, 0.3


def conjugate_problem(y=Y_OBS, s=SIGMA):
    return Problem([PriorSpec("normal", 0.0, 1.0)],
                   lambda th: -0.5 * ((y - th[0]) / s) ** 2 - math.log(s * math.sqrt(2 * math.pi)))


def conjugate_exact(y=Y_OBS, s=SIGMA):
    """Closed-form evidence, posterior moments and KL(posterior || prior)."""
    vp = 1.0 / (1.0 + 1.0 / s ** 2)
    mp = vp * y / s ** 2
    log_z = float(stats.norm(0.0, math.sqrt(1 + s ** 2)).logpdf(y))
    kl = 0.5 * (vp + mp ** 2 - 1.0 - math.log(vp))
    return log_z, mp, vp, kl


def test_untruncated_reference_has_unit_mass():
    pb = conjugate_problem()
    ref = build_reference(pb, [0.3], [[-4.0]], np.random.default_rng(0), n_draws=10_000)
    assert ref.log_mass == 0.0 and ref.acceptance == 1.0
    assert ref.logpdf([0.3]) == pytest.approx(stats.norm(0.3, 0.5).logpdf(0.3), abs=1e-12)
    assert ref.log_ratio([0.1]) == pytest.approx(stats.norm(0.3, 0.5).logpdf(0.1) - stats.norm.logpdf(0.1))


def test_truncated_reference_mass_matches_error_function():
    pb = Problem([PriorSpec("normal", 0.0, 1.0, -1.0, 1.0)], lambda th: 0.0)
    ref = build_reference(pb, [0.2], [[-4.0]], np.random.default_rng(1), n_draws=200_000)
    exact = ndtr((1 - 0.2) / 0.5) - ndtr((-1 - 0.2) / 0.5)
    assert abs(ref.log_mass - math.log(exact)) < 3 * ref.log_mass_err
    draws = ref.sample(np.random.default_rng(2), 5000)
    assert np.all(np.abs(draws) <= 1.0)


def test_reference_excludes_infeasible_points():
    # the likelihood is undefined above theta = 0.5; the reference must share that support
    pb = Problem([PriorSpec("normal", 0.0, 1.0)], lambda th: 0.0 if th[0] <= 0.5 else -math.inf,
                 feasible=lambda th: th[0] <= 0.5)
    ref = build_reference(pb, [0.2], [[-4.0]], np.random.default_rng(1), n_draws=200_000)
    exact = ndtr((0.5 - 0.2) / 0.5)
    assert abs(ref.log_mass - math.log(exact)) < 3 * ref.log_mass_err
    assert np.all(ref.sample(np.random.default_rng(2), 5000) <= 0.5)
    assert ref.logpdf([0.6]) == -math.inf
    res = thermo_integrate(pb, ref, np.random.default_rng(3), grid=[0.0, 1.0], n_steps=200)
    assert res.ok and abs(res.log_z - math.log(ndtr(0.5))) < 3 * res.log_z_err + 1e-9


def test_indefinite_hessian_is_floored_and_flagged():
    pb = Problem([PriorSpec("normal", 0, 1), PriorSpec("normal", 0, 1)], lambda th: 0.0)
    ref = build_reference(pb, [0.0, 0.0], [[-2.0, 0.0], [0.0, 0.5]], np.random.default_rng(0), n_draws=1000)
    assert ref.floored == [0]
    assert np.allclose(np.linalg.eigvalsh(np.linalg.inv(ref.cov)), [2e-6, 2.0])
    with pytest.raises(EvidenceError):
        build_reference(pb, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], np.random.default_rng(0))


def test_tiny_acceptance_is_an_error():
    pb = Problem([PriorSpec("normal", 0.0, 1.0, 0.0, 1e-6)], lambda th: 0.0)
    with pytest.raises(EvidenceError, match="acceptance"):
        build_reference(pb, [5.0], [[-1.0]], np.random.default_rng(0), n_draws=10_000)


def test_grid_rules():
    g = default_grid()
    assert len(g) == 16 and g[0] == 0.0 and g[-1] == 1.0 and np.all(np.diff(g) > 0)
    assert trapezoid_weights([0.0, 0.5, 1.0]) @ np.array([1.0, 1.0, 1.0]) == pytest.approx(1.0)
    pb = conjugate_problem()
    ref = build_reference(pb, [0.0], [[-1.0]], np.random.default_rng(0), n_draws=1000)
    for bad in ([0.1, 1.0], [0.0, 0.9], [0.0, 0.6, 0.5, 1.0]):
        with pytest.raises(EvidenceError):
            thermo_integrate(pb, ref, np.random.default_rng(0), grid=bad)


@pytest.mark.parametrize("grid", [None, [0.0, 0.3, 1.0]])
def test_constant_likelihood_gives_log_c(grid):
    c = 0.37
    pb = Problem([PriorSpec("normal", 0.0, 1.0)], lambda th: math.log(c))
    ref = build_reference(pb, [0.0], [[-1.0]], np.random.default_rng(0), n_draws=1000)  # reference = prior
    res = thermo_integrate(pb, ref, np.random.default_rng(1), grid=grid, n_steps=60, n_iid=200)
    assert res.log_z == pytest.approx(math.log(c), abs=1e-12)
    cs = run_ensemble(pb, np.random.default_rng(2), 300, n_walkers=4)
    D, kl, _ = deviance_and_kl(cs, res.log_z)
    assert D == pytest.approx(-math.log(c)) and kl == pytest.approx(0.0, abs=1e-12)


def test_reference_equal_to_posterior_is_exact():
    log_z, mp, vp, _ = conjugate_exact()
    pb = conjugate_problem()
    ref = build_reference(pb, [mp], [[-1.0 / vp]], np.random.default_rng(0), n_draws=1000)
    res = thermo_integrate(pb, ref, np.random.default_rng(1), n_steps=60, n_iid=200)
    assert np.allclose(res.fprime, log_z, atol=1e-9)
    assert res.log_z == pytest.approx(log_z, abs=1e-9)


def _conjugate_run(seed, grid=None):
    log_z, mp, vp, _ = conjugate_exact()
    pb = conjugate_problem()
    # deliberately offset and widened so that the integrand varies along the path
    ref = build_reference(pb, [mp + 0.1], [[-0.5 / vp]], np.random.default_rng(seed), n_draws=100_000)
    return pb, thermo_integrate(pb, ref, np.random.default_rng(seed + 1), grid=grid)


def test_conjugate_evidence_kl_and_closure():
    log_z, mp, vp, kl_exact = conjugate_exact()
    pb, res = _conjugate_run(10)
    assert res.ok
    assert abs(res.log_z - log_z) < 0.05
    cs = run_ensemble(pb, np.random.default_rng(12), 20_000, n_walkers=8)
    D, kl, _ = deviance_and_kl(cs, res.log_z)
    kl_err = math.hypot(res.log_z_err, res.log_z_err)
    assert abs(kl - kl_exact) < 3 * max(kl_err, 0.01)
    attach_decomposition(res, cs, pb.priors)
    assert abs(res.kl - kl_exact) < 3 * res.kl_err
    assert closure_ok(res)
    doc = res.to_dict()
    assert {"log_z", "log_z_err", "grid", "fprime", "fprime_err", "reference", "convention"} <= set(doc)


def test_grid_refinement_is_within_error():
    _, coarse = _conjugate_run(20, grid=(np.arange(9) / 8) ** 3)
    _, fine = _conjugate_run(20, grid=(np.arange(17) / 16) ** 3)
    assert abs(coarse.log_z - fine.log_z) < 2 * math.hypot(coarse.log_z_err, fine.log_z_err)


def test_entropy_estimator_on_gaussian():
    x = np.random.default_rng(0).standard_normal((4000, 2))
    H, err = entropy_knn(x)
    assert abs(H - (1 + math.log(2 * math.pi))) < 3 * err + 0.02


def test_nested_models_rank_by_evidence_and_fit():
    """A linear trend in the data: the model with a slope beats the constant model on both counts."""
    rng = np.random.default_rng(5)
    xs = np.linspace(-1, 1, 12)
    s = 0.4
    ys = 0.3 + 0.8 * xs + s * rng.standard_normal(len(xs))
    prior = PriorSpec("normal", 0.0, 1.0)

    def ll(mean):
        return float(-0.5 * np.sum(((ys - mean) / s) ** 2) - len(ys) * math.log(s * math.sqrt(2 * math.pi)))

    const = Problem([prior], lambda th: ll(th[0]))
    slope = Problem([prior, prior], lambda th: ll(th[0] + th[1] * xs))

    def exact(design):
        return float(stats.multivariate_normal(np.zeros(len(xs)), design @ design.T + s ** 2 * np.eye(len(xs)))
                     .logpdf(ys))

    out = {}
    for name, pb, design in (("const", const, np.ones((len(xs), 1))),
                             ("slope", slope, np.column_stack([np.ones_like(xs), xs]))):
        prec = np.eye(design.shape[1]) + design.T @ design / s ** 2
        mean = np.linalg.solve(prec, design.T @ ys / s ** 2)
        ref = build_reference(pb, mean + 0.05, -0.7 * prec, rng, n_draws=20_000)
        res = thermo_integrate(pb, ref, rng)
        assert abs(res.log_z - exact(design)) < 0.1
        cs = run_ensemble(pb, rng, 4000, n_walkers=8)
        out[name] = (res.log_z, deviance_and_kl(cs, res.log_z)[0])
    assert out["slope"][0] > out["const"][0]
    assert out["slope"][1] < out["const"][1]


def test_reported_error_matches_replicate_scatter():
    # coarse settings keep twenty replicates affordable
    values, errs = [], []
    log_z, mp, vp, _ = conjugate_exact()
    pb = conjugate_problem()
    for k in range(20):
        ref = build_reference(pb, [mp + 0.1], [[-0.5 / vp]], np.random.default_rng(100 + k), n_draws=50_000)
        res = thermo_integrate(pb, ref, np.random.default_rng(200 + k), grid=(np.arange(7) / 6) ** 3,
                               target_ess=100, n_steps=200)
        values.append(res.log_z)
        errs.append(res.log_z_err)
    ratio = np.std(values, ddof=1) / np.sqrt(np.mean(np.square(errs)))
    assert 0.5 < ratio < 2.0
