"""Acceptance gates.  Each test prints one PASS/FAIL line (collected again in
the terminal summary) and then asserts the same condition.
"""
import math
import shutil
import time

import numpy as np
import pytest
from scipy import stats

from _builders import SIR_THETA, immigration_death, ou_covariance, sir_model
from _report import record
from test_builtin_models import POPS, _hand_rhs, _state, ew
from test_estimation import linear_gaussian_toy
from test_evidence import conjugate_exact, conjugate_problem
from test_simulate import _decay
from epiclt._kernels import drift
from epiclt.builtin_models import (NpiSpec, SEIRD_TRUTH, ew_default_priors, force_of_infection, npi_activity,
                                   proportional_mixing_matrix, read_priors, reciprocity_residual, seird_synthetic,
                                   write_priors)
from epiclt.cli import main
from epiclt.estimation import gaussian_fim, hessian_of, map_estimate
from epiclt.evidence import attach_decomposition, build_reference, closure_ok, thermo_integrate
from epiclt.forecast import stochastic_forecast, thin
from epiclt.likelihood import ModelPosterior, Problem, assemble_cross_covariance
from epiclt.moments import compute_moments
from epiclt.priors import PriorSpec
from epiclt.sampler import ChainSet, autocorrelation_time, initial_walkers, posterior_summary, run_ensemble
from epiclt.simulate import gillespie, gillespie_ensemble, tau_leap_ensemble

SIR_OMEGA = 500.0
SIR_TIMES = [1.0, 2.0]


def _rel_frobenius(est, ref):
    return float(np.linalg.norm(est - ref) / np.linalg.norm(ref))


@pytest.fixture(scope="module")
def sir_ensemble():
    """10^5 exact SIR paths at the population size of the covariance gate, with their runtime."""
    spec = sir_model(omega=SIR_OMEGA)
    n0 = np.round(np.array(spec.init.x0) * SIR_OMEGA).astype(np.int64)
    t0 = time.perf_counter()
    ens = gillespie_ensemble(spec, SIR_THETA, n0, SIR_TIMES, 100_000, np.random.default_rng(1))
    return spec, ens, time.perf_counter() - t0


def _extend(problem, rng, cs: ChainSet) -> ChainSet:
    """Double the length of a chain by continuing from its last state."""
    more = run_ensemble(problem, rng, cs.n_steps - 1, init=cs.chain[:, -1])
    return ChainSet(np.concatenate([cs.chain, more.chain[:, 1:]], axis=1),
                    np.concatenate([cs.logp, more.logp[:, 1:]], axis=1),
                    np.concatenate([cs.loglik, more.loglik[:, 1:]], axis=1),
                    cs.accepted + more.accepted)


def _fit(spec, obs, rng, n_steps, n_walkers=8):
    """MAP by CMA-ES, then an ensemble chain started in a small ball around it."""
    pb = ModelPosterior(spec, obs)
    mr = map_estimate(pb, rng)
    init = initial_walkers(pb, rng, n_walkers, center=mr.theta, cov=np.linalg.inv(-mr.hessian))
    return pb, mr, run_ensemble(pb, rng, n_steps, init=init)


# ---------------------------------------------------------------------------


def test_1_clt_covariance_against_gillespie(sir_ensemble):
    spec, ens, runtime = sir_ensemble
    traj = compute_moments(spec, SIR_THETA, SIR_TIMES)
    errs = [_rel_frobenius(traj.cov[k + 1] * SIR_OMEGA, np.cov(ens[:, k, :].T)) for k in range(2)]
    ok = max(errs) <= 0.05 and runtime <= 600
    record(1, ok, f"rel. Frobenius error t=1: {errs[0]:.4f}, t=2: {errs[1]:.4f} (gate 0.05); "
                  f"10^5 paths in {runtime:.0f} s (gate 600 s)")
    assert ok


def test_2_cross_time_blocks(sir_ensemble):
    ou = immigration_death()
    times = np.array([0.5, 1.0, 2.0, 3.5, 6.0])
    G = assemble_cross_covariance(compute_moments(ou, ou.default_theta(), times), ou.filter_matrix(["X"]))
    ou_err = float(np.abs(G - ou_covariance(times)).max())

    spec, ens, _ = sir_ensemble
    Gt = assemble_cross_covariance(compute_moments(spec, SIR_THETA, SIR_TIMES)) * SIR_OMEGA
    emp = np.cov(ens.reshape(len(ens), -1).astype(float).T)
    sir_err = _rel_frobenius(Gt[3:, :3], emp[3:, :3])
    ok = ou_err <= 1e-6 and sir_err <= 0.07
    record(2, ok, f"OU max abs error {ou_err:.2e} (gate 1e-6); SIR (t=2, t=1) block rel. error {sir_err:.4f} "
                  "(gate 0.07)")
    assert ok


def test_3_conjugate_evidence():
    t0 = time.perf_counter()
    log_z, mp, vp, _ = conjugate_exact()
    pb = conjugate_problem()
    ref = build_reference(pb, [mp + 0.1], [[-0.5 / vp]], np.random.default_rng(30), n_draws=100_000)
    res = thermo_integrate(pb, ref, np.random.default_rng(31))
    cs = run_ensemble(pb, np.random.default_rng(32), 20_000, n_walkers=8)
    attach_decomposition(res, cs, pb.priors)
    runtime = time.perf_counter() - t0
    err = abs(res.log_z - log_z)
    ok = res.ok and err <= 0.05 and closure_ok(res) and runtime <= 300
    record(3, ok, f"|log Z - exact| = {err:.4f} (gate 0.05); closure residual {res.closure_residual:+.4f} "
                  f"+- {res.closure_err:.4f}; runtime {runtime:.0f} s (gate 300 s)")
    assert ok


def test_4_fisher_information():
    A, G0, moments, exact = linear_gaussian_toy()
    theta = np.array([0.3, -1.2, 0.4])
    fim = gaussian_fim(moments, theta)
    fim_err = float(np.max(np.abs(fim - exact(theta))) / np.max(np.abs(exact(theta))))

    # replicated data: the per-replicate information adds up
    n_rep = 40
    rng = np.random.default_rng(4)
    G = np.exp(theta[2]) * G0
    Y = rng.multivariate_normal(A @ theta, G, size=n_rep)
    G0_inv = np.linalg.inv(G0)
    _, logdet0 = np.linalg.slogdet(2 * math.pi * G0)

    def loglik(th):
        r = Y - A @ th
        quad = np.einsum("ki,ij,kj->", r, G0_inv, r)
        return -0.5 * (math.exp(-th[2]) * quad + n_rep * (len(G0) * th[2] + logdet0))

    flat = [PriorSpec("normal", 0.0, 1e3, -50.0, 50.0)] * 3
    pb = Problem(flat, loglik)
    mr = map_estimate(pb, np.random.default_rng(5), x0=np.zeros(3))
    H = hessian_of(pb, mr.theta, likelihood_only=True)[0]
    ref = n_rep * np.diag(exact(mr.theta))
    diag_err = float(np.max(np.abs(-np.diag(H) - ref) / ref))
    ok = fim_err <= 1e-4 and diag_err <= 0.10
    record(4, ok, f"FIM vs closed form rel. error {fim_err:.1e} (gate 1e-4); Hessian at MAP vs FIM diagonal "
                  f"max rel. difference {diag_err:.4f} (gate 0.10)")
    assert ok


def test_5_large_population_recovery():
    t0 = time.perf_counter()
    run = seird_synthetic(1e8, np.random.default_rng(5))
    spec, obs = run.window(20)
    rng = np.random.default_rng(50)
    pb, mr, cs = _fit(spec, obs, rng, 2000)
    while True:
        ac = autocorrelation_time(cs.chain[:, cs.burn_in():])
        if ac.all_reliable or cs.n_steps > 16_000:
            break
        cs = _extend(pb, rng, cs)
    flat = cs.flat()
    lo, hi = np.quantile(flat, [0.025, 0.975], axis=0)
    truth = run.truth()
    inside = (lo <= truth) & (truth <= hi)
    beta_err = abs(mr.theta[0] / SEIRD_TRUTH["beta"] - 1)
    n_post = cs.n_steps - cs.burn_in()
    runtime = time.perf_counter() - t0
    ok = beta_err <= 0.02 and bool(inside.all()) and ac.all_reliable
    cis = ", ".join(f"{n} [{a:.5g}, {b:.5g}] truth {t:.5g}" for n, a, b, t in zip(spec.free_names, lo, hi, truth))
    record(5, ok, f"MAP beta {mr.theta[0]:.5f} (rel. error {beta_err:.4f}, gate 0.02); 95% CIs: {cis}; "
                  f"chain {n_post} steps after burn-in vs 50 tau = {50 * ac.tau.max():.0f}; runtime {runtime:.0f} s")
    assert ok


def test_6_forecast_convergence():
    run = seird_synthetic(1e6, np.random.default_rng(11))
    stds, covers = [], []
    for n_days in (4, 8, 12, 16, 20):
        spec, obs = run.window(n_days)
        rng = np.random.default_rng(n_days)
        _, _, cs = _fit(spec, obs, rng, 1500)
        stds.append(posterior_summary(cs, names=spec.free_names)["beta"]["std"])
        days, held = run.held_out(n_days, 40)
        ens = stochastic_forecast(spec, thin(cs.flat(), 40), obs, days, rng, 40)
        daily = np.diff(ens.project(obs.F)[:, :, 0], axis=1)
        observed = np.diff(np.concatenate([[obs.Y[-1, 0]], held]))
        covers.append(float(np.mean((observed >= daily.min(0)) & (observed <= daily.max(0)))))
    monotone = bool(np.all(np.diff(stds) < 0))
    n_good = sum(c >= 0.9 for c in covers)
    ok = monotone and n_good >= 4
    record(6, ok, "beta posterior std by window 4/8/12/16/20 d: " + ", ".join(f"{s:.2e}" for s in stds)
           + f" (monotone: {monotone}); 40-path envelope coverage: " + ", ".join(f"{c:.2f}" for c in covers)
           + f" ({n_good}/5 windows >= 0.90, gate 4)")
    assert ok


def test_7_small_population_study():
    truth = SEIRD_TRUTH["beta"]
    lines, ok = [], True
    widths = []
    for k, omega in enumerate((1e4, 1e5, 1e6)):
        means, los, his = [], [], []
        for rep in range(16):
            run = seird_synthetic(omega, np.random.default_rng((70, k, rep)))
            spec, obs = run.window(20, beta_mean=truth)
            _, _, cs = _fit(spec, obs, np.random.default_rng((71, k, rep)), 1000)
            b = cs.flat()[:, 0]
            means.append(b.mean())
            lo, hi = np.quantile(b, [0.025, 0.975])
            los.append(lo)
            his.append(hi)
        m, lo, hi = np.mean(means), np.mean(los), np.mean(his)
        se = np.std(means, ddof=1) / math.sqrt(len(means))
        good = abs(m / truth - 1) <= 0.05 and lo <= truth <= hi
        ok &= good
        widths.append(hi - lo)
        lines.append(f"Omega 1e{int(math.log10(omega))}: mean {m:.5f} +- {se:.5f}, avg CI [{lo:.5f}, {hi:.5f}]")
    shrinking = bool(np.all(np.diff(widths) < 0))
    ok = bool(ok) and shrinking
    record(7, ok, "; ".join(lines) + f"; truth {truth}; CI width decreasing: {shrinking}")
    assert ok


def test_8_england_wales_structure(tmp_path):
    checks = {}
    step, ease = ew("step"), ew("easing")
    checks["128 compartments"] = step.dim == 128 and ease.dim == 128
    checks["46/47 free"] = (len(step.free_names), len(ease.free_names)) == (46, 47)

    rng = np.random.default_rng(8)
    C = rng.random((16, 16)) * 3
    worst_drift, worst_lam = 0.0, 0.0
    for npi in ("step", "easing"):
        spec = ew(npi, C)
        theta = spec.default_theta() * (1 + 0.2 * rng.random(len(spec.free_names)))
        v = dict(zip(spec.free_names, theta))
        kern = spec.kernel(theta)
        for t in (0.0, v["t_lock"], v["t_lock"] + 0.3 * v["W_lock"], 5.0, 9.0, 12.0):
            x = _state(rng)
            ours = spec.omega * drift(t, x, kern)
            ref, lam = _hand_rhs(spec, theta, C, t, spec.omega * x, npi, 10.0)
            worst_drift = max(worst_drift, float(np.max(np.abs(ours - ref)) / np.max(np.abs(ref))))
            worst_lam = max(worst_lam, float(np.max(np.abs(force_of_infection(spec, theta, t, x) - lam) / lam)))
    checks["drift vs hand ODE <= 1e-12"] = worst_drift <= 1e-12
    checks["force of infection to round-off"] = worst_lam <= 1e-13

    Cp = proportional_mixing_matrix(POPS, 12.0)
    checks["reciprocity"] = reciprocity_residual(Cp, POPS) <= 1e-15 * np.max(POPS[:, None] * Cp)

    npi = NpiSpec("step", 2.0, 1.0, (0.2, 0.5))
    easing = NpiSpec("easing", 2.0, 1.0, (0.2, 0.5), r=0.25, t_end=7.0)
    checks["NPI endpoints"] = (np.array_equal(npi_activity(npi, 1.5), [1.0, 1.0])
                               and np.array_equal(npi_activity(npi, 2.5), [0.2, 0.5])
                               and np.allclose(npi_activity(easing, 7.0), [0.4, 0.625], rtol=0, atol=1e-15))

    pri = ew_default_priors("easing", time_unit="days")
    write_priors(tmp_path / "priors.json", pri)
    back = read_priors(tmp_path / "priors.json")
    checks["prior round trip"] = (back == pri and back["gamma_E"].mean == pytest.approx(1 / 3.0)
                                  and back["t_lock"].mean == pytest.approx(17.0)
                                  and back["beta_15"].mean == pytest.approx(0.2))
    ok = all(checks.values())
    record(8, ok, f"drift max rel. error {worst_drift:.1e}, force-of-infection {worst_lam:.1e}; "
           + ", ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok


def _cli_outputs(d):
    """Run every stochastic subcommand with one seed into ``d`` and return all output bytes.

    Manifests record input paths, so reruns are compared in the same directory.
    """
    shutil.rmtree(d, ignore_errors=True)
    run = lambda *a: main(["--seed", "9", *map(str, a)])  # noqa: E731
    assert run("simulate", "--model", "builtin:seird", "--omega", "2e4", "--t-end", 120,
               "--window-rule", "deaths-frac:0.002", "--window-days", 10, "--out", d / "sim") == 0
    obs = d / "sim" / "observations.csv"
    assert run("export-model", "seird-inference", "--obs", obs, "--omega", "2e4", "--out", d / "m.json") == 0
    model = d / "m.json"
    common = ("--model", model, "--obs", obs)
    assert run("infer", *common, "--max-evals", 300, "--out", d / "inf") == 0
    report = d / "inf" / "report.json"
    assert run("sample", *common, "--start", report, "--steps", 60, "--out", d / "smp") == 0
    chain = d / "smp" / "chain.csv"
    assert run("evidence", *common, "--start", report, "--grid", 3, "--steps", 30, "--max-steps", 60,
               "--target-ess", 5, "--out", d / "evi") == 0
    assert run("forecast", *common, "--chain", chain, "--paths", 10, "--horizon", 5, "--out", d / "fc") == 0
    assert run("nowcast", *common, "--theta", report, "--samples", 5, "--out", d / "now") == 0
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_9_sampler_and_simulator_suites(tmp_path):
    checks, notes = {}, []

    # Gaussian target moments
    d = 4
    L = np.linalg.cholesky(np.array([[1.0, 0.4, 0.0, 0.1], [0.4, 2.0, 0.3, 0.0],
                                     [0.0, 0.3, 0.5, 0.0], [0.1, 0.0, 0.0, 1.5]]))
    cov = L @ L.T
    prec = np.linalg.inv(cov)
    mu = np.array([1.0, -2.0, 0.5, 3.0])
    rng = np.random.default_rng(90)
    cs = run_ensemble(lambda x: (-0.5 * float((x - mu) @ prec @ (x - mu)), 0.0), rng, 5000,
                      init=mu + rng.standard_normal((20, d)))
    flat = cs.chain[:, 1:].reshape(-1, d)
    tau = autocorrelation_time(cs).tau.max()
    se = np.sqrt(np.diag(cov) * tau / len(flat))
    mean_z = float(np.max(np.abs(flat.mean(0) - mu) / se))
    cov_err = _rel_frobenius(np.cov(flat.T), cov)
    checks["Gaussian moments"] = mean_z <= 4 and cov_err <= 0.05
    notes.append(f"Gaussian mean max z {mean_z:.2f}, cov rel. error {cov_err:.3f}")

    # AR(1) autocorrelation time
    phi = 0.9
    x = np.zeros(200_000)
    e = rng.standard_normal(len(x))
    for i in range(1, len(x)):
        x[i] = phi * x[i - 1] + e[i]
    tau_ar = float(autocorrelation_time(x).tau[0])
    exact_ar = (1 + phi) / (1 - phi)
    checks["AR(1) tau within 20%"] = abs(tau_ar / exact_ar - 1) <= 0.2
    notes.append(f"AR(1) tau {tau_ar:.2f} vs {exact_ar:.0f}")

    # exponential first-event time of a single decaying individual
    spec = _decay(omega=1.0, rate=0.7)
    first = [gillespie(spec, np.array([0.7]), np.array([1, 0]), (0.0, 1e6), rng).times[1] for _ in range(4000)]
    ks_exp = stats.kstest(first, "expon", args=(0, 1 / 0.7)).pvalue
    checks["exponential waiting time"] = ks_exp > 0.01
    notes.append(f"waiting-time KS p {ks_exp:.2f}")

    # exact vs tau-leap final size, leap at its default accuracy
    sir = sir_model(omega=1000)
    n0 = np.array([990, 10, 0])
    exact = gillespie_ensemble(sir, SIR_THETA, n0, [200.0], 10_000, np.random.default_rng(3))[:, 0, 2]
    leap = tau_leap_ensemble(sir, SIR_THETA, n0, [200.0], 10_000, np.random.default_rng(4))[:, 0, 2]
    crit = 1.628 * math.sqrt(2 / 10_000)
    ks = stats.ks_2samp(exact, leap).statistic
    checks["KS below 1% critical value"] = ks < crit
    notes.append(f"final-size KS {ks:.4f} (1% critical {crit:.4f}); mean {leap.mean():.2f} vs exact {exact.mean():.2f}")

    # bit-exact reruns of every stochastic command
    a, b = _cli_outputs(tmp_path / "run"), _cli_outputs(tmp_path / "run")
    checks["bit-exact reruns"] = a == b and len(a) > 10
    notes.append(f"{len(a)} output files compared across reruns")

    ok = all(checks.values())
    record(9, ok, "; ".join(notes) + " | " + ", ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok
