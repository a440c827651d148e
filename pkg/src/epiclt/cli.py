"""Command-line front end.

Every command writes its artifacts plus a ``manifest.json`` recording the
configuration hash, model hash, seed and library versions.  All randomness
derives from ``--seed`` through named streams, so reruns with the same
arguments reproduce every output byte for byte.

Exit codes: 0 success, 1 run error, 2 usage error.
"""
from __future__ import annotations

import argparse
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .builtin_models import (DEFAULT_C0, WINDOW_DEATH_FRAC, ContactStructure, build_england_wales,
                             build_seird_inference, canonical_models, data_path, load_contact_matrix,
                             proportional_mixing_matrix, read_priors, window_start)
from .errors import EpicltError
from .files import file_hash, json_text, read_csv, read_json, seed_stream, sha256_text, write_csv, write_json
from .likelihood import ModelPosterior, ObservationSet
from .model import ModelSpec, _replace, initial_state, load_model, model_hash, save_model
from .moments import ATOL, RTOL

THREADS_ENV = "EPICLT_THREADS"


class UsageError(Exception):
    """Bad arguments or missing inputs (exit code 2)."""


# ---------------------------------------------------------------------------
# shared helpers


def _versions():
    import cma
    import numba
    import scipy
    return {"epiclt": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "cma": cma.__version__, "python": platform.python_version()}


def _config(args) -> dict:
    skip = {"func", "threads", "resume", "out"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def _manifest(args, spec: ModelSpec | None, **extra) -> dict:
    cfg = _config(args)
    doc = {"command": args.command, "config": cfg, "config_hash": sha256_text(json_text(cfg)),
           "seed": args.seed, "versions": _versions()}
    if spec is not None:
        doc["model_hash"] = model_hash(spec)
    for key in ("obs", "chain", "theta"):
        p = getattr(args, key, None)
        if p is not None and Path(p).is_file():
            doc.setdefault("input_hashes", {})[key] = file_hash(p)
    doc.update(extra)
    return doc


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {p}")
    return p


def load_model_arg(ref: str) -> ModelSpec:
    """A model JSON path, or ``builtin:<name>`` for a shipped model."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        p = data_path(name)
        if not p.is_file():
            raise UsageError(f"unknown built-in model {name!r}; available: {sorted(canonical_models())}")
        return load_model(p)
    return load_model(_existing(ref))


def with_omega(spec: ModelSpec, omega: float | None) -> ModelSpec:
    """Rescale the reference population (cohort sizes scale with it)."""
    if omega is None or omega == spec.omega:
        return spec
    sizes = None if spec.cohort_sizes is None else tuple(float(n) * omega / spec.omega for n in spec.cohort_sizes)
    return _replace(spec, omega=float(omega), cohort_sizes=sizes)


def load_theta(spec: ModelSpec, path=None, assignments=()) -> np.ndarray:
    """Free-parameter vector from a report/JSON file and ``name=value`` assignments.

    Accepted files: an ``infer`` report (``map.theta_star``), a
    ``{"names": [...], "theta": [...]}`` document or a flat name-to-value map.
    Unspecified parameters take their prior means.
    """
    theta = spec.default_theta()
    values = {}
    if path is not None:
        doc = read_json(_existing(path))
        if "map" in doc:
            doc = doc["map"]
        if "names" in doc:
            key = "theta_star" if "theta_star" in doc else "theta"
            values.update(dict(zip(doc["names"], doc[key])))
        else:
            values.update(doc)
    for a in assignments:
        if "=" not in a:
            raise UsageError(f"expected name=value, got {a!r}")
        k, v = a.split("=", 1)
        values[k.strip()] = float(v)
    for k, v in values.items():
        if k not in spec.free_names:
            raise UsageError(f"{k!r} is not a free parameter of the model")
        theta[spec.free_names.index(k)] = float(v)
    return theta


def load_obs(spec: ModelSpec, args) -> ObservationSet:
    obs = ObservationSet.from_csv(_existing(args.obs), spec, differenced=not args.cumulative,
                                  time_unit=args.obs_time_unit)
    if getattr(args, "t_end", None) is not None:
        obs = obs.window(args.t_end)
    return obs


@contextmanager
def worker_map(threads: int):
    if threads <= 1:
        yield map
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool.map


def _say(msg):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    from .simulate import SimPath, simulate
    spec = with_omega(load_model_arg(args.model), args.omega)
    theta = load_theta(spec, args.theta, args.param)
    x0 = initial_state(spec, theta)
    n0 = np.round(x0 * spec.omega).astype(np.int64)
    # keep each cohort's total exact after rounding
    for i in range(spec.M):
        target = spec.index(spec.init.conservation_class or 0, i)
        idx = np.arange(i, spec.dim, spec.M)
        n0[target] += int(round(spec.populations[i])) - int(n0[idx].sum())
    if np.any(n0 < 0):
        raise EpicltError("rounded initial state is negative")
    times = np.round(np.arange(0.0, args.t_end + 0.5 * args.dt, args.dt), 12)
    out = Path(args.out)
    names = tuple(args.observables.split(",")) if args.observables else tuple(o.name for o in spec.observables)
    F = spec.filter_matrix(names) if names else None
    entries = []
    first: SimPath | None = None
    for k in range(args.paths):
        rng = seed_stream(args.seed, "simulate", k)
        path = simulate(spec, theta, n0, (0.0, times[-1]), rng, method=args.method, record_times=times,
                        eps=args.eps)
        name = f"path_{k:04d}.csv"
        path.to_csv(out / name, spec.labels)
        entries.append(name)
        first = first or path
    extra = {"paths": entries, "theta": dict(zip(spec.free_names, theta))}
    if F is not None:
        Y = first.states @ F.T
        t = times
        if args.window_rule:
            kind, _, val = args.window_rule.partition(":")
            if kind != "deaths-frac":
                raise UsageError(f"unknown window rule {args.window_rule!r}")
            frac = float(val) if val else WINDOW_DEATH_FRAC
            k0 = window_start(times, Y[:, 0], spec.omega, frac)
            stop = len(times) if args.window_days is None else min(len(times), k0 + args.window_days + 1)
            Y, t = Y[k0:stop], times[k0:stop] - times[k0]
            extra["window"] = {"rule": args.window_rule, "start_time": float(times[k0]), "start_index": k0}
        write_csv(out / "observations.csv", ["time", *names], ([a, *b] for a, b in zip(t, Y)))
        extra["observations"] = "observations.csv"
    write_json(out / "manifest.json", _manifest(args, spec, **extra))
    _say(f"wrote {len(entries)} path(s) to {out}")
    return 0


def cmd_infer(args):
    from .estimation import fisher_information, map_estimate, write_report
    spec = load_model_arg(args.model)
    obs = load_obs(spec, args)
    problem = ModelPosterior(spec, obs, rtol=args.rtol, atol=args.atol)
    x0 = load_theta(spec, args.start) if args.start else None
    res = map_estimate(problem, seed_stream(args.seed, "infer", "cma"), x0=x0, sigma0=args.sigma0,
                       popsize=args.popsize, max_evals=args.max_evals, restarts=args.restarts)
    fisher = fisher_information(problem, res.theta, args.modes)
    out = Path(args.out)
    write_report(out / "report.json", res, fisher, {"manifest": _manifest(args, spec)})
    _say(f"MAP log-posterior {res.log_posterior:.6g} after {res.n_evals} evaluations")
    for n, v in zip(spec.free_names, res.theta):
        _say(f"  {n} = {v:.6g}")
    return 0


def _map_report(path):
    doc = read_json(_existing(path))
    if "map" not in doc:
        raise UsageError(f"{path} is not an infer report")
    return doc["map"]


def cmd_sample(args):
    from .sampler import autocorrelation_time, default_walkers, initial_walkers, posterior_summary, \
        run_ensemble
    spec = load_model_arg(args.model)
    obs = load_obs(spec, args)
    problem = ModelPosterior(spec, obs, rtol=args.rtol, atol=args.atol)
    out = Path(args.out)
    ckpt = out / "checkpoint.npz"
    rng = seed_stream(args.seed, "sample")
    W = default_walkers(spec.n_free, None if args.walkers == "auto" else int(args.walkers))
    init = None
    if not (args.resume and ckpt.exists()):
        if args.start:
            m = _map_report(args.start)
            center = np.array(m["theta_star"], dtype=float)
            cov = None
            if m.get("hessian") is not None:
                try:
                    cov = np.linalg.inv(-np.array(m["hessian"], dtype=float))
                    np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    cov = None
            init = initial_walkers(problem, seed_stream(args.seed, "sample", "init"), W, center=center, cov=cov)
        else:
            init = initial_walkers(problem, seed_stream(args.seed, "sample", "init"), W)
    with worker_map(args.threads) as mp:
        cs = run_ensemble(problem, rng, args.steps, init=init, checkpoint=ckpt, checkpoint_every=args.checkpoint_every,
                          resume=ckpt if args.resume else None, map_fn=mp)
    cs.to_csv(out / "chain.csv")
    ac = autocorrelation_time(cs)
    summary = {"parameters": posterior_summary(cs, args.burn_in), "acceptance": cs.acceptance,
               "tau": ac.tau, "ess": ac.ess, "tau_reliable": ac.reliable, "n_walkers": cs.n_walkers,
               "n_steps": cs.n_steps - 1, "burn_in_frac": args.burn_in}
    write_json(out / "summary.json", summary)
    write_json(out / "manifest.json", _manifest(args, spec, chain="chain.csv", summary="summary.json"))
    _say(f"{cs.n_walkers} walkers x {cs.n_steps - 1} steps, mean acceptance {cs.acceptance.mean():.3f}")
    for n, t, ok in zip(spec.free_names, ac.tau, ac.reliable):
        _say(f"  tau[{n}] = {t:.1f}{'' if ok else ' (unreliable: chain shorter than 50 tau)'}")
    return 0


def cmd_evidence(args):
    from .evidence import attach_decomposition, build_reference, closure_ok, default_grid, thermo_integrate
    from .sampler import ChainSet
    spec = load_model_arg(args.model)
    obs = load_obs(spec, args)
    problem = ModelPosterior(spec, obs, rtol=args.rtol, atol=args.atol)
    m = _map_report(args.start)
    if m.get("hessian") is None:
        raise UsageError("the infer report has no Hessian")
    out = Path(args.out)
    ref = build_reference(problem, m["theta_star"], m["hessian"], seed_stream(args.seed, "evidence", "reference"))
    grid = default_grid(args.grid)
    partial = out / "points.json"
    done = {}
    if args.resume and partial.exists():
        doc = read_json(partial)
        if doc.get("grid") == [float(z) for z in grid]:
            done = {int(k): tuple(v) for k, v in doc["points"].items()}
    state = {"grid": [float(z) for z in grid], "points": {str(k): list(v) for k, v in done.items()}}

    def on_point(i, f, e, n):
        state["points"][str(i)] = [f, e, n]
        write_json(partial, state)
        _say(f"  z = {grid[i]:.4g}: f' = {f:.6g} +- {e:.2g}")

    with worker_map(args.threads) as mp:
        res = thermo_integrate(problem, ref, None, grid=grid, n_steps=args.steps, max_steps=args.max_steps,
                               target_ess=args.target_ess, rng_factory=lambda i: seed_stream(args.seed, "evidence", "z", i), done=done,
                               on_point=on_point, map_fn=mp)
    if args.chain:
        cs = ChainSet.from_csv(_existing(args.chain))
        if res.ok:
            attach_decomposition(res, cs, problem.priors, args.burn_in)
    doc = res.to_dict()
    doc["manifest"] = _manifest(args, spec)
    write_json(out / "evidence.json", doc)
    if not res.ok:
        _say(f"evidence failed at z = {sorted(res.failures)}")
        return 1
    _say(f"log Z = {res.log_z:.6g} +- {res.log_z_err:.2g}")
    if res.closure_residual is not None:
        flag = "ok" if closure_ok(res) else "FAILED"
        _say(f"log Z + D + KL = {res.closure_residual:.3g} (combined error {res.closure_err:.2g}) {flag}")
    return 0


def _posterior_thetas(spec, args, n):
    from .forecast import thin
    from .sampler import ChainSet
    if args.chain:
        cs = ChainSet.from_csv(_existing(args.chain))
        return thin(cs.flat(args.burn_in), n)
    return load_theta(spec, args.theta, args.param)[None, :]


def cmd_forecast(args):
    from .forecast import deterministic_forecast, stochastic_forecast
    spec = load_model_arg(args.model)
    obs = load_obs(spec, args)
    out = Path(args.out)
    t_end = float(obs.times[-1])
    horizon = np.round(t_end + np.arange(args.dt, args.horizon + 0.5 * args.dt, args.dt), 12)
    names = obs.names
    if args.mode == "deterministic":
        thetas = _posterior_thetas(spec, args, args.paths)
        times = np.concatenate((np.round(np.arange(0.0, t_end + 0.5 * args.dt, args.dt), 12), horizon))
        ens = deterministic_forecast(spec, thetas, times, baseline=obs.baseline_map(), rtol=args.rtol,
                                     atol=args.atol)
    else:
        if args.pin_map:
            thetas = load_theta(spec, args.theta, args.param)[None, :]
        else:
            thetas = _posterior_thetas(spec, args, args.paths)
        ens = stochastic_forecast(spec, thetas, obs, horizon, None, args.paths, method=args.method, eps=args.eps,
                                  rtol=args.rtol, atol=args.atol,
                                  rng_factory=lambda k: seed_stream(args.seed, "forecast", k))
    ens.write(out, F=obs.F, names=names, manifest=_manifest(args, spec, mode=args.mode))
    _say(f"wrote {ens.n_paths} {args.mode} path(s) to {out}")
    if ens.failures:
        _say(f"{len(ens.failures)} path(s) failed: {sorted(ens.failures)}")
        return 1
    return 0


def cmd_nowcast(args):
    from .forecast import conditional_nowcast
    spec = load_model_arg(args.model)
    obs = load_obs(spec, args)
    theta = load_theta(spec, args.theta, args.param)
    ens = conditional_nowcast(spec, theta, obs, seed_stream(args.seed, "nowcast"), args.samples, rtol=args.rtol,
                              atol=args.atol)
    ens.write(Path(args.out), manifest=_manifest(args, spec))
    _say(f"wrote {ens.n_paths} conditional sample(s) to {args.out}")
    return 0


def cmd_fim(args):
    from .estimation import fisher_information, write_report
    spec = load_model_arg(args.model)
    obs = load_obs(spec, args)
    theta = load_theta(spec, args.theta, args.param)
    fisher = fisher_information(ModelPosterior(spec, obs, rtol=args.rtol, atol=args.atol), theta, args.modes)
    write_report(Path(args.out) / "fim.json", None, fisher, {"manifest": _manifest(args, spec)})
    order = np.argsort(-fisher.sensitivities, kind="stable")
    for i in order:
        _say(f"  {spec.free_names[i]}: {fisher.sensitivities[i]:.4g}")
    return 0


def cmd_export_model(args):
    name = args.name
    if name == "seird-inference":
        if args.obs is None or args.omega is None:
            raise UsageError("seird-inference needs --obs (for the baseline deaths) and --omega")
        _, data = read_csv(_existing(args.obs))
        if data[0, 0] != 0:
            raise UsageError("observation file has no baseline row at time 0")
        spec = build_seird_inference(args.omega, float(data[0, 1]) / args.omega, beta_mean=args.beta_mean)
    elif name in ("england_wales_step", "england_wales_easing"):
        kind = name.rsplit("_", 1)[1]
        canon = load_model(data_path(name))
        N = canon.populations if args.populations is None else _read_vector(args.populations)
        ref = load_contact_matrix(_existing(args.contact), N) if args.contact else None
        if args.mixing == "file":
            if ref is None:
                raise UsageError("--mixing file needs --contact")
            C = ref
        else:
            # without an explicit c0, match the reference matrix's mean daily contacts
            c0 = args.c0 if args.c0 is not None else (float(ref.sum(axis=1).mean()) if ref is not None
                                                      else DEFAULT_C0)
            C = proportional_mixing_matrix(N, c0)
        contact = ContactStructure(C, kind, t_end=args.t_end_npi)
        priors = read_priors(_existing(args.priors)) if args.priors else None
        spec = build_england_wales(contact, priors, cohort_populations=N)
    else:
        p = data_path(name)
        if not p.is_file():
            raise UsageError(f"unknown model {name!r}")
        spec = with_omega(load_model(p), args.omega)
    save_model(spec, args.out)
    _say(f"wrote {spec.name or name} ({spec.dim} compartments, {spec.n_free} free parameters) to {args.out}")
    return 0


def _read_vector(path):
    _, data = read_csv(_existing(path))
    return data[:, -1].astype(float)


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, obs=True):
    p.add_argument("--model", required=True, help="model JSON file or builtin:<name>")
    if obs:
        p.add_argument("--obs", required=True, help="observation CSV (time, observables...; t=0 row = baseline)")
        p.add_argument("--cumulative", action="store_true",
                       help="fit cumulative values instead of increments between observation times")
        p.add_argument("--t-end", type=float, default=None, help="use observations up to this time only")
        p.add_argument("--obs-time-unit", choices=("days", "weeks"), default=None,
                       help="time unit of the observation file if it differs from the model's")
    p.add_argument("--rtol", type=float, default=RTOL, help="moment integrator relative tolerance (default 1e-8)")
    p.add_argument("--atol", type=float, default=ATOL, help="moment integrator absolute tolerance (default 1e-10)")
    p.add_argument("--out", required=True, help="output directory")


def _theta_args(p):
    p.add_argument("--theta", default=None, help="JSON with parameter values (an infer report works)")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE", help="override one parameter")


def build_parser() -> argparse.ArgumentParser:
    env_threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    ap = argparse.ArgumentParser(prog="epiclt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--seed", type=int, default=0, help="root 64-bit seed for every random stream (default 0)")
    ap.add_argument("--threads", type=int, default=env_threads,
                    help=f"worker threads for likelihood evaluations (default ${THREADS_ENV} or 1)")
    ap.add_argument("--resume", action="store_true", help="continue from checkpoints in the output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="exact or tau-leap simulation of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--omega", type=float, default=None, help="override the reference population")
    _theta_args(p)
    p.add_argument("--method", choices=("gillespie", "tau-leap"), default="gillespie")
    p.add_argument("--eps", type=float, default=0.03, help="tau-leap error control (default 0.03)")
    p.add_argument("--t-end", type=float, default=80.0, help="simulation end time (default 80)")
    p.add_argument("--dt", type=float, default=1.0, help="recording interval (default 1)")
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--observables", default=None, help="comma-separated observables for observations.csv")
    p.add_argument("--window-rule", default=None,
                   help="deaths-frac:F starts the observation window where the first observable exceeds F*omega")
    p.add_argument("--window-days", type=int, default=None, help="number of observation steps in the window")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="MAP estimate, Hessian and Fisher information")
    _common(p)
    p.add_argument("--start", default=None, help="JSON with a starting point (default prior means)")
    p.add_argument("--sigma0", type=float, default=0.3)
    p.add_argument("--popsize", type=int, default=None)
    p.add_argument("--max-evals", type=int, default=10_000)
    p.add_argument("--restarts", type=int, default=0)
    p.add_argument("--modes", type=int, default=None, help="number of soft modes to report (default all)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sample", help="ensemble MCMC over the posterior")
    _common(p)
    p.add_argument("--start", default=None, help="infer report; walkers start near its MAP point")
    p.add_argument("--walkers", default="auto", help="'auto' (twice the free parameters) or a count")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--burn-in", type=float, default=1 / 3)
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evidence", help="log-evidence by thermodynamic integration")
    _common(p)
    p.add_argument("--start", required=True, help="infer report with MAP point and Hessian")
    p.add_argument("--chain", default=None, help="posterior chain.csv for the deviance/KL split")
    p.add_argument("--grid", type=int, default=16, help="number of z points (default 16)")
    p.add_argument("--steps", type=int, default=500, help="initial chain length per z point")
    p.add_argument("--max-steps", type=int, default=20_000)
    p.add_argument("--target-ess", type=float, default=200.0, help="effective sample size required per z point")
    p.add_argument("--burn-in", type=float, default=1 / 3)
    p.set_defaults(func=cmd_evidence)

    p = sub.add_parser("forecast", help="deterministic or stochastic forecasts")
    _common(p)
    _theta_args(p)
    p.add_argument("--mode", choices=("deterministic", "stochastic"), default="stochastic")
    p.add_argument("--chain", default=None, help="posterior chain.csv; parameters are thinned from it")
    p.add_argument("--burn-in", type=float, default=1 / 3)
    p.add_argument("--pin-map", action="store_true", help="use --theta for every path instead of the chain")
    p.add_argument("--paths", type=int, default=40)
    p.add_argument("--horizon", type=float, default=30.0, help="forecast length past the last observation")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--method", choices=("gillespie", "tau-leap"), default="gillespie")
    p.add_argument("--eps", type=float, default=0.03)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("nowcast", help="latent states at the observation times given the data")
    _common(p)
    _theta_args(p)
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_nowcast)

    p = sub.add_parser("fim", help="Fisher information, sensitivities and soft modes")
    _common(p)
    _theta_args(p)
    p.add_argument("--modes", type=int, default=None)
    p.set_defaults(func=cmd_fim)

    p = sub.add_parser("export-model", help="write a built-in model as JSON")
    p.add_argument("name", help="seird, seird-inference, england_wales_step or england_wales_easing")
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--obs", default=None, help="observations with a t=0 baseline (seird-inference)")
    p.add_argument("--beta-mean", type=float, default=None, help="prior mean of beta (seird-inference)")
    p.add_argument("--contact", default=None, help="contact matrix CSV (direct or band layout)")
    p.add_argument("--populations", default=None, help="CSV with one cohort population per row")
    p.add_argument("--mixing", choices=("proportional", "file"), default="proportional",
                   help="contact structure: proportional mixing or the --contact matrix itself")
    p.add_argument("--c0", type=float, default=None,
                   help="proportional-mixing daily contacts (default: mean row sum of --contact, else 12)")
    p.add_argument("--priors", default=None, help="priors JSON")
    p.add_argument("--t-end-npi", type=float, default=10.0, help="end of the easing period")
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_export_model)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.threads < 1:
        print("epiclt: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"epiclt: error: {exc}", file=sys.stderr)
        return 2
    except (EpicltError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"epiclt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
