"""Deterministic forecasts, conditional nowcasts and stochastic forecasts."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import EpicltError, SimulationError
from .files import write_csv, write_json
from .likelihood import ObservationSet, conditional_latent
from .model import ModelSpec
from .moments import ATOL, RTOL, integrate_mean
from .simulate import TAU_EPS, gillespie, round_preserving_totals, tau_leap

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)
MAX_RESAMPLES = 100


@dataclass
class Ensemble:
    """Paths ``(n_paths, n_times, dim)`` on a shared time grid.

    ``units`` is ``"fraction"`` for mean paths and ``"count"`` otherwise.
    ``failures`` maps path index to the error that removed it.
    """

    times: np.ndarray
    paths: np.ndarray
    labels: tuple[str, ...]
    units: str = "count"
    failures: dict[int, str] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.paths.shape[0]

    def project(self, F) -> np.ndarray:
        """Observed quantities ``(n_paths, n_times, m)``."""
        return self.paths @ np.asarray(F, dtype=float).T

    def quantiles(self, levels=QUANTILE_LEVELS, F=None) -> np.ndarray:
        """Pointwise quantiles ``(len(levels), n_times, k)`` across paths."""
        x = self.paths if F is None else self.project(F)
        return np.quantile(x, levels, axis=0)

    def write(self, directory, *, F=None, names=None, manifest=None, levels=QUANTILE_LEVELS):
        """Per-path CSVs, a quantile summary CSV and ``manifest.json``."""
        directory = Path(directory)
        files = []
        for k in range(self.n_paths):
            name = f"path_{k:04d}.csv"
            rows = ([t, *p] for t, p in zip(self.times, self.paths[k]))
            write_csv(directory / name, ["time", *self.labels], rows)
            files.append(name)
        cols = list(self.labels) if F is None else list(names)
        q = self.quantiles(levels, F)
        header = ["time"] + [f"{c}_q{int(round(100 * lv)):02d}" for c in cols for lv in levels]
        rows = []
        for i, t in enumerate(self.times):
            rows.append([t] + [q[a, i, c] for c in range(len(cols)) for a in range(len(levels))])
        write_csv(directory / "summary.csv", header, rows)
        doc = dict(manifest or {})
        doc.update({"units": self.units, "paths": files, "summary": "summary.csv",
                    "failures": {str(k): v for k, v in self.failures.items()}, **self.meta})
        write_json(directory / "manifest.json", doc)


def thin(samples, n: int) -> np.ndarray:
    """``n`` rows spread evenly over ``samples`` (deterministic thinning)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if n >= len(samples):
        return samples.copy()
    idx = np.linspace(0, len(samples) - 1, n).round().astype(int)
    return samples[idx]


def deterministic_forecast(spec: ModelSpec, theta_samples, times, *, baseline=None, rtol=RTOL,
                           atol=ATOL) -> Ensemble:
    """One mean path per parameter sample over ``times`` (fractions, starting from ``t = 0``).

    Integration failures drop that sample and are reported in ``failures``.
    """
    thetas = np.atleast_2d(np.asarray(theta_samples, dtype=float))
    times = np.asarray(times, dtype=float)
    grid = times if times[0] == 0.0 else np.concatenate(([0.0], times))
    skip = 0 if times[0] == 0.0 else 1
    paths, failures = [], {}
    for k, th in enumerate(thetas):
        try:
            paths.append(integrate_mean(spec, th, grid, rtol=rtol, atol=atol, baseline=baseline)[skip:])
        except EpicltError as exc:
            failures[k] = str(exc)
    arr = np.array(paths) if paths else np.empty((0, len(times), spec.dim))
    return Ensemble(times, arr, spec.labels, "fraction", failures)


def conditional_nowcast(spec: ModelSpec, theta, obs: ObservationSet, rng: np.random.Generator, n: int, *,
                        rtol=RTOL, atol=ATOL) -> Ensemble:
    """``n`` joint draws of every compartment (counts) at the observation times, given the data."""
    x = conditional_latent(spec, theta, obs, rng, n, rtol=rtol, atol=atol)
    return Ensemble(obs.times.copy(), spec.omega * x, spec.labels, "count")


def cohort_groups(spec: ModelSpec) -> list[np.ndarray]:
    return [np.array([spec.index(l, i) for l in range(spec.L)]) for i in range(spec.M)]


def round_state(spec: ModelSpec, counts, rng: np.random.Generator) -> np.ndarray:
    """Integer state preserving each cohort's (rounded) total by largest remainders."""
    counts = np.asarray(counts, dtype=float)
    snapped = np.where(np.abs(counts - np.round(counts)) < 1e-6, np.round(counts), counts)
    groups = cohort_groups(spec)
    totals = [round(float(snapped[g].sum())) for g in groups]
    return round_preserving_totals(snapped, totals, groups, rng)


def seed_state(spec: ModelSpec, theta, obs: ObservationSet, rng: np.random.Generator, *,
               max_resamples=MAX_RESAMPLES, rtol=RTOL, atol=ATOL) -> np.ndarray:
    """Integer state at the window end drawn from the conditional law.

    Draws that would round to a negative count are redrawn.
    """
    for _ in range(max_resamples):
        x = spec.omega * conditional_latent(spec, theta, obs, rng, 1, rtol=rtol, atol=atol)[0, -1]
        if np.all(x > -0.5):
            return round_state(spec, x, rng)
    raise SimulationError(f"conditional draw stayed negative after {max_resamples} attempts")


def stochastic_forecast(spec: ModelSpec, thetas, obs: ObservationSet, horizon, rng: np.random.Generator,
                        n_paths: int, *, method="gillespie", eps=TAU_EPS, rtol=RTOL, atol=ATOL,
                        rng_factory: Callable[[int], np.random.Generator] | None = None) -> Ensemble:
    """Integer-valued paths continuing past the last observation time.

    ``thetas`` is one parameter vector (pinned) or one row per path.  Each
    path draws its start from the conditional nowcast, rounds it, then runs
    the chosen simulator to each time in ``horizon``.  Returned times are
    ``[t_end, *horizon]``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if len(thetas) not in (1, n_paths):
        raise ValueError("need one parameter vector or one per path")
    t_end = float(obs.times[-1])
    horizon = np.asarray(horizon, dtype=float).reshape(-1)
    if np.any(horizon <= t_end) or np.any(np.diff(horizon) <= 0):
        raise ValueError("horizon times must increase and follow the last observation time")
    times = np.concatenate(([t_end], horizon))
    streams = [rng_factory(k) for k in range(n_paths)] if rng_factory else rng.spawn(n_paths)
    out, failures = [], {}
    for k in range(n_paths):
        th = thetas[k if len(thetas) > 1 else 0]
        r = streams[k]
        try:
            n0 = seed_state(spec, th, obs, r, rtol=rtol, atol=atol)
            if len(horizon) == 0:
                out.append(n0[None, :])
                continue
            if method == "gillespie":
                path = gillespie(spec, th, n0, (t_end, horizon[-1]), r, record_times=horizon)
            else:
                path = tau_leap(spec, th, n0, (t_end, horizon[-1]), r, record_times=horizon, eps=eps)
            out.append(np.vstack([n0[None, :], path.states]))
        except EpicltError as exc:
            failures[k] = str(exc)
    arr = np.array(out) if out else np.empty((0, len(times), spec.dim), dtype=np.int64)
    return Ensemble(times, arr, spec.labels, "count", failures, {"method": method, "n_requested": n_paths})
