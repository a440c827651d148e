"""Stochastic simulation of the integer-population process.

``gillespie`` is the exact direct method; ``tau_leap`` advances by Poisson
event counts with Cao-style step selection: transitions close to emptying a
compartment fire one at a time, and any step that would still make a
compartment negative is halved and redrawn.  Time-dependent rate constants are held
fixed between events (exact for time-homogeneous models).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _kernels
from .errors import SimulationError
from .files import write_csv, write_json
from .model import ModelSpec

TAU_EPS = 0.03
MAX_HALVINGS = 20
SSA_FALLBACK = 10.0   # leap only when tau exceeds this many mean waiting times
SSA_BURST = 100
N_CRITICAL = 10      # a transition is critical within this many firings of exhausting a source
TAU_LEAP_SUGGESTED_OMEGA = 1e7


@njit(cache=True)
def _pop_rates(t, n, kern, omega):
    return omega * _kernels.transition_rates(t, n / omega, kern)


@njit(cache=True)
def _pick(w, total, u):
    target = u * total
    acc = 0.0
    last = 0
    for k in range(w.shape[0]):
        if w[k] > 0.0:
            acc += w[k]
            last = k
            if acc > target:
                return k
    return last


@njit(cache=True)
def _ssa_events(n, t, t_end, kern, omega, rng, stoich_i, out_t, out_n):
    """Record every event until ``t_end`` or the buffer is full.

    Returns ``(count, t, done)``; ``n`` is updated in place.
    """
    cap = out_t.shape[0]
    k = 0
    while k < cap:
        w = _pop_rates(t, n.astype(np.float64), kern, omega)
        total = w.sum()
        if total <= 0.0:
            return k, t_end, True
        dt = rng.exponential(1.0 / total)
        if t + dt > t_end:
            return k, t_end, True
        t += dt
        xi = _pick(w, total, rng.random())
        n += stoich_i[xi]
        out_t[k] = t
        out_n[k] = n
        k += 1
    return k, t, False


@njit(cache=True)
def _ssa_until(n, t, t_stop, kern, omega, rng, stoich_i, max_events):
    """Advance ``n`` in place up to ``t_stop``; returns (t, events)."""
    count = 0
    while True:
        w = _pop_rates(t, n.astype(np.float64), kern, omega)
        total = w.sum()
        if total <= 0.0:
            return t_stop, count
        dt = rng.exponential(1.0 / total)
        if t + dt > t_stop:
            return t_stop, count
        t += dt
        xi = _pick(w, total, rng.random())
        n += stoich_i[xi]
        count += 1
        if max_events > 0 and count >= max_events:
            return t, count


@njit(cache=True)
def _ssa_record(n0, t0, times, kern, omega, rng, stoich_i):
    out = np.empty((times.shape[0], n0.shape[0]), dtype=np.int64)
    n = n0.copy()
    t = t0
    for r in range(times.shape[0]):
        t, _ = _ssa_until(n, t, times[r], kern, omega, rng, stoich_i, 0)
        out[r] = n
    return out


@njit(cache=True)
def _ssa_ensemble(n0, t0, times, kern, omega, rng, stoich_i, n_paths):
    out = np.empty((n_paths, times.shape[0], n0.shape[0]), dtype=np.int64)
    for p in range(n_paths):
        out[p] = _ssa_record(n0, t0, times, kern, omega, rng, stoich_i)
    return out


@njit(cache=True)
def _critical(n, stoich_i, w):
    """Transitions within ``N_CRITICAL`` firings of emptying one of their sources."""
    n_tr = stoich_i.shape[0]
    crit = np.zeros(n_tr, dtype=np.bool_)
    for k in range(n_tr):
        if w[k] <= 0.0:
            continue
        for i in range(n.shape[0]):
            v = stoich_i[k, i]
            if v < 0 and n[i] < N_CRITICAL * (-v):
                crit[k] = True
                break
    return crit


@njit(cache=True)
def _cao_tau(n, w, stoich, order, eps, crit):
    """Cao step bound over the non-critical transitions."""
    d = n.shape[0]
    tau = np.inf
    for i in range(d):
        if order[i] == 0:
            continue
        mu = 0.0
        s2 = 0.0
        for k in range(w.shape[0]):
            v = stoich[k, i]
            if v != 0.0 and not crit[k]:
                mu += v * w[k]
                s2 += v * v * w[k]
        bound = max(eps * n[i] / order[i], 1.0)
        if mu != 0.0:
            tau = min(tau, bound / abs(mu))
        if s2 > 0.0:
            tau = min(tau, bound * bound / s2)
    return tau


@njit(cache=True)
def _leap_until(n, t, t_stop, kern, omega, rng, stoich_i, order, eps):
    """Tau-leap ``n`` in place up to ``t_stop``. Returns (t, status).

    Non-critical transitions leap by Poisson counts; critical ones fire at
    most once per step, at an exponential time drawn from their total rate.
    """
    stoich = kern[0]
    n_tr = stoich.shape[0]
    counts = np.zeros(n_tr, dtype=np.int64)
    while t < t_stop:
        nf = n.astype(np.float64)
        w = _pop_rates(t, nf, kern, omega)
        total = w.sum()
        if total <= 0.0:
            return t_stop, 0
        crit = _critical(n, stoich_i, w)
        tau1 = _cao_tau(nf, w, stoich, order, eps, crit)
        if tau1 < SSA_FALLBACK / total:
            t, _ = _ssa_until(n, t, t_stop, kern, omega, rng, stoich_i, SSA_BURST)
            continue
        w_crit = 0.0
        for k in range(n_tr):
            if crit[k]:
                w_crit += w[k]
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            tau2 = rng.exponential(1.0 / w_crit) if w_crit > 0.0 else np.inf
            fire = tau2 <= tau1
            tau = tau2 if fire else tau1
            if tau > t_stop - t:
                tau = t_stop - t
                fire = False
            trial = n.copy()
            for k in range(n_tr):
                counts[k] = rng.poisson(w[k] * tau) if (w[k] > 0.0 and not crit[k]) else 0
                if counts[k] > 0:
                    trial += counts[k] * stoich_i[k]
            if fire:
                target = rng.random() * w_crit
                acc = 0.0
                for k in range(n_tr):
                    if crit[k]:
                        acc += w[k]
                        if acc > target:
                            trial += stoich_i[k]
                            break
            ok = True
            for i in range(trial.shape[0]):
                if trial[i] < 0:
                    ok = False
                    break
            if ok:
                n[:] = trial
                t += tau
                accepted = True
                break
            tau1 *= 0.5
        if not accepted:
            return t, 1
    return t_stop, 0


@njit(cache=True)
def _leap_record(n0, t0, times, kern, omega, rng, stoich_i, order, eps):
    out = np.empty((times.shape[0], n0.shape[0]), dtype=np.int64)
    n = n0.copy()
    t = t0
    for r in range(times.shape[0]):
        t, status = _leap_until(n, t, times[r], kern, omega, rng, stoich_i, order, eps)
        if status != 0:
            return out, status, t
        out[r] = n
    return out, 0, t


@njit(cache=True)
def _leap_ensemble(n0, t0, times, kern, omega, rng, stoich_i, order, eps, n_paths):
    out = np.empty((n_paths, times.shape[0], n0.shape[0]), dtype=np.int64)
    for p in range(n_paths):
        path, status, t = _leap_record(n0, t0, times, kern, omega, rng, stoich_i, order, eps)
        if status != 0:
            return out, status, t
        out[p] = path
    return out, 0, 0.0


# ---------------------------------------------------------------------------


@dataclass
class SimPath:
    """One simulated path: times and integer states (``n[k]`` at ``times[k]``)."""

    times: np.ndarray
    states: np.ndarray
    seed: int | None = None
    method: str = "gillespie"
    meta: dict = field(default_factory=dict)

    def at(self, t) -> np.ndarray:
        """State at time ``t`` (right-continuous step interpolation)."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if k < 0:
            raise ValueError(f"t={t} precedes the path start")
        return self.states[k]

    def sample(self, times) -> np.ndarray:
        return np.array([self.at(t) for t in times])

    def to_csv(self, path, labels):
        write_csv(path, ["time", *labels], ([t, *map(int, n)] for t, n in zip(self.times, self.states)))


def _prepare(spec: ModelSpec, theta, n0):
    n0 = np.asarray(n0)
    if n0.shape != (spec.dim,):
        raise SimulationError(f"initial state has shape {n0.shape}, expected ({spec.dim},)")
    if np.any(n0 < 0) or np.any(n0 != np.round(n0)):
        raise SimulationError("initial state must be non-negative integers")
    kern = spec.kernel(theta)
    stoich_i = np.asarray(kern[0], dtype=np.int64)
    return n0.astype(np.int64), kern, stoich_i


def _reactant_order(spec: ModelSpec, kern):
    """Highest reaction order in which each compartment participates (Cao's g_i)."""
    order = np.zeros(spec.dim)
    for src in kern[2]:
        order[src] = max(order[src], 1.0)
    for s, i in zip(kern[6], kern[7]):
        order[s] = max(order[s], 2.0)
        order[i] = max(order[i], 2.0)
    stoich = kern[0]
    order[np.any(stoich < 0, axis=0) & (order == 0)] = 1.0
    return order


def _record_grid(t_span, record_times):
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 < t0:
        raise SimulationError("t_span must be increasing")
    if record_times is None:
        return t0, np.array([t1])
    rt = np.asarray(record_times, dtype=float)
    if np.any(rt < t0) or np.any(np.diff(rt) < 0):
        raise SimulationError("record times must be sorted and within t_span")
    return t0, rt


def gillespie(spec: ModelSpec, theta, n0, t_span, rng: np.random.Generator, *,
              record_times=None, seed=None, buffer=65536) -> SimPath:
    """Exact simulation over ``t_span``.

    Without ``record_times`` every event is recorded (plus the start and
    the end state); otherwise the state at each record time is returned.
    """
    n, kern, stoich_i = _prepare(spec, theta, n0)
    omega = float(spec.omega)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if record_times is not None:
        _, rt = _record_grid(t_span, record_times)
        states = _ssa_record(n, t0, rt, kern, omega, rng, stoich_i)
        return SimPath(rt, states, seed, "gillespie")
    ts = [np.array([t0])]
    ns = [n[None, :].copy()]
    t = t0
    while True:
        out_t = np.empty(buffer)
        out_n = np.empty((buffer, spec.dim), dtype=np.int64)
        k, t, done = _ssa_events(n, t, t1, kern, omega, rng, stoich_i, out_t, out_n)
        ts.append(out_t[:k])
        ns.append(out_n[:k])
        if done:
            break
    times = np.concatenate(ts)
    states = np.concatenate(ns)
    if times[-1] < t1:
        times = np.append(times, t1)
        states = np.vstack([states, states[-1]])
    return SimPath(times, states, seed, "gillespie")


def gillespie_ensemble(spec: ModelSpec, theta, n0, record_times, n_paths: int, rng: np.random.Generator,
                       *, t0=0.0) -> np.ndarray:
    """States ``(n_paths, n_times, dim)`` of independent exact paths at ``record_times``."""
    n, kern, stoich_i = _prepare(spec, theta, n0)
    rt = np.asarray(record_times, dtype=float)
    return _ssa_ensemble(n, float(t0), rt, kern, float(spec.omega), rng, stoich_i, int(n_paths))


def tau_leap(spec: ModelSpec, theta, n0, t_span, rng: np.random.Generator, *, eps=TAU_EPS,
             record_times=None, seed=None) -> SimPath:
    """Approximate simulation by Poisson leaps; records the start and each record time."""
    n, kern, stoich_i = _prepare(spec, theta, n0)
    t0, rt = _record_grid(t_span, record_times)
    order = _reactant_order(spec, kern)
    states, status, t_fail = _leap_record(n, t0, rt, kern, float(spec.omega), rng, stoich_i, order, float(eps))
    if status != 0:
        raise SimulationError(f"tau-leap step rejected {MAX_HALVINGS} times at t={t_fail:g}")
    if record_times is None:
        rt = np.array([t0, rt[0]])
        states = np.vstack([n[None, :], states])
    return SimPath(rt, states, seed, "tau-leap", {"eps": eps})


def tau_leap_ensemble(spec: ModelSpec, theta, n0, record_times, n_paths: int, rng: np.random.Generator,
                      *, t0=0.0, eps=TAU_EPS) -> np.ndarray:
    n, kern, stoich_i = _prepare(spec, theta, n0)
    order = _reactant_order(spec, kern)
    rt = np.asarray(record_times, dtype=float)
    out, status, t_fail = _leap_ensemble(n, float(t0), rt, kern, float(spec.omega), rng, stoich_i, order,
                                         float(eps), int(n_paths))
    if status != 0:
        raise SimulationError(f"tau-leap step rejected {MAX_HALVINGS} times at t={t_fail:g}")
    return out


def simulate(spec, theta, n0, t_span, rng, *, method="gillespie", record_times=None, seed=None,
             eps=TAU_EPS) -> SimPath:
    if method == "gillespie":
        return gillespie(spec, theta, n0, t_span, rng, record_times=record_times, seed=seed)
    if method in ("tau-leap", "tau_leap"):
        return tau_leap(spec, theta, n0, t_span, rng, record_times=record_times, seed=seed, eps=eps)
    raise SimulationError(f"unknown simulation method {method!r}")


def write_ensemble(paths: list[SimPath], directory, labels, manifest: dict):
    """One CSV per path plus ``manifest.json`` listing files and seeds."""
    from pathlib import Path
    directory = Path(directory)
    entries = []
    for k, p in enumerate(paths):
        name = f"path_{k:04d}.csv"
        p.to_csv(directory / name, labels)
        entries.append({"file": name, "seed": p.seed, "method": p.method})
    write_json(directory / "manifest.json", {**manifest, "paths": entries})


def round_preserving_totals(x, totals, groups, rng: np.random.Generator | None = None) -> np.ndarray:
    """Integer vector close to ``x`` whose sum over each group equals ``totals``.

    Largest-remainder rounding per group; ties are broken at random when
    ``rng`` is given.  Negative entries of ``x`` are clipped to 0 first.
    """
    x = np.clip(np.asarray(x, dtype=float), 0.0, None)
    out = np.floor(x).astype(np.int64)
    for g, total in zip(groups, totals):
        g = np.asarray(g)
        short = int(round(total)) - int(out[g].sum())
        rem = x[g] - np.floor(x[g])
        key = rem + (rng.random(len(g)) * 1e-9 if rng is not None else 0.0)
        if short > 0:
            pick = np.argsort(-key, kind="stable")[:short]
            out[g[pick]] += 1
        elif short < 0:
            # floors already exceed the total only if x itself overshoots; trim smallest remainders
            for _ in range(-short):
                cand = g[out[g] > 0]
                if len(cand) == 0:
                    break
                j = cand[np.argmin(x[cand] - out[cand])]
                out[j] -= 1
    return out

