"""Affine-invariant ensemble sampler (stretch move) with diagnostics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import gaussian_kde

from .errors import SamplerError
from .files import atomic_write, read_csv, write_csv
from .likelihood import Problem

STRETCH_A = 2.0
STUCK_WINDOW = 1000
SOKAL_C = 5.0
MIN_LENGTH_TAUS = 50
BURN_IN_FRAC = 1.0 / 3.0
QUANTILES = (0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975)


@dataclass
class ChainSet:
    """Ensemble chains ``(walkers, steps, dim)`` with log-posterior and log-likelihood."""

    chain: np.ndarray
    logp: np.ndarray
    loglik: np.ndarray
    accepted: np.ndarray
    names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_walkers(self):
        return self.chain.shape[0]

    @property
    def n_steps(self):
        return self.chain.shape[1]

    @property
    def dim(self):
        return self.chain.shape[2]

    @property
    def acceptance(self) -> np.ndarray:
        return self.accepted / max(self.n_steps - 1, 1)

    def burn_in(self, frac=BURN_IN_FRAC) -> int:
        return int(math.floor(frac * self.n_steps))

    def flat(self, burn_in_frac=BURN_IN_FRAC):
        b = self.burn_in(burn_in_frac)
        return self.chain[:, b:].reshape(-1, self.dim)

    def flat_loglik(self, burn_in_frac=BURN_IN_FRAC):
        return self.loglik[:, self.burn_in(burn_in_frac):].reshape(-1)

    def to_csv(self, path):
        """Step-major rows ``step, walker, log_posterior, log_likelihood, <params>``."""
        names = self.names or tuple(f"p{k}" for k in range(self.dim))
        W = self.n_walkers

        def rows():
            for t in range(self.n_steps):
                for w in range(W):
                    yield [t, w, self.logp[w, t], self.loglik[w, t], *self.chain[w, t]]

        write_csv(path, ["step", "walker", "log_posterior", "log_likelihood", *names], rows())

    @classmethod
    def from_csv(cls, path, accepted=None):
        header, data = read_csv(path)
        W = int(data[:, 1].max()) + 1
        n = len(data) // W
        if n * W != len(data):
            raise SamplerError(f"{path}: ragged chain file")
        d = data.reshape(n, W, -1).transpose(1, 0, 2)
        acc = np.zeros(W, dtype=np.int64) if accepted is None else np.asarray(accepted)
        return cls(d[:, :, 4:].copy(), d[:, :, 2].copy(), d[:, :, 3].copy(), acc, tuple(header[4:]))


def default_walkers(dim: int, requested: int | None = None) -> int:
    """At least twice the dimension, rounded up to an even number."""
    n = 2 * dim if requested is None else max(int(requested), 2 * dim)
    return n + (n % 2)


def initial_walkers(problem: Problem, rng: np.random.Generator, n_walkers: int, center=None, cov=None,
                    scale=0.1, max_tries=1000) -> np.ndarray:
    """Finite-posterior starting points.

    Around ``center`` with covariance ``scale**2 * cov`` (or a small relative
    jitter) when given, otherwise drawn from the prior.
    """
    d = problem.dim
    out = np.empty((n_walkers, d))
    for k in range(n_walkers):
        for _ in range(max_tries):
            if center is None:
                th = problem.sample_prior(rng)
            elif cov is not None:
                th = rng.multivariate_normal(center, scale ** 2 * cov)
            else:
                th = center * (1 + 1e-3 * rng.standard_normal(d)) + 1e-8 * rng.standard_normal(d)
            if math.isfinite(problem.log_posterior(th)):
                out[k] = th
                break
        else:
            raise SamplerError("could not find finite-posterior starting points")
    return out


def _rng_state(rng):
    return json.dumps(rng.bit_generator.state)


def _set_rng_state(rng, s):
    rng.bit_generator.state = json.loads(s)


def run_ensemble(problem: Problem | Callable, rng: np.random.Generator, n_steps: int, *, init=None,
                 n_walkers: int | None = None, a: float = STRETCH_A, checkpoint=None, checkpoint_every=100,
                 resume=None, stuck_window=STUCK_WINDOW, names=None, map_fn=map) -> ChainSet:
    """Run ``n_steps`` stretch-move updates (the initial state is step 0).

    ``problem`` is a :class:`Problem` or a callable ``theta -> (logp, loglik)``.
    With ``resume`` (a checkpoint path) the run continues from the stored
    state and random-generator state until ``n_steps`` in total.
    ``map_fn`` evaluates a half-ensemble of proposals (e.g. a thread pool's
    ``map``); all random numbers are drawn before evaluation, so the chains
    do not depend on it.
    """
    evaluate = problem.evaluate if isinstance(problem, Problem) else problem
    if names is None:
        names = tuple(problem.names) if isinstance(problem, Problem) else ()
    if resume is not None and Path(resume).exists():
        with np.load(resume, allow_pickle=False) as z:
            chain = list(z["chain"].transpose(1, 0, 2))
            logp = list(z["logp"].T)
            loglik = list(z["loglik"].T)
            accepted = z["accepted"].copy()
            last_acc = int(z["last_acc"])
            _set_rng_state(rng, str(z["rng"]))
            if float(z["a"]) != a:
                raise SamplerError("checkpoint was written with a different stretch scale")
        X, lp, ll = chain[-1].copy(), logp[-1].copy(), loglik[-1].copy()
        W, d = X.shape
    else:
        if init is None:
            if not isinstance(problem, Problem):
                raise SamplerError("initial walkers are required for a bare callable target")
            W = default_walkers(problem.dim, n_walkers)
            init = initial_walkers(problem, rng, W)
        X = np.array(init, dtype=float)
        W, d = X.shape
        if W % 2 or W < 2 * d:
            raise SamplerError(f"need an even number of walkers >= 2*dim, got {W} for dim {d}")
        pairs = list(map_fn(evaluate, list(X)))
        lp = np.array([p[0] for p in pairs])
        ll = np.array([p[1] for p in pairs])
        if not np.all(np.isfinite(lp)):
            raise SamplerError("initial walkers must have finite log-posterior")
        chain, logp, loglik = [X.copy()], [lp.copy()], [ll.copy()]
        accepted = np.zeros(W, dtype=np.int64)
        last_acc = 0
    half = W // 2
    groups = (np.arange(half), np.arange(half, W))
    step = len(chain)
    while step < n_steps + 1:
        for g in (0, 1):
            active, other = groups[g], groups[1 - g]
            z = ((a - 1.0) * rng.random(half) + 1.0) ** 2 / a
            partners = X[other[rng.integers(0, half, size=half)]]
            Y = partners + z[:, None] * (X[active] - partners)
            u = rng.random(half)
            results = list(map_fn(evaluate, list(Y)))
            for n, j in enumerate(active):
                lp_y, ll_y = results[n]
                if not math.isfinite(lp_y):
                    continue
                log_ratio = (d - 1) * math.log(z[n]) + lp_y - lp[j]
                if math.log(u[n]) < log_ratio:
                    X[j] = Y[n]
                    lp[j] = lp_y
                    ll[j] = ll_y
                    accepted[j] += 1
                    last_acc = step
        chain.append(X.copy())
        logp.append(lp.copy())
        loglik.append(ll.copy())
        if step - last_acc >= stuck_window:
            raise SamplerError(f"no proposal accepted in the last {stuck_window} steps")
        step += 1
        if checkpoint is not None and (step % checkpoint_every == 0 or step == n_steps + 1):
            _write_checkpoint(checkpoint, chain, logp, loglik, accepted, last_acc, rng, a)
    cs = ChainSet(np.array(chain).transpose(1, 0, 2), np.array(logp).T, np.array(loglik).T, accepted,
                  tuple(names), {"a": a, "n_walkers": W})
    return cs


def _write_checkpoint(path, chain, logp, loglik, accepted, last_acc, rng, a):
    import io
    buf = io.BytesIO()
    np.savez(buf, chain=np.array(chain).transpose(1, 0, 2), logp=np.array(logp).T, loglik=np.array(loglik).T,
             accepted=accepted, last_acc=last_acc, rng=_rng_state(rng), a=a)
    atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------------------
# diagnostics


def _acf(x):
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    return acf / acf[0]


def integrated_time(x, c=SOKAL_C) -> float:
    """Integrated autocorrelation time of a 1-D sequence (Sokal's adaptive window)."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2 or np.var(x) == 0.0:
        return math.nan
    rho = _acf(x)
    taus = 2.0 * np.cumsum(rho) - 1.0
    m = np.arange(len(taus)) < c * taus
    window = int(np.argmin(m)) if not m.all() else len(taus) - 1
    return float(taus[window])


@dataclass
class AutocorrResult:
    tau: np.ndarray
    ess: np.ndarray
    reliable: np.ndarray

    @property
    def all_reliable(self):
        return bool(np.all(self.reliable))


def autocorrelation_time(chains, c=SOKAL_C, min_taus=MIN_LENGTH_TAUS) -> AutocorrResult:
    """Per-parameter integrated autocorrelation time of walker-averaged sequences.

    Accepts a :class:`ChainSet`, an array ``(walkers, steps, dim)``, or a
    single sequence ``(steps,)`` / ``(steps, dim)``.  An estimate is flagged
    unreliable when the sequence is shorter than ``min_taus * tau`` or has
    zero variance.
    """
    arr = chains.chain if isinstance(chains, ChainSet) else np.asarray(chains, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :, None]
    elif arr.ndim == 2:
        arr = arr[None]
    W, n, d = arr.shape
    mean_seq = arr.mean(axis=0)
    tau = np.array([integrated_time(mean_seq[:, k], c) for k in range(d)])
    with np.errstate(invalid="ignore"):
        reliable = np.isfinite(tau) & (n >= min_taus * tau)
        ess = np.where(np.isfinite(tau), W * n / np.maximum(tau, 1.0), 0.0)
    return AutocorrResult(tau, ess, reliable)


def posterior_summary(chains, burn_in_frac=BURN_IN_FRAC, names=None, kde_points=100) -> dict:
    """Mean, std, quantiles and a kernel-density marginal per parameter."""
    if isinstance(chains, ChainSet):
        flat = chains.flat(burn_in_frac)
        names = names or chains.names
    else:
        arr = np.asarray(chains, dtype=float)
        if arr.ndim == 3:
            b = int(math.floor(burn_in_frac * arr.shape[1]))
            flat = arr[:, b:].reshape(-1, arr.shape[2])
        else:
            arr = arr.reshape(len(arr), -1)
            flat = arr[int(math.floor(burn_in_frac * len(arr))):]
    if len(flat) == 0:
        raise SamplerError("no samples left after burn-in")
    d = flat.shape[1]
    names = tuple(names) if names else tuple(f"p{k}" for k in range(d))
    out = {}
    for k, name in enumerate(names):
        x = flat[:, k]
        entry = {"mean": float(x.mean()), "std": float(x.std(ddof=1)) if len(x) > 1 else 0.0,
                 "quantiles": {f"{q:g}": float(np.quantile(x, q)) for q in QUANTILES}}
        if entry["std"] > 0 and len(x) > 2:
            grid = np.linspace(x.min(), x.max(), kde_points)
            entry["kde"] = {"x": grid.tolist(), "density": gaussian_kde(x)(grid).tolist()}
        out[name] = entry
    return out
