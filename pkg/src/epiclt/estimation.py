"""MAP estimation, finite-difference Hessian and Fisher information."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import cma
import numpy as np
from scipy.linalg import cho_solve

from .errors import LikelihoodError, OptimizationError
from .files import write_json
from .likelihood import Problem, robust_cholesky

SIGMA0 = 0.3
MAX_EVALS = 10_000
INFEASIBLE_PENALTY = 1.0
REL_STEP = 1e-4
MIN_STEP = 1e-7


@dataclass
class MapResult:
    theta: np.ndarray
    log_posterior: float
    log_likelihood: float
    hessian: np.ndarray | None
    n_evals: int
    trace: list[tuple[int, float]] = field(default_factory=list)
    stop: dict = field(default_factory=dict)
    hessian_clipped: list[int] = field(default_factory=list)
    names: tuple[str, ...] = ()

    def to_dict(self):
        return {
            "names": list(self.names),
            "theta_star": self.theta,
            "log_posterior": self.log_posterior,
            "log_likelihood": self.log_likelihood,
            "hessian": self.hessian,
            "hessian_clipped": [self.names[i] if self.names else i for i in self.hessian_clipped],
            "n_evals": self.n_evals,
            "stop": {k: str(v) for k, v in self.stop.items()},
            "trace": [list(t) for t in self.trace],
        }


def step_sizes(theta) -> np.ndarray:
    return np.maximum(REL_STEP * np.abs(np.asarray(theta, dtype=float)), MIN_STEP)


def _cma_bounds(priors):
    lo, hi = [], []
    for p in priors:
        if p.family == "lognormal":
            lo.append(math.log(p.lower) if p.lower > 0 else -np.inf)
            hi.append(math.log(p.upper) if math.isfinite(p.upper) else np.inf)
        elif math.isfinite(p.lower) and math.isfinite(p.upper):
            lo.append(0.0)
            hi.append(1.0)
        else:
            lo.append(float(p.to_unit(p.lower)) if math.isfinite(p.lower) else -np.inf)
            hi.append(float(p.to_unit(p.upper)) if math.isfinite(p.upper) else np.inf)
    return lo, hi


def map_estimate(problem: Problem, rng: np.random.Generator, *, x0=None, sigma0=SIGMA0, popsize=None,
                 max_evals=MAX_EVALS, tolfun=1e-9, hessian=True, restarts=0) -> MapResult:
    """Maximise the log-posterior with CMA-ES in transformed coordinates.

    Coordinates are ``log`` for log-normal priors, an affine map onto
    ``[0, 1]`` for bounded normal priors and standardisation otherwise.
    Infeasible members of a generation are ranked just below the worst
    feasible one.  Returns the best point ever evaluated.
    """
    priors = list(problem.priors)
    d = len(priors)
    start = problem.prior_mean() if x0 is None else np.asarray(x0, dtype=float)
    to_u = lambda th: np.array([p.to_unit(v) for p, v in zip(priors, th)], dtype=float)  # noqa: E731
    from_u = lambda u: np.array([p.from_unit(v) for p, v in zip(priors, u)], dtype=float)  # noqa: E731
    if not math.isfinite(problem.log_posterior(start)):
        raise OptimizationError("log-posterior is not finite at the starting point")
    lam = int(4 + math.floor(3 * math.log(d))) if popsize is None else int(popsize)
    lo, hi = _cma_bounds(priors)
    best = [start.copy(), problem.evaluate(start)]
    n_evals = 1
    trace = []
    stop = {}
    for attempt in range(restarts + 1):
        opts = {
            "popsize": lam, "maxfevals": max(max_evals - n_evals, lam), "tolfun": tolfun, "tolx": 1e-12,
            "seed": np.nan, "randn": lambda *s: rng.standard_normal(s), "verbose": -9,
            "bounds": [lo, hi], "tolflatfitness": 10,
        }
        if d == 1:
            # pycma needs at least two coordinates; a dummy one is ignored
            opts["bounds"] = [lo + [-1.0], hi + [1.0]]
        u0 = to_u(best[0] if attempt else start)
        if d == 1:
            u0 = np.append(u0, 0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            es = cma.CMAEvolutionStrategy(u0, sigma0, opts)
            first = attempt == 0
            while not es.stop() and n_evals < max_evals:
                U = es.ask()
                vals = []
                for u in U:
                    th = from_u(u[:d])
                    lp, ll = problem.evaluate(th)
                    n_evals += 1
                    vals.append(lp)
                    if lp > best[1][0]:
                        best = [th, (lp, ll)]
                vals = np.array(vals)
                finite = np.isfinite(vals)
                if first and not finite.any():
                    raise OptimizationError("no finite log-posterior in the first CMA-ES generation")
                first = False
                f = -vals
                if not finite.all():
                    worst = f[finite].max() if finite.any() else 0.0
                    f[~finite] = worst + INFEASIBLE_PENALTY
                es.tell(U, f.tolist())
                trace.append((n_evals, float(best[1][0])))
            stop = dict(es.stop())
    theta = best[0]
    H, clipped = (hessian_fd(problem.log_posterior, theta, problem.priors) if hessian else (None, []))
    return MapResult(theta, float(best[1][0]), float(best[1][1]), H, n_evals, trace, stop, clipped,
                     tuple(problem.names))


def hessian_fd(f: Callable[[np.ndarray], float], theta, priors=None, h=None) -> tuple[np.ndarray, list[int]]:
    """Central second differences of ``f`` at ``theta``, symmetrised.

    Coordinates whose stencil leaves the prior support use one-sided
    differences; their indices are returned alongside ``H``.
    """
    theta = np.asarray(theta, dtype=float)
    d = len(theta)
    h = step_sizes(theta) if h is None else np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
    shift = np.zeros(d)
    clipped = []
    if priors is not None:
        for a, p in enumerate(priors):
            if theta[a] + h[a] > p.upper:
                shift[a] = -h[a]
                clipped.append(a)
            elif theta[a] - h[a] < p.lower:
                shift[a] = h[a]
                clipped.append(a)
    c = theta + shift
    cache = {}

    def F(*moves):
        key = tuple(sorted(moves))
        if key not in cache:
            x = c.copy()
            for a, s in moves:
                x[a] += s * h[a]
            cache[key] = f(x)
        return cache[key]

    f0 = F()
    H = np.zeros((d, d))
    for a in range(d):
        H[a, a] = (F((a, 1)) - 2 * f0 + F((a, -1))) / h[a] ** 2
        for b in range(a):
            H[a, b] = H[b, a] = (F((a, 1), (b, 1)) - F((a, 1), (b, -1)) - F((a, -1), (b, 1))
                                 + F((a, -1), (b, -1))) / (4 * h[a] * h[b])
    if not np.all(np.isfinite(H)):
        raise OptimizationError("Hessian stencil hit a non-finite log-posterior")
    return 0.5 * (H + H.T), clipped


# ---------------------------------------------------------------------------
# Fisher information


def gaussian_fim(moments: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]], theta, h=None) -> np.ndarray:
    """Fisher information of ``N(mu(theta), G(theta))`` by central differences.

    ``I_ab = dmu_a^T G^-1 dmu_b + 1/2 tr(G^-1 dG_a G^-1 dG_b)``.
    """
    theta = np.asarray(theta, dtype=float)
    d = len(theta)
    h = step_sizes(theta) if h is None else np.broadcast_to(np.asarray(h, dtype=float), (d,))
    mu0, G0 = moments(theta)
    try:
        L, _ = robust_cholesky(G0)
    except LikelihoodError as exc:
        raise OptimizationError(f"Fisher information: {exc}") from None
    dmu, GdG = [], []
    for a in range(d):
        e = np.zeros(d)
        e[a] = h[a]
        mp, Gp = moments(theta + e)
        mm, Gm = moments(theta - e)
        dmu.append((mp - mm) / (2 * h[a]))
        GdG.append(cho_solve((L, True), (Gp - Gm) / (2 * h[a])))
    dmu = np.array(dmu)
    Ginv_dmu = cho_solve((L, True), dmu.T)
    fim = dmu @ Ginv_dmu
    for a in range(d):
        for b in range(a + 1):
            t = 0.5 * np.sum(GdG[a] * GdG[b].T)
            fim[a, b] += t
            if a != b:
                fim[b, a] += t
    return 0.5 * (fim + fim.T)


@dataclass
class SoftMode:
    eigenvalue: float
    vector: np.ndarray
    degenerate: bool = False


@dataclass
class FisherResult:
    fim: np.ndarray
    theta: np.ndarray
    sensitivities: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    modes: list[SoftMode]
    names: tuple[str, ...] = ()

    def to_dict(self):
        order = np.argsort(-self.sensitivities, kind="stable")
        names = self.names or tuple(f"p{k}" for k in range(len(self.theta)))
        return {
            "names": list(names),
            "theta": self.theta,
            "fim": self.fim,
            "sensitivities": [{"name": names[i], "value": self.sensitivities[i]} for i in order],
            "eigenvalues": self.eigenvalues,
            "soft_modes": [{"eigenvalue": m.eigenvalue, "vector": m.vector, "degenerate": m.degenerate}
                           for m in self.modes],
        }


def sensitivities(fim, theta_star) -> np.ndarray:
    """``s_a = theta*_a sqrt(I_aa)``."""
    diag = np.clip(np.diag(np.asarray(fim, dtype=float)), 0.0, None)
    return np.abs(np.asarray(theta_star, dtype=float)) * np.sqrt(diag)


def soft_modes(fim, theta_star, k: int | None = None, rel_tie: float = 1e-8) -> list[SoftMode]:
    """The ``k`` smallest-eigenvalue modes, rescaled by ``1 / theta*`` and unit-normalised.

    Modes whose eigenvalue ties with a neighbour (relative ``rel_tie``) are
    flagged degenerate; their individual directions are arbitrary within the
    shared eigenspace.
    """
    fim = np.asarray(fim, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    w, V = np.linalg.eigh(0.5 * (fim + fim.T))
    k = len(w) if k is None else min(k, len(w))
    scale = max(np.abs(w).max(), 1e-300)
    out = []
    for n in range(k):
        v = V[:, n] / np.where(theta_star != 0, theta_star, 1.0)
        v = v / np.linalg.norm(v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        tie = any(abs(w[n] - w[m]) <= rel_tie * scale for m in (n - 1, n + 1) if 0 <= m < len(w))
        out.append(SoftMode(float(w[n]), v, tie))
    return out


def fisher_information(problem: Problem, theta, k_modes: int | None = None) -> FisherResult:
    """Fisher information of a problem exposing ``gaussian_moments``."""
    if problem.gaussian_moments is None:
        raise OptimizationError("problem does not expose Gaussian moments")
    theta = np.asarray(theta, dtype=float)
    fim = gaussian_fim(problem.gaussian_moments, theta)
    w, V = np.linalg.eigh(fim)
    return FisherResult(fim, theta, sensitivities(fim, theta), w, V, soft_modes(fim, theta, k_modes),
                        tuple(problem.names))


def write_report(path, map_result: MapResult | None = None, fisher: FisherResult | None = None,
                 extra: dict | None = None):
    doc = dict(extra or {})
    if map_result is not None:
        doc["map"] = map_result.to_dict()
    if fisher is not None:
        doc["fisher"] = fisher.to_dict()
    write_json(path, doc)


def hessian_of(problem: Problem, theta, *, likelihood_only=False):
    f = problem.log_likelihood if likelihood_only else problem.log_posterior
    return hessian_fd(f, theta, problem.priors)
