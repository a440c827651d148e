"""Log-evidence by thermodynamic integration and the deviance/KL split.

Bookkeeping convention
----------------------
The reference ``P_ref`` is a Gaussian centred at the MAP point with
precision ``-H`` (floored), truncated to the prior support and normalised:
``P_ref(theta) = N(theta; theta*, Sigma) / m`` where ``m`` is the Gaussian
mass inside the support (estimated by rejection sampling).  With
``A = log L`` and ``A_ref = log P_ref - log P`` the bridge

    pi_z  ∝  exp(z (A - A_ref)) P_ref

runs from the reference (``z = 0``, unit mass) to the unnormalised
posterior ``L P`` (``z = 1``), so ``log Z = ∫_0^1 E_{pi_z}[A - A_ref] dz``.
The uncertainty of ``log m`` enters ``log Z`` additively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma, gammaln

from .errors import EvidenceError, SamplerError
from .files import write_json
from .likelihood import Problem
from .priors import joint_logpdf
from .sampler import ChainSet, autocorrelation_time, default_walkers, integrated_time, run_ensemble

CURVATURE_FLOOR = 1e-6
MIN_ACCEPTANCE = 1e-4
N_REFERENCE_DRAWS = 200_000
TARGET_ESS = 200
GRID_POINTS = 16
CLOSURE_SIGMAS = 3.0
ROUNDOFF = 1e-12


def default_grid(n: int = GRID_POINTS) -> np.ndarray:
    """``(i / (n-1))**3`` for ``i = 0..n-1``: dense near the reference end."""
    return (np.arange(n) / (n - 1)) ** 3


@dataclass
class Reference:
    """Truncated Gaussian reference distribution."""

    mean: np.ndarray
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    log_mass: float
    log_mass_err: float
    acceptance: float
    n_draws: int
    floored: list[int] = field(default_factory=list)
    priors: tuple = ()
    feasible: object = field(default=None, repr=False)

    def __post_init__(self):
        self._chol = np.linalg.cholesky(self.cov)
        d = len(self.mean)
        self._log_norm = -0.5 * d * math.log(2 * math.pi) - float(np.sum(np.log(np.diag(self._chol))))

    @property
    def dim(self):
        return len(self.mean)

    def in_support(self, theta) -> bool:
        theta = np.asarray(theta)
        if not (np.all(theta >= self.lower) and np.all(theta <= self.upper)):
            return False
        return self.feasible is None or bool(self.feasible(theta))

    def _accept(self, x: np.ndarray) -> np.ndarray:
        ok = np.all((x >= self.lower) & (x <= self.upper), axis=1)
        if self.feasible is not None:
            for k in np.flatnonzero(ok):
                ok[k] = bool(self.feasible(x[k]))
        return ok

    def logpdf(self, theta) -> float:
        """Normalised log-density of the truncated Gaussian."""
        if not self.in_support(theta):
            return -math.inf
        r = np.linalg.solve(self._chol, np.asarray(theta, dtype=float) - self.mean)
        return self._log_norm - 0.5 * float(r @ r) - self.log_mass

    def log_ratio(self, theta) -> float:
        """``A_ref = log P_ref - log P``."""
        lr = self.logpdf(theta)
        return lr - joint_logpdf(self.priors, theta) if lr > -math.inf else -math.inf

    def sample(self, rng: np.random.Generator, n: int, max_batches=10_000) -> np.ndarray:
        """``n`` independent draws by rejection from the untruncated Gaussian."""
        out = []
        got = 0
        batch = max(64, int(1.2 * n / max(self.acceptance, MIN_ACCEPTANCE)))
        for _ in range(max_batches):
            x = self.mean + rng.standard_normal((batch, self.dim)) @ self._chol.T
            ok = self._accept(x)
            out.append(x[ok])
            got += int(ok.sum())
            if got >= n:
                return np.concatenate(out)[:n]
        raise EvidenceError("reference rejection sampler did not produce enough draws")

    def diagnostics(self) -> dict:
        return {"mean": self.mean, "cov": self.cov, "log_mass": self.log_mass, "log_mass_err": self.log_mass_err,
                "acceptance": self.acceptance, "n_draws": self.n_draws, "floored_eigenvalues": self.floored}


def build_reference(problem: Problem, theta_star, hessian, rng: np.random.Generator, *,
                    n_draws=N_REFERENCE_DRAWS, floor=CURVATURE_FLOOR) -> Reference:
    """Truncated Gaussian approximation to the posterior around ``theta_star``.

    The precision is ``-hessian`` with eigenvalues below ``floor * max``
    raised to that floor.  The support is the prior support intersected
    with the problem's feasible set when it declares one.
    """
    H = np.atleast_2d(np.asarray(hessian, dtype=float))
    P = -0.5 * (H + H.T)
    w, V = np.linalg.eigh(P)
    if w.max() <= 0:
        raise EvidenceError("Hessian has no negative curvature; cannot build a reference")
    floor_val = floor * w.max()
    floored = [int(k) for k in np.flatnonzero(w < floor_val)]
    w = np.maximum(w, floor_val)
    cov = (V / w) @ V.T
    cov = 0.5 * (cov + cov.T)
    lower = np.array([p.lower for p in problem.priors], dtype=float)
    upper = np.array([p.upper for p in problem.priors], dtype=float)
    mean = np.asarray(theta_star, dtype=float)
    L = np.linalg.cholesky(cov)
    x = mean + rng.standard_normal((n_draws, len(mean))) @ L.T
    ref = Reference(mean, cov, lower, upper, 0.0, 0.0, 1.0, n_draws, floored, tuple(problem.priors),
                    getattr(problem, "feasible", None))
    acc = int(ref._accept(x).sum()) / n_draws
    if acc < MIN_ACCEPTANCE:
        raise EvidenceError(f"reference acceptance {acc:.2e} below {MIN_ACCEPTANCE:g}; widen the prior support "
                            "or rescale the reference")
    log_mass_err = math.sqrt((1 - acc) / (n_draws * acc))
    return replace(ref, log_mass=math.log(acc), log_mass_err=log_mass_err, acceptance=acc)


@dataclass
class EvidenceResult:
    log_z: float
    log_z_err: float
    grid: np.ndarray
    fprime: np.ndarray
    fprime_err: np.ndarray
    reference: Reference
    ess: np.ndarray
    failures: dict = field(default_factory=dict)
    deviance: float | None = None
    deviance_err: float | None = None
    kl: float | None = None
    kl_err: float | None = None

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def closure_residual(self) -> float | None:
        if self.deviance is None or self.kl is None:
            return None
        return self.log_z + self.deviance + self.kl

    @property
    def closure_err(self) -> float | None:
        if self.deviance_err is None or self.kl_err is None:
            return None
        return math.sqrt(self.log_z_err ** 2 + self.deviance_err ** 2 + self.kl_err ** 2)

    def to_dict(self):
        return {
            "log_z": self.log_z, "log_z_err": self.log_z_err,
            "convention": "log Z = integral over z of E_z[log L - (log P_ref - log P)], "
                          "P_ref the normalised truncated Gaussian; the error includes log-mass uncertainty",
            "grid": self.grid, "fprime": self.fprime, "fprime_err": self.fprime_err, "ess": self.ess,
            "failures": {f"{k:g}": v for k, v in self.failures.items()},
            "deviance": self.deviance, "deviance_err": self.deviance_err,
            "kl": self.kl, "kl_err": self.kl_err,
            "closure_residual": self.closure_residual, "closure_err": self.closure_err,
            "reference": self.reference.diagnostics(),
        }

    def write(self, path):
        write_json(path, self.to_dict())


def trapezoid_weights(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    w = np.zeros_like(g)
    dz = np.diff(g)
    w[:-1] += dz / 2
    w[1:] += dz / 2
    return w


def _mean_and_err(values):
    """Mean of ``(walkers, steps)`` values and its autocorrelation-corrected error."""
    m_seq = values.mean(axis=0)
    n = len(m_seq)
    var = float(np.var(m_seq, ddof=1)) if n > 1 else 0.0
    mean = float(values.mean())
    if math.sqrt(var) <= ROUNDOFF * max(1.0, abs(mean)):
        # constant up to round-off: autocorrelation of the rounding pattern is meaningless
        return mean, 0.0, math.inf
    tau = integrated_time(m_seq)
    tau = max(tau, 1.0) if math.isfinite(tau) else float(n)
    return mean, math.sqrt(var * tau / n), values.size / tau


def thermo_integrate(problem: Problem, reference: Reference, rng: np.random.Generator, *, grid=None,
                     n_walkers=None, n_steps=500, max_steps=20_000, target_ess=TARGET_ESS, burn_in_frac=1 / 3,
                     n_iid=4000, map_fn=map, rng_factory=None, done=None, on_point=None) -> EvidenceResult:
    """Thermodynamic integration from ``reference`` to the posterior.

    Each ``z > 0`` grid point runs an independent ensemble chain, doubled in
    length until the effective sample size of ``A - A_ref`` reaches
    ``target_ess`` or ``max_steps`` is hit.  ``z = 0`` uses independent
    reference draws.  ``rng_factory(i)`` supplies per-point generators; by
    default they are spawned from ``rng``.  ``done`` maps grid indices to
    already computed ``(fprime, err, ess)`` triples (for resuming) and
    ``on_point(i, fprime, err, ess)`` is called after each new point.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
        raise EvidenceError("z grid must start at 0, end at 1 and increase strictly")
    d = reference.dim
    W = default_walkers(d, n_walkers)
    streams = [rng_factory(i) for i in range(len(grid))] if rng_factory else rng.spawn(len(grid))

    def gap(theta):
        lp, ll = problem.evaluate(theta)
        if not math.isfinite(lp):
            return -math.inf
        return ll - reference.log_ratio(theta)

    fp = np.full(len(grid), np.nan)
    fe = np.full(len(grid), np.nan)
    ess = np.zeros(len(grid))
    failures = {}
    done = done or {}
    for i, z in enumerate(grid):
        r = streams[i]
        if i in done:
            fp[i], fe[i], ess[i] = done[i]
            continue
        try:
            if z == 0.0:
                x = reference.sample(r, n_iid)
                v = np.array([gap(t) for t in x])
                if not np.all(np.isfinite(v)):
                    raise EvidenceError("non-finite log-likelihood at a reference draw")
                fp[i], fe[i], ess[i] = float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))), len(v)
                if on_point:
                    on_point(i, fp[i], fe[i], ess[i])
                continue

            def target(theta, z=z):
                g = gap(theta)
                if not math.isfinite(g):
                    return -math.inf, -math.inf
                return z * g + reference.logpdf(theta), g

            init = reference.sample(r, W)
            steps = n_steps
            cs = run_ensemble(target, r, steps, init=init, map_fn=map_fn)
            while True:
                b = cs.burn_in(burn_in_frac)
                mean, err, e = _mean_and_err(cs.loglik[:, b:])
                if e >= target_ess or cs.n_steps - 1 >= max_steps:
                    break
                more = run_ensemble(target, r, cs.n_steps - 1, init=cs.chain[:, -1], map_fn=map_fn)
                cs = ChainSet(np.concatenate([cs.chain, more.chain[:, 1:]], axis=1),
                              np.concatenate([cs.logp, more.logp[:, 1:]], axis=1),
                              np.concatenate([cs.loglik, more.loglik[:, 1:]], axis=1),
                              cs.accepted + more.accepted)
            fp[i], fe[i], ess[i] = mean, err, min(e, 1e300)
            if on_point:
                on_point(i, fp[i], fe[i], ess[i])
        except (SamplerError, EvidenceError) as exc:
            failures[float(z)] = str(exc)
    w = trapezoid_weights(grid)
    if failures:
        log_z, log_z_err = math.nan, math.nan
    else:
        log_z = float(w @ fp)
        log_z_err = math.sqrt(float(np.sum((w * fe) ** 2)) + reference.log_mass_err ** 2)
    return EvidenceResult(log_z, log_z_err, grid, fp, fe, reference, ess, failures)


# ---------------------------------------------------------------------------
# deviance and KL


def deviance_and_kl(chains: ChainSet | np.ndarray, log_z: float, burn_in_frac=1 / 3) -> tuple[float, float, float]:
    """``(D, KL, err_D)`` with ``D = -E_post[log L]`` and ``KL = -log Z - D``."""
    if isinstance(chains, ChainSet):
        ll = chains.loglik[:, chains.burn_in(burn_in_frac):]
    else:
        ll = np.atleast_2d(np.asarray(chains, dtype=float))
    mean, err, _ = _mean_and_err(ll)
    D = -mean
    return D, -log_z - D, err


def _thin_unique(chains: ChainSet, burn_in_frac):
    cs = chains
    b = cs.burn_in(burn_in_frac)
    tau = autocorrelation_time(cs.chain[:, b:]).tau
    tau = np.nanmax(tau) if np.any(np.isfinite(tau)) else 1.0
    step = max(1, int(math.ceil(tau)))
    x = cs.chain[:, b::step].reshape(-1, cs.dim)
    _, idx = np.unique(x, axis=0, return_index=True)
    return x[np.sort(idx)]


def entropy_knn(x: np.ndarray, k: int = 4) -> tuple[float, float]:
    """Kozachenko-Leonenko entropy estimate and a standard error."""
    from scipy.spatial import cKDTree
    x = np.asarray(x, dtype=float)
    x = x.reshape(len(x), -1)
    n, d = x.shape
    if n <= k + 1:
        raise EvidenceError("too few distinct samples for a nearest-neighbour entropy estimate")
    dist, _ = cKDTree(x).query(x, k + 1)
    eps = dist[:, k]
    if np.any(eps <= 0):
        raise EvidenceError("coincident samples in nearest-neighbour entropy estimate")
    log_vd = 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1)
    terms = d * np.log(eps)
    H = float(digamma(n) - digamma(k) + log_vd + terms.mean())
    return H, float(terms.std(ddof=1) / math.sqrt(n))


def kl_knn(chains: ChainSet, priors, burn_in_frac=1 / 3, k=4) -> tuple[float, float]:
    """``KL(posterior || prior)`` from posterior samples alone, independent of ``log Z``.

    ``KL = -H[posterior] - E_post[log P]`` with a nearest-neighbour entropy on
    thinned, de-duplicated samples.
    """
    x = _thin_unique(chains, burn_in_frac)
    H, H_err = entropy_knn(x, k)
    lp = np.array([joint_logpdf(priors, t) for t in x])
    return float(-H - lp.mean()), math.sqrt(H_err ** 2 + float(lp.var(ddof=1)) / len(lp))


def attach_decomposition(result: EvidenceResult, chains: ChainSet, priors, burn_in_frac=1 / 3, k=4):
    """Fill deviance and an independent KL estimate so that the closure check is informative."""
    D, _, D_err = deviance_and_kl(chains, result.log_z, burn_in_frac)
    kl, kl_err = kl_knn(chains, priors, burn_in_frac, k)
    result.deviance, result.deviance_err, result.kl, result.kl_err = D, D_err, kl, kl_err
    return result


def closure_ok(result: EvidenceResult, sigmas=CLOSURE_SIGMAS) -> bool:
    r, e = result.closure_residual, result.closure_err
    return r is not None and abs(r) <= sigmas * e
