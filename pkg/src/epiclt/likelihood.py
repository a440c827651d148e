"""Gaussian (linear-noise) likelihood of filtered observations.

Observations are cumulative linear combinations of compartments, ``Y_mu =
F n(t_mu)``.  With ``differenced=True`` the likelihood is evaluated on the
increments ``Y_mu - Y_{mu-1}`` (``Y_0`` is the baseline row at ``t = 0``),
which maps both the mean and the covariance through the same linear
differencing operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DataError, EpicltError, LikelihoodError
from .files import csv_text, read_csv, atomic_write
from .model import ModelSpec, initial_state, prior_logpdf
from .moments import ATOL, RTOL, MomentTrajectory, compute_moments
from .priors import PriorSpec, joint_logpdf

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
TRACE_JITTER = 1e-12


_DAYS = {"days": 1.0, "weeks": 7.0}


def _unit_factor(src: str, dst: str) -> float:
    if src not in _DAYS or dst not in _DAYS:
        raise DataError(f"unknown time unit {src if src not in _DAYS else dst!r}")
    return _DAYS[src] / _DAYS[dst]


@dataclass
class ObservationSet:
    """Observed cumulative values ``Y`` (counts) at ``times``.

    ``Y`` has shape ``(n_times, m_obs)``; ``baseline`` holds the observed
    values at ``t = 0`` when available.
    """

    F: np.ndarray
    times: np.ndarray
    Y: np.ndarray
    names: tuple[str, ...]
    differenced: bool = False
    baseline: np.ndarray | None = None

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.Y = np.asarray(self.Y, dtype=float).reshape(len(self.times), -1)
        if self.baseline is not None:
            self.baseline = np.asarray(self.baseline, dtype=float).reshape(-1)
        m = self.F.shape[0]
        if m == 0:
            raise DataError("filter matrix has no rows")
        if np.any(np.all(self.F == 0, axis=1)):
            raise DataError("filter matrix has an all-zero row")
        if self.Y.shape[1] != m:
            raise DataError(f"Y has {self.Y.shape[1]} columns, filter has {m} rows")
        if len(self.times) == 0:
            raise DataError("no observation times")
        if np.any(self.times <= 0) or np.any(np.diff(self.times) <= 0):
            raise DataError("observation times must be positive and strictly increasing")
        if len(self.names) != m:
            raise DataError("one name per filter row required")
        if self.baseline is not None and self.baseline.shape != (m,):
            raise DataError("baseline must have one entry per observable")

    @property
    def m(self):
        return self.F.shape[0]

    @property
    def n_times(self):
        return len(self.times)

    @property
    def stacked(self):
        """Time-major stacked observation vector."""
        return self.Y.reshape(-1)

    def baseline_map(self):
        return None if self.baseline is None else dict(zip(self.names, self.baseline))

    def window(self, t_end: float) -> "ObservationSet":
        """Observations with ``time <= t_end``."""
        keep = self.times <= t_end + 1e-12
        return ObservationSet(self.F, self.times[keep], self.Y[keep], self.names, self.differenced, self.baseline)

    def increments(self) -> np.ndarray:
        prev = np.vstack([self.baseline if self.baseline is not None else np.full(self.m, np.nan), self.Y[:-1]])
        return self.Y - prev

    @classmethod
    def from_arrays(cls, spec: ModelSpec, times, Y, names: Sequence[str] | None = None, *,
                    differenced=False, baseline=None):
        names = tuple(o.name for o in spec.observables) if names is None else tuple(names)
        return cls(spec.filter_matrix(names), times, Y, names, differenced, baseline)

    @classmethod
    def from_csv(cls, path, spec: ModelSpec, *, differenced=False, t_offset=0.0, time_unit=None):
        """Read ``time, <observable names...>``; a row at ``t = 0`` is the baseline.

        ``t_offset`` is subtracted from the time column (window start).
        ``time_unit`` declares the file's unit when it differs from the
        model's; times are converted on ingestion.
        """
        header, data = read_csv(path)
        if not header or header[0].lower() != "time":
            raise DataError(f"{path}: first column must be 'time'")
        names = tuple(header[1:])
        t = (data[:, 0] - t_offset) * _unit_factor(time_unit or spec.time_unit, spec.time_unit)
        base = None
        if len(t) and abs(t[0]) < 1e-12:
            base = data[0, 1:]
            data, t = data[1:], t[1:]
        return cls(spec.filter_matrix(names), t, data[:, 1:], names, differenced, base)

    def to_csv_text(self) -> str:
        rows = []
        if self.baseline is not None:
            rows.append([0.0, *self.baseline])
        rows += [[t, *y] for t, y in zip(self.times, self.Y)]
        return csv_text(["time", *self.names], rows)

    def to_csv(self, path):
        atomic_write(path, self.to_csv_text())


@dataclass
class LikelihoodEvaluation:
    loglik: float
    Ybar: np.ndarray | None = None
    delta: np.ndarray | None = None
    G: np.ndarray | None = None
    jitter: float = 0.0
    message: str = ""
    cond_mean: np.ndarray | None = None
    cond_cov: np.ndarray | None = None

    @property
    def finite(self):
        return math.isfinite(self.loglik)


# ---------------------------------------------------------------------------
# covariance assembly


def assemble_cross_covariance(traj: MomentTrajectory, F: np.ndarray | None = None) -> np.ndarray:
    """Joint covariance of the fluctuations at ``traj.times[1:]``.

    Block ``(nu, mu)`` with ``t_mu <= t_nu`` is ``U(t_mu, t_nu) Sigma(t_mu)``.
    With ``F`` the blocks are projected, ``F U Sigma F^T``, without forming
    the full matrix.
    """
    if traj.cov is None or traj.step_props is None:
        raise LikelihoodError("moment trajectory lacks covariance or propagator blocks")
    n = len(traj.times) - 1
    d = traj.dim
    P = np.eye(d) if F is None else np.asarray(F, dtype=float)
    m = P.shape[0]
    G = np.zeros((n * m, n * m))
    for mu in range(n):
        W = traj.cov[mu + 1] @ P.T
        for nu in range(mu, n):
            if nu > mu:
                W = traj.step_props[nu + 1] @ W
            blk = P @ W
            G[nu * m:(nu + 1) * m, mu * m:(mu + 1) * m] = blk
            if nu > mu:
                G[mu * m:(mu + 1) * m, nu * m:(nu + 1) * m] = blk.T
    return 0.5 * (G + G.T)


def differencing_operator(n: int, m: int) -> np.ndarray:
    """``kron(Dm, I_m)`` with ``Dm`` the first-difference matrix (identity on row 0)."""
    Dm = np.eye(n) - np.eye(n, k=-1)
    return np.kron(Dm, np.eye(m))


def robust_cholesky(G: np.ndarray):
    """Cholesky factor with the escalating diagonal jitter ladder.

    Returns ``(L, jitter)``; raises :class:`LikelihoodError` when every rung fails.
    """
    if not np.all(np.isfinite(G)):
        raise LikelihoodError("covariance has non-finite entries")
    dim = G.shape[0]
    diag = np.diag(G).copy()
    base = TRACE_JITTER * max(np.trace(G), 0.0) / dim
    for lam in JITTER_LADDER:
        Gj = G + np.diag(lam * np.abs(diag) + base)
        try:
            return np.linalg.cholesky(Gj), lam
        except np.linalg.LinAlgError:
            continue
    raise LikelihoodError("projected covariance is not positive definite after maximal jitter")


def _projected(spec, traj, obs: ObservationSet):
    """Predicted observations (counts) and covariance of ``Delta``."""
    omega = spec.omega
    mean_obs = traj.mean[1:] @ obs.F.T * omega  # (n, m)
    G = assemble_cross_covariance(traj, obs.F)
    if obs.differenced:
        start = traj.mean[0] @ obs.F.T * omega
        Ybar = mean_obs - np.vstack([start, mean_obs[:-1]])
        D = differencing_operator(obs.n_times, obs.m)
        G = D @ G @ D.T
        data = obs.Y - np.vstack([obs.baseline if obs.baseline is not None else start, obs.Y[:-1]])
    else:
        Ybar = mean_obs
        data = obs.Y
    return Ybar.reshape(-1), data.reshape(-1), 0.5 * (G + G.T)


def gaussian_loglik(delta, G, omega):
    """``-1/2 [delta^T G^-1 delta + ln det(2 pi G / omega)]`` via Cholesky."""
    L, lam = robust_cholesky(G)
    a = solve_triangular(L, delta, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    N = len(delta)
    return -0.5 * (a @ a + logdet + N * math.log(2.0 * math.pi / omega)), lam


def log_likelihood(spec: ModelSpec, theta, obs: ObservationSet, *, rtol=RTOL, atol=ATOL,
                   full=True) -> LikelihoodEvaluation:
    """Linear-noise log-likelihood of ``obs``; ``-inf`` (with a message) when infeasible."""
    try:
        traj = compute_moments(spec, theta, obs.times, rtol=rtol, atol=atol, baseline=obs.baseline_map())
        Ybar, data, G = _projected(spec, traj, obs)
        delta = (data - Ybar) / math.sqrt(spec.omega)
        ll, lam = gaussian_loglik(delta, G, spec.omega)
    except EpicltError as exc:
        return LikelihoodEvaluation(-math.inf, message=str(exc))
    if not math.isfinite(ll):
        return LikelihoodEvaluation(-math.inf, message="non-finite likelihood")
    if not full:
        return LikelihoodEvaluation(float(ll), jitter=lam)
    return LikelihoodEvaluation(float(ll), Ybar, delta, G, lam)


def log_posterior(spec: ModelSpec, theta, obs: ObservationSet, **kw) -> float:
    lp = prior_logpdf(spec, theta)
    if lp == -math.inf:
        return -math.inf
    return lp + log_likelihood(spec, theta, obs, full=False, **kw).loglik


# ---------------------------------------------------------------------------
# conditioning on the data


def conditional_gaussian(mean, cov, P, target, jitter_ok=True):
    """Moments of ``X ~ N(mean, cov)`` conditioned on ``P X = target``."""
    S = P @ cov @ P.T
    L, _ = robust_cholesky(0.5 * (S + S.T))
    CPt = cov @ P.T
    K = cho_solve((L, True), CPt.T).T
    cmean = mean + K @ (target - P @ mean)
    ccov = cov - K @ CPt.T
    return cmean, 0.5 * (ccov + ccov.T)


def _psd_sqrt(C):
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def conditional_latent(spec: ModelSpec, theta, obs: ObservationSet, rng: np.random.Generator,
                       n_samples: int, *, rtol=RTOL, atol=ATOL, return_moments=False):
    """Samples of the full state (fractions) at every observation time, given the data.

    Returns an array ``(n_samples, n_times, dim)``.  The observed
    coordinates satisfy ``omega * F x = Y`` exactly (cumulative values).
    """
    traj = compute_moments(spec, theta, obs.times, rtol=rtol, atol=atol, baseline=obs.baseline_map())
    n, d = obs.n_times, spec.dim
    Xbar = traj.mean[1:].reshape(-1)
    Gt = assemble_cross_covariance(traj) / spec.omega
    P = np.kron(np.eye(n), obs.F)
    target = obs.Y.reshape(-1) / spec.omega
    # pin the observed coordinates by Matheron's rule, then remove the jitter residue exactly
    S = P @ Gt @ P.T
    L, _ = robust_cholesky(0.5 * (S + S.T))
    K = cho_solve((L, True), P @ Gt).T
    root = _psd_sqrt(Gt)
    Pp = np.linalg.pinv(P)
    xi = rng.standard_normal((n_samples, root.shape[1]))
    X = Xbar + xi @ root.T
    X = X + (target - X @ P.T) @ K.T
    X = X + (target - X @ P.T) @ Pp.T
    out = X.reshape(n_samples, n, d)
    if return_moments:
        cmean = Xbar + K @ (target - P @ Xbar)
        ccov = Gt - K @ P @ Gt
        return out, cmean.reshape(n, d), 0.5 * (ccov + ccov.T)
    return out


# ---------------------------------------------------------------------------
# posterior problems consumed by the optimiser, sampler and evidence code


@dataclass
class Problem:
    """Log-posterior built from independent priors and a log-likelihood callable.

    ``loglik(theta)`` may return ``-inf`` for infeasible points.  ``feasible``
    is an optional cheap predicate that rules out such points in advance.
    """

    priors: Sequence[PriorSpec]
    loglik: Callable[[np.ndarray], float]
    names: tuple[str, ...] = ()
    gaussian_moments: Callable | None = field(default=None, repr=False)
    feasible: Callable[[np.ndarray], bool] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.names:
            self.names = tuple(f"p{k}" for k in range(len(self.priors)))

    @property
    def dim(self):
        return len(self.priors)

    def log_prior(self, theta) -> float:
        return joint_logpdf(self.priors, theta)

    def log_likelihood(self, theta) -> float:
        return float(self.loglik(np.asarray(theta, dtype=float)))

    def evaluate(self, theta) -> tuple[float, float]:
        """``(log_posterior, log_likelihood)``; the likelihood is skipped outside the prior support."""
        lp = self.log_prior(theta)
        if lp == -math.inf:
            return -math.inf, -math.inf
        ll = self.log_likelihood(theta)
        if not math.isfinite(ll):
            return -math.inf, -math.inf
        return lp + ll, ll

    def log_posterior(self, theta) -> float:
        return self.evaluate(theta)[0]

    def prior_mean(self):
        return np.array([p.mean for p in self.priors])

    def sample_prior(self, rng, size=None):
        if size is None:
            return np.array([p.sample(rng) for p in self.priors])
        return np.column_stack([p.sample(rng, size) for p in self.priors])


class ModelPosterior(Problem):
    """Posterior of a compartment model's free parameters given observations."""

    def __init__(self, spec: ModelSpec, obs: ObservationSet, *, rtol=RTOL, atol=ATOL):
        self.spec = spec
        self.obs = obs
        self.rtol = rtol
        self.atol = atol
        super().__init__(spec.priors, self._loglik, spec.free_names, self._gaussian_moments, self._feasible)

    def _feasible(self, theta) -> bool:
        """Whether the initial state built from ``theta`` is valid."""
        try:
            initial_state(self.spec, theta, self.obs.baseline_map())
        except EpicltError:
            return False
        return True

    def _loglik(self, theta):
        return log_likelihood(self.spec, theta, self.obs, rtol=self.rtol, atol=self.atol, full=False).loglik

    def evaluation(self, theta) -> LikelihoodEvaluation:
        return log_likelihood(self.spec, theta, self.obs, rtol=self.rtol, atol=self.atol)

    def _gaussian_moments(self, theta):
        """Mean ``sqrt(omega) A xbar`` and covariance ``G`` of ``Y / sqrt(omega)``."""
        traj = compute_moments(self.spec, theta, self.obs.times, rtol=self.rtol, atol=self.atol,
                               baseline=self.obs.baseline_map())
        Ybar, _, G = _projected(self.spec, traj, self.obs)
        return Ybar / math.sqrt(self.spec.omega), G
