"""Deterministic mean path and linear-noise second moments.

The mean ``xbar``, the covariance ``Sigma`` of the scaled fluctuation
``u = sqrt(omega) * (x - xbar)`` and the propagator ``U(s, t)`` of the
linearised dynamics are integrated together as one augmented ODE system so
that the Jacobian is always evaluated on the same mean path.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import IntegrationError
from .files import fmt_float, json_text, write_csv, atomic_write
from .model import ModelSpec, initial_state

RTOL = 1e-8
ATOL = 1e-10
MAX_STEPS = 200_000
CLIP_WARN = 1e-6

_STATUS = {1: "step-size underflow", 2: "non-finite state", 3: "step budget exhausted"}


@dataclass(frozen=True)
class LocalLinearization:
    """Drift Jacobian ``J`` and noise matrix ``B`` at one point of the path."""

    J: np.ndarray
    B: np.ndarray


@dataclass
class MomentTrajectory:
    """Moments on ``times`` (``times[0]`` is the initial time).

    ``step_props[k]`` is ``U(times[k-1], times[k])``; ``step_props[0]`` is
    the identity.  ``cov`` is ``None`` when covariances were not requested.
    """

    times: np.ndarray
    mean: np.ndarray
    cov: np.ndarray | None
    step_props: np.ndarray | None
    min_mean: float = 0.0

    @property
    def dim(self):
        return self.mean.shape[1]

    def propagator(self, i: int, j: int) -> np.ndarray:
        """``U(times[i], times[j])`` for ``i <= j``."""
        if self.step_props is None:
            raise IntegrationError("propagators were not computed")
        if i > j:
            raise ValueError("propagator requires i <= j")
        U = np.eye(self.dim)
        for k in range(i + 1, j + 1):
            U = self.step_props[k] @ U
        return U

    def clipped_mean(self):
        return np.maximum(self.mean, 0.0)

    # export -----------------------------------------------------------------
    def to_csv(self, path, labels):
        rows = ([t, *x] for t, x in zip(self.times, self.mean))
        write_csv(path, ["time", *labels], rows)

    def covariance_json(self) -> str:
        if self.cov is None:
            raise IntegrationError("covariances were not computed")
        return json_text({fmt_float(t): c for t, c in zip(self.times, self.cov)})

    def write_covariance(self, path):
        atomic_write(path, self.covariance_json())


def _grid(times):
    times = np.ascontiguousarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValueError("time grid must be a non-empty 1-D array")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return times


def _run(spec, theta, times, x0, do_sigma, do_prop, rtol, atol, max_steps, baseline):
    times = _grid(times)
    theta = np.asarray(theta, dtype=float)
    if x0 is None:
        x0 = initial_state(spec, theta, baseline)
    x0 = np.ascontiguousarray(x0, dtype=float)
    kern = spec.kernel(theta)
    means, covs, props, status, t_fail, min_mean = _kernels.integrate_moments(
        x0, times, do_sigma, do_prop, kern, rtol, atol, max_steps)
    if status != 0:
        raise IntegrationError(f"integration failed at t={t_fail:g}: {_STATUS[status]}", time=t_fail)
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs)) and np.all(np.isfinite(props))):
        raise IntegrationError("integration produced non-finite moments")
    if min_mean < -CLIP_WARN:
        warnings.warn(f"mean path went negative by {-min_mean:.3g} and was clipped", RuntimeWarning, stacklevel=3)
    return MomentTrajectory(times, means, covs if do_sigma else None, props if do_prop else None, min_mean)


def integrate_mean(spec: ModelSpec, theta, times, x0=None, *, rtol=RTOL, atol=ATOL,
                   max_steps=MAX_STEPS, baseline=None) -> np.ndarray:
    """Mean path ``xbar`` at every entry of ``times`` (starting at ``times[0]``)."""
    return _run(spec, theta, times, x0, False, False, rtol, atol, max_steps, baseline).mean


def linearize(spec: ModelSpec, theta, t: float, xbar) -> LocalLinearization:
    """Jacobian of the drift and noise matrix at ``(t, xbar)``."""
    x = np.maximum(np.asarray(xbar, dtype=float), 0.0)
    J, B = _kernels.jacobian_and_noise(float(t), x, spec.kernel(theta))
    return LocalLinearization(J, B)


def integrate_covariance(spec: ModelSpec, theta, times, x0=None, *, rtol=RTOL, atol=ATOL,
                         max_steps=MAX_STEPS, baseline=None) -> np.ndarray:
    """Covariance ``Sigma`` at every entry of ``times``, with ``Sigma(times[0]) = 0``."""
    return _run(spec, theta, times, x0, True, False, rtol, atol, max_steps, baseline).cov


def integrate_propagator(spec: ModelSpec, theta, s: float, t_list, x0=None, *, t0=0.0, rtol=RTOL,
                         atol=ATOL, max_steps=MAX_STEPS, baseline=None) -> np.ndarray:
    """``U(s, t)`` for each ``t`` in ``t_list``; the path starts at ``t0`` from ``x0``."""
    t_list = np.asarray(t_list, dtype=float)
    if np.any(t_list < s) or s < t0:
        raise ValueError("need t0 <= s <= min(t_list)")
    uniq = np.unique(t_list[t_list > s])
    grid = np.concatenate(([t0], [s] if s > t0 else [], uniq))
    traj = _run(spec, theta, grid, x0, False, True, rtol, atol, max_steps, baseline)
    i_s = 1 if s > t0 else 0
    out = np.empty((len(t_list), spec.dim, spec.dim))
    for n, t in enumerate(t_list):
        j = i_s if t == s else i_s + 1 + int(np.searchsorted(uniq, t))
        out[n] = traj.propagator(i_s, j)
    return out


def compute_moments(spec: ModelSpec, theta, obs_times, x0=None, *, t0=0.0, rtol=RTOL, atol=ATOL,
                    max_steps=MAX_STEPS, baseline=None, covariance=True) -> MomentTrajectory:
    """Mean, covariance and step propagators on ``[t0, *obs_times]``."""
    grid = np.concatenate(([t0], np.asarray(obs_times, dtype=float)))
    return _run(spec, theta, grid, x0, covariance, covariance, rtol, atol, max_steps, baseline)
