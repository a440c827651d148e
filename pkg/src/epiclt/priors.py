"""Truncated normal and log-normal priors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import PriorError

FAMILIES = ("normal", "lognormal")
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _log_diff_ndtr(a, b):
    """log(Phi(b) - Phi(a)) for a < b, accurate in both tails."""
    if a > 0.0:
        a, b = -b, -a
    if b == math.inf:
        if a == -math.inf:
            return 0.0
        return float(log_ndtr(-a))
    la, lb = float(log_ndtr(a)), float(log_ndtr(b))
    if la == -math.inf:
        return lb
    return lb + math.log1p(-math.exp(la - lb))


@dataclass(frozen=True)
class PriorSpec:
    """Independent prior for one parameter.

    ``mean`` and ``std`` are the moments of the *untruncated* distribution
    (for the log-normal family these are the moments of the variable itself,
    not of its logarithm).  ``lower``/``upper`` truncate the support; the
    density is renormalised over the truncated interval.
    """

    family: str
    mean: float
    std: float
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PriorError(f"unknown prior family {self.family!r}")
        if self.std < 0:
            raise PriorError("prior std must be >= 0")
        if not self.lower < self.upper:
            raise PriorError(f"empty prior support [{self.lower}, {self.upper}]")
        if self.family == "lognormal":
            if self.lower == -math.inf:
                object.__setattr__(self, "lower", 0.0)
            if self.mean <= 0:
                raise PriorError("log-normal prior requires mean > 0")
            if self.lower < 0:
                raise PriorError("log-normal prior requires lower bound >= 0")

    @classmethod
    def relative(cls, family, mean, std_rel, bounds_rel=None):
        """Prior with std and bounds quoted relative to the mean."""
        lo, hi = (-math.inf, math.inf) if bounds_rel is None else bounds_rel
        return cls(family, mean, std_rel * abs(mean), lo * mean, hi * mean)

    # underlying normal variable ------------------------------------------
    @property
    def _loc_scale(self):
        if self.family == "normal":
            return self.mean, self.std
        s2 = math.log1p((self.std / self.mean) ** 2)
        return math.log(self.mean) - 0.5 * s2, math.sqrt(s2)

    def _to_base(self, x):
        return np.log(x) if self.family == "lognormal" else x

    @property
    def _base_bounds(self):
        if self.family == "normal":
            return self.lower, self.upper
        lo = -math.inf if self.lower <= 0 else math.log(self.lower)
        hi = math.log(self.upper) if math.isfinite(self.upper) else math.inf
        return lo, hi

    @property
    def _std_bounds(self):
        loc, scale = self._loc_scale
        a, b = self._base_bounds
        return (a - loc) / scale, (b - loc) / scale

    @property
    def log_mass(self):
        """Log of the untruncated probability inside the bounds."""
        if self.std == 0:
            return 0.0
        return _log_diff_ndtr(*self._std_bounds)

    @property
    def bounds(self):
        return (self.lower, self.upper)

    def in_support(self, x):
        return (x >= self.lower) & (x <= self.upper)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = self.in_support(x)
        if self.family == "lognormal":
            inside &= x > 0
        if self.std == 0:
            out = np.where(x == self.mean, 0.0, -np.inf)
            return out if out.ndim else float(out)
        loc, scale = self._loc_scale
        with np.errstate(divide="ignore", invalid="ignore"):
            base = self._to_base(np.where(inside, x, 1.0))
            z = (base - loc) / scale
            lp = -0.5 * z * z - math.log(scale) - _LOG_SQRT_2PI - self.log_mass
            if self.family == "lognormal":
                lp = lp - base
        out = np.where(inside, lp, -np.inf)
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        loc, scale = self._loc_scale
        a, b = self._std_bounds
        with np.errstate(divide="ignore"):
            base = self._to_base(np.clip(x, max(self.lower, 1e-300) if self.family == "lognormal" else self.lower, self.upper))
        z = np.clip((base - loc) / scale, a, b)
        out = (ndtr(z) - ndtr(a)) / math.exp(self.log_mass)
        out = np.where(x < self.lower, 0.0, np.where(x > self.upper, 1.0, out))
        return out if out.ndim else float(out)

    def sample(self, rng, size=None):
        """Inverse-CDF draw from the truncated distribution."""
        if self.std == 0:
            return np.full(size, self.mean) if size is not None else float(self.mean)
        loc, scale = self._loc_scale
        a, b = self._std_bounds
        flip = a > 0
        if flip:
            a, b = -b, -a
        pa, pb = ndtr(a), ndtr(b)
        if not pb > pa:
            raise PriorError(f"truncated prior {self} has no representable mass")
        u = rng.uniform(pa, pb, size=size)
        z = np.clip(ndtri(u), a, b)
        if flip:
            z = -z
        base = loc + scale * z
        x = np.exp(base) if self.family == "lognormal" else base
        x = np.clip(x, self.lower, self.upper)
        return x if size is not None else float(x)

    # optimiser coordinates -------------------------------------------------
    def to_unit(self, x):
        """Map a parameter value into the coordinates used by the optimiser."""
        x = np.asarray(x, dtype=float)
        if self.family == "lognormal":
            return np.log(x)
        if math.isfinite(self.lower) and math.isfinite(self.upper):
            return (x - self.lower) / (self.upper - self.lower)
        return (x - self.mean) / (self.std if self.std > 0 else 1.0)

    def from_unit(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "lognormal":
            return np.exp(y)
        if math.isfinite(self.lower) and math.isfinite(self.upper):
            return self.lower + y * (self.upper - self.lower)
        return self.mean + y * (self.std if self.std > 0 else 1.0)

    # serialisation -----------------------------------------------------------
    def to_dict(self):
        d = {"family": self.family, "mean": self.mean, "std": self.std}
        if math.isfinite(self.lower) or math.isfinite(self.upper):
            d["bounds"] = [_enc(self.lower), _enc(self.upper)]
        return d

    @classmethod
    def from_dict(cls, d):
        lo, hi = d.get("bounds", [None, None])
        return cls(
            d.get("family", "normal"),
            float(d["mean"]),
            float(d["std"]),
            -math.inf if lo is None else float(lo),
            math.inf if hi is None else float(hi),
        )


def _enc(v):
    return None if not math.isfinite(v) else v


def joint_logpdf(priors, theta):
    """Sum of independent prior log-densities; -inf outside the support."""
    total = 0.0
    for prior, value in zip(priors, theta):
        lp = prior.logpdf(value)
        if lp == -math.inf:
            return -math.inf
        total += lp
    return float(total)
