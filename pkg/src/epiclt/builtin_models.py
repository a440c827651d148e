"""Built-in models: a single-cohort SEIR-D model and a 16-cohort,
8-class age-structured COVID-19 model with contact matrices and NPIs.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, ModelError
from .files import read_json, write_json
from .model import (Coefficient, InfectionRate, InitialConditionSpec, LinearRate, ModelSpec, Observable,
                    Override, ParameterDecl, TimeProfile, Transition, dominant_mode, validate_model)
from .priors import PriorSpec

# ---------------------------------------------------------------------------
# SEIR-D

SEIRD_CLASSES = ("S", "E", "I", "R", "D")
SEIRD_TRUTH = {"beta": 0.035, "f": 0.02, "c": 20.0, "gamma_E": 0.35, "gamma_I": 0.25}
SEIRD_SEED_E = 1e-3
SEIRD_SEED_I = 4e-4
WINDOW_DEATH_FRAC = 0.002


def _seird_transitions():
    return (
        Transition((-1, 1, 0, 0, 0), InfectionRate(0, (2,), (Coefficient(1.0, ("c", "beta")),)), "S->E"),
        Transition((0, -1, 1, 0, 0), LinearRate(1, Coefficient(1.0, ("gamma_E",))), "E->I"),
        Transition((0, 0, -1, 1, 0), LinearRate(2, Coefficient(1.0, ("gamma_I",), ("f",))), "I->R"),
        Transition((0, 0, -1, 0, 1), LinearRate(2, Coefficient(1.0, ("gamma_I", "f"))), "I->D"),
    )


def build_seird(omega: float, params: Mapping[str, float] | None = None, *, x0=None,
                free: Sequence[str] = ("beta",)) -> ModelSpec:
    """SEIR-D model with all rate constants fixed except ``free``.

    Free parameters get a normal prior centred on their value (std half the
    value, truncated to ``[0, 10 * value]``), so the prior mean reproduces
    the generating parameters.
    """
    vals = dict(SEIRD_TRUTH)
    if params:
        unknown = set(params) - set(vals)
        if unknown:
            raise ModelError(f"unknown SEIR-D parameters {sorted(unknown)}")
        vals.update({k: float(v) for k, v in params.items()})
    if not 0.0 <= vals["f"] <= 1.0:
        raise ModelError("fatality ratio f must lie in [0, 1]")
    for k in ("beta", "c", "gamma_E", "gamma_I"):
        if vals[k] < 0:
            raise ModelError(f"{k} must be non-negative")
    if x0 is None:
        x0 = (1.0 - SEIRD_SEED_E - SEIRD_SEED_I, SEIRD_SEED_E, SEIRD_SEED_I, 0.0, 0.0)
    decls = []
    for name in ("beta", "f", "c", "gamma_E", "gamma_I"):
        v = vals[name]
        if name in free:
            hi = 1.0 if name == "f" else 10.0 * v
            decls.append(ParameterDecl(name, PriorSpec("normal", v, 0.5 * v, 0.0, hi)))
        else:
            decls.append(ParameterDecl(name, fixed=v))
    spec = ModelSpec(
        classes=SEIRD_CLASSES, omega=float(omega), transitions=_seird_transitions(), params=tuple(decls),
        init=InitialConditionSpec("explicit", tuple(float(v) for v in x0)),
        observables=(Observable("D", {4: 1.0}),), time_unit="days", name="seird",
    )
    validate_model(spec).raise_if_invalid()
    return spec


def seird_linear_state(d0_frac: float, params: Mapping[str, float] | None = None):
    """``x_S + kappa v`` with ``kappa`` chosen so the D component equals ``d0_frac``."""
    vals = dict(SEIRD_TRUTH)
    vals.update(params or {})
    spec = build_seird(1.0, vals, free=())
    _, v = dominant_mode(spec, np.zeros(0))
    if v[4] <= 0:
        raise ModelError("dominant mode has no deceased component (f = 0?)")
    kappa = d0_frac / v[4]
    x = np.zeros(5)
    x[0] = 1.0
    return x + kappa * v, kappa


def seird_inference_priors(d0_frac: float, *, beta_mean: float | None = None,
                           params: Mapping[str, float] | None = None) -> dict[str, PriorSpec]:
    """Priors for (beta, S0, E0, I0).

    ``beta`` is normal with std half its mean (default mean 0.8 times the
    true value); the initial-condition means come from the dominant linear
    mode scaled to the observed deaths, with std a third of the mean for
    E0 and I0 and the E0 std reused for S0.
    """
    vals = dict(SEIRD_TRUTH)
    vals.update(params or {})
    bm = 0.8 * vals["beta"] if beta_mean is None else float(beta_mean)
    xl, _ = seird_linear_state(d0_frac, vals)
    s0, e0, i0 = xl[0], xl[1], xl[2]
    return {
        "beta": PriorSpec("normal", bm, 0.5 * bm, 0.1 * bm, 4.0 * bm),
        "S0": PriorSpec("normal", s0, e0 / 3.0, 0.0, 1.0),
        "E0": PriorSpec("normal", e0, e0 / 3.0, 0.0, 3.0 * e0),
        "I0": PriorSpec("normal", i0, i0 / 3.0, 0.0, 3.0 * i0),
    }


def build_seird_inference(omega: float, d0_frac: float, *, beta_mean: float | None = None,
                          params: Mapping[str, float] | None = None,
                          priors: Mapping[str, PriorSpec] | None = None) -> ModelSpec:
    """SEIR-D model whose free parameters are ``(beta, S0, E0, I0)``.

    ``S0, E0, I0`` are fractions at the window start; ``D`` is taken from
    the observed baseline and ``R`` absorbs the population constraint.
    """
    vals = dict(SEIRD_TRUTH)
    vals.update(params or {})
    pri = dict(seird_inference_priors(d0_frac, beta_mean=beta_mean, params=vals))
    pri.update(priors or {})
    decls = [ParameterDecl("beta", pri["beta"])]
    decls += [ParameterDecl(n, fixed=vals[n]) for n in ("f", "c", "gamma_E", "gamma_I")]
    decls += [ParameterDecl(n, pri[n], "initial-condition") for n in ("S0", "E0", "I0")]
    init = InitialConditionSpec(
        "explicit", (0.0,) * 5,
        overrides=(Override(0, "S0"), Override(1, "E0"), Override(2, "I0"), Override(4, from_baseline="D")),
        conservation_class=3,
    )
    spec = ModelSpec(classes=SEIRD_CLASSES, omega=float(omega), transitions=_seird_transitions(),
                     params=tuple(decls), init=init, observables=(Observable("D", {4: 1.0}),),
                     time_unit="days", name="seird-inference")
    validate_model(spec).raise_if_invalid()
    return spec


def window_start(times, deaths, omega: float, frac: float = WINDOW_DEATH_FRAC) -> int:
    """Index of the first time where cumulative deaths exceed ``frac * omega``."""
    hit = np.flatnonzero(np.asarray(deaths) > frac * omega)
    if hit.size == 0:
        raise DataError(f"cumulative deaths never exceed {frac:g} of the population")
    return int(hit[0])


@dataclass
class SeirdRun:
    """A synthetic SEIR-D trajectory recorded once per day."""

    omega: float
    days: np.ndarray
    states: np.ndarray
    start: int
    frac: float = WINDOW_DEATH_FRAC

    @property
    def deaths(self) -> np.ndarray:
        return self.states[:, 4]

    def truth(self) -> np.ndarray:
        """True ``(beta, S0, E0, I0)`` at the window start."""
        return np.array([SEIRD_TRUTH["beta"], *(self.states[self.start, :3] / self.omega)])

    def window(self, n_days: int, *, beta_mean=None):
        """Inference model and observations for the first ``n_days`` after the window start.

        Observations are daily death increments; the cumulative count at
        the window start is the baseline and time is measured from it.
        """
        from .likelihood import ObservationSet
        k0 = self.start
        if k0 + n_days >= len(self.days):
            raise DataError("window extends past the simulated span")
        d0 = float(self.deaths[k0])
        spec = build_seird_inference(self.omega, d0 / self.omega, beta_mean=beta_mean)
        Y = self.deaths[k0 + 1:k0 + n_days + 1, None].astype(float)
        obs = ObservationSet(spec.filter_matrix(["D"]), np.arange(1.0, n_days + 1), Y, ("D",), True,
                             np.array([d0]))
        return spec, obs

    def held_out(self, n_days: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
        """Window-relative days and cumulative deaths after the window."""
        k1 = self.start + n_days
        k2 = min(k1 + horizon, len(self.days) - 1)
        return self.days[k1 + 1:k2 + 1] - self.days[self.start], self.deaths[k1 + 1:k2 + 1].astype(float)


def seird_synthetic(omega: float, rng: np.random.Generator, *, n_days=80, method=None, eps=None,
                    frac=WINDOW_DEATH_FRAC) -> SeirdRun:
    """Simulate the SEIR-D model at its true parameters and locate the window start.

    The default method is exact simulation below ``omega = 1e7`` and a
    tau-leap with ``eps = 0.003`` above; the coarser default step biases
    the large-population data by more than their own CLT fluctuations.
    """
    from .simulate import simulate
    spec = build_seird(omega)
    x0 = np.array(spec.init.x0)
    n0 = np.round(x0 * omega).astype(np.int64)
    n0[0] = int(round(omega)) - int(n0[1:].sum())
    if method is None:
        method = "gillespie" if omega < 1e7 else "tau-leap"
    eps = LARGE_OMEGA_EPS if eps is None else eps
    days = np.arange(0.0, n_days + 1)
    path = simulate(spec, spec.default_theta(), n0, (0.0, float(n_days)), rng, method=method,
                    record_times=days, eps=eps)
    start = window_start(days, path.states[:, 4], omega, frac)
    return SeirdRun(float(omega), days, path.states, start, frac)


LARGE_OMEGA_EPS = 0.003


# ---------------------------------------------------------------------------
# age-structured model

EW_CLASSES = ("S", "E", "A", "I1", "I2", "I3", "R", "D")
EW_M = 16
EW_COHORT_NAMES = tuple([f"{5 * i}-{5 * i + 4}" for i in range(15)] + ["75+"])
EW_COHORT_AGES = np.array([5 * i + 2.5 for i in range(15)] + [80.0])
EW_PLACEHOLDER_POPULATION = 3.7e6
CFR_A = 1.43e-4
CFR_XI = 13.1
DAYS_PER_WEEK = 7.0
DEFAULT_C0 = 12.0
DEFAULT_ALPHA = 0.5
OLDEST_SEED_MEANS = {"E": 2000.0, "A": 1200.0, "I1": 300.0, "I2": 60.0, "I3": 40.0}
KAPPA_MEAN = 5e-4


def cfr_curve(ages, A: float = CFR_A, xi: float = CFR_XI) -> np.ndarray:
    """Case fatality ratio ``A exp(age / xi)``, capped at 1."""
    return np.minimum(A * np.exp(np.asarray(ages, dtype=float) / xi), 1.0)


@dataclass(frozen=True)
class NpiSpec:
    """Activity profile ``a_i(t)`` per cohort.

    ``step``: linear fall from 1 to ``a_final[i]`` over ``w_lock`` centred
    on ``t_lock``.  ``easing``: after the fall, linear rise reaching
    ``a_final + r (1 - a_final)`` at ``t_end`` (continued beyond, capped at 1).
    """

    kind: str
    t_lock: float
    w_lock: float
    a_final: tuple[float, ...]
    r: float = 0.0
    t_end: float = math.inf

    def __post_init__(self):
        if self.kind not in ("step", "easing"):
            raise ModelError(f"unknown NPI kind {self.kind!r}")
        if self.w_lock <= 0:
            raise ModelError("NPI width must be positive")
        if any(not 0 < a <= 1 for a in self.a_final):
            raise ModelError("final activity levels must lie in (0, 1]")
        if self.kind == "easing" and not math.isfinite(self.t_end):
            raise ModelError("easing NPI needs the window end t_end")


def npi_activity(npi: NpiSpec, t: float) -> np.ndarray:
    from ._kernels import activity_profile
    kind = 0 if npi.kind == "step" else 1
    return np.array([activity_profile(float(t), kind, npi.t_lock, npi.w_lock, a, npi.r, npi.t_end)
                     for a in npi.a_final])


@dataclass
class ContactStructure:
    """Bare contact matrix ``C`` (contacts/day) with its NPI and base rate ``eta``."""

    C: np.ndarray
    npi: str = "step"
    eta: float = DAYS_PER_WEEK
    variant: str = "proportional-mixing"
    t_end: float = math.inf
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim != 2 or self.C.shape[0] != self.C.shape[1]:
            raise ModelError("contact matrix must be square")
        if np.any(self.C < 0):
            raise ModelError("contact matrix has negative entries")
        if self.npi not in ("step", "easing"):
            raise ModelError(f"unknown NPI kind {self.npi!r}")


def proportional_mixing_matrix(cohort_populations, c0: float) -> np.ndarray:
    """Random mixing, ``C_ij = c0 N_j / omega``."""
    N = np.asarray(cohort_populations, dtype=float)
    if np.any(N <= 0):
        raise ModelError("cohort populations must be positive")
    return np.tile(c0 * N / N.sum(), (len(N), 1))


def reciprocity_residual(C, cohort_populations) -> float:
    """``max |N_i C_ij - N_j C_ji|``; zero for reciprocal contact matrices."""
    Q = np.asarray(cohort_populations, dtype=float)[:, None] * np.asarray(C)
    return float(np.max(np.abs(Q - Q.T)))


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = [[c.strip() for c in r] for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: contact file needs a header and data rows")
    return rows


def load_contact_matrix(path, cohort_populations, chi: float | str = "default",
                        cohort_edges: Sequence[float] | None = None) -> np.ndarray:
    """Read a contact matrix file.

    Two layouts are accepted:

    * direct: a header of M cohort labels followed by M rows of ``C_ij``
      (an optional leading ``cohort`` label column is ignored);
    * aggregated: a header ``band, <band labels>`` followed by rows
      ``age, Q0_p1, ..., Q0_pn`` of a fine-grained symmetric matrix; the
      bands are summed into cohorts with lower age edges ``cohort_edges``
      (default 5-year bands, last cohort open) and scaled by
      ``omega / (chi N_i)``, ``chi = 3 M n_bands`` by default.
    """
    N = np.asarray(cohort_populations, dtype=float)
    M = len(N)
    rows = _read_rows(path)
    header = rows[0]
    try:
        if header[0].lower() == "band":
            ages = np.array([float(r[0]) for r in rows[1:]])
            Q0 = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
            return aggregate_contacts(Q0, ages, N, chi, cohort_edges)
        skip = 1 if header[0].lower() == "cohort" else 0
        C = np.array([[float(v) for v in r[skip:]] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    if C.shape != (M, M):
        raise ModelError(f"{path}: contact matrix is {C.shape}, model has {M} cohorts")
    return C


def aggregate_contacts(Q0, band_ages, cohort_populations, chi: float | str = "default",
                       cohort_edges: Sequence[float] | None = None) -> np.ndarray:
    """``C_ij = omega / (chi N_i) sum_{p in A_i} sum_{q in A_j} Q0_pq``."""
    Q0 = np.asarray(Q0, dtype=float)
    ages = np.asarray(band_ages, dtype=float)
    N = np.asarray(cohort_populations, dtype=float)
    M = len(N)
    nq = len(ages)
    if Q0.shape != (nq, nq):
        raise DataError(f"fine-grained matrix is {Q0.shape}, expected ({nq}, {nq})")
    edges = np.arange(M) * 5.0 if cohort_edges is None else np.asarray(cohort_edges, dtype=float)
    if len(edges) != M:
        raise DataError("one lower age edge per cohort required")
    member = np.searchsorted(edges, ages, side="right") - 1
    if np.any(member < 0):
        raise DataError("bands below the first cohort edge")
    counts = np.bincount(member, minlength=M)
    if np.any(counts == 0):
        raise DataError(f"cohorts {np.flatnonzero(counts == 0).tolist()} receive no age bands")
    if np.any(np.diff(ages) != 1.0):
        raise DataError("age bands must be consecutive single years")
    chi_val = 3.0 * M * nq if chi == "default" else float(chi)
    agg = np.zeros((M, M))
    np.add.at(agg, (member[:, None], member[None, :]), Q0)
    return N.sum() / (chi_val * N[:, None]) * agg


def write_contact_matrix(path, C, labels):
    from .files import csv_text, atomic_write
    atomic_write(path, csv_text(["cohort", *labels], ([lab, *row] for lab, row in zip(labels, C))))


def beta_prior_means(ages=EW_COHORT_AGES) -> np.ndarray:
    """0.04 below age 15, 0.2 from 50, linear in between (cohort midpoints)."""
    return np.interp(np.asarray(ages, dtype=float), [15.0, 50.0], [0.04, 0.2])


def ew_default_priors(npi: str = "step", time_unit: str = "weeks", M: int = EW_M) -> dict[str, PriorSpec]:
    """Default priors for the age-structured model, in the requested time unit."""
    if time_unit not in ("days", "weeks"):
        raise ModelError(f"unknown time unit {time_unit!r}")
    day = 1.0 / DAYS_PER_WEEK if time_unit == "weeks" else 1.0
    rel = PriorSpec.relative
    pri: dict[str, PriorSpec] = {}
    for name, days in (("gamma_E", 3.00), ("gamma_A", 2.50), ("gamma_1", 3.00), ("gamma_2", 7.25), ("gamma_3", 7.25)):
        pri[name] = rel("normal", 1.0 / (days * day), 0.1, (0.6, 1.4))
    ages = EW_COHORT_AGES if M == EW_M else np.linspace(2.5, 80.0, M)
    for i, b in enumerate(beta_prior_means(ages)):
        pri[f"beta_{i}"] = rel("lognormal", float(b), 0.5, (0.1, 10.0))
    pri["nu_L"] = rel("lognormal", 0.1, 0.5, (0.1, 10.0))
    pri["t_lock"] = rel("normal", 17.0 * day, 0.06, (0.06, 1.8))
    pri["W_lock"] = rel("normal", 12.0 * day, 0.08, (0.008, 1.7))
    for i in range(M):
        pri[f"aF_{i}"] = PriorSpec("lognormal", 0.2, 0.1, 0.002, 1.0)
    if npi == "easing":
        # bounds are absolute here: read relative to the mean they would exclude the mean itself
        pri["r"] = PriorSpec("normal", 0.2, 0.02, 0.05, 0.5)
    pri["kappa"] = PriorSpec("lognormal", KAPPA_MEAN, 0.5 * KAPPA_MEAN, 0.01 * KAPPA_MEAN, 10 * KAPPA_MEAN)
    for cls, mu in OLDEST_SEED_MEANS.items():
        pri[f"{cls}_old"] = PriorSpec("lognormal", mu, 0.5 * mu, 0.01 * mu, 10 * mu)
    return pri


def write_priors(path, priors: Mapping[str, PriorSpec]):
    write_json(path, {"parameters": [{"name": k, "prior": p.to_dict()} for k, p in priors.items()]})


def read_priors(path) -> dict[str, PriorSpec]:
    doc = read_json(path)
    try:
        return {p["name"]: PriorSpec.from_dict(p["prior"]) for p in doc["parameters"]}
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed priors file ({exc!r})") from None


def build_england_wales(contact: ContactStructure, priors: Mapping[str, PriorSpec] | str | Path | None = None,
                        cohort_populations=None, *, alpha=None, cfr=None, time_unit: str = "weeks",
                        fixed: Mapping[str, float] | None = None) -> ModelSpec:
    """Age-structured model with classes S, E, A, I1, I2, I3, R, D.

    Infection of cohort ``i`` by stage ``k`` of cohort ``j`` has kernel
    ``beta_i nu_k eta C_ij a_i(t) a_j(t) omega / N_j`` with ``nu_0 = nu_1 =
    1`` and ``nu_2 = nu_3 = nu_L``.  Deaths by cohort are the observables
    and seed the initial ``D``; ``S`` absorbs each cohort's population.
    """
    C = contact.C
    M = C.shape[0]
    N = np.full(M, EW_PLACEHOLDER_POPULATION) if cohort_populations is None else \
        np.asarray(cohort_populations, dtype=float)
    if len(N) != M:
        raise ModelError(f"contact matrix has {M} cohorts, populations have {len(N)}")
    omega = float(N.sum())
    ages = EW_COHORT_AGES if M == EW_M else np.linspace(2.5, 80.0, M)
    alpha = np.full(M, DEFAULT_ALPHA) if alpha is None else np.asarray(alpha, dtype=float)
    f = cfr_curve(ages) if cfr is None else np.asarray(cfr, dtype=float)
    if alpha.shape != (M,) or f.shape != (M,):
        raise ModelError("alpha and CFR need one value per cohort")
    if np.any((alpha < 0) | (alpha > 1)) or np.any((f < 0) | (f > 1)):
        raise ModelError("alpha and CFR must lie in [0, 1]")
    if isinstance(priors, (str, Path)):
        priors = read_priors(priors)
    pri = ew_default_priors(contact.npi, time_unit, M)
    pri.update(priors or {})
    fixed = dict(fixed or {})
    eta = contact.eta if time_unit == "weeks" else contact.eta / DAYS_PER_WEEK

    L = len(EW_CLASSES)
    d = M * L
    ix = {c: [i + M * l for i in range(M)] for l, c in enumerate(EW_CLASSES)}

    def move(src, dst):
        s = [0] * d
        s[src] -= 1
        s[dst] += 1
        return tuple(s)

    stages = ("A", "I1", "I2", "I3")
    trans = []
    for i in range(M):
        for k, stage in enumerate(stages):
            nu = ("nu_L",) if k >= 2 else ()
            kernels = tuple(
                Coefficient(eta * C[i, j] * omega / N[j], (f"beta_{i}", *nu), (), (f"a_{i}", f"a_{j}"))
                for j in range(M))
            trans.append(Transition(move(ix["S"][i], ix["E"][i]),
                                    InfectionRate(ix["S"][i], tuple(ix[stage]), kernels), f"S->E[{i}] by {stage}"))
    for i in range(M):
        lin = [
            ("E", "A", Coefficient(1.0, ("gamma_E",))),
            ("A", "I1", Coefficient(1.0, ("gamma_A",))),
            ("I1", "R", Coefficient(float(alpha[i]), ("gamma_1",))),
            ("I1", "I2", Coefficient(float(1 - alpha[i]), ("gamma_1",))),
            ("I2", "I3", Coefficient(1.0, ("gamma_2",))),
            ("I3", "D", Coefficient(float(f[i]), ("gamma_3",))),
            ("I3", "R", Coefficient(float(1 - f[i]), ("gamma_3",))),
        ]
        for a, b, coef in lin:
            trans.append(Transition(move(ix[a][i], ix[b][i]), LinearRate(ix[a][i], coef), f"{a}->{b}[{i}]"))

    names = [f"beta_{i}" for i in range(M)] + ["gamma_E", "gamma_A", "gamma_1", "gamma_2", "gamma_3", "nu_L",
                                               "t_lock", "W_lock"] + [f"aF_{i}" for i in range(M)]
    if contact.npi == "easing":
        names.append("r")
    names += ["kappa"] + [f"{c}_old" for c in OLDEST_SEED_MEANS]
    roles = {"t_lock": "npi", "W_lock": "npi", "r": "npi", "kappa": "initial-condition"}
    decls = []
    for n in names:
        role = "npi" if n.startswith("aF_") else ("initial-condition" if n.endswith("_old") else roles.get(n, "epidemiological"))
        if n in fixed:
            decls.append(ParameterDecl(n, pri.get(n), role, float(fixed[n])))
        else:
            if n not in pri:
                raise ModelError(f"no prior for parameter {n!r}")
            decls.append(ParameterDecl(n, pri[n], role))

    t_end = contact.t_end
    tfs = {f"a_{i}": TimeProfile(contact.npi, "t_lock", "W_lock", f"aF_{i}",
                                 "r" if contact.npi == "easing" else 0.0, t_end) for i in range(M)}
    overrides = [Override(ix["D"][i], from_baseline=f"D_{i}") for i in range(M)]
    overrides += [Override(ix[c][M - 1], f"{c}_old", units="count") for c in OLDEST_SEED_MEANS]
    init = InitialConditionSpec("linear-mode", kappa="kappa", overrides=tuple(overrides), conservation_class=0)
    obs = tuple(Observable(f"D_{i}", {ix["D"][i]: 1.0}) for i in range(M))
    spec = ModelSpec(classes=EW_CLASSES, omega=omega, transitions=tuple(trans), params=tuple(decls), init=init,
                     M=M, cohort_sizes=tuple(float(v) for v in N), time_functions=tfs, observables=obs,
                     time_unit=time_unit, name=f"england-wales-{contact.variant}-{contact.npi}",
                     cohort_names=EW_COHORT_NAMES if M == EW_M else None)
    validate_model(spec).raise_if_invalid()
    return spec


def force_of_infection(spec: ModelSpec, theta, t: float, x) -> np.ndarray:
    """Per-susceptible infection rate of each cohort, summed over stages.

    Reads the infection kernels of the compiled model, so it is the quantity
    the moment equations actually use.
    """
    from ._kernels import tf_values
    kern = spec.kernel(theta)
    _, _, _, _, _, inf_tr, inf_s, inf_i, inf_c, inf_tf, tab = kern
    tfv = tf_values(float(t), tab)
    coef = inf_c * np.prod(tfv[inf_tf], axis=1)
    lam = np.zeros(spec.M)
    x = np.asarray(x, dtype=float)
    for c, s, i in zip(coef, inf_s, inf_i):
        lam[s % spec.M] += c * x[i]
    return lam


def canonical_models() -> dict[str, ModelSpec]:
    """The shipped model instances (written to ``data/*.json``)."""
    N = np.full(EW_M, EW_PLACEHOLDER_POPULATION)
    C = proportional_mixing_matrix(N, DEFAULT_C0)
    return {
        "seird": build_seird(1e6),
        "england_wales_step": build_england_wales(ContactStructure(C, "step"), cohort_populations=N),
        "england_wales_easing": build_england_wales(ContactStructure(C, "easing", t_end=10.0), cohort_populations=N),
    }


def data_path(name: str) -> Path:
    return Path(__file__).parent / "data" / f"{name}.json"
