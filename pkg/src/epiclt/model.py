"""Markov population process definition.

State layout: compartment ``(class l, cohort i)`` has index ``i + M * l``;
class 0 is the susceptible class.  Rates are declared structurally so that
their Jacobian and noise matrices follow in closed form:

* :class:`LinearRate` -- ``w = gamma(t, theta) * n[source]``
* :class:`InfectionRate` -- ``w = sum_j K_j(t, theta) * n[S] * n[I_j] / omega``

Rate constants are products of a constant, parameters, complements
``(1 - p)`` of parameters and named time profiles (see :class:`Coefficient`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import InitializationError, ModelError
from .priors import PriorSpec, joint_logpdf

TIME_UNITS = ("days", "weeks")
ROLES = ("epidemiological", "npi", "initial-condition")


@dataclass(frozen=True)
class Coefficient:
    """``const * prod(params) * prod(1 - one_minus) * prod(time profiles)``."""

    const: float = 1.0
    params: tuple[str, ...] = ()
    one_minus: tuple[str, ...] = ()
    time: tuple[str, ...] = ()

    def to_dict(self):
        d = {"const": self.const}
        if self.params:
            d["params"] = list(self.params)
        if self.one_minus:
            d["one_minus"] = list(self.one_minus)
        if self.time:
            d["time"] = list(self.time)
        return d

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, (int, float)):
            return cls(float(d))
        if isinstance(d, str):
            return cls(1.0, (d,))
        return cls(float(d.get("const", 1.0)), tuple(d.get("params", ())),
                   tuple(d.get("one_minus", ())), tuple(d.get("time", ())))


@dataclass(frozen=True)
class TimeProfile:
    """Piecewise-linear activity factor (step or step-with-easing).

    Each field is either a number or the name of a parameter.
    """

    kind: str
    t_lock: float | str
    w_lock: float | str
    a_final: float | str
    r: float | str = 0.0
    t_end: float | str = math.inf

    def refs(self):
        return [v for v in (self.t_lock, self.w_lock, self.a_final, self.r, self.t_end) if isinstance(v, str)]

    def to_dict(self):
        d = {"kind": self.kind, "t_lock": self.t_lock, "w_lock": self.w_lock, "a_final": self.a_final}
        if self.kind == "easing":
            d["r"] = self.r
            d["t_end"] = self.t_end
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["t_lock"], d["w_lock"], d["a_final"], d.get("r", 0.0), d.get("t_end", math.inf))


@dataclass(frozen=True)
class LinearRate:
    source: int
    coef: Coefficient


@dataclass(frozen=True)
class InfectionRate:
    susceptible: int
    infectious: tuple[int, ...]
    kernels: tuple[Coefficient, ...]


@dataclass(frozen=True)
class Transition:
    stoich: tuple[int, ...]
    rate: LinearRate | InfectionRate
    name: str = ""


@dataclass(frozen=True)
class ParameterDecl:
    name: str
    prior: PriorSpec | None = None
    role: str = "epidemiological"
    fixed: float | None = None

    def to_dict(self):
        d = {"name": self.name, "role": self.role}
        if self.prior is not None:
            d["prior"] = self.prior.to_dict()
        if self.fixed is not None:
            d["fixed"] = self.fixed
        return d

    @classmethod
    def from_dict(cls, d):
        prior = PriorSpec.from_dict(d["prior"]) if d.get("prior") is not None else None
        fixed = d.get("fixed")
        return cls(d["name"], prior, d.get("role", "epidemiological"), None if fixed is None else float(fixed))


@dataclass(frozen=True)
class Override:
    """Replace one compartment of the initial state.

    ``value`` is a number or a parameter name; ``from_baseline`` names an
    observable whose value at ``t=0`` (taken from the data) is used instead.
    """

    compartment: int
    value: float | str | None = None
    from_baseline: str | None = None
    units: str = "fraction"


@dataclass(frozen=True)
class InitialConditionSpec:
    mode: str = "explicit"  # explicit | linear-mode
    x0: tuple[float, ...] | None = None
    kappa: float | str | None = None
    overrides: tuple[Override, ...] = ()
    conservation_class: int | None = None


@dataclass(frozen=True)
class Observable:
    name: str
    weights: Mapping[int, float]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Complete compartment model.

    ``cohort_sizes`` are the cohort populations ``N_i``; they default to a
    single cohort holding the whole reference population ``omega``.
    """

    classes: tuple[str, ...]
    omega: float
    transitions: tuple[Transition, ...]
    params: tuple[ParameterDecl, ...]
    init: InitialConditionSpec = InitialConditionSpec()
    M: int = 1
    cohort_sizes: tuple[float, ...] | None = None
    time_functions: Mapping[str, TimeProfile] = field(default_factory=dict)
    observables: tuple[Observable, ...] = ()
    time_unit: str = "days"
    closed: bool = True
    name: str = ""
    cohort_names: tuple[str, ...] | None = None

    # layout ---------------------------------------------------------------
    @property
    def L(self):
        return len(self.classes)

    @property
    def dim(self):
        return self.M * self.L

    def index(self, cls: str | int, cohort: int = 0) -> int:
        l = self.classes.index(cls) if isinstance(cls, str) else int(cls)
        return cohort + self.M * l

    @cached_property
    def labels(self) -> tuple[str, ...]:
        if self.M == 1:
            return tuple(self.classes)
        return tuple(f"{c}_{i}" for c in self.classes for i in range(self.M))

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ModelError(f"unknown compartment {label!r}") from None

    @cached_property
    def populations(self) -> np.ndarray:
        if self.cohort_sizes is None:
            return np.full(self.M, self.omega / self.M)
        return np.asarray(self.cohort_sizes, dtype=float)

    @property
    def cohort_fractions(self) -> np.ndarray:
        return self.populations / self.omega

    # parameters ---------------------------------------------------------
    @cached_property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @cached_property
    def free_params(self) -> tuple[ParameterDecl, ...]:
        return tuple(p for p in self.params if p.fixed is None)

    @cached_property
    def free_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.free_params)

    @property
    def n_free(self) -> int:
        return len(self.free_params)

    @cached_property
    def priors(self) -> list[PriorSpec]:
        return [p.prior for p in self.free_params]

    @cached_property
    def _free_slots(self):
        return np.array([i for i, p in enumerate(self.params) if p.fixed is None], dtype=np.int64)

    @cached_property
    def _fixed_values(self):
        return np.array([np.nan if p.fixed is None else p.fixed for p in self.params])

    def values(self, theta) -> np.ndarray:
        """All parameter values (declaration order) for a free-parameter vector."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_free,):
            raise ModelError(f"theta has shape {theta.shape}, expected ({self.n_free},)")
        v = self._fixed_values.copy()
        v[self._free_slots] = theta
        return v

    def value_map(self, theta) -> dict[str, float]:
        return dict(zip(self.param_names, self.values(theta)))

    def default_theta(self) -> np.ndarray:
        """Prior means of the free parameters."""
        return np.array([p.prior.mean for p in self.free_params])

    def with_params(self, **updates) -> "ModelSpec":
        """Copy with some parameter declarations replaced (fix/unfix/priors)."""
        new = []
        for p in self.params:
            if p.name in updates:
                u = updates[p.name]
                if isinstance(u, ParameterDecl):
                    new.append(u)
                elif isinstance(u, PriorSpec):
                    new.append(ParameterDecl(p.name, u, p.role, None))
                else:
                    new.append(ParameterDecl(p.name, p.prior, p.role, float(u)))
            else:
                new.append(p)
        return _replace(self, params=tuple(new))

    # observation -----------------------------------------------------------
    def filter_matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        obs = self.observables if names is None else [self.observable(n) for n in names]
        F = np.zeros((len(obs), self.dim))
        for r, o in enumerate(obs):
            for idx, w in o.weights.items():
                F[r, idx] = w
        return F

    def observable(self, name: str) -> Observable:
        for o in self.observables:
            if o.name == name:
                return o
        raise ModelError(f"unknown observable {name!r}")

    # compiled kernel -----------------------------------------------------------
    @cached_property
    def compiled(self) -> "CompiledModel":
        return CompiledModel(self)

    def kernel(self, theta):
        return self.compiled.kernel(self.values(theta))


def _replace(spec, **changes):
    from dataclasses import replace
    return replace(spec, **changes)


class CompiledModel:
    """Index arrays that turn parameter values into the numba kernel tuple."""

    def __init__(self, spec: ModelSpec):
        names = spec.param_names
        P = len(names)
        pos = {n: k for k, n in enumerate(names)}
        tf_names = list(spec.time_functions)
        tf_pos = {n: k for k, n in enumerate(tf_names)}
        self.n_params = P
        self.spec = spec

        def lookup(name, where):
            if name not in pos:
                raise ModelError(f"unknown parameter {name!r} in {where}")
            return pos[name]

        def coef_rows(coefs, where):
            kp = max([len(c.params) + len(c.one_minus) for c in coefs] + [1])
            kt = max([len(c.time) for c in coefs] + [1])
            idx = np.zeros((len(coefs), kp), dtype=np.int64)
            tf = np.full((len(coefs), kt), len(tf_names), dtype=np.int64)
            const = np.zeros(len(coefs))
            for r, c in enumerate(coefs):
                const[r] = c.const
                refs = [1 + lookup(n, where) for n in c.params] + [1 + P + lookup(n, where) for n in c.one_minus]
                idx[r, :len(refs)] = refs
                for q, tn in enumerate(c.time):
                    if tn not in tf_pos:
                        raise ModelError(f"unknown time function {tn!r} in {where}")
                    tf[r, q] = tf_pos[tn]
            return const, idx, tf

        lin, inf = [], []
        for k, tr in enumerate(spec.transitions):
            if isinstance(tr.rate, LinearRate):
                lin.append((k, tr.rate.source, tr.rate.coef))
            else:
                for j, kern in zip(tr.rate.infectious, tr.rate.kernels):
                    inf.append((k, tr.rate.susceptible, j, kern))
        self.lin_tr = np.array([a[0] for a in lin], dtype=np.int64)
        self.lin_src = np.array([a[1] for a in lin], dtype=np.int64)
        self.lin_const, self.lin_idx, self.lin_tf = coef_rows([a[2] for a in lin], "linear rate")
        self.inf_tr = np.array([a[0] for a in inf], dtype=np.int64)
        self.inf_s = np.array([a[1] for a in inf], dtype=np.int64)
        self.inf_i = np.array([a[2] for a in inf], dtype=np.int64)
        self.inf_const, self.inf_idx, self.inf_tf = coef_rows([a[3] for a in inf], "infection kernel")
        self.stoich = np.array([tr.stoich for tr in spec.transitions], dtype=float).reshape(
            len(spec.transitions), spec.dim)

        self.tf_kind = np.array([0 if spec.time_functions[n].kind == "step" else 1 for n in tf_names], dtype=float)
        self.tf_fields = []
        for n in tf_names:
            prof = spec.time_functions[n]
            row = []
            for v in (prof.t_lock, prof.w_lock, prof.a_final, prof.r, prof.t_end):
                row.append(("p", lookup(v, f"time function {n!r}")) if isinstance(v, str) else ("c", float(v)))
            self.tf_fields.append(row)

    def kernel(self, values):
        ext = np.concatenate(([1.0], values, 1.0 - values))
        lin_c = self.lin_const * np.prod(ext[self.lin_idx], axis=1) if len(self.lin_const) else self.lin_const
        inf_c = self.inf_const * np.prod(ext[self.inf_idx], axis=1) if len(self.inf_const) else self.inf_const
        if not (np.all(lin_c >= 0) and np.all(inf_c >= 0)):
            raise ModelError("rate coefficients must be finite and non-negative")
        tab = np.zeros((len(self.tf_fields), 6))
        for k, row in enumerate(self.tf_fields):
            tab[k, 0] = self.tf_kind[k]
            for q, (kind, v) in enumerate(row):
                tab[k, q + 1] = values[v] if kind == "p" else v
        return (self.stoich, self.lin_tr, self.lin_src, lin_c, self.lin_tf,
                self.inf_tr, self.inf_s, self.inf_i, inf_c, self.inf_tf, tab)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code, message):
        self.violations.append((code, message))

    def codes(self):
        return [c for c, _ in self.violations]

    def raise_if_invalid(self):
        if self.violations:
            msg = "; ".join(f"{c}: {m}" for c, m in self.violations)
            raise ModelError(f"invalid model: {msg}")


def validate_model(spec: ModelSpec) -> ValidationReport:
    """Check structural consistency; returns a report rather than raising."""
    rep = ValidationReport()
    if spec.M < 1:
        rep.add("cohorts", f"M must be >= 1, got {spec.M}")
    if spec.L < 2:
        rep.add("classes", f"need at least 2 classes, got {spec.L}")
    if not spec.omega > 0:
        rep.add("omega", f"omega must be positive, got {spec.omega}")
    if spec.time_unit not in TIME_UNITS:
        rep.add("time unit", f"time unit must be one of {TIME_UNITS}")
    if spec.cohort_sizes is not None and len(spec.cohort_sizes) != spec.M:
        rep.add("cohort sizes", f"{len(spec.cohort_sizes)} cohort sizes for M={spec.M}")
    d = spec.dim
    names = [p.name for p in spec.params]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        rep.add("duplicate parameter", f"duplicated names {dup}")
    declared = set(names)
    for p in spec.params:
        if p.fixed is None and p.prior is None:
            rep.add("missing prior", f"free parameter {p.name!r} has no prior")
        if p.role not in ROLES:
            rep.add("parameter role", f"{p.name!r} has unknown role {p.role!r}")

    def check_names(refs, where):
        for n in refs:
            if n not in declared:
                rep.add("unknown parameter", f"{where} references undeclared name {n!r}")

    for tname, prof in spec.time_functions.items():
        if prof.kind not in ("step", "easing"):
            rep.add("time function", f"{tname!r} has unknown kind {prof.kind!r}")
        check_names(prof.refs(), f"time function {tname!r}")

    def check_coef(c, where):
        check_names(c.params + c.one_minus, where)
        for tn in c.time:
            if tn not in spec.time_functions:
                rep.add("unknown time function", f"{where} references {tn!r}")

    reached = set()
    for k, tr in enumerate(spec.transitions):
        where = f"transition {k} ({tr.name})" if tr.name else f"transition {k}"
        if len(tr.stoich) != d:
            rep.add("stoich length", f"{where} has {len(tr.stoich)} entries, state has {d}")
            continue
        if spec.closed and sum(tr.stoich) != 0:
            rep.add("conservation", f"{where} does not conserve population")
        reached.update(i for i, r in enumerate(tr.stoich) if r > 0)
        rate = tr.rate
        if isinstance(rate, LinearRate):
            if not 0 <= rate.source < d:
                rep.add("rate index", f"{where} source {rate.source} out of range")
            check_coef(rate.coef, where)
        else:
            if len(rate.infectious) != len(rate.kernels):
                rep.add("kernel length", f"{where} has {len(rate.kernels)} kernels for {len(rate.infectious)} sources")
            for i in (rate.susceptible, *rate.infectious):
                if not 0 <= i < d:
                    rep.add("rate index", f"{where} index {i} out of range")
            for c in rate.kernels:
                check_coef(c, where)

    init = spec.init
    if init.mode not in ("explicit", "linear-mode"):
        rep.add("init mode", f"unknown initial-condition mode {init.mode!r}")
    if init.mode == "explicit":
        if init.x0 is None or len(init.x0) != d:
            rep.add("init length", f"explicit x0 must have {d} entries")
    if isinstance(init.kappa, str):
        check_names([init.kappa], "initial condition")
    seeded = set()
    for ov in init.overrides:
        seeded.add(ov.compartment)
        if isinstance(ov.value, str):
            check_names([ov.value], "initial override")
        if ov.from_baseline is not None and ov.from_baseline not in {o.name for o in spec.observables}:
            rep.add("unknown observable", f"override uses baseline of {ov.from_baseline!r}")
    if init.mode == "explicit" and init.x0 is not None and len(init.x0) == d:
        seeded.update(i for i, v in enumerate(init.x0) if v != 0)
    for o in spec.observables:
        for idx in o.weights:
            if not 0 <= idx < d:
                rep.add("observable index", f"observable {o.name!r} index {idx} out of range")
    if init.mode == "explicit" and rep.ok:
        for l in range(1, spec.L):
            comps = {i + spec.M * l for i in range(spec.M)}
            if not comps & (reached | seeded) and init.conservation_class != l:
                rep.add("unreachable class", f"class {spec.classes[l]!r} is never populated")
    return rep


# ---------------------------------------------------------------------------
# rates, priors, initial state


def rates(spec: ModelSpec, t: float, theta, n) -> np.ndarray:
    """Population transition rates ``w_xi(t, theta, n)``."""
    n = np.asarray(n, dtype=float)
    if n.shape != (spec.dim,):
        raise ModelError(f"state has shape {n.shape}, expected ({spec.dim},)")
    if np.any(n < 0):
        raise ModelError("state has negative entries")
    w = spec.omega * _kernels.transition_rates(float(t), n / spec.omega, spec.kernel(theta))
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        bad = [spec.transitions[k].name or str(k) for k in np.flatnonzero(~(w >= 0))]
        raise ModelError(f"rate expression evaluated negative for transitions {bad}")
    return w


def prior_logpdf(spec: ModelSpec, theta) -> float:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_free,):
        raise ModelError(f"theta has shape {theta.shape}, expected ({spec.n_free},)")
    return joint_logpdf(spec.priors, theta)


def sample_prior(spec: ModelSpec, rng) -> np.ndarray:
    return np.array([p.sample(rng) for p in spec.priors])


def dominant_mode(spec: ModelSpec, theta, t: float = 0.0):
    """Leading eigenpair of the Jacobian at the all-susceptible state.

    The eigenvector is normalised to unit L1 norm with susceptible
    components summing to a non-positive value.
    """
    xs = np.zeros(spec.dim)
    xs[:spec.M] = spec.cohort_fractions
    J, _ = _kernels.jacobian_and_noise(float(t), xs, spec.kernel(theta))
    evals, evecs = np.linalg.eig(J)
    order = np.argsort(-evals.real)
    lead = evals[order[0]]
    scale = max(abs(lead), 1e-300)
    if abs(lead.imag) > 1e-10 * max(1.0, abs(lead)):
        raise InitializationError(f"leading eigenvalue {lead} is complex")
    if len(evals) > 1 and abs(evals[order[1]].real - lead.real) <= 1e-10 * scale:
        raise InitializationError(f"leading eigenvalue {lead.real:g} is degenerate")
    v = evecs[:, order[0]].real
    v = v / np.abs(v).sum()
    s_sum = v[:spec.M].sum()
    if s_sum > 0 or (s_sum == 0 and v[np.argmax(np.abs(v))] < 0):
        v = -v
    return float(lead.real), v


def initial_state(spec: ModelSpec, theta, baseline: Mapping[str, float] | None = None) -> np.ndarray:
    """Initial fraction vector ``x(0)`` for parameters ``theta``.

    ``baseline`` maps observable names to their observed counts at ``t=0``
    and feeds overrides declared with ``from_baseline``.
    """
    init = spec.init
    vals = spec.value_map(theta)

    def resolve(v):
        return vals[v] if isinstance(v, str) else float(v)

    if init.mode == "explicit":
        x = np.array(init.x0, dtype=float)
    elif init.mode == "linear-mode":
        kappa = resolve(init.kappa if init.kappa is not None else 0.0)
        x = np.zeros(spec.dim)
        x[:spec.M] = spec.cohort_fractions
        if kappa != 0:
            _, v = dominant_mode(spec, theta)
            x = x + kappa * v
    else:
        raise InitializationError(f"unknown initial-condition mode {init.mode!r}")

    for ov in init.overrides:
        if ov.from_baseline is not None:
            if baseline is None or ov.from_baseline not in baseline:
                raise InitializationError(f"override needs baseline value of {ov.from_baseline!r}")
            val, units = float(baseline[ov.from_baseline]), "count"
        else:
            val, units = resolve(ov.value), ov.units
        x[ov.compartment] = val / spec.omega if units == "count" else val

    cc = init.conservation_class
    if cc is None and init.mode == "linear-mode":
        cc = 0
    if cc is not None:
        M = spec.M
        fr = spec.cohort_fractions
        for i in range(M):
            idx = np.arange(i, spec.dim, M)
            target = i + M * cc
            others = x[idx].sum() - x[target]
            fill = fr[i] - others
            if fill < -1e-12 * max(fr[i], 1e-300):
                raise InitializationError(
                    f"infeasible initial state: conservation leaves {spec.labels[target]} = {fill:g}")
            x[target] = max(fill, 0.0)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        bad = [spec.labels[i] for i in np.flatnonzero(~(x >= 0))]
        raise InitializationError(f"initial state negative in {bad}")
    return x


# ---------------------------------------------------------------------------
# JSON representation


def _label_or_index(spec_labels, v):
    if isinstance(v, str):
        try:
            return spec_labels.index(v)
        except ValueError:
            raise ModelError(f"unknown compartment {v!r}") from None
    return int(v)


def _stoich_to_json(stoich, labels):
    neg = [i for i, r in enumerate(stoich) if r < 0]
    pos = [i for i, r in enumerate(stoich) if r > 0]
    if len(neg) <= 1 and len(pos) <= 1 and all(abs(r) == 1 for r in stoich if r):
        d = {}
        if neg:
            d["from"] = labels[neg[0]]
        if pos:
            d["to"] = labels[pos[0]]
        return d
    return {"stoich": list(stoich)}


def model_to_dict(spec: ModelSpec) -> dict:
    labels = spec.labels
    trans = []
    for tr in spec.transitions:
        d = {"name": tr.name}
        d.update(_stoich_to_json(tr.stoich, labels))
        if isinstance(tr.rate, LinearRate):
            d.update(kind="linear", source=labels[tr.rate.source], coef=tr.rate.coef.to_dict())
        else:
            d.update(kind="infection", susceptible=labels[tr.rate.susceptible],
                     infectious=[labels[i] for i in tr.rate.infectious],
                     kernels=[k.to_dict() for k in tr.rate.kernels])
        trans.append(d)
    init = spec.init
    init_d = {"mode": init.mode}
    if init.x0 is not None:
        init_d["x0"] = list(init.x0)
    if init.kappa is not None:
        init_d["kappa"] = init.kappa
    if init.conservation_class is not None:
        init_d["conservation_class"] = spec.classes[init.conservation_class]
    ovs = []
    for ov in init.overrides:
        o = {"compartment": labels[ov.compartment], "units": ov.units}
        if ov.from_baseline is not None:
            o["from_baseline"] = ov.from_baseline
        else:
            o["value"] = ov.value
        ovs.append(o)
    init_d["overrides"] = ovs
    out = {
        "name": spec.name,
        "M": spec.M,
        "L": spec.L,
        "omega": spec.omega,
        "time_unit": spec.time_unit,
        "closed": spec.closed,
        "classes": list(spec.classes),
        "transitions": trans,
        "parameters": [p.to_dict() for p in spec.params],
        "init": init_d,
        "time_functions": {k: v.to_dict() for k, v in spec.time_functions.items()},
        "observables": [{"name": o.name, "weights": {labels[i]: w for i, w in o.weights.items()}}
                        for o in spec.observables],
    }
    if spec.cohort_sizes is not None:
        out["cohort_sizes"] = list(spec.cohort_sizes)
    if spec.cohort_names is not None:
        out["cohort_names"] = list(spec.cohort_names)
    return out


def model_from_dict(d: Mapping) -> ModelSpec:
    """Inverse of :func:`model_to_dict`; raises :class:`ModelError` on bad input."""
    try:
        classes = tuple(d["classes"])
        M = int(d.get("M", 1))
        if "L" in d and int(d["L"]) != len(classes):
            raise ModelError(f"L={d['L']} but {len(classes)} class names given")
        labels = classes if M == 1 else tuple(f"{c}_{i}" for c in classes for i in range(M))
        dim = len(labels)
        idx = lambda v: _label_or_index(labels, v)  # noqa: E731
        trans = []
        for t in d["transitions"]:
            if "stoich" in t:
                stoich = tuple(int(r) for r in t["stoich"])
            else:
                s = [0] * dim
                if "from" in t:
                    s[idx(t["from"])] -= 1
                if "to" in t:
                    s[idx(t["to"])] += 1
                stoich = tuple(s)
            kind = t.get("kind", "linear")
            if kind == "linear":
                rate = LinearRate(idx(t["source"]), Coefficient.from_dict(t.get("coef", 1.0)))
            elif kind == "infection":
                rate = InfectionRate(idx(t["susceptible"]), tuple(idx(v) for v in t["infectious"]),
                                     tuple(Coefficient.from_dict(k) for k in t["kernels"]))
            else:
                raise ModelError(f"unknown rate kind {kind!r}")
            trans.append(Transition(stoich, rate, t.get("name", "")))
        init_d = d.get("init", {})
        cc = init_d.get("conservation_class")
        if isinstance(cc, str):
            cc = classes.index(cc)
        ovs = []
        for o in init_d.get("overrides", []):
            ovs.append(Override(idx(o["compartment"]), o.get("value"), o.get("from_baseline"),
                                o.get("units", "fraction")))
        x0 = init_d.get("x0")
        init = InitialConditionSpec(init_d.get("mode", "explicit"), None if x0 is None else tuple(float(v) for v in x0),
                                    init_d.get("kappa"), tuple(ovs), cc)
        cs = d.get("cohort_sizes")
        cn = d.get("cohort_names")
        return ModelSpec(
            classes=classes,
            omega=float(d["omega"]),
            transitions=tuple(trans),
            params=tuple(ParameterDecl.from_dict(p) for p in d.get("parameters", [])),
            init=init,
            M=M,
            cohort_sizes=None if cs is None else tuple(float(v) for v in cs),
            time_functions={k: TimeProfile.from_dict(v) for k, v in d.get("time_functions", {}).items()},
            observables=tuple(Observable(o["name"], {idx(k): float(w) for k, w in o["weights"].items()})
                              for o in d.get("observables", [])),
            time_unit=d.get("time_unit", "days"),
            closed=bool(d.get("closed", True)),
            name=d.get("name", ""),
            cohort_names=None if cn is None else tuple(cn),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model document: {exc!r}") from None


def model_hash(spec: ModelSpec) -> str:
    from .files import json_text, sha256_text
    return sha256_text(json_text(model_to_dict(spec)))


def load_model(path) -> ModelSpec:
    from .files import read_json
    spec = model_from_dict(read_json(path))
    validate_model(spec).raise_if_invalid()
    return spec


def save_model(spec: ModelSpec, path):
    from .files import write_json
    write_json(path, model_to_dict(spec))
