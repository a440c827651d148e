"""Small models shared by the test modules."""
import numpy as np

from epiclt.model import (Coefficient, InfectionRate, InitialConditionSpec, LinearRate, ModelSpec, Observable,
                          ParameterDecl, Transition)
from epiclt.priors import PriorSpec

SIR_THETA = np.array([0.5, 0.2])


def sir_model(omega=500.0, x0=(0.9, 0.1, 0.0)):
    """SIR with infection ``beta * x_S * x_I`` and recovery ``gamma * x_I``."""
    return ModelSpec(
        classes=("S", "I", "R"), omega=float(omega),
        transitions=(
            Transition((-1, 1, 0), InfectionRate(0, (1,), (Coefficient(1.0, ("beta",)),)), "infection"),
            Transition((0, -1, 1), LinearRate(1, Coefficient(1.0, ("gamma",))), "recovery"),
        ),
        params=(ParameterDecl("beta", PriorSpec("normal", 0.5, 0.1, 0.0, 5.0)),
                ParameterDecl("gamma", PriorSpec("normal", 0.2, 0.05, 0.0, 2.0))),
        init=InitialConditionSpec("explicit", tuple(x0)),
        observables=(Observable("R", {2: 1.0}), Observable("I", {1: 1.0})),
        name="sir",
    )


def immigration_death(omega=1000.0, k=1.0, a=0.5, reservoir=1.0):
    """Open birth-death chain whose fluctuations are an Ornstein-Uhlenbeck process.

    A reservoir compartment ``A`` (never depleted) feeds ``X`` at rate
    ``k * x_A``; ``X`` decays at rate ``a``.  Started at equilibrium
    ``x = k * x_A / a``, the scaled fluctuation covariance is
    ``s2 / (2a) (exp(-a|t-s|) - exp(-a(t+s)))`` with ``s2 = 2 k x_A``.
    """
    x_eq = k * reservoir / a
    return ModelSpec(
        classes=("A", "X"), omega=float(omega),
        transitions=(
            Transition((0, 1), LinearRate(0, Coefficient(1.0, ("k",))), "immigration"),
            Transition((0, -1), LinearRate(1, Coefficient(1.0, ("a",))), "death"),
        ),
        params=(ParameterDecl("k", PriorSpec("lognormal", k, k / 2, 0.0, 100 * k)),
                ParameterDecl("a", PriorSpec("lognormal", a, a / 2, 0.0, 100 * a))),
        init=InitialConditionSpec("explicit", (reservoir, x_eq)),
        observables=(Observable("X", {1: 1.0}),), closed=False, name="immigration-death",
    )


def ou_covariance(times, k=1.0, a=0.5, reservoir=1.0):
    s2 = 2.0 * k * reservoir
    t = np.asarray(times, dtype=float)
    T, S = np.meshgrid(t, t, indexing="ij")
    return s2 / (2 * a) * (np.exp(-a * np.abs(T - S)) - np.exp(-a * (T + S)))
