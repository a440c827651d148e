import json
from dataclasses import replace

import numpy as np
import pytest

from _builders import SIR_THETA, sir_model
from epiclt.forecast import (Ensemble, conditional_nowcast, deterministic_forecast, round_state, seed_state,
                             stochastic_forecast, thin)
from epiclt.likelihood import ObservationSet, conditional_latent
from epiclt.model import LinearRate, TimeProfile, Transition
from epiclt.moments import integrate_mean


def _obs(spec):
    return ObservationSet.from_arrays(spec, [1.0, 2.0, 3.0], [[5.0], [14.0], [25.0]], names=["R"])


def test_single_sample_is_the_mean_path():
    spec = sir_model()
    times = np.linspace(0, 10, 11)
    ens = deterministic_forecast(spec, SIR_THETA, times)
    assert ens.n_paths == 1 and ens.units == "fraction"
    assert np.array_equal(ens.paths[0], integrate_mean(spec, SIR_THETA, times))
    later = deterministic_forecast(spec, SIR_THETA, times[1:])
    assert np.allclose(later.paths[0], ens.paths[0, 1:], atol=1e-9)


def test_point_mass_posterior_has_no_spread():
    ens = deterministic_forecast(sir_model(), np.tile(SIR_THETA, (5, 1)), np.arange(1.0, 8.0))
    assert np.all(np.ptp(ens.paths, axis=0) == 0)


def test_failed_samples_are_reported_not_fatal():
    thetas = np.array([SIR_THETA, [-1.0, 0.2], SIR_THETA])
    ens = deterministic_forecast(sir_model(), thetas, [1.0, 2.0])
    assert ens.n_paths == 2 and list(ens.failures) == [1]


def test_identity_filter_nowcast_has_no_variance():
    spec = sir_model()
    F = np.eye(3)
    Y = np.array([[440.0, 55.0, 5.0], [425.0, 60.0, 15.0]])
    obs = ObservationSet(F, np.array([1.0, 2.0]), Y, ("S", "I", "R"))
    ens = conditional_nowcast(spec, SIR_THETA, obs, np.random.default_rng(0), 50)
    assert np.allclose(ens.paths, Y[None], atol=1e-6)


def test_nowcast_is_scaled_conditional_latent():
    spec = sir_model()
    obs = _obs(spec)
    ens = conditional_nowcast(spec, SIR_THETA, obs, np.random.default_rng(3), 200)
    x = conditional_latent(spec, SIR_THETA, obs, np.random.default_rng(3), 200)
    assert np.allclose(ens.paths, spec.omega * x)
    assert np.allclose(ens.paths[:, :, 2], obs.Y[:, 0], atol=1e-6)


def test_seed_states_pin_observations_and_conserve_population():
    spec = sir_model()
    obs = _obs(spec)
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = seed_state(spec, SIR_THETA, obs, rng)
        assert n.dtype.kind == "i" and np.all(n >= 0)
        assert n.sum() == int(spec.omega)
        assert abs(n[2] - obs.Y[-1, 0]) <= 1


def test_round_state_keeps_cohort_totals():
    spec = sir_model()
    n = round_state(spec, np.array([300.4, 120.3, 79.3]), np.random.default_rng(0))
    assert n.sum() == 500 and np.all(np.abs(n - [300.4, 120.3, 79.3]) < 1)


def test_zero_horizon_returns_seed_states():
    spec = sir_model()
    obs = _obs(spec)
    ens = stochastic_forecast(spec, SIR_THETA, obs, [], np.random.default_rng(5), 6)
    assert ens.paths.shape == (6, 1, 3)
    streams = np.random.default_rng(5).spawn(6)
    for k in range(6):
        assert np.array_equal(ens.paths[k, 0], seed_state(spec, SIR_THETA, obs, streams[k]))


def test_frozen_dynamics_keep_paths_constant():
    # every rate is switched off by a step profile that completes exactly at the window end
    base = sir_model()
    off = TimeProfile("step", 2.9995, 0.001, 0.0)
    trans = tuple(Transition(t.stoich, type(t.rate)(**{**t.rate.__dict__, **_timed(t.rate)}), t.name)
                  for t in base.transitions)
    spec = replace(base, transitions=trans, time_functions={"off": off})
    obs = _obs(spec)
    ens = stochastic_forecast(spec, SIR_THETA, obs, [5.0, 10.0], np.random.default_rng(6), 5)
    assert not ens.failures
    assert np.all(ens.paths == ens.paths[:, :1])


def _timed(rate):
    if isinstance(rate, LinearRate):
        return {"coef": replace(rate.coef, time=("off",))}
    return {"kernels": tuple(replace(k, time=("off",)) for k in rate.kernels)}


def test_stochastic_forecast_per_path_parameters_and_methods():
    spec = sir_model()
    obs = _obs(spec)
    thetas = np.column_stack([np.linspace(0.45, 0.55, 8), np.full(8, 0.2)])
    for method in ("gillespie", "tau-leap"):
        ens = stochastic_forecast(spec, thetas, obs, [4.0, 6.0, 8.0], np.random.default_rng(7), 8, method=method)
        assert ens.paths.shape == (8, 4, 3)
        assert np.all(ens.paths.sum(axis=2) == 500)
        assert np.all(np.diff(ens.paths[:, :, 2], axis=1) >= 0)   # recovered never decreases
    with pytest.raises(ValueError):
        stochastic_forecast(spec, thetas[:3], obs, [4.0], np.random.default_rng(0), 8)
    with pytest.raises(ValueError):
        stochastic_forecast(spec, SIR_THETA, obs, [2.0], np.random.default_rng(0), 2)


def test_thinning_is_deterministic_and_even():
    s = np.arange(100.0).reshape(50, 2)
    t = thin(s, 5)
    assert np.array_equal(t[:, 0], [0, 24, 48, 74, 98])
    assert len(thin(s, 80)) == 50


def test_ensemble_bundle(tmp_path):
    times = np.array([0.0, 1.0])
    paths = np.arange(12.0).reshape(3, 2, 2)
    ens = Ensemble(times, paths, ("A", "B"))
    ens.write(tmp_path, F=np.array([[1.0, 1.0]]), names=["total"], manifest={"seed": 4})
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json", "path_0000.csv", "path_0001.csv",
                                                           "path_0002.csv", "summary.csv"]
    header = (tmp_path / "summary.csv").read_text().splitlines()[0].split(",")
    assert header == ["time", "total_q05", "total_q25", "total_q50", "total_q75", "total_q95"]
    row = (tmp_path / "summary.csv").read_text().splitlines()[1].split(",")
    assert float(row[3]) == pytest.approx(np.median(paths[:, 0].sum(axis=1)))
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["seed"] == 4 and len(doc["paths"]) == 3
