from __future__ import annotations

import json
import math

import numpy as np
import pytest

from oracles import synthetic_trajectory
from slowfront import diagnostics as dg
from slowfront.evolve import Integrator, simulate
from slowfront.frontset import Covering
from slowfront.grid import Grid1D
from slowfront.initial import kink_setup, multi_front, noisy_well, pair_setup

EPS = 0.05
KINK_ENERGY = 2 * math.sqrt(2) / 3


def tracker_delta0(c):
    return 2 * EPS / c.kappa0 * (1 + 1e-6)


@pytest.fixture(scope="module")
def kink_tr(quartic, qwc):
    u = kink_setup(EPS, EPS / 8)
    return simulate(u, quartic, Integrator.for_field(u, qwc), 0.2, wc=qwc, snapshot_dt=0.005)


@pytest.fixture(scope="module")
def annihilation_tr(quartic, qwc):
    u = pair_setup(EPS, 4 * EPS, EPS / 8)
    return simulate(u, quartic, Integrator.for_field(u, qwc), 0.2, wc=qwc, snapshot_dt=0.005)


@pytest.fixture(scope="module")
def well_tr(quartic, qwc):
    g = Grid1D.around(-1, 1, EPS / 8)
    u = noisy_well(g, EPS, quartic.minimizers[0], 0.0, 0)
    return simulate(u, quartic, Integrator.for_field(u, qwc), 0.01, wc=qwc, snapshot_dt=0.0025)


# ---------------------------------------------------------------- constants

def test_constants_golden(qwc):
    c = dg.make_constants(qwc.eta0, qwc)
    assert c.alpha0 == 32.0
    assert c.kappa0 == 1 / 16
    assert c.beta0 == pytest.approx(4096.0, rel=1e-12)
    assert c.K_V == 163840.0
    assert c.k_V == pytest.approx(1 / 6)
    assert c.log_gamma0 == pytest.approx(15.200789892300513, rel=1e-12)
    assert c.log_K0 == pytest.approx(15.249237972318795, rel=1e-12)
    assert c.stage_ceiling() == 9.0
    with pytest.raises(ValueError):
        dg.make_constants(qwc.eta0 / 2, qwc)


def test_constants_overflow_is_inf(qwc):
    c = dg.make_constants(2.0, qwc)
    assert c.beta0 == math.inf and math.isfinite(c.log_beta0)
    d = c.to_dict()
    assert d["beta0"] == "inf"
    json.dumps(d)


def test_target_time(qwc):
    c = dg.make_constants(qwc.eta0, qwc)
    rho = 0.1
    expect = rho**2 * math.exp(c.k_V * rho / (2 * EPS)) / (2 * math.sqrt(6 * c.K_V * c.alpha0))
    assert dg.target_time(1.0, EPS, rho, c) == pytest.approx(1.0 + expect, rel=1e-12)
    assert dg.target_time(0.0, 1e-6, 1.0, c) == math.inf


def test_verdict_json():
    v = dg.Verdict("x", {"a": 1}, math.inf, 0.5, False)
    assert json.loads(v.to_json()) == {"check": "x", "params": {"a": 1}, "lhs": "inf",
                                      "rhs": 0.5, "pass": False}


# ---------------------------------------------------------------- stage classification

@pytest.mark.parametrize("T1,T2,T3,horizon,expected", [
    (math.inf, math.inf, 1.0, 2.0, (1, False)),
    (3.0, 1.0, 5.0, 10.0, (2, False)),
    (1.0, 2.0, 3.0, 10.0, (3, False)),
    (1.0, 1.0, 1.0, 10.0, (3, False)),
    (5.0, 6.0, 2.0, 10.0, (1, False)),
    (math.inf, math.inf, 50.0, 10.0, (1, True)),
    (math.inf, 4.0, 50.0, 10.0, (2, False)),
    (12.0, 11.0, 50.0, 10.0, (1, True)),
])
def test_classify_stage(T1, T2, T3, horizon, expected):
    assert dg.classify_stage(T1, T2, T3, horizon) == expected


def _moving_front(quartic, qwc, r_of_t, times, dissipation=None):
    g = Grid1D.around(-2, 6, EPS / 8)
    vals = [multi_front(g, EPS, [-0.5, r_of_t(t)]).values for t in times]
    return synthetic_trajectory(g, EPS, quartic, qwc, times, vals, dissipation)


def test_watch_stopping_times(quartic, qwc):
    times = np.linspace(0, 1, 41)
    tr = _moving_front(quartic, qwc, lambda t: 0.5 + 3.5 * t, times,
                       dissipation=np.where(times >= 0.5, 1.0, 0.0))
    c = dg.make_constants(qwc.eta0, qwc)
    cov = Covering((-0.5, 0.5), 0.5, 0.25)
    st = dg.watch_stopping_times(tr, dg.StoppingState(0.0, cov), qwc, c)
    # the right front core reaches 0.5 + 0.5 - core half-width once 3.5 t exceeds ~0.3
    assert 0.05 < st.T1 < 0.2
    assert st.T1_interval[1] == st.T1 and st.T1_interval[0] == pytest.approx(st.T1 - 0.025)
    assert st.T2 == 0.5
    assert st.horizon == 1.0


# ---------------------------------------------------------------- off-front checks

def test_offfront_on_constant_data(well_tr, qwc):
    M0 = qwc.eta0
    v = dg.check_offfront(well_tr, 0.0, 0.4, 0.0, 0.01, qwc, M0)
    assert v.passed and v.lhs == pytest.approx(0.0, abs=1e-14)
    assert v.rhs > 0


def test_regularisation_on_constant_data(well_tr, qwc):
    M0 = qwc.eta0
    c = dg.make_constants(M0, qwc)
    r = c.alpha0 * EPS
    v = dg.check_regularisation(well_tr, 0.0, r, 0.0025, 0.0025, qwc, M0)
    assert v.passed and v.extra["front_free"]
    with pytest.raises(dg.PreconditionError):
        dg.check_regularisation(well_tr, 0.0, r / 2, 0.0, 0.0, qwc, M0)
    with pytest.raises(dg.PreconditionError):
        dg.check_regularisation(well_tr, 0.0, r, 0.0, 1.0, qwc, M0)
    with pytest.raises(dg.PreconditionError):
        dg.check_regularisation(well_tr, 0.0, r, 0.001, 0.001, qwc, M0)


def test_offfront_preconditions(kink_tr, qwc):
    with pytest.raises(dg.PreconditionError):
        dg.check_offfront(kink_tr, 0.0, 0.2, 0.0, 0.1, qwc, 1.0)
    with pytest.raises(dg.PreconditionError):
        dg.check_offfront(kink_tr, 0.6, 0.2, 0.1, 0.1, qwc, 1.0)
    v = dg.check_offfront(kink_tr, 0.6, 0.2, 0.0, 0.1, qwc, KINK_ENERGY)
    assert v.passed and v.extra["well"] == 1


def test_pointwise_decay(well_tr, qwc):
    c = dg.make_constants(qwc.eta0, qwc)
    with pytest.raises(ValueError):
        dg.check_pointwise_decay(well_tr, 0.0, c.alpha0 * EPS, 0.005, qwc, c)
    with pytest.raises(dg.PreconditionError):
        dg.check_pointwise_decay(well_tr, 0.0, c.alpha0 * EPS, EPS**2 / 2, qwc,
                                 c.with_values(K1=1.0))
    v = dg.check_pointwise_decay(well_tr, 0.0, c.alpha0 * EPS, 0.005, qwc, c.with_values(K1=1.0))
    assert v.passed and v.lhs < 1e-20


def test_calibrate_monotone():
    lhs = [1.0, 2.0]
    fns = [lambda C: C, lambda C: C]
    assert dg.calibrate_monotone(lhs, fns, safety=1.0) == pytest.approx(2.0, rel=1e-9)
    assert dg.calibrate_monotone(lhs, fns) == pytest.approx(4.0, rel=1e-9)
    assert dg.calibrate_monotone([0.0], fns[:1]) == pytest.approx(2e-6)
    with pytest.raises(ValueError):
        dg.calibrate_monotone([1e13], fns[:1])


def test_containment(kink_tr, annihilation_tr, qwc):
    assert dg.containment_check(kink_tr, qwc, 2 * EPS).passed
    assert dg.containment_check(annihilation_tr, qwc, 2 * EPS).passed
    g = Grid1D.around(-2, 6, EPS / 8)
    tr = _moving_front(None or kink_tr.potential, qwc, lambda t: 0.5 + 3.5 * t, [0.0, 1.0])
    v = dg.containment_check(tr, qwc, 2 * EPS)
    assert not v.passed and v.extra["violations_at"] == [1.0]
    assert g.n == tr.grid.n


# ---------------------------------------------------------------- tracker

def test_tracker_precondition(kink_tr, qwc):
    c = dg.make_constants(KINK_ENERGY, qwc)
    with pytest.raises(dg.PreconditionError):
        dg.front_tracker(kink_tr, qwc, c, 2 * EPS / c.kappa0)


def test_tracker_stationary_kink(kink_tr, qwc):
    c = dg.make_constants(max(kink_tr.energy0, qwc.eta0), qwc)
    log = dg.front_tracker(kink_tr, qwc, c, tracker_delta0(c))
    assert [s.case for s in log.stages] == [1]
    assert log.stages[0].censored
    assert "delta0_below_gamma0_eps" in log.flags
    assert log.containment_ok and log.within_ceiling and log.increments_ok
    json.dumps(log.to_dict())


def test_tracker_annihilation(annihilation_tr, qwc):
    tr = annihilation_tr
    c = dg.make_constants(max(tr.energy0, qwc.eta0), qwc)
    log = dg.front_tracker(tr, qwc, c, tracker_delta0(c))
    assert log.count(2) >= 1
    assert log.count(3) == 0
    assert log.containment_ok and log.within_ceiling and log.increments_ok
    assert tr.dissipation_cum[-1] == pytest.approx(2 * KINK_ENERGY, rel=0.1)
    # every Case 2 stage really dissipated eta0/8
    for s in log.stages:
        if s.case == 2:
            i0, i1 = tr.index_at(s.t), tr.index_at(s.T2)
            assert tr.dissipation_cum[i1] - tr.dissipation_cum[i0] >= c.eta0 / 8


def test_tracker_synthetic_exit(quartic, qwc):
    # a front pushed outward with no dissipation forces an exit before the target time
    times = np.linspace(0, 1, 41)
    tr = _moving_front(quartic, qwc, lambda t: 0.5 + 3.5 * t, times)
    c = dg.make_constants(qwc.eta0, qwc).with_values(
        M0=4 * qwc.eta0, kappa0=0.25, alpha0=4.0, log_beta0=math.log(4.0), K_V=1e-12)
    log = dg.front_tracker(tr, qwc, c, 8 * EPS * 1.01)
    s = log.stages[0]
    assert s.case == 3 and not s.censored
    assert s.T1 == pytest.approx(0.9)
    assert s.n_before == 1 and s.n_after is not None


def test_stopping_times_examples(kink_tr, annihilation_tr, qwc):
    c = dg.make_constants(qwc.eta0, qwc)
    st = dg.watch_stopping_times(kink_tr, dg.StoppingState(0.0, Covering((0.0,), 0.5, 0.25)), qwc, c)
    assert st.T1 == math.inf and st.T2 == math.inf
    st = dg.watch_stopping_times(annihilation_tr, dg.StoppingState(
        0.0, Covering((0.0,), 0.5, 0.25)), qwc, c)
    assert math.isfinite(st.T2)
    st = dg.watch_stopping_times(kink_tr, dg.StoppingState(0.05, Covering((0.0,), EPS / 10, 0.25)),
                                 qwc, c)
    assert st.T1 == 0.05


def test_regularisation_at_window_end(kink_tr, qwc):
    # s - t equal to r^2/alpha0^3 with x beyond the grid (clamped extension)
    M0 = KINK_ENERGY
    a0 = 32 * M0 / qwc.eta0
    t, s = 0.1, 0.105
    r = math.sqrt((s - t) * a0**3)
    x = kink_tr.x[-1] + r + EPS
    v = dg.check_regularisation(kink_tr, x, r, t, s, qwc, M0)
    assert v.passed and v.params["s"] == s
