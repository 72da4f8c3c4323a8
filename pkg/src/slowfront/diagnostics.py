"""Constants of the slow-motion analysis, stopping times, runtime checks of the
off-front estimates and a replay of the front-tracking iteration.

Large constants are carried as logarithms; their plain values become ``inf`` on
overflow.  Every check returns a :class:`Verdict` that serializes to
``{check, params, lhs, rhs, pass}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .evolve import Trajectory
from .frontset import (Covering, CoveringError, FrontSet, confined_cover_front_set,
                       cover_by_unit_balls, front_set, front_set_arrays, min_covering)
from .grid import energy_density, integral_on_interval
from .potential import WellConstants


class PreconditionError(ValueError):
    """Inputs outside the admissible range of an estimate (distinct from a failed check)."""


def _exp(log_value: float) -> float:
    return math.exp(log_value) if log_value < 709.0 else math.inf


@dataclass(frozen=True)
class Constants:
    M0: float
    eta0: float
    alpha0: float
    kappa0: float
    log_beta0: float
    log_gamma0: float
    K_V: float
    k_V: float
    log_K0: float
    K1: Optional[float] = None
    K2: Optional[float] = None
    C1: Optional[float] = None

    @property
    def beta0(self) -> float:
        return _exp(self.log_beta0)

    @property
    def gamma0(self) -> float:
        return _exp(self.log_gamma0)

    @property
    def K0(self) -> float:
        return _exp(self.log_K0)

    @property
    def ratio(self) -> float:
        return self.M0 / self.eta0

    def stage_ceiling(self) -> float:
        return (self.ratio + 1.0) * 4.0 * self.ratio + 1.0

    def with_values(self, **kw) -> "Constants":
        d = asdict(self)
        d.update(kw)
        return Constants(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(beta0=self.beta0, gamma0=self.gamma0, K0=self.K0)
        return {k: (v if v is None or math.isfinite(v) else "inf") for k, v in d.items()}


def make_constants(M0: float, wc: WellConstants, K1: Optional[float] = None,
                   K2: Optional[float] = None, C1: Optional[float] = None) -> Constants:
    eta0 = wc.eta0
    if M0 < eta0:
        raise ValueError(f"M0={M0:g} must be at least eta0={eta0:g}")
    alpha0 = 32.0 * M0 / eta0
    kappa0 = eta0 / (16.0 * M0)
    lm = np.asarray(wc.lambda_minus, dtype=float)
    lp = np.asarray(wc.lambda_plus, dtype=float)
    K_V = 2.0 ** 15 * (1.0 + 4.0 * float(np.max(lp / lm)))
    k_V = float(np.min(np.minimum(lm, np.sqrt(lm / 2.0) / 6.0)))
    log_beta0 = math.log(4.0) + alpha0 / 16.0 * math.log(alpha0)
    log_gamma0 = max(math.log(alpha0) + log_beta0,
                     3 * math.log(alpha0) - math.log(k_V) + math.log(math.log(4 * alpha0 ** 2 * K_V)),
                     0.5 * math.log(6 * K_V * alpha0 / k_V))
    log_K0 = M0 / eta0 * log_beta0 + alpha0 / 16.0 * math.log(alpha0)
    return Constants(M0, eta0, alpha0, kappa0, log_beta0, log_gamma0, K_V, k_V, log_K0, K1, K2, C1)


def target_time(t: float, eps: float, rho: float, c: Constants) -> float:
    """t + rho^2 exp(k_V rho / (2 eps)) / (2 sqrt(6 K_V alpha0))."""
    lg = 2 * math.log(rho) + 0.5 * c.k_V * rho / eps - math.log(2 * math.sqrt(6 * c.K_V * c.alpha0))
    return t + _exp(lg)


@dataclass
class Verdict:
    check: str
    params: dict
    lhs: float
    rhs: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"check": self.check, "params": self.params, "lhs": _jsonable(self.lhs),
             "rhs": _jsonable(self.rhs), "pass": bool(self.passed)}
        if self.extra:
            d["extra"] = {k: _jsonable(v) for k, v in self.extra.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _jsonable(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# ---------------------------------------------------------------- front sets on trajectories

def front_set_at(tr: Trajectory, i: int, wc: WellConstants) -> FrontSet:
    return front_set_arrays(tr.x, wc.dist_to_wells(tr.values[i]), wc.mu0)


def meets_extended(fs: FrontSet, lo: float, hi: float) -> bool:
    """Front set of the field extended by its (clamped) end values: nothing lies
    outside the grid, so only the part of [lo, hi] inside the domain matters."""
    return fs.meets(lo, hi)


def contained_in(fs: FrontSet, base: FrontSet, pad: float, tol: float = 1e-12) -> bool:
    """fs subset of base + [-pad, pad]."""
    if fs.empty:
        return True
    grown = [(a - pad - tol, b + pad + tol) for a, b in base.intervals]
    merged = []
    for a, b in sorted(grown):
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return all(any(ma <= a and b <= mb for ma, mb in merged) for a, b in fs.intervals)


def within_balls(fs: FrontSet, centers: Sequence[float], radius: float) -> bool:
    """fs subset of the union of closed balls B(a, radius)."""
    if fs.empty:
        return True
    if len(centers) == 0:
        return False
    balls = sorted((a - radius * (1 + 1e-12), a + radius * (1 + 1e-12)) for a in centers)
    merged = []
    for a, b in balls:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return all(any(ma <= a and b <= mb for ma, mb in merged) for a, b in fs.intervals)


def containment_check(tr: Trajectory, wc: WellConstants, R: float) -> Verdict:
    """D(t) within D(0) + [-R, R] at every snapshot."""
    base = front_set_at(tr, 0, wc)
    bad = [float(tr.times[i]) for i in range(len(tr))
           if not contained_in(front_set_at(tr, i, wc), base, R)]
    return Verdict("containment", {"R": R}, float(len(bad)), 0.0, not bad,
                   {"violations_at": bad[:20]})


# ---------------------------------------------------------------- stopping times

@dataclass
class StoppingState:
    t_start: float
    covering: Covering
    T1: float = math.inf
    T1_interval: tuple = (math.inf, math.inf)
    T2: float = math.inf
    T3: float = math.inf
    horizon: float = math.inf


def watch_stopping_times(tr: Trajectory, st: StoppingState, wc: WellConstants,
                         c: Constants) -> StoppingState:
    """Exit time (front set leaves the rho-balls), dissipation time (eta0/8 dissipated)
    and target time, all at snapshot resolution; unobserved times stay infinite."""
    i0 = tr.index_at(st.t_start)
    T3 = target_time(st.t_start, tr.eps, st.covering.rho, c)
    T1, T1_iv, T2 = math.inf, (math.inf, math.inf), math.inf
    d0 = tr.dissipation_cum[i0]
    for i in range(i0, len(tr)):
        t = float(tr.times[i])
        if T1 == math.inf and not within_balls(front_set_at(tr, i, wc), st.covering.points,
                                                st.covering.rho):
            T1 = t
            T1_iv = (float(tr.times[i - 1]) if i > i0 else t, t)
        if T2 == math.inf and tr.dissipation_cum[i] - d0 >= c.eta0 / 8:
            T2 = t
        if T1 < math.inf and T2 < math.inf:
            break
    return StoppingState(st.t_start, st.covering, T1, T1_iv, T2, T3, float(tr.times[-1]))


def classify_stage(T1: float, T2: float, T3: float, horizon: float) -> tuple:
    """(case, censored) for one stage.

    Case 1: T3 < T1;  Case 2: T2 < T1 <= T3;  Case 3: T1 <= min(T2, T3).
    Times beyond the horizon are unobserved.  When only the dissipation time is
    observed the stage is Case 2, since the iteration restarts at T2 in every
    ordering compatible with the observation except T3 < T1, which cannot be
    confirmed on the available prefix.  When nothing is observed the stage is
    a terminal Case 1 with the target time censored.
    """
    seen = lambda t: t <= horizon  # noqa: E731
    if seen(T3) and T3 < T1:
        return 1, False
    if seen(T1) and T1 <= min(T2, T3):
        return 3, False
    if seen(T2) and T2 < T1:
        return 2, False
    return 1, True


# ---------------------------------------------------------------- off-front checks

def _well_index(values: np.ndarray, wc: WellConstants) -> Optional[int]:
    d = np.linalg.norm(values[:, None, :] - wc.minimizers[None, :, :], axis=2)
    near = d < wc.mu0
    hit = np.all(near, axis=0)
    idx = np.flatnonzero(hit)
    return int(idx[0]) if idx.size else None


def _interval_nodes(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (x >= lo - 1e-12) & (x <= hi + 1e-12)


def _offfront_rhs(M0: float, lm: float, lp: float, dt: float, r: float, eps: float) -> float:
    return M0 * (1 + 4 * lp / lm) * (math.exp(-lm * dt / eps ** 2)
                                     + 2 ** 14 * dt / r ** 2 * math.exp(-math.sqrt(lm / 2) * r / (12 * eps)))


def _well_at(tr: Trajectory, i: int, lo: float, hi: float, wc: WellConstants) -> Optional[int]:
    """Well whose mu0-ball contains the field on [lo, hi] at snapshot i, using
    the clamped end values for the part of the interval outside the domain."""
    x = tr.x
    vals = tr.values[i][_interval_nodes(x, lo, hi)]
    ext = []
    if lo < x[0]:
        ext.append(tr.values[i][0])
    if hi > x[-1]:
        ext.append(tr.values[i][-1])
    if ext:
        vals = np.vstack([vals] + [np.atleast_2d(e) for e in ext])
    if len(vals) == 0:
        return None
    return _well_index(vals, wc)


def check_regularisation(tr: Trajectory, x: float, r: float, t: float, s: float,
                         wc: WellConstants, M0: float, alpha0: Optional[float] = None) -> Verdict:
    """Energy on [x - r/2, x + r/2] at time s after a front-free start on [x - r, x + r].

    The field is regarded as extended by its clamped end values outside the
    grid.  ``alpha0`` defaults to 32 M0/eta0; passing a smaller value probes the
    same inequality below the admissible scale (reported in ``params``).
    """
    a0 = 32.0 * M0 / wc.eta0 if alpha0 is None else alpha0
    eps = tr.eps
    if r < a0 * eps * (1 - 1e-12):
        raise PreconditionError(f"r={r:g} below alpha0*eps={a0 * eps:g}")
    if not (t <= s <= t + r ** 2 / a0 ** 3 * (1 + 1e-12)):
        raise PreconditionError("s outside [t, t + r^2/alpha0^3]")
    it, is_ = tr.index_at(t), tr.index_at(s)
    if abs(tr.times[it] - t) > 1e-9 * max(1, abs(t)) or abs(tr.times[is_] - s) > 1e-9 * max(1, abs(s)):
        raise PreconditionError("t and s must be snapshot times")
    if meets_extended(front_set_at(tr, it, wc), x - r, x + r):
        raise PreconditionError("front set meets [x - r, x + r] at time t")
    i = _well_at(tr, it, x - r, x + r, wc)
    lm, lp = wc.lambda_minus[i], wc.lambda_plus[i]
    e = energy_density(tr.snapshot(is_), tr.potential).energy
    lhs = integral_on_interval(tr.x, e, x - r / 2, x + r / 2)
    rhs = _offfront_rhs(M0, lm, lp, s - t, r, eps)
    clear = not meets_extended(front_set_at(tr, is_, wc), x - r / 2, x + r / 2)
    return Verdict("regularisation", {"x": x, "r": r, "t": t, "s": s, "M0": M0, "alpha0": a0},
                   lhs, rhs, bool(lhs <= rhs and clear), {"front_free": clear, "well": i})


def check_offfront(tr: Trajectory, x: float, r: float, t: float, s: float,
                   wc: WellConstants, M0: float) -> Verdict:
    """Same energy bound under the hypothesis that the field stays in one well's
    mu0-ball on [x - 3r/4, x + 3r/4] for every snapshot in [t, s]."""
    if not (r > 0 and s > t):
        raise PreconditionError("need r > 0 and s > t")
    it, is_ = tr.index_at(t), tr.index_at(s)
    wells = {_well_at(tr, j, x - 0.75 * r, x + 0.75 * r, wc) for j in range(it, is_ + 1)}
    if len(wells) != 1 or None in wells:
        raise PreconditionError("field leaves the mu0-ball of a single well on the probe cylinder")
    i = wells.pop()
    lm, lp = wc.lambda_minus[i], wc.lambda_plus[i]
    e = energy_density(tr.snapshot(is_), tr.potential).energy
    lhs = integral_on_interval(tr.x, e, x - r / 2, x + r / 2)
    rhs = _offfront_rhs(M0, lm, lp, tr.times[is_] - tr.times[it], r, tr.eps)
    return Verdict("offfront", {"x": x, "r": r, "t": t, "s": s, "M0": M0}, lhs, rhs,
                   bool(lhs <= rhs), {"well": i})


def _decay_rhs(K1: float, M0: float, eps: float, t: float, R: float) -> float:
    return K1 * M0 / eps * (math.exp(-t / (K1 * eps ** 2)) + t / R ** 2 * math.exp(-R / (K1 * eps)))


def pointwise_decay_lhs(tr: Trajectory, i: int, x0: float, R: float) -> float:
    eps = tr.eps
    m = _interval_nodes(tr.x, x0 - R / 2, x0 + R / 2)
    e = energy_density(tr.snapshot(i), tr.potential).energy
    rate2 = np.sum(tr.rates[i] ** 2, axis=1)
    return float(np.max(eps ** 3 * rate2[m] + e[m])) if np.any(m) else 0.0


def _decay_probe(tr: Trajectory, x0: float, R: float, t: float, wc: WellConstants, c: Constants,
                 alpha0: Optional[float]):
    a0 = c.alpha0 if alpha0 is None else alpha0
    eps = tr.eps
    if R < a0 * eps * (1 - 1e-12):
        raise PreconditionError(f"R={R:g} below alpha0*eps={a0 * eps:g}")
    if t < eps ** 2 * (1 - 1e-12):
        raise PreconditionError("t must be at least eps^2")
    if meets_extended(front_set_at(tr, 0, wc), x0 - 2 * R, x0 + 2 * R):
        raise PreconditionError("front set of the initial datum meets [x0 - 2R, x0 + 2R]")
    i = tr.index_at(t)
    return pointwise_decay_lhs(tr, i, x0, R), float(tr.times[i])


def check_pointwise_decay(tr: Trajectory, x0: float, R: float, t: float, wc: WellConstants,
                          c: Constants, alpha0: Optional[float] = None) -> Verdict:
    """eps^3 |v_t|^2 + e <= K1 M0/eps [exp(-t/(K1 eps^2)) + t/R^2 exp(-R/(K1 eps))]
    at every node of [x0 - R/2, x0 + R/2], with K1 taken from the constants."""
    if c.K1 is None:
        raise ValueError("K1 is not set; calibrate it first")
    lhs, ts = _decay_probe(tr, x0, R, t, wc, c, alpha0)
    rhs = _decay_rhs(c.K1, c.M0, tr.eps, ts, R)
    return Verdict("pointwise_decay", {"x0": x0, "R": R, "t": ts, "K1": c.K1}, lhs, rhs,
                   bool(lhs <= rhs))


def calibrate_monotone(lhs: Sequence[float], rhs_of: Sequence[Callable[[float], float]],
                       lo: float = 1e-6, hi: float = 1e12, safety: float = 2.0,
                       iters: int = 200) -> float:
    """Smallest C in [lo, hi] with lhs_j <= rhs_j(C) for all j (each rhs_j
    non-decreasing in C), found by bisection in log C, times ``safety``."""
    def ok(C):
        return all(l <= f(C) for l, f in zip(lhs, rhs_of))
    if not ok(hi):
        raise ValueError("no admissible constant below the upper bracket")
    if ok(lo):
        return lo * safety
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        m = 0.5 * (a + b)
        if ok(math.exp(m)):
            b = m
        else:
            a = m
        if b - a < 1e-12:
            break
    return math.exp(b) * safety


def calibrate_K1(tr: Trajectory, probes: Sequence[tuple], wc: WellConstants, c: Constants,
                 alpha0: Optional[float] = None, safety: float = 2.0) -> float:
    """K1 from a reference trajectory and probes (x0, R, t)."""
    lhs, fns = [], []
    for x0, R, t in probes:
        l, ts = _decay_probe(tr, x0, R, t, wc, c, alpha0)
        lhs.append(l)
        fns.append(lambda K, ts=ts, R=R: _decay_rhs(K, c.M0, tr.eps, ts, R))
    return calibrate_monotone(lhs, fns, safety=safety)


# ---------------------------------------------------------------- tracker

@dataclass
class Stage:
    index: int
    t: float
    delta: float
    rho: float
    covering: Covering
    case: int
    censored: bool
    T1: float
    T1_interval: tuple
    T2: float
    T3: float
    t_next: float
    n_before: Optional[int] = None
    n_after: Optional[int] = None

    @property
    def increment_ok(self) -> Optional[bool]:
        if self.case != 3 or self.n_before is None or self.n_after is None:
            return None
        return self.n_after >= self.n_before + 1

    def to_dict(self) -> dict:
        return {"index": self.index, "t": self.t, "delta": self.delta, "rho": self.rho,
                "points": list(self.covering.points), "case": self.case, "censored": self.censored,
                "T1": _jsonable(self.T1), "T1_interval": _jsonable(list(self.T1_interval)),
                "T2": _jsonable(self.T2), "T3": _jsonable(self.T3), "t_next": _jsonable(self.t_next),
                "n_before": self.n_before, "n_after": self.n_after,
                "increment_ok": self.increment_ok}


@dataclass
class TrackerLog:
    stages: list
    containment_ok: bool
    counterexamples: list
    n_opt_series: list
    stage_ceiling: float
    flags: list = field(default_factory=list)

    def count(self, case: int) -> int:
        return sum(1 for s in self.stages if s.case == case)

    @property
    def increments_ok(self) -> bool:
        return all(s.increment_ok is not False for s in self.stages)

    @property
    def within_ceiling(self) -> bool:
        return len(self.stages) <= self.stage_ceiling

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages], "containment_ok": self.containment_ok,
                "counterexamples": self.counterexamples, "n_opt_series": self.n_opt_series,
                "stage_ceiling": _jsonable(self.stage_ceiling), "flags": self.flags,
                "increments_ok": self.increments_ok, "within_ceiling": self.within_ceiling}


def stage_covering(tr: Trajectory, i: int, wc: WellConstants, c: Constants, delta: float) -> Covering:
    """Optimal kappa0-confined covering of the front set at snapshot i at scale >= delta."""
    u = tr.snapshot(i)
    fs = front_set(u, wc)
    pts = cover_by_unit_balls(fs, tr.eps, c.M0, c.eta0)
    if not pts:
        return Covering((), float(delta), c.kappa0)
    rho_max = _exp(math.log(delta) - 2 * c.ratio * math.log(c.kappa0 / 2))
    if len(pts) <= 12:
        cov = min_covering(fs.intervals, pts, delta, c.kappa0, rho_max)
        if cov is not None:
            return cov
    return confined_cover_front_set(u, wc, delta, c.kappa0, tr.eps, c.M0)


def front_tracker(tr: Trajectory, wc: WellConstants, c: Constants, delta0: float,
                  max_stages: Optional[int] = None) -> TrackerLog:
    """Replay the dissipation/splitting iteration on a stored trajectory."""
    eps = tr.eps
    if not delta0 * c.kappa0 > 2 * eps:
        raise PreconditionError(f"need delta0*kappa0 > 2 eps (got {delta0 * c.kappa0:g})")
    ceiling = c.stage_ceiling()
    cap = max_stages if max_stages is not None else int(min(ceiling + 1, 10_000))
    stages, counter, series, flags = [], [], [], []
    if delta0 < c.gamma0 * eps:
        flags.append("delta0_below_gamma0_eps")
    i, delta = 0, delta0
    horizon = float(tr.times[-1])

    def n_at(j, d):
        try:
            return len(stage_covering(tr, j, wc, c, d).points)
        except (CoveringError, ValueError):
            return None

    while len(stages) < cap:
        cov = stage_covering(tr, i, wc, c, delta)
        t = float(tr.times[i])
        st = watch_stopping_times(tr, StoppingState(t, cov), wc, c)
        case, censored = classify_stage(st.T1, st.T2, st.T3, horizon)
        n_before = len(cov.points)
        series.append(n_before)
        if case == 1:
            t_next = st.T3
            j_next = len(tr) - 1 if censored or st.T3 > horizon else tr.index_at(st.T3)
        elif case == 2:
            t_next = st.T2
            j_next = tr.index_at(st.T2)
        else:
            t_next = max(t, st.T1 - 4 * c.kappa0 / c.alpha0 ** 3 * delta ** 2)
            j_next = tr.index_at(t_next)
        base = front_set_at(tr, i, wc)
        for j in range(i, j_next + 1):
            if not contained_in(front_set_at(tr, j, wc), base, 2 * cov.rho):
                counter.append({"stage": len(stages), "t": float(tr.times[j]), "rho": cov.rho})
        stage = Stage(len(stages), t, delta, cov.rho, cov, case, censored, st.T1, st.T1_interval,
                      st.T2, st.T3, float(t_next), n_before)
        stages.append(stage)
        if case == 1:
            break
        if case == 2:
            delta = delta0
        else:
            delta = delta / c.beta0
            if not delta * c.kappa0 > 2 * eps:
                flags.append("scale_below_covering_floor")
                stage.n_after = n_at(j_next, max(delta, 2 * eps / c.kappa0 * (1 + 1e-9)))
                break
            stage.n_after = n_at(j_next, delta)
        i = j_next
    else:
        flags.append("stage_cap_reached")
    return TrackerLog(stages, not counter, counter, series, ceiling, flags)
