"""Stationary side: the first-order system u_x = w/eps, w_x = grad V(u)/eps + eps f,
heteroclinic shooting, Gronwall comparison, zero-discrepancy companions and the
structure report of a relaxed time slice."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .diagnostics import Constants, PreconditionError, Verdict, calibrate_monotone, front_set_at
from .evolve import Trajectory
from .frontset import Covering, cover_by_unit_balls, finest_covering, front_set
from .grid import Field, Grid1D, derivative, energy_density, integrate, total_energy
from .potential import Potential, WellConstants, lipschitz_bound, offwell_floor


class ShootingError(RuntimeError):
    pass


class NotASolutionError(ValueError):
    pass


@dataclass(frozen=True)
class ODEState:
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.atleast_1d(np.asarray(self.u, dtype=float)))
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, dtype=float)))
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.w))):
            raise ValueError("ODE state must be finite")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.w])


@dataclass
class ODEPath:
    x: np.ndarray
    u: np.ndarray   # (m, k)
    w: np.ndarray   # (m, k)
    diverged: bool = False

    def discrepancy(self, p: Potential, eps: float) -> np.ndarray:
        return 0.5 * np.sum(self.w ** 2, axis=1) / eps - np.asarray(p.eval(self.u)).ravel() / eps

    def state(self, i: int) -> ODEState:
        return ODEState(self.u[i], self.w[i])

    def at(self, xq: np.ndarray) -> np.ndarray:
        """u at the query points by cubic Hermite interpolation (uses u' = w/eps)."""
        return _hermite(self.x, self.u, self.w, xq, self._eps)

    _eps: float = field(default=1.0, repr=False)


def _hermite(x, u, w, xq, eps):
    xq = np.atleast_1d(np.asarray(xq, dtype=float))
    order = np.argsort(x)
    x, u, w = x[order], u[order], w[order] / eps
    j = np.clip(np.searchsorted(x, xq) - 1, 0, len(x) - 2)
    h = x[j + 1] - x[j]
    s = ((xq - x[j]) / h)[:, None]
    h = h[:, None]
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    return h00 * u[j] + h10 * h * w[j] + h01 * u[j + 1] + h11 * h * w[j + 1]


def grid_forcing(x: np.ndarray, f: np.ndarray) -> Callable[[float], np.ndarray]:
    """Piecewise-linear interpolant of a sampled forcing, zero outside the samples."""
    f = np.asarray(f, dtype=float).reshape(len(x), -1)
    lo, hi = x[0], x[-1]

    def fn(y):
        if y < lo or y > hi:
            return np.zeros(f.shape[1])
        return np.array([np.interp(y, x, f[:, j]) for j in range(f.shape[1])])
    return fn


def integrate_ode(s0: ODEState, p: Potential, eps: float, f: Optional[Callable] = None,
                  interval: tuple = (0.0, 1.0), max_step: Optional[float] = None,
                  n_steps: Optional[int] = None, limit: Optional[float] = None,
                  stop: Optional[Callable] = None) -> ODEPath:
    """Classical RK4 for U_x = G(U)/eps + eps F from x0 = interval[0] to interval[1]
    (either direction), step at most eps/50.  Integration stops early, flagging
    divergence, once |u| exceeds ``limit``; ``stop(u, w)`` ends it without the flag."""
    x0, x1 = map(float, interval)
    k = p.dim_k
    L = x1 - x0
    hmax = eps / 50.0 if max_step is None else min(max_step, eps / 50.0)
    n = max(1, int(math.ceil(abs(L) / hmax - 1e-9))) if n_steps is None else int(n_steps)
    if n_steps is not None and abs(L) / n > eps / 50.0 * (1 + 1e-12):
        raise ValueError("requested step exceeds eps/50")
    h = L / n if n else 0.0
    lim = limit if limit is not None else 10.0 * (float(np.max(np.abs(p.minimizers))) + 1.0)
    xs = x0 + h * np.arange(n + 1)
    U = np.empty((n + 1, 2 * k))
    U[0] = s0.vector()
    ie = 1.0 / eps

    def rhs(x, y):
        u, w = y[:k], y[k:]
        g = np.asarray(p.grad(u[None, :]), dtype=float).reshape(k)
        dw = g * ie
        if f is not None:
            dw = dw + eps * np.asarray(f(x), dtype=float).reshape(k)
        return np.concatenate([w * ie, dw])

    diverged = False
    m = n
    for i in range(n):
        y, x = U[i], xs[i]
        k1 = rhs(x, y)
        k2 = rhs(x + h / 2, y + h / 2 * k1)
        k3 = rhs(x + h / 2, y + h / 2 * k2)
        k4 = rhs(x + h, y + h * k3)
        U[i + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(U[i + 1])) or np.max(np.abs(U[i + 1, :k])) > lim:
            diverged = True
            m = i + 1
            break
        if stop is not None and stop(U[i + 1, :k], U[i + 1, k:]):
            m = i + 1
            break
    path = ODEPath(xs[:m + 1], U[:m + 1, :k].copy(), U[:m + 1, k:].copy(), diverged)
    path._eps = eps
    return path


# ---------------------------------------------------------------- heteroclinics

@dataclass
class StationaryProfile:
    grid: Grid1D
    values: np.ndarray
    eps: float
    discrepancy_max: float
    endpoints_wells: Optional[tuple] = None
    w: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def field(self) -> Field:
        return Field(self.grid, self.eps, self.values)

    def energy(self, p: Potential) -> float:
        """Total energy; uses the integrated w = eps u_x when available."""
        if self.w is None:
            return total_energy(self.field(), p)
        V = np.asarray(p.eval(self.values), dtype=float).ravel()
        e = 0.5 * np.sum(self.w ** 2, axis=1) / self.eps + V / self.eps
        return integrate(e, self.grid)

    def tail_directions(self, p: Potential, floor: float = 1e-6) -> tuple:
        """Unit vectors (u - well)/|u - well| at the outermost nodes still at
        distance >= floor from their limiting well."""
        out = []
        for side, idx in (("-", np.arange(len(self.values))), ("+", np.arange(len(self.values))[::-1])):
            well = p.minimizers[p.nearest_well(self.values[idx[0]])]
            d = np.linalg.norm(self.values - well, axis=1)
            cand = idx[d[idx] >= floor]
            if cand.size == 0:
                out.append(None)
                continue
            j = cand[0]
            out.append((self.values[j] - well) / d[j])
        return tuple(out)

    def to_csv(self, path) -> None:
        cols = [self.x] + [self.values[:, j] for j in range(self.values.shape[1])]
        header = "x," + ",".join(f"u{j}" for j in range(self.values.shape[1]))
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="",
                   fmt="%.17g")


def _half_shot(p, eps, u0, w0, target, direction, tail_tol, length, max_bisections, rel):
    """Bisect a relative launch-speed perturbation so that the outward shot
    lands on ``target`` instead of overshooting or turning back."""
    k = p.dim_k
    sgn = 1.0 if direction > 0 else -1.0
    d = target - u0
    dn = d / np.linalg.norm(d)
    h = eps / 50.0
    steps = int(math.ceil(length / h))

    def shoot(delta):
        s = ODEState(u0, w0 * (1 + delta))

        def done(u, w):
            return (np.linalg.norm(u - target) <= tail_tol or (u - target) @ dn > 0
                    or sgn * (w @ dn) < 0)
        path = integrate_ode(s, p, eps, None, (0.0, sgn * steps * h), n_steps=steps, stop=done)
        proj = (path.u - target) @ dn          # < 0 before reaching target
        vel = sgn * (path.w @ dn)               # > 0 while still heading there
        dist = np.linalg.norm(path.u - target, axis=1)
        hit = np.flatnonzero(dist <= tail_tol)
        over = np.flatnonzero(proj > 0)
        back = np.flatnonzero(vel < 0)
        first_bad = min([a[0] for a in (over, back) if a.size], default=len(dist))
        if hit.size and hit[0] < first_bad:
            return 0, path, int(hit[0])
        if over.size and (not back.size or over[0] <= back[0]):
            return 1, path, int(np.argmin(dist[:first_bad + 1]))
        if back.size:
            return -1, path, int(np.argmin(dist[:first_bad + 1]))
        return 0, path, int(np.argmin(dist))

    lo, hi = -rel, rel
    slo, _, _ = shoot(lo)
    shi, _, _ = shoot(hi)
    if not (slo <= 0 <= shi):
        raise ShootingError("launch bracket does not separate undershoot from overshoot")
    best = None
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        s, path, j = shoot(mid)
        dist = float(np.linalg.norm(path.u[j] - target))
        if best is None or dist < best[0]:
            best = (dist, path, j, mid)
        if s == 0 and dist <= tail_tol:
            return path, j, mid
        if s > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    dist, path, j, mid = best
    if dist > tail_tol:
        raise ShootingError(f"tail reached only {dist:.3g} from the well (tolerance {tail_tol:g})")
    return path, j, mid


def _linear_tail(p: Potential, well: np.ndarray, u_end: np.ndarray, eps: float,
                 offsets: np.ndarray) -> np.ndarray:
    d = u_end - well
    nd = np.linalg.norm(d)
    if nd == 0:
        return np.repeat(well[None, :], len(offsets), axis=0)
    e = d / nd
    H = np.asarray(p.hess(well), dtype=float).reshape(p.dim_k, p.dim_k)
    lam = float(e @ H @ e)
    decay = np.exp(-np.sqrt(lam) * offsets / eps)
    return well[None, :] + decay[:, None] * d[None, :]


def shoot_heteroclinic(p: Potential, eps: float, well_from: int, well_to: int,
                       tail_tol: float = 1e-8, half_width: Optional[float] = None,
                       max_bisections: int = 200) -> StationaryProfile:
    """Zero-discrepancy front from ``well_from`` (x -> -inf) to ``well_to``.

    The launch point is the midpoint of the two wells with w = sqrt(2V) along the
    segment joining them.  Each half is shot outward and its launch speed bisected
    until the tail comes within ``tail_tol`` of its well; beyond that point the
    tail is continued by the linearized decay.  The abscissa origin is the node
    farthest from every well.
    """
    n_wells = len(p.minimizers)
    if not (0 <= well_from < n_wells and 0 <= well_to < n_wells) or well_from == well_to:
        raise ValueError(f"need two distinct well indices in [0, {n_wells}), "
                         f"got {well_from} and {well_to}")
    a = np.asarray(p.minimizers[well_from], dtype=float)
    b = np.asarray(p.minimizers[well_to], dtype=float)
    mid = 0.5 * (a + b)
    V = float(np.asarray(p.eval(mid[None, :])).ravel()[0])
    if V <= 0:
        raise ShootingError("potential vanishes at the launch point")
    dn = (b - a) / np.linalg.norm(b - a)
    w0 = math.sqrt(2 * V) * dn
    length = 60.0 * eps
    fwd, jf, df = _half_shot(p, eps, mid, w0, b, +1, tail_tol, length, max_bisections, 0.05)
    bwd, jb, db = _half_shot(p, eps, mid, w0, a, -1, tail_tol, length, max_bisections, 0.05)
    h = eps / 50.0
    L = half_width if half_width is not None else max(jf, jb) * h + 5 * eps
    n_side = int(round(L / h))
    right = np.empty((n_side + 1, p.dim_k))
    left = np.empty((n_side + 1, p.dim_k))
    wr = np.empty_like(right)
    wl = np.empty_like(left)
    for out, wout, path, j, well in ((right, wr, fwd, jf, b), (left, wl, bwd, jb, a)):
        m = min(j, n_side)
        out[:m + 1] = path.u[:m + 1]
        wout[:m + 1] = path.w[:m + 1]
        if m < n_side:
            offs = h * np.arange(1, n_side - m + 1)
            tail = _linear_tail(p, well, path.u[m], eps, offs)
            out[m + 1:] = tail
            dtail = np.gradient(tail, h, axis=0) if len(tail) > 1 else np.zeros_like(tail)
            sign = 1.0 if out is right else -1.0
            wout[m + 1:] = eps * sign * dtail if len(tail) > 1 else 0.0
    values = np.concatenate([left[::-1], right[1:]])
    wvals = np.concatenate([wl[::-1], wr[1:]])
    grid = Grid1D(-n_side * h, n_side * h, 2 * n_side + 1)
    dist = p.dist_to_wells(values)
    i_anchor = int(np.argmax(dist))
    shift = grid.x[i_anchor]
    if shift != 0.0:
        grid = Grid1D(grid.x_min - shift, grid.x_max - shift, grid.n)
    xi = 0.5 * np.sum(wvals ** 2, axis=1) / eps - np.asarray(p.eval(values)).ravel() / eps
    return StationaryProfile(grid, values, eps, float(np.max(np.abs(xi))), (well_from, well_to),
                             wvals, {"launch_perturbation": (float(db), float(df)),
                                     "tail_nodes": (int(jb), int(jf))})


def kink_energy_oracle() -> float:
    return 2.0 * math.sqrt(2.0) / 3.0


# ---------------------------------------------------------------- comparisons

def state_distance(u1, w1, u2, w2) -> np.ndarray:
    return np.sqrt(np.sum((u1 - u2) ** 2, axis=-1) + np.sum((w1 - w2) ** 2, axis=-1))


@dataclass
class GronwallResult:
    lhs: float
    rhs: float
    passed: bool
    precondition: bool
    A: float

    def verdict(self, params: dict) -> Verdict:
        return Verdict("gronwall", params, self.lhs, self.rhs, self.passed,
                       {"precondition": self.precondition, "A": self.A})


def l2_norm(f: Callable, lo: float, hi: float, k: int, n: int = 4001) -> float:
    xs = np.linspace(lo, hi, n)
    vals = np.array([np.asarray(f(x), dtype=float).reshape(k) for x in xs])
    return math.sqrt(float(np.trapezoid(np.sum(vals ** 2, axis=1), xs)))


def gronwall_compare(p: Potential, eps: float, x0: float, a: float, s_pert: ODEState,
                     s_ref: ODEState, f: Optional[Callable], f_l2: Optional[float] = None,
                     A: Optional[float] = None) -> GronwallResult:
    """Integrate the forced solution U and the unforced U0 from x0 to x0 -+ a and
    compare sup|U - U0| with (|U(x0) - U0(x0)| + eps^1.5 |f|_2 / sqrt(2A)) exp(A a/eps),
    A = 1 + max |Hess V| on the ball of radius |u|_inf + 1."""
    k = p.dim_k
    paths = []
    for end in (x0 + a, x0 - a):
        up = integrate_ode(s_pert, p, eps, f, (x0, end))
        ur = integrate_ode(s_ref, p, eps, None, (x0, end), n_steps=len(up.x) - 1)
        paths.append((up, ur))
    unorm = max(float(np.max(np.linalg.norm(up.u, axis=1))) for up, _ in paths)
    A_val = lipschitz_bound(p, unorm + 1.0) if A is None else A
    if f_l2 is None:
        f_l2 = 0.0 if f is None else l2_norm(f, x0 - a, x0 + a, k)
    d0 = float(np.linalg.norm(s_pert.vector() - s_ref.vector()))
    pre = d0 + eps ** 1.5 / math.sqrt(2 * A_val) * f_l2
    rhs = pre * math.exp(A_val * a / eps)
    ok_pre = pre <= math.exp(-A_val * a / eps) * (1 + 1e-12)
    lhs = 0.0
    for up, ur in paths:
        if ur.diverged or up.diverged:
            lhs = math.inf
            break
        lhs = max(lhs, float(np.max(state_distance(up.u, up.w, ur.u, ur.w))))
    return GronwallResult(lhs, rhs, bool(ok_pre and lhs <= rhs), bool(ok_pre), A_val)


# ---------------------------------------------------------------- forced slices

def second_derivative4(values: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central second difference (one-sided fourth order at the two
    outermost nodes on each side)."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[2:-2] = (-v[4:] + 16 * v[3:-1] - 30 * v[2:-2] + 16 * v[1:-3] - v[:-4]) / (12 * h ** 2)
    edge0 = np.array([45, -154, 214, -156, 61, -10]) / (12 * h ** 2)
    edge1 = np.array([10, -15, -4, 14, -6, 1]) / (12 * h ** 2)
    out[0] = np.tensordot(edge0, v[:6], axes=(0, 0))
    out[1] = np.tensordot(edge1, v[:6], axes=(0, 0))
    out[-1] = np.tensordot(edge0, v[::-1][:6], axes=(0, 0))
    out[-2] = np.tensordot(edge1, v[::-1][:6], axes=(0, 0))
    return out


def derivative4(values: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order first derivative (one-sided fourth order near the ends)."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[2:-2] = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
    out[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * h)
    out[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * h)
    out[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * h)
    out[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * h)
    return out


def slice_forcing(u: Field, p: Potential) -> np.ndarray:
    """f = u_xx - grad V(u)/eps^2 with a fourth-order second derivative: the forcing
    for which the sampled field solves the perturbed stationary equation."""
    g = np.asarray(p.grad(u.values), dtype=float).reshape(u.values.shape)
    return second_derivative4(u.values, u.grid.h) - g / u.eps ** 2


def discrepancy4(u: Field, p: Potential) -> np.ndarray:
    du = derivative4(u.values, u.grid.h)
    V = np.asarray(p.eval(u.values), dtype=float).ravel()
    return 0.5 * u.eps * np.sum(du ** 2, axis=1) - V / u.eps


def grid_l2(f: np.ndarray, grid: Grid1D) -> float:
    f = np.asarray(f, dtype=float).reshape(grid.n, -1)
    return math.sqrt(integrate(np.sum(f ** 2, axis=1), grid))


def solution_residual(u: Field, p: Potential, f: np.ndarray) -> float:
    """max |u_xx - grad V/eps^2 - f| scaled by eps^2."""
    return float(np.max(np.abs(slice_forcing(u, p) - np.asarray(f).reshape(u.values.shape)))) * u.eps ** 2


@dataclass
class DiscrepancyCheck:
    xi_max: float
    f_l2: float
    bound: float
    bound_corrected: float
    passed: bool
    passed_corrected: bool
    residual: float

    def verdict(self, params: dict) -> Verdict:
        return Verdict("discrepancy_bound", params, self.xi_max, self.bound, self.passed,
                       {"bound_corrected": self.bound_corrected,
                        "pass_corrected": self.passed_corrected, "f_l2": self.f_l2,
                        "residual": self.residual})


def discrepancy_bound_check(u: Field, f: np.ndarray, p: Potential, M0: float,
                            rtol: float = 1e-4, slack: float = 1e-9) -> DiscrepancyCheck:
    """max |xi| against sqrt(2) eps M0 |f|_2 and against sqrt(2 eps M0) |f|_2,
    the bound that Cauchy-Schwarz gives from xi' = eps f . u'."""
    E = total_energy(u, p)
    if E > M0 * (1 + 1e-9):
        raise ValueError(f"energy {E:g} exceeds M0={M0:g}")
    res = solution_residual(u, p, f)
    if res > rtol:
        raise NotASolutionError(f"field does not solve the forced equation (scaled residual {res:.3g})")
    xi = discrepancy4(u, p)
    fl2 = grid_l2(f, u.grid)
    lit = math.sqrt(2.0) * u.eps * M0 * fl2
    cor = math.sqrt(2.0 * u.eps * M0) * fl2
    xm = float(np.max(np.abs(xi)))
    return DiscrepancyCheck(xm, fl2, lit, cor, xm <= lit + slack, xm <= cor + slack, res)


# ---------------------------------------------------------------- companions

def companion_C0(M0: float, c0: float) -> float:
    return max(2 * math.sqrt(2) * M0 / c0, 2 * math.sqrt(2) * M0 / math.sqrt(c0) + 0.5)


def companion_length(eps: float, A: float, C0: float, f_l2: float) -> float:
    f_l2 = max(f_l2, np.finfo(float).tiny)
    return eps / A * math.log(1.0 / (C0 * eps ** 1.5 * f_l2))


@dataclass
class Companion:
    profile: StationaryProfile
    x0: float
    b: float
    A: float
    C0: float
    f_l2: float
    a_values: np.ndarray
    distances: np.ndarray
    bounds: np.ndarray

    @property
    def bound_ok(self) -> bool:
        return bool(np.all(self.distances <= self.bounds))


def zero_discrepancy_companion(u: Field, f: np.ndarray, p: Potential, x0: float, M0: float,
                               wc: WellConstants, half_width: Optional[float] = None,
                               n_a: int = 16, c0: Optional[float] = None) -> Companion:
    """Unforced solution through (u(x0), s u_x(x0)), s > 0 chosen so that its
    discrepancy vanishes, integrated on the grid nodes of [x0 - L, x0 + L] with
    L = max(b, half_width); the closeness bound is evaluated for a in (0, b)."""
    x = u.x
    i0 = int(np.argmin(np.abs(x - x0)))
    x0 = float(x[i0])
    fs = front_set(u, wc)
    if not fs.meets(x0, x0):
        raise PreconditionError("x0 is not in the front set")
    eps, h = u.eps, u.grid.h
    ux = derivative4(u.values, h)
    unorm = float(np.max(np.linalg.norm(u.values, axis=1)))
    A = lipschitz_bound(p, unorm + 1.0)
    c0 = offwell_floor(p, wc) if c0 is None else c0
    C0 = companion_C0(M0, c0)
    fl2 = grid_l2(f, u.grid)
    b = companion_length(eps, A, C0, fl2)
    if b <= 0:
        raise PreconditionError(f"perturbation too large: b={b:g}")
    g = ux[i0]
    if eps * np.linalg.norm(g) < math.sqrt(c0):
        raise PreconditionError("eps |u_x(x0)| below sqrt(c0)")
    V0 = float(np.asarray(p.eval(u.values[i0][None, :])).ravel()[0])
    s = math.sqrt(2 * V0) / (eps * np.linalg.norm(g))
    s0 = ODEState(u.values[i0], eps * s * g)
    L = max(b, half_width or 0.0)
    n_side = int(math.ceil(L / h - 1e-9))
    sub = max(1, int(math.ceil(50 * h / eps - 1e-9)))
    right = integrate_ode(s0, p, eps, None, (x0, x0 + n_side * h), n_steps=n_side * sub)
    left = integrate_ode(s0, p, eps, None, (x0, x0 - n_side * h), n_steps=n_side * sub)
    ur = right.u[::sub]
    wr = right.w[::sub]
    ul = left.u[::sub]
    wl = left.w[::sub]
    vals = np.concatenate([ul[::-1], ur[1:]])
    ws = np.concatenate([wl[::-1], wr[1:]])
    grid = Grid1D(x0 - (len(ul) - 1) * h, x0 + (len(ur) - 1) * h, len(vals))
    xi = 0.5 * np.sum(ws ** 2, axis=1) / eps - np.asarray(p.eval(vals)).ravel() / eps
    prof = StationaryProfile(grid, vals, eps, float(np.max(np.abs(xi))), None, ws,
                             {"diverged": bool(right.diverged or left.diverged)})
    # closeness to the slice on [x0 - a, x0 + a] for a in (0, b)
    a_vals = b * np.arange(1, n_a + 1) / (n_a + 1)
    gx = grid.x
    lo = int(np.argmin(np.abs(x - gx[0])))
    ov = slice(lo, lo + len(gx))
    U_u = u.values[ov]
    U_w = eps * ux[ov]
    m = min(len(U_u), len(vals))
    dist = state_distance(U_u[:m], U_w[:m], vals[:m], ws[:m])
    dists, bounds = [], []
    for a in a_vals:
        sel = np.abs(gx[:m] - x0) <= a + 1e-12
        dists.append(float(np.max(dist[sel])) if np.any(sel) else 0.0)
        bounds.append(math.exp(-A * (b - a) / eps))
    return Companion(prof, x0, b, A, C0, fl2, a_vals, np.array(dists), np.array(bounds))


def elliptic_rhs(C1: float, eps: float, f_l2: float, r: float) -> float:
    return C1 * (eps ** 1.5 * f_l2 + eps / r * math.exp(-r / (C1 * eps)))


def _elliptic_lhs(u: Field, p: Potential, x0: float, r: float, wc: WellConstants) -> float:
    if front_set(u, wc).meets(x0 - r, x0 + r):
        raise PreconditionError("front set meets [x0 - r, x0 + r]")
    e = energy_density(u, p).energy
    m = (u.x >= x0 - r / 2 - 1e-12) & (u.x <= x0 + r / 2 + 1e-12)
    return float(np.max(u.eps * e[m])) if np.any(m) else 0.0


def elliptic_offfront_check(u: Field, f: np.ndarray, p: Potential, x0: float, r: float,
                            wc: WellConstants, C1: float) -> Verdict:
    """eps e(u) <= C1 (eps^1.5 |f|_2 + (eps/r) exp(-r/(C1 eps))) on [x0 - r/2, x0 + r/2]."""
    lhs = _elliptic_lhs(u, p, x0, r, wc)
    fl2 = grid_l2(f, u.grid)
    rhs = elliptic_rhs(C1, u.eps, fl2, r)
    return Verdict("elliptic_offfront", {"x0": x0, "r": r, "C1": C1}, lhs, rhs, bool(lhs <= rhs),
                   {"f_l2": fl2})


def calibrate_C1(probes: Sequence[tuple], p: Potential, wc: WellConstants,
                 safety: float = 2.0) -> float:
    """C1 from probes (u, f, x0, r): smallest admissible value times ``safety``."""
    lhs, fns = [], []
    for u, f, x0, r in probes:
        lhs.append(_elliptic_lhs(u, p, x0, r, wc))
        fl2 = grid_l2(f, u.grid)
        fns.append(lambda C, e=u.eps, fl2=fl2, r=r: elliptic_rhs(C, e, fl2, r))
    return calibrate_monotone(lhs, fns, safety=safety)


# ---------------------------------------------------------------- structure

@dataclass
class StructureReport:
    T: Optional[float]
    r: Optional[float]
    delta: Optional[float]
    points: list
    profiles: list
    residuals: dict
    verdicts: dict
    tail_directions: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(self.verdicts) and all(self.verdicts.values())

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, (float, np.floating)):
                v = float(v)
                return v if math.isfinite(v) else "inf"
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, np.ndarray):
                return clean(v.tolist())
            return v
        return clean({"T": self.T, "r": self.r, "delta": self.delta, "points": self.points,
                      "n_profiles": len(self.profiles), "residuals": self.residuals,
                      "verdicts": self.verdicts, "tail_directions": self.tail_directions,
                      "meta": self.meta})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "structure.json").write_text(self.to_json() + "\n")
        for j, prof in enumerate(self.profiles):
            prof.to_csv(d / f"profile_{j:02d}.csv")


def _dissipation_slices(tr: Trajectory) -> np.ndarray:
    """eps int |v_t|^2 dx at every snapshot."""
    return np.array([tr.eps * integrate(np.sum(tr.rates[i] ** 2, axis=1), tr.grid)
                     for i in range(len(tr))])


def extract_structure(tr: Trajectory, R: float, wc: WellConstants, c: Constants,
                      tol: float = 1e-3, xi_tol: float = 1e-6) -> StructureReport:
    """Locate the glued-front structure of a relaxed time slice.

    T is the first snapshot whose dissipation slice meets the averaging bound
    K0^2 M0 R^-2 exp(-R/(K0 eps)); a vacuous bound (K0 = inf) selects the first
    snapshot.  The front set at T gets the finest kappa = 1/4 covering at scale
    at least delta = max((R/K2) 2^(-4 M0/eta0), just above 8 eps); r is its
    scale, and each centre is moved to the node of largest distance from the
    wells inside its ball.  For each centre the zero-discrepancy companion is
    integrated on [a_j - r, a_j + r].
    """
    if c.K2 is None:
        raise ValueError("K2 is not set")
    eps = tr.eps
    p = tr.potential
    kappa = 0.25
    slices = _dissipation_slices(tr)
    K0 = c.K0
    if math.isfinite(K0):
        thr = K0 ** 2 * c.M0 / R ** 2 * math.exp(-R / (K0 * eps))
        ok = np.flatnonzero(slices <= thr)
        if ok.size == 0:
            return StructureReport(None, None, None, [], [], {}, {"admissible_T": False},
                                   meta={"threshold": thr})
        iT = int(ok[0])
    else:
        thr = math.inf
        iT = 0
    u = tr.snapshot(iT)
    T = float(tr.times[iT])
    fs = front_set(u, wc)
    delta = max(R / c.K2 * 2.0 ** (-4 * c.ratio), 2 * eps / kappa * (1 + 1e-9))
    pts = cover_by_unit_balls(fs, eps, c.M0, c.eta0)
    if pts:
        cov = finest_covering(fs.intervals, pts, delta, kappa)
        if cov is None:
            raise RuntimeError("no kappa-confined covering of the front set")
    else:
        cov = Covering((), delta, kappa)
    r = cov.rho
    x = u.x
    dist = wc.dist_to_wells(u.values)
    anchors = []
    for a in cov.points:
        m = np.abs(x - a) <= kappa * r + 1e-12
        idx = np.flatnonzero(m)
        anchors.append(float(x[idx[np.argmax(dist[idx])]]))
    f = slice_forcing(u, p)
    res: dict = {"item6": [], "companion_bound_ok": [], "xi": [], "b": []}
    profiles, tails = [], []
    fs0 = front_set_at(tr, 0, wc)
    for a in anchors:
        comp = zero_discrepancy_companion(u, f, p, a, c.M0, wc, half_width=r)
        prof = comp.profile
        profiles.append(prof)
        sel = (x >= a - r - 1e-12) & (x <= a + r + 1e-12)
        gx = prof.grid.x
        V_on = prof.values[(gx >= a - r - 1e-12) & (gx <= a + r + 1e-12)]
        v_on = u.values[sel]
        m = min(len(V_on), len(v_on))
        diff = v_on[:m] - V_on[:m]
        ddiff = derivative(diff, u.grid.h)
        res["item6"].append(float(np.max(np.linalg.norm(diff, axis=1))
                                  + eps * np.max(np.linalg.norm(ddiff, axis=1))))
        res["companion_bound_ok"].append(comp.bound_ok)
        res["xi"].append(prof.discrepancy_max)
        res["b"].append(comp.b)
        tails.append([None if t is None else t.tolist() for t in prof.tail_directions(p)])
    # off-front closeness
    far = np.ones(len(x), dtype=bool)
    for a in anchors:
        far &= np.abs(x - a) >= r
    du = derivative(u.values, u.grid.h)
    wells_far = p.nearest_well(u.values[far]) if np.any(far) else np.array([], dtype=int)
    dev = (np.linalg.norm(u.values[far] - p.minimizers[wells_far], axis=1)
           + eps * np.linalg.norm(du[far], axis=1)) if np.any(far) else np.zeros(0)
    res["item7"] = float(np.max(dev)) if dev.size else 0.0
    res["item7_wells"] = sorted(set(int(w) for w in wells_far))
    d0 = [min((max(lo - a, a - hi, 0.0) for lo, hi in fs0.intervals), default=math.inf)
          for a in anchors]
    seps = np.diff(sorted(anchors)) if len(anchors) > 1 else np.array([])
    bracket = (R / c.K2 * 2.0 ** (-4 * c.ratio), R / c.K2)
    verdicts = {
        "item1_count": len(anchors) <= c.ratio,
        "item2_in_front_set": all(fs.meets(a, a) for a in anchors),
        "item3_near_initial_front_set": all(d <= R for d in d0),
        "item4_separated": bool(np.all(seps > 4 * r)) if seps.size else True,
        "item5_zero_discrepancy": all(xv <= xi_tol for xv in res["xi"]),
        "item6_close": all(v <= tol for v in res["item6"]),
        "item7_offfront": res["item7"] <= tol,
        "r_in_bracket": bool(bracket[0] <= r <= bracket[1] * (1 + 1e-12)) if anchors else True,
    }
    res["dist_to_initial_front_set"] = d0
    res["pairwise_min"] = float(np.min(seps)) if seps.size else None
    return StructureReport(T, r, delta, anchors, profiles, res, verdicts, tails,
                           {"threshold": thr, "dissipation_slice": float(slices[iT]),
                            "r_bracket": list(bracket), "covering_points": list(cov.points)})
