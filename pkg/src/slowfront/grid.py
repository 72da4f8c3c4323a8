"""Uniform 1D grids, fields, energy and discrepancy densities, and test functions."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import PPoly, make_interp_spline
from scipy.optimize import minimize_scalar

from .potential import Potential


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("a grid needs at least 3 nodes")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    @classmethod
    def around(cls, lo: float, hi: float, h: float) -> "Grid1D":
        """Grid on [lo, hi] whose spacing is the largest value not exceeding ``h``."""
        n = int(np.ceil((hi - lo) / h - 1e-9)) + 1
        return cls(float(lo), float(hi), max(n, 3))

    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights."""
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


@dataclass(frozen=True)
class Field:
    grid: Grid1D
    eps: float
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n:
            raise ValueError(f"values have {v.shape[0]} nodes, grid has {self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def with_values(self, values: np.ndarray, time: float | None = None) -> "Field":
        return Field(self.grid, self.eps, values, self.time if time is None else time)


@dataclass(frozen=True)
class DensityProfile:
    grid: Grid1D
    energy: np.ndarray
    discrepancy: np.ndarray


def derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Second-order central differences, second-order one-sided at the endpoints."""
    return np.gradient(values, h, axis=0, edge_order=2)


def energy_density(u: Field, p: Potential) -> DensityProfile:
    du = derivative(u.values, u.grid.h)
    kin = 0.5 * u.eps * np.sum(du * du, axis=1)
    pot = np.asarray(p.eval(u.values), dtype=float) / u.eps
    return DensityProfile(u.grid, kin + pot, kin - pot)


def integrate(values: np.ndarray, grid: Grid1D) -> float:
    return float(np.trapezoid(values, dx=grid.h))


def total_energy(u: Field, p: Potential) -> float:
    return integrate(energy_density(u, p).energy, u.grid)


def localized_energy(u: Field, p: Potential, chi: "TestFunction") -> float:
    e = energy_density(u, p).energy
    return integrate(chi.eval(u.x) * e, u.grid)


def energy_on_interval(u: Field, p: Potential, lo: float, hi: float) -> float:
    """Integral of the energy density over [lo, hi] (trapezoid with linear end corrections)."""
    e = energy_density(u, p).energy
    return integral_on_interval(u.x, e, lo, hi)


def integral_on_interval(x: np.ndarray, f: np.ndarray, lo: float, hi: float) -> float:
    lo = max(lo, x[0])
    hi = min(hi, x[-1])
    if hi <= lo:
        return 0.0
    inner = (x > lo) & (x < hi)
    xs = np.concatenate([[lo], x[inner], [hi]])
    fs = np.concatenate([[np.interp(lo, x, f)], f[inner], [np.interp(hi, x, f)]])
    return float(np.trapezoid(fs, xs))


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class TestFunction:
    eval: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    support: tuple
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def sup_norms(self, n: int = 20001) -> tuple:
        lo, hi = self.support
        x = np.linspace(lo, hi, n)
        return (float(np.max(np.abs(self.eval(x)))), float(np.max(np.abs(self.d1(x)))),
                float(np.max(np.abs(self.d2(x)))))


def _trapezoid_bump(lo: float, hi: float, ramp: float) -> PPoly:
    r = ramp * (hi - lo)
    knots = np.array([0.0, lo, lo + r, hi - r, hi, 1.0])
    vals = np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0])
    keep = np.concatenate([[True], np.diff(knots) > 0])
    return PPoly.from_spline(make_interp_spline(knots[keep], vals[keep], k=1))


def _transition_coeffs(v0: float, s0: float, tau: float, ramp: float):
    b1 = _trapezoid_bump(0.0, tau, ramp)
    b2 = _trapezoid_bump(tau, 1.0, ramp)
    rows = []
    for b in (b1, b2):
        first = b.antiderivative(1)
        second = b.antiderivative(2)
        # integral of (1 - s) g(s) over [0, 1] equals the double antiderivative at 1
        rows.append((first(1.0) - first(0.0), second(1.0) - second(0.0) - first(0.0)))
    M = np.array([[rows[0][0], rows[1][0]], [rows[0][1], rows[1][1]]])
    c = np.linalg.solve(M, [-s0, -v0 - s0])
    return c, b1, b2


@lru_cache(maxsize=None)
def _transition(v0: float, s0: float, ramp: float = 0.1):
    """C^2 piecewise cubic p on [0, 1] with p(0)=v0, p'(0)=s0, p''(0)=0 and
    p(1)=p'(1)=p''(1)=0.  p'' is piecewise linear (two trapezoids of opposite sign);
    the split point is chosen to minimise max|p''|."""
    if s0 == 0.0:
        tau = 0.5
    else:
        res = minimize_scalar(lambda t: np.max(np.abs(_transition_coeffs(v0, s0, t, ramp)[0])),
                              bounds=(0.2, 0.8), method="bounded", options={"xatol": 1e-6})
        tau = float(res.x)
    c, b1, b2 = _transition_coeffs(v0, s0, tau, ramp)
    d2 = PPoly(c[0] * b1.c + c[1] * b2.c, b1.x) if np.array_equal(b1.x, b2.x) else None
    if d2 is None:
        xs = np.union1d(b1.x, b2.x)
        vals = c[0] * b1(xs) + c[1] * b2(xs)
        d2 = PPoly.from_spline(make_interp_spline(xs, vals, k=1))
    d1 = d2.antiderivative(1)
    d1.c[-1] += s0 - d1(0.0)
    p = d1.antiderivative(1)
    p.c[-1] += v0 - p(0.0)
    return p, d1, d2, float(np.max(np.abs(c)))


def _symmetric_cutoff(center: float, inner: float, outer: float, odd: bool, core_val, core_d1,
                      v0: float, s0: float) -> tuple:
    L = outer - inner
    p, dp, ddp, _ = _transition(float(v0), float(s0))

    def parts(x):
        x = np.asarray(x, dtype=float)
        t = x - center
        a = np.abs(t)
        sgn = np.where(t < 0, -1.0, 1.0)
        s = np.clip((a - inner) / L, 0.0, 1.0)
        core = a <= inner
        trans = (a > inner) & (a < outer)
        return x, t, sgn, s, core, trans

    def ev(x):
        x, t, sgn, s, core, trans = parts(x)
        out = np.zeros_like(x)
        out[core] = core_val(t[core])
        tv = p(s[trans])
        out[trans] = sgn[trans] * tv if odd else tv
        return out

    def d1(x):
        x, t, sgn, s, core, trans = parts(x)
        out = np.zeros_like(x)
        out[core] = core_d1(t[core])
        tv = dp(s[trans]) / L
        out[trans] = tv if odd else sgn[trans] * tv
        return out

    def d2(x):
        x, t, sgn, s, core, trans = parts(x)
        out = np.zeros_like(x)
        tv = ddp(s[trans]) / L ** 2
        out[trans] = sgn[trans] * tv if odd else tv
        return out

    return ev, d1, d2


def plateau(center: float, rho: float) -> TestFunction:
    """Equal to 1 on [center - 4rho/3, center + 4rho/3], supported in [center - 2rho, center + 2rho]."""
    inner, outer = 4.0 * rho / 3.0, 2.0 * rho
    ev, d1, d2 = _symmetric_cutoff(center, inner, outer, False,
                                   lambda t: np.ones_like(t), lambda t: np.zeros_like(t), 1.0, 0.0)
    return TestFunction(ev, d1, d2, (center - outer, center + outer), "plateau",
                        {"center": center, "rho": rho})


def affine_core(center: float, rho: float) -> TestFunction:
    """Equal to y - center on [center - 4rho/3, center + 4rho/3], supported in
    [center - 2rho, center + 2rho], with |chi| <= 2rho and |chi''| <= 24/rho."""
    inner, outer = 4.0 * rho / 3.0, 2.0 * rho
    L = outer - inner
    # transition in units of rho: value 4/3, slope (per unit s) L/rho = 2/3
    p_scale = rho
    ev0, d10, d20 = _symmetric_cutoff(0.0, inner / rho, outer / rho, True,
                                      lambda t: t, lambda t: np.ones_like(t),
                                      inner / rho, L / rho)

    def ev(x):
        return p_scale * ev0((np.asarray(x, dtype=float) - center) / rho)

    def d1(x):
        return d10((np.asarray(x, dtype=float) - center) / rho)

    def d2(x):
        return d20((np.asarray(x, dtype=float) - center) / rho) / rho

    return TestFunction(ev, d1, d2, (center - outer, center + outer), "affine_core",
                        {"center": center, "rho": rho})


def zero_test_function() -> TestFunction:
    z = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return TestFunction(z, z, z, (0.0, 0.0), "zero")


def constant_test_function(lo: float, hi: float) -> TestFunction:
    """Indicator of [lo, hi]; meant for data whose energy vanishes near lo and hi."""
    def ev(x):
        x = np.asarray(x, dtype=float)
        return ((x >= lo) & (x <= hi)).astype(float)

    z = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return TestFunction(ev, z, z, (lo, hi), "constant", {"lo": lo, "hi": hi})


# ---------------------------------------------------------------- serialization

def _fmt(v: float) -> str:
    return repr(float(v))


def write_field_csv(u: Field, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x"] + [f"u_{j + 1}" for j in range(u.k)])
        for xi, row in zip(u.x, u.values):
            w.writerow([_fmt(xi)] + [_fmt(v) for v in row])


def read_field_csv(path, eps: float, time: float = 0.0) -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x = data[:, 0]
    grid = Grid1D(float(x[0]), float(x[-1]), len(x))
    if np.max(np.abs(grid.x - x)) > 1e-9 * max(1.0, np.max(np.abs(x))):
        raise ValueError(f"{path}: grid is not uniform")
    return Field(grid, eps, data[:, 1:], time)


def write_density_csv(d: DensityProfile, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "e", "xi"])
        for xi, e, s in zip(d.grid.x, d.energy, d.discrepancy):
            w.writerow([_fmt(xi), _fmt(e), _fmt(s)])


def read_density_csv(path) -> DensityProfile:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x = data[:, 0]
    return DensityProfile(Grid1D(float(x[0]), float(x[-1]), len(x)), data[:, 1], data[:, 2])
