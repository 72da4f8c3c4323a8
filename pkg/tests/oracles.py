"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import numpy as np


def covering_ok_points(S, J, rho, kappa, tol=1e-9) -> bool:
    """Exact validity of (J, rho, kappa) for a finite target S by direct enumeration."""
    S = np.asarray(S, dtype=float)
    J = np.asarray(J, dtype=float)
    if len(J) == 0:
        return len(S) == 0
    r = kappa * rho
    d = np.abs(S[:, None] - J[None, :])
    covers = np.all(d.min(axis=1) <= r * (1 + tol))
    meets = np.all(d.min(axis=0) <= r * (1 + tol))
    if len(J) > 1:
        dj = np.abs(J[:, None] - J[None, :]) + np.diag(np.full(len(J), np.inf))
        sep = dj.min() >= rho / kappa * (1 - tol)
    else:
        sep = True
    return bool(covers and meets and sep)


def covering_ok_intervals(intervals, J, rho, kappa, n=4001, tol=1e-9) -> bool:
    """Validity for a union of intervals by dense sampling plus all endpoints."""
    pts = [np.linspace(a, b, n) for a, b in intervals]
    S = np.concatenate(pts) if pts else np.array([])
    J = np.asarray(J, dtype=float)
    if len(J) == 0:
        return len(S) == 0
    r = kappa * rho
    if np.any(np.abs(S[:, None] - J[None, :]).min(axis=1) > r * (1 + tol)):
        return False
    for a in J:
        if not any(lo - r * (1 + tol) <= a <= hi + r * (1 + tol) for lo, hi in intervals):
            return False
    if len(J) > 1 and np.min(np.diff(np.sort(J))) < rho / kappa * (1 - tol):
        return False
    return True


def brute_force_n(S, delta, kappa, rho_max):
    """Minimal number of centres (subsets of S) of a valid covering with rho in
    [delta, rho_max], by bitmask enumeration; returns (n, rho) or (None, None)."""
    S = np.sort(np.asarray(S, dtype=float))
    l = len(S)
    D = np.abs(S[:, None] - S[None, :])
    masks = ((np.arange(1, 2 ** l)[:, None] >> np.arange(l)[None, :]) & 1).astype(bool)
    big = np.inf
    rad = np.where(masks[:, None, :], D[None], big).min(axis=2).max(axis=1)
    pair = masks[:, :, None] & masks[:, None, :] & ~np.eye(l, dtype=bool)[None]
    sep = np.where(pair, D[None], big).min(axis=(1, 2))
    lo = np.maximum(delta, rad / kappa)
    hi = np.minimum(rho_max, kappa * sep)
    ok = lo <= hi * (1 + 1e-12)
    if not ok.any():
        return None, None
    sizes = masks.sum(axis=1)
    best = sizes[ok].min()
    sel = ok & (sizes == best)
    return int(best), float(lo[sel].min())


def ladder_n(S, delta, kappa, m_max):
    """Minimal count restricted to the ladder rho = delta (kappa/2)^(-2m), m <= m_max."""
    S = np.sort(np.asarray(S, dtype=float))
    l = len(S)
    masks = ((np.arange(1, 2 ** l)[:, None] >> np.arange(l)[None, :]) & 1).astype(bool)
    best = None
    for m in range(m_max + 1):
        rho = delta * (kappa / 2) ** (-2 * m)
        for mk in masks:
            if best is not None and mk.sum() >= best:
                continue
            if covering_ok_points(S, S[mk], rho, kappa):
                best = int(mk.sum())
    return best


def synthetic_trajectory(grid, eps, potential, wc, times, values, dissipation=None):
    """Trajectory assembled from prescribed snapshots, bypassing the solver."""
    from slowfront.evolve import Integrator, Trajectory, pde_rate
    from slowfront.grid import Field, energy_density, integrate

    times = np.asarray(times, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 2:
        vals = vals[..., None]
    m, n, _ = vals.shape
    fields = [Field(grid, eps, vals[i], float(times[i])) for i in range(m)]
    energies = np.array([integrate(energy_density(f, potential).energy, grid) for f in fields])
    rates = np.array([pde_rate(f, potential) for f in fields])
    diss = np.zeros(m) if dissipation is None else np.asarray(dissipation, dtype=float)
    return Trajectory(grid, eps, potential, Integrator.for_field(fields[0], wc), times, vals,
                      energies, diss, np.zeros((m, n)), np.zeros((m, n)), rates, {})
