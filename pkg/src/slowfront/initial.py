"""Named initial data: kinks, kink-antikink pairs, multi-front chains, noisy wells."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .grid import Field, Grid1D

SQRT2 = np.sqrt(2.0)


def kink_profile(x: np.ndarray, eps: float, center: float = 0.0, lo: float = -1.0,
                 hi: float = 1.0) -> np.ndarray:
    """tanh front from ``lo`` (left) to ``hi`` (right), width ``sqrt(2) eps``."""
    t = np.tanh((np.asarray(x) - center) / (SQRT2 * eps))
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * t


def domain_for(positions: Sequence[float], eps: float, h: float, pad: float = 20.0) -> Grid1D:
    """Grid covering all front positions with ``pad * eps`` on both sides."""
    lo = min(positions) - pad * eps
    hi = max(positions) + pad * eps
    return Grid1D.around(lo, hi, h)


def multi_front(grid: Grid1D, eps: float, positions: Sequence[float], left: float = -1.0,
                right_of: float = 1.0) -> Field:
    """Alternating chain of fronts between the wells ``left`` and ``right_of``,
    glued as a product of tanh profiles (centered at zero mid-level)."""
    x = grid.x
    mid = 0.5 * (left + right_of)
    half = 0.5 * (right_of - left)
    sgn = -1.0 if left < right_of else 1.0
    return Field(grid, eps, mid + half * _chain(x, eps, positions, sgn))


def _chain(x, eps, positions, sgn):
    out = np.full_like(x, sgn, dtype=float)
    for c in sorted(positions):
        out = out * (-np.tanh((x - c) / (SQRT2 * eps)))
    # far left: each factor -> +1, so out -> sgn; crossing a front flips the sign
    return out


def kink(grid: Grid1D, eps: float, center: float = 0.0) -> Field:
    return Field(grid, eps, kink_profile(grid.x, eps, center))


def kink_antikink(grid: Grid1D, eps: float, separation: float, center: float = 0.0) -> Field:
    """Kink at ``center - d/2`` and antikink at ``center + d/2``, wells -1 outside."""
    return multi_front(grid, eps, [center - separation / 2, center + separation / 2])


def pair_setup(eps: float, separation: float, h: float, pad: float = 20.0) -> Field:
    grid = domain_for([-separation / 2, separation / 2], eps, h, pad)
    return kink_antikink(grid, eps, separation)


def kink_setup(eps: float, h: float, pad: float = 20.0) -> Field:
    return kink(domain_for([0.0], eps, h, pad), eps)


def smooth_noise(grid: Grid1D, rng: np.random.Generator, n_modes: int = 8,
                 min_wavelength: float | None = None) -> np.ndarray:
    """Random trigonometric sum vanishing at both endpoints, max-normalised to 1."""
    L = grid.x_max - grid.x_min
    s = (grid.x - grid.x_min) / L
    modes = np.arange(1, n_modes + 1)
    if min_wavelength is not None:
        modes = modes[2.0 * L / modes >= min_wavelength]
        if modes.size == 0:
            modes = np.array([1])
    amp = rng.normal(size=modes.size) / modes
    out = np.sin(np.pi * np.outer(s, modes)) @ amp
    m = np.max(np.abs(out))
    return out / m if m > 0 else out


def noisy_well(grid: Grid1D, eps: float, well: np.ndarray, amplitude: float, seed: int,
               n_modes: int = 8) -> Field:
    """Minimizer plus a smooth perturbation of the given sup-norm (each component)."""
    rng = np.random.default_rng(seed)
    well = np.atleast_1d(np.asarray(well, dtype=float))
    vals = np.empty((grid.n, well.size))
    for j in range(well.size):
        vals[:, j] = well[j] + amplitude * smooth_noise(grid, rng, n_modes)
    return Field(grid, eps, vals)
