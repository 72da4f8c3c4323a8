"""Front sets, the clearing-out test, and kappa-confined coverings on the line.

A covering (J, rho, kappa) of a target set S is valid when
(i) S lies in the union of the closed balls B(a, kappa*rho), a in J, and each
    ball meets S, and
(ii) distinct centres are at least rho/kappa apart.
Targets are finite unions of closed intervals (points are degenerate intervals).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .grid import Field, energy_on_interval
from .potential import Potential, WellConstants

REL_TOL = 1e-12


class ClearingOutViolation(AssertionError):
    """Low localized energy on an interval that nevertheless meets the front set."""


class CoveringError(RuntimeError):
    pass


@dataclass(frozen=True)
class FrontSet:
    intervals: tuple
    mu0: float

    @property
    def points(self) -> list:
        return [0.5 * (a + b) for a, b in self.intervals]

    @property
    def empty(self) -> bool:
        return len(self.intervals) == 0

    def meets(self, lo: float, hi: float) -> bool:
        return any(a <= hi and b >= lo for a, b in self.intervals)

    def width(self) -> float:
        return sum(b - a for a, b in self.intervals)


def _runs(mask: np.ndarray):
    idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(np.int8), [0]])))
    return idx[0::2], idx[1::2] - 1


def front_set_arrays(x: np.ndarray, dist: np.ndarray, mu0: float) -> FrontSet:
    g = dist - mu0
    mask = g >= 0
    starts, ends = _runs(mask)
    out = []
    for i, j in zip(starts, ends):
        lo = x[i] if i == 0 else x[i - 1] + (x[i] - x[i - 1]) * (-g[i - 1]) / (g[i] - g[i - 1])
        hi = x[j] if j == len(x) - 1 else x[j] + (x[j + 1] - x[j]) * g[j] / (g[j] - g[j + 1])
        out.append((float(lo), float(hi)))
    return FrontSet(tuple(out), mu0)


def front_set(u: Field, wc: WellConstants) -> FrontSet:
    """Region where the field stays at distance >= mu0 from every well; interval
    endpoints are refined by linear interpolation of dist(u, wells) - mu0."""
    return front_set_arrays(u.x, wc.dist_to_wells(u.values), wc.mu0)


def crossings(u: Field, level: float = 0.0, component: int = 0) -> np.ndarray:
    """Linearly interpolated positions where ``u_component - level`` changes sign."""
    v = u.values[:, component] - level
    x = u.x
    s = np.sign(v)
    idx = np.flatnonzero(s[:-1] * s[1:] < 0)
    pts = x[idx] + (x[idx + 1] - x[idx]) * v[idx] / (v[idx] - v[idx + 1])
    exact = x[1:-1][v[1:-1] == 0]
    return np.sort(np.concatenate([pts, exact]))


def clearing_out(u: Field, interval, wc: WellConstants, p: Potential) -> bool:
    """True iff the energy on the interval is at most eta0; in that case the
    front set must avoid the interval (raises ClearingOutViolation otherwise)."""
    lo, hi = interval
    if hi - lo < u.eps * (1 - 1e-12):
        raise ValueError(f"interval length {hi - lo:g} is shorter than eps={u.eps:g}")
    if energy_on_interval(u, p, lo, hi) > wc.eta0:
        return False
    fs = front_set(u, wc)
    if fs.meets(lo, hi):
        raise ClearingOutViolation(f"front set meets [{lo:g}, {hi:g}] although its energy is <= eta0")
    return True


def cover_by_unit_balls(fs: FrontSet, eps: float, M0: float, eta0: float) -> list:
    """Greedy sweep: points of the front set whose eps-balls cover it."""
    ivs = sorted(fs.intervals)
    pts = []
    if not ivs:
        return pts
    k = 0
    p = ivs[0][0]
    while True:
        target = p + eps
        while k + 1 < len(ivs) and ivs[k + 1][0] <= target:
            k += 1
        x = min(ivs[k][1], target)
        pts.append(float(x))
        reach = x + eps
        while k < len(ivs) and ivs[k][1] <= reach:
            k += 1
        if k == len(ivs):
            break
        p = max(ivs[k][0], reach)
    if len(pts) > M0 / eta0 * (1 + 1e-12):
        raise CoveringError(f"{len(pts)} unit balls exceed the bound M0/eta0 = {M0 / eta0:g}")
    return pts


@dataclass(frozen=True)
class Covering:
    points: tuple
    rho: float
    kappa: float

    def to_json(self) -> str:
        return json.dumps({"points": list(self.points), "rho": self.rho, "kappa": self.kappa},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Covering":
        d = json.loads(text)
        return cls(tuple(float(v) for v in d["points"]), float(d["rho"]), float(d["kappa"]))

    @property
    def radius(self) -> float:
        return self.kappa * self.rho

    def contains(self, y: float, slack: float = 0.0) -> bool:
        r = self.radius * (1 + REL_TOL) + slack
        return any(abs(y - a) <= r for a in self.points)


def _as_intervals(target) -> list:
    out = []
    for t in target:
        if np.ndim(t) == 0:
            out.append((float(t), float(t)))
        else:
            out.append((float(t[0]), float(t[1])))
    return sorted(out)


def cover_radius(centers: Sequence[float], target) -> float:
    """sup over the target of the distance to the nearest centre."""
    ivs = _as_intervals(target)
    if not ivs:
        return 0.0
    c = np.sort(np.asarray(centers, dtype=float))
    cand = [a for a, _ in ivs] + [b for _, b in ivs]
    mids = 0.5 * (c[1:] + c[:-1])
    for a, b in ivs:
        cand.extend(mids[(mids > a) & (mids < b)].tolist())
    cand = np.asarray(cand)
    return float(np.max(np.min(np.abs(cand[:, None] - c[None, :]), axis=1)))


def covering_verdict(cov: Covering, target) -> dict:
    """Check both covering conditions against a union of intervals."""
    ivs = _as_intervals(target)
    pts = np.sort(np.asarray(cov.points, dtype=float))
    r = cov.radius
    if not ivs:
        return {"covers": True, "balls_meet": len(pts) == 0, "separated": True,
                "valid": len(pts) == 0}
    if len(pts) == 0:
        return {"covers": False, "balls_meet": True, "separated": True, "valid": False}
    covers = cover_radius(pts, ivs) <= r * (1 + REL_TOL) + REL_TOL
    meets = all(any(a - r * (1 + REL_TOL) <= c <= b + r * (1 + REL_TOL) for a, b in ivs) for c in pts)
    sep = bool(np.all(np.diff(pts) >= cov.rho / cov.kappa * (1 - REL_TOL))) if len(pts) > 1 else True
    return {"covers": bool(covers), "balls_meet": bool(meets), "separated": sep,
            "valid": bool(covers and meets and sep)}


def confine(S: Iterable[float], delta: float, kappa: float, rule: str = "radius") -> Covering:
    """Merge iteration producing a kappa-confined covering of the finite set S.

    Start with J = S and rho = delta.  While the leftmost adjacent pair of
    centres is closer than rho/kappa, merge the two clusters and multiply rho
    by kappa^-2.  With ``rule="radius"`` the surviving centre is the member of the
    merged cluster that minimises the cluster radius (ties keep the rightmost,
    so two-point merges agree with the verbatim rule); ``rule="drop_left"``
    always keeps the right centre of the pair.  After the separation loop any
    cluster wider than kappa*rho is merged with its nearest neighbour, so the
    number of merges (and hence the bound rho <= kappa^(-2(l-1)) delta) is unchanged.
    """
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    if not delta > 0:
        raise ValueError("delta must be positive")
    pts = sorted(set(float(s) for s in S))
    if not pts:
        raise ValueError("S must be nonempty")
    clusters = [[p] for p in pts]
    centers = list(pts)
    rho = delta

    def merge(i: int):
        nonlocal rho
        members = sorted(clusters[i] + clusters[i + 1])
        if rule == "drop_left":
            c = centers[i + 1]
        else:
            m = np.asarray(members)
            rad = np.max(np.abs(m[:, None] - m[None, :]), axis=1)
            c = float(m[len(m) - 1 - int(np.argmin(rad[::-1]))])
        clusters[i:i + 2] = [members]
        centers[i:i + 2] = [c]
        rho = rho / kappa ** 2

    while True:
        gaps = np.diff(centers)
        bad = np.flatnonzero(gaps < rho / kappa * (1 - REL_TOL))
        if bad.size:
            merge(int(bad[0]))
            continue
        if rule == "drop_left":
            break
        wide = [i for i, (c, m) in enumerate(zip(centers, clusters))
                if max(abs(y - c) for y in m) > kappa * rho * (1 + REL_TOL)]
        if not wide or len(centers) == 1:
            break
        i = wide[0]
        if i == 0:
            merge(0)
        elif i == len(centers) - 1:
            merge(i - 1)
        else:
            merge(i - 1 if centers[i] - centers[i - 1] <= centers[i + 1] - centers[i] else i)
    return Covering(tuple(centers), float(rho), float(kappa))


def confined_cover_front_set(u: Field, wc: WellConstants, delta: float, kappa: float,
                             eps: float, M0: float) -> Covering:
    """Unit-ball cover of the front set followed by confinement at rate kappa/2."""
    if not kappa * delta > 2 * eps:
        raise ValueError(f"need kappa*delta > 2 eps (kappa*delta={kappa * delta:g}, eps={eps:g})")
    fs = front_set(u, wc)
    pts = cover_by_unit_balls(fs, eps, M0, wc.eta0)
    if not pts:
        return Covering((), float(delta), float(kappa))
    inner = confine(pts, delta, kappa / 2)
    cov = Covering(inner.points, inner.rho, float(kappa))
    verdict = covering_verdict(cov, fs.intervals)
    if not verdict["valid"]:
        raise CoveringError(f"front-set covering failed validation: {verdict}")
    return cov


def min_covering(target, candidates: Sequence[float], delta: float, kappa: float,
                 rho_max: float = np.inf, max_points: int = 12) -> Optional[Covering]:
    """Smallest valid covering (J, rho) with J a subset of ``candidates`` and
    rho in [delta, rho_max].  For a fixed J the admissible rho form the interval
    [max(delta, R(J)/kappa), min(rho_max, kappa * minsep(J))], R(J) the cover radius,
    so the search over rho is exact.  Among minimal J the smallest rho is returned."""
    ivs = _as_intervals(target)
    if not ivs:
        return Covering((), float(delta), float(kappa))
    cand = sorted(set(float(c) for c in candidates))
    if len(cand) > max_points:
        raise CoveringError(f"{len(cand)} candidate points exceed the exhaustive-search limit {max_points}")
    for size in range(1, len(cand) + 1):
        best = None
        for J in combinations(cand, size):
            r = cover_radius(J, ivs)
            lo = max(delta, r / kappa)
            sep = np.min(np.diff(J)) if size > 1 else np.inf
            hi = min(rho_max, kappa * sep)
            if lo <= hi * (1 + REL_TOL):
                r_ok = all(any(a - kappa * lo * (1 + REL_TOL) <= c <= b + kappa * lo * (1 + REL_TOL)
                               for a, b in ivs) for c in J)
                if r_ok and (best is None or lo < best.rho):
                    best = Covering(tuple(J), float(lo), float(kappa))
        if best is not None:
            return best
    return None


def finest_covering(target, candidates: Sequence[float], delta: float, kappa: float,
                    max_points: int = 12) -> Optional[Covering]:
    """Valid covering with the smallest scale rho >= delta, centres drawn from
    ``candidates`` (ties broken by fewer centres, then lexicographically)."""
    ivs = _as_intervals(target)
    if not ivs:
        return Covering((), float(delta), float(kappa))
    cand = sorted(set(float(c) for c in candidates))
    if len(cand) > max_points:
        raise CoveringError(f"{len(cand)} candidate points exceed the exhaustive-search limit {max_points}")
    best = None
    for size in range(1, len(cand) + 1):
        for J in combinations(cand, size):
            lo = max(delta, cover_radius(J, ivs) / kappa)
            sep = np.min(np.diff(J)) if size > 1 else np.inf
            if lo > kappa * sep * (1 + REL_TOL):
                continue
            if best is None or lo < best.rho * (1 - REL_TOL):
                best = Covering(tuple(J), float(lo), float(kappa))
    return best


def front_rho_max(delta: float, kappa: float, M0: float, eta0: float) -> float:
    """delta (kappa/2)^(-2 M0/eta0), inf on overflow."""
    with np.errstate(over="ignore"):
        v = delta * np.exp(-2.0 * M0 / eta0 * np.log(kappa / 2))
    return float(v)


def optimal_front_covering(u: Field, wc: WellConstants, delta: float, kappa: float, eps: float,
                           M0: float, max_points: int = 12) -> Optional[Covering]:
    if not kappa * delta > 2 * eps:
        raise ValueError(f"need kappa*delta > 2 eps (kappa*delta={kappa * delta:g}, eps={eps:g})")
    fs = front_set(u, wc)
    pts = cover_by_unit_balls(fs, eps, M0, wc.eta0)
    return min_covering(fs.intervals, pts, delta, kappa, front_rho_max(delta, kappa, M0, wc.eta0),
                        max_points)


def n_opt(u: Field, wc: WellConstants, delta: float, kappa: float, eps: float, M0: float) -> int:
    """Minimal number of centres of a kappa-confined covering of the front set,
    centres drawn from the unit-ball points and rho in [delta, (kappa/2)^(-2M0/eta0) delta]."""
    cov = optimal_front_covering(u, wc, delta, kappa, eps, M0)
    if cov is None:
        raise CoveringError("no admissible covering exists")
    return len(cov.points)


def save_covering(cov: Covering, path) -> None:
    Path(path).write_text(cov.to_json() + "\n")
