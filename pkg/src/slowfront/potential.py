"""Multi-well potentials and the structural constants derived from them.

A potential is registered with an explicit list of minimizers; registration
verifies them (zero value, zero gradient, positive definite Hessian) and
checks the gradient against central finite differences of the value.
Array conventions: points are arrays with trailing axis of length ``dim_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

REG_TOL = 1e-10
FD_TOL = 1e-5


class PotentialError(ValueError):
    """Raised when a potential fails its registration checks."""


@dataclass(frozen=True)
class Potential:
    name: str
    dim_k: int
    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    minimizers: np.ndarray
    params: dict = field(default_factory=dict)
    # optional compiled kernels: value_kernel(u, prm, out), grad_kernel(u, prm, out)
    value_kernel: Optional[Callable] = None
    grad_kernel: Optional[Callable] = None
    kernel_params: Optional[np.ndarray] = None

    def __post_init__(self):
        sig = np.atleast_2d(np.asarray(self.minimizers, dtype=float))
        object.__setattr__(self, "minimizers", sig)
        _register(self)

    @property
    def q(self) -> int:
        return self.minimizers.shape[0]

    def dist_to_wells(self, u: np.ndarray) -> np.ndarray:
        """Euclidean distance of each point in ``u`` (shape (..., k)) to the set of minimizers."""
        u = np.asarray(u, dtype=float)
        d = np.linalg.norm(u[..., None, :] - self.minimizers, axis=-1)
        return d.min(axis=-1)

    def nearest_well(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        d = np.linalg.norm(u[..., None, :] - self.minimizers, axis=-1)
        return d.argmin(axis=-1)

    def spec(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


@dataclass(frozen=True)
class WellConstants:
    lambda_minus: tuple
    lambda_plus: tuple
    mu0: float
    eta0: float
    R0: float
    minimizers: np.ndarray = field(repr=False, default=None)

    @property
    def lambda_max(self) -> float:
        """Largest reaction stiffness ``max_i 2 lambda_i+`` used for the time-step cap."""
        return 2.0 * max(self.lambda_plus)

    def dist_to_wells(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        d = np.linalg.norm(u[..., None, :] - self.minimizers, axis=-1)
        return d.min(axis=-1)


def _register(p: Potential) -> None:
    sig = p.minimizers
    if sig.shape[1] != p.dim_k:
        raise PotentialError(f"{p.name}: minimizers have dimension {sig.shape[1]}, expected {p.dim_k}")
    if sig.shape[0] < 2:
        raise PotentialError(f"{p.name}: need at least two minimizers")
    if min_separation(sig) <= REG_TOL:
        raise PotentialError(f"{p.name}: minimizers are not pairwise distinct")
    vals = np.asarray(p.eval(sig), dtype=float)
    grads = np.asarray(p.grad(sig), dtype=float)
    if np.max(np.abs(vals)) > REG_TOL:
        raise PotentialError(f"{p.name}: V does not vanish at the minimizers ({vals})")
    if np.max(np.linalg.norm(grads, axis=-1)) > REG_TOL:
        raise PotentialError(f"{p.name}: gradient does not vanish at the minimizers")
    for s in sig:
        ev = np.linalg.eigvalsh(np.asarray(p.hess(s), dtype=float).reshape(p.dim_k, p.dim_k))
        if ev.min() <= REG_TOL:
            raise PotentialError(f"{p.name}: Hessian at {s} is not positive definite ({ev})")
    err = fd_gradient_error(p, n=100, radius=2.0 * (1.0 + np.max(np.abs(sig))), seed=0)
    if err > FD_TOL:
        raise PotentialError(f"{p.name}: gradient inconsistent with finite differences (rel. err {err:.2e})")


def min_separation(points: np.ndarray) -> float:
    """Smallest pairwise distance between rows of ``points``."""
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def _ball_samples(k: int, n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=(n, k))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / k)
    return d * r[:, None]


def fd_gradient_error(p: Potential, n: int = 100, radius: float = 2.0, seed: int = 0) -> float:
    """Largest relative discrepancy between ``grad`` and central differences of ``eval``."""
    rng = np.random.default_rng(seed)
    y = _ball_samples(p.dim_k, n, radius, rng)
    g = np.asarray(p.grad(y), dtype=float)
    worst = 0.0
    for j in range(p.dim_k):
        step = 1e-5 * (1.0 + np.abs(y[:, j]))
        e = np.zeros_like(y)
        e[:, j] = step
        fd = (np.asarray(p.eval(y + e)) - np.asarray(p.eval(y - e))) / (2 * step)
        scale = np.maximum(1.0, np.linalg.norm(g, axis=1))
        worst = max(worst, float(np.max(np.abs(fd - g[:, j]) / scale)))
    return worst


# ---------------------------------------------------------------- kernels
# Scalar products V(u) = s * prod_i (u - sigma_i)^2, prm = [s, sigma_1, ..., sigma_q].

@njit(cache=True)
def _prod_scalar_value(u, prm, out):
    s = prm[0]
    for i in range(u.shape[0]):
        p = 1.0
        for j in range(1, prm.shape[0]):
            p *= u[i, 0] - prm[j]
        out[i] = s * p * p


@njit(cache=True)
def _prod_scalar_grad(u, prm, out):
    s = prm[0]
    q = prm.shape[0] - 1
    for i in range(u.shape[0]):
        x = u[i, 0]
        p = 1.0
        dp = 0.0
        for j in range(q):
            d = x - prm[j + 1]
            dp = dp * d + p
            p *= d
        out[i, 0] = 2.0 * s * p * dp


# Planar products V(u) = s * prod_i |u - sigma_i|^2, prm = [s, a_1, b_1, ..., a_q, b_q].

@njit(cache=True)
def _prod_planar_value(u, prm, out):
    s = prm[0]
    q = (prm.shape[0] - 1) // 2
    for i in range(u.shape[0]):
        p = 1.0
        for j in range(q):
            dx = u[i, 0] - prm[1 + 2 * j]
            dy = u[i, 1] - prm[2 + 2 * j]
            p *= dx * dx + dy * dy
        out[i] = s * p


@njit(cache=True)
def _prod_planar_grad(u, prm, out):
    s = prm[0]
    q = (prm.shape[0] - 1) // 2
    for i in range(u.shape[0]):
        p = 1.0
        gx = 0.0
        gy = 0.0
        for j in range(q):
            dx = u[i, 0] - prm[1 + 2 * j]
            dy = u[i, 1] - prm[2 + 2 * j]
            r2 = dx * dx + dy * dy
            gx = gx * r2 + p * 2.0 * dx
            gy = gy * r2 + p * 2.0 * dy
            p *= r2
        out[i, 0] = s * gx
        out[i, 1] = s * gy


# V(u) = ((u1^2 - 1)^2 + c u2^2) / 4, prm = [c].

@njit(cache=True)
def _vector_double_value(u, prm, out):
    c = prm[0]
    for i in range(u.shape[0]):
        a = u[i, 0] * u[i, 0] - 1.0
        out[i] = 0.25 * (a * a + c * u[i, 1] * u[i, 1])


@njit(cache=True)
def _vector_double_grad(u, prm, out):
    c = prm[0]
    for i in range(u.shape[0]):
        out[i, 0] = u[i, 0] ** 3 - u[i, 0]
        out[i, 1] = 0.5 * c * u[i, 1]


# ---------------------------------------------------------------- constructors

def _scalar_product(name: str, wells, scale: float, params: dict) -> Potential:
    wells = np.asarray(sorted(float(w) for w in wells))
    P = np.poly1d(np.poly(wells))
    dP = P.deriv()
    ddP = dP.deriv()

    def ev(u):
        x = np.asarray(u, dtype=float)[..., 0]
        return scale * P(x) ** 2

    def gr(u):
        x = np.asarray(u, dtype=float)[..., 0]
        return (2.0 * scale * P(x) * dP(x))[..., None]

    def he(u):
        x = np.asarray(u, dtype=float)[..., 0]
        return (2.0 * scale * (dP(x) ** 2 + P(x) * ddP(x)))[..., None, None]

    prm = np.concatenate([[scale], wells])
    return Potential(name, 1, ev, gr, he, wells[:, None], params,
                     _prod_scalar_value, _prod_scalar_grad, prm)


def make_quartic() -> Potential:
    """V(u) = (1 - u^2)^2 / 4 with wells at -1 and +1."""
    return _scalar_product("quartic", [-1.0, 1.0], 0.25, {})


def make_triple_well(wells=None, scale: float = 1.0) -> Potential:
    """Polynomial triple (or more) well.

    ``wells`` is either a list of reals (scalar potential ``scale * prod (u - s_i)^2``)
    or a list of planar points (``scale * prod |u - s_i|^2`` on R^2).  The default is
    the scalar ``u^2 (u^2 - 1)^2``.
    """
    if wells is None:
        wells = [-1.0, 0.0, 1.0]
    arr = np.asarray(wells, dtype=float)
    if arr.ndim == 1:
        if arr.size < 3:
            raise PotentialError("triple well needs at least three wells")
        return _scalar_product("triple_well", arr, scale, {"wells": arr.tolist(), "scale": scale})
    if arr.ndim == 2 and arr.shape[1] == 2 and arr.shape[0] >= 3:
        return _planar_product(arr, scale)
    raise PotentialError(f"unsupported well layout with shape {arr.shape}")


def _planar_product(pts: np.ndarray, scale: float) -> Potential:
    pts = np.asarray(pts, dtype=float)

    def parts(u):
        u = np.asarray(u, dtype=float)
        d = u[..., None, :] - pts
        r2 = np.sum(d * d, axis=-1)
        return d, r2

    def ev(u):
        _, r2 = parts(u)
        return scale * np.prod(r2, axis=-1)

    def gr(u):
        d, r2 = parts(u)
        q = pts.shape[0]
        g = np.zeros(np.shape(u), dtype=float)
        for i in range(q):
            others = np.prod(np.delete(r2, i, axis=-1), axis=-1)
            g += 2.0 * d[..., i, :] * others[..., None]
        return scale * g

    def he(u):
        d, r2 = parts(u)
        q = pts.shape[0]
        shape = np.shape(u)[:-1]
        H = np.zeros(shape + (2, 2))
        eye = np.eye(2)
        for i in range(q):
            others = np.prod(np.delete(r2, i, axis=-1), axis=-1)
            H += 2.0 * others[..., None, None] * eye
            for j in range(q):
                if j == i:
                    continue
                rest = np.prod(np.delete(r2, [i, j], axis=-1), axis=-1)
                H += 4.0 * rest[..., None, None] * d[..., i, :, None] * d[..., j, None, :]
        return scale * H

    prm = np.concatenate([[scale], pts.ravel()])
    return Potential("vector_triple_well", 2, ev, gr, he, pts,
                     {"wells": pts.tolist(), "scale": scale},
                     _prod_planar_value, _prod_planar_grad, prm)


def make_vector_double_well(c: float = 1.0) -> Potential:
    """V(u1, u2) = ((u1^2 - 1)^2 + c u2^2) / 4 on R^2, wells at (+-1, 0)."""
    if c <= 0:
        raise PotentialError("c must be positive")

    def ev(u):
        u = np.asarray(u, dtype=float)
        return 0.25 * ((u[..., 0] ** 2 - 1.0) ** 2 + c * u[..., 1] ** 2)

    def gr(u):
        u = np.asarray(u, dtype=float)
        return np.stack([u[..., 0] ** 3 - u[..., 0], 0.5 * c * u[..., 1]], axis=-1)

    def he(u):
        u = np.asarray(u, dtype=float)
        H = np.zeros(u.shape[:-1] + (2, 2))
        H[..., 0, 0] = 3.0 * u[..., 0] ** 2 - 1.0
        H[..., 1, 1] = 0.5 * c
        return H

    return Potential("vector_double_well", 2, ev, gr, he, [[-1.0, 0.0], [1.0, 0.0]],
                     {"c": c}, _vector_double_value, _vector_double_grad, np.array([c]))


def make_flattened() -> Potential:
    """Bounded test potential (1-u^2)^2 / (4(1+u^6)); it decays at infinity, so the
    coercivity condition y V'(y) >= alpha y^2 fails for large |y|."""

    def parts(u):
        x = np.asarray(u, dtype=float)[..., 0]
        N = (1 - x * x) ** 2
        N1 = -4 * x * (1 - x * x)
        N2 = 12 * x * x - 4
        D = 4 * (1 + x ** 6)
        D1 = 24 * x ** 5
        D2 = 120 * x ** 4
        return N, N1, N2, D, D1, D2

    def ev(u):
        N, _, _, D, _, _ = parts(u)
        return N / D

    def gr(u):
        N, N1, _, D, D1, _ = parts(u)
        return (N1 / D - N * D1 / D ** 2)[..., None]

    def he(u):
        N, N1, N2, D, D1, D2 = parts(u)
        v = N2 / D - 2 * N1 * D1 / D ** 2 - N * D2 / D ** 2 + 2 * N * D1 ** 2 / D ** 3
        return v[..., None, None]

    return Potential("flattened", 1, ev, gr, he, [[-1.0], [1.0]], {})


_REGISTRY = {
    "quartic": lambda **kw: make_quartic(),
    "triple_well": lambda **kw: make_triple_well(**kw),
    "vector_triple_well": lambda **kw: make_triple_well(**kw),
    "vector_double_well": lambda **kw: make_vector_double_well(**kw),
    "flattened": lambda **kw: make_flattened(),
}


def get_potential(name: str, params: Optional[dict] = None) -> Potential:
    """Look up a named potential (used by configuration files)."""
    try:
        ctor = _REGISTRY[name]
    except KeyError:
        raise PotentialError(f"unknown potential {name!r}; known: {sorted(_REGISTRY)}") from None
    return ctor(**(params or {}))


# ---------------------------------------------------------------- constants

def _sphere_directions(k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if k == 1:
        return np.array([[-1.0], [1.0]])
    if k == 2:
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    d = rng.normal(size=(n, k))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def check_h3(p: Potential, cutoff: Optional[float] = None, n_dirs: int = 64):
    """Probe the coercivity condition ``y . grad V(y) >= alpha |y|^2`` for ``|y| > R``.

    Returns ``(alpha_cond, R_cond, ok)``.  Radii follow a geometric ladder; R_cond
    is the smallest ladder radius beyond which the ratio ``y . grad V / |y|^2``
    stays positive on all samples, and alpha_cond is its minimum there.
    """
    scale = 1.0 + float(np.max(np.abs(p.minimizers)))
    cutoff = 1e3 * scale if cutoff is None else cutoff
    rng = np.random.default_rng(12345)
    dirs = _sphere_directions(p.dim_k, n_dirs, rng)
    radii = []
    r = 0.5 * scale
    while r <= cutoff:
        radii.append(r)
        r *= 1.25
    radii = np.array(radii)
    ratios = np.empty(len(radii))
    for i, r in enumerate(radii):
        y = r * dirs
        ratios[i] = np.min(np.sum(y * p.grad(y), axis=-1)) / r ** 2
    bad = np.nonzero(ratios <= 0)[0]
    start = 0 if bad.size == 0 else bad[-1] + 1
    if start >= len(radii):
        return 0.0, float("inf"), False
    return float(ratios[start:].min()), float(radii[start]), True


def _box_samples(k: int, half: float, center=None) -> np.ndarray:
    n = {1: 200001, 2: 801}.get(k, 41)
    axes = [np.linspace(-half, half, n)] * k
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    return pts if center is None else pts + center


def lipschitz_bound(p: Potential, m: float) -> float:
    """A(m) = 1 + max over |u| <= m of the operator norm of the Hessian (sampled)."""
    n = {1: 4001, 2: 201}.get(p.dim_k, 15)
    axes = [np.linspace(-m, m, n)] * p.dim_k
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.dim_k)
    pts = pts[np.linalg.norm(pts, axis=1) <= m * (1 + 1e-12)]
    H = np.asarray(p.hess(pts)).reshape(-1, p.dim_k, p.dim_k)
    norms = np.abs(np.linalg.eigvalsh(H)).max(axis=1)
    return 1.0 + float(norms.max())


def well_constants(p: Potential, n_samples: int = 1000, max_halvings: int = 40) -> WellConstants:
    """Hessian eigenvalue bounds per well, the well radius mu0 and the clearing-out
    threshold eta0, all found by deterministic sampling."""
    sig = p.minimizers
    lam_m, lam_p = [], []
    for s in sig:
        ev = np.linalg.eigvalsh(np.asarray(p.hess(s), dtype=float).reshape(p.dim_k, p.dim_k))
        lam_m.append(float(ev.min()))
        lam_p.append(float(ev.max()))

    r = 0.5 * min_separation(sig)
    rng = np.random.default_rng(2024)
    base = _ball_samples(p.dim_k, n_samples, 1.0, rng)
    shell = _sphere_directions(p.dim_k, 64, rng)
    unit = np.concatenate([base, shell])
    mu0 = None
    for _ in range(max_halvings):
        if all(sandwich_holds(p, s, r, lm, lp, unit) for s, lm, lp in zip(sig, lam_m, lam_p)):
            mu0 = r
            break
        r *= 0.5
    if mu0 is None:
        raise PotentialError(f"{p.name}: no admissible well radius found (degenerate potential?)")

    _, R_cond, ok = check_h3(p)
    reach = float(np.max(np.linalg.norm(sig, axis=1)))
    R0 = max(R_cond if ok else 0.0, reach)
    pts = _box_samples(p.dim_k, R0 + 1.0)
    outside = p.dist_to_wells(pts) >= 0.5 * mu0
    s_star = float(np.min(p.eval(pts[outside])))
    s_star = float(np.nextafter(s_star, 0.0))
    eta0 = min(mu0 ** 2 / 8.0, s_star)
    return WellConstants(tuple(lam_m), tuple(lam_p), float(mu0), float(eta0), float(R0), sig.copy())


def sandwich_holds(p: Potential, s: np.ndarray, r: float, lam_m: float, lam_p: float,
                   unit: np.ndarray) -> bool:
    """Check ``lam_m/2 <= eig(hess(y)) <= 2 lam_p`` at ``y = s + r * unit``."""
    y = s + r * unit
    H = np.asarray(p.hess(y), dtype=float).reshape(-1, p.dim_k, p.dim_k)
    ev = np.linalg.eigvalsh(H)
    return bool(ev.min() >= 0.5 * lam_m and ev.max() <= 2.0 * lam_p)


def offwell_floor(p: Potential, wc: WellConstants) -> float:
    """c0 = min of V over points at distance >= mu0 from every well (sampled)."""
    pts = _box_samples(p.dim_k, wc.R0 + 1.0)
    far = p.dist_to_wells(pts) >= wc.mu0
    return float(np.min(p.eval(pts[far])))
