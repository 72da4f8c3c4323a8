from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfront.potential import (PotentialError, Potential, check_h3, fd_gradient_error,
                                 get_potential, lipschitz_bound, make_flattened, make_quartic,
                                 make_triple_well, make_vector_double_well, offwell_floor,
                                 well_constants)


def test_quartic_values(quartic):
    assert quartic.eval(np.array([[0.0]]))[0] == pytest.approx(0.25)
    assert quartic.eval(np.array([[1.0], [-1.0]])) == pytest.approx([0.0, 0.0], abs=0)
    assert np.asarray(quartic.hess(np.array([[1.0]]))).ravel()[0] == pytest.approx(2.0)
    assert quartic.q == 2 and quartic.dim_k == 1


def test_triple_well_scalar():
    p = make_triple_well()
    vals = p.eval(np.array([[-1.0], [0.0], [1.0]]))
    assert np.max(np.abs(vals)) == 0.0
    assert np.asarray(p.hess(np.array([[0.0]]))).ravel()[0] == pytest.approx(2.0)
    # V'' = 30u^4 - 24u^2 + 2
    for u in (0.3, -0.7, 1.4):
        assert np.asarray(p.hess(np.array([[u]]))).ravel()[0] == pytest.approx(30 * u**4 - 24 * u**2 + 2)


def test_vector_double_well():
    p = make_vector_double_well(c=2.0)
    assert p.minimizers.tolist() == [[-1.0, 0.0], [1.0, 0.0]]
    g = p.grad(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert np.max(np.abs(g)) == 0.0


def test_vector_triple_well_registers():
    p = make_triple_well([[0.0, 0.0], [1.0, 0.0], [0.5, 0.9]])
    assert p.dim_k == 2 and p.q == 3
    assert fd_gradient_error(p) <= 1e-5


def test_registration_rejects_bad_minimizer():
    with pytest.raises(PotentialError):
        Potential("bad", 1, lambda u: (1 - u[..., 0] ** 2) ** 2 / 4,
                  lambda u: u * (u**2 - 1), lambda u: (3 * u**2 - 1)[..., None],
                  [[-1.0], [0.5]])


def test_registration_rejects_wrong_gradient():
    with pytest.raises(PotentialError):
        Potential("badgrad", 1, lambda u: (1 - u[..., 0] ** 2) ** 2 / 4,
                  lambda u: 2 * u * (u**2 - 1), lambda u: (3 * u**2 - 1)[..., None],
                  [[-1.0], [1.0]])


def test_get_potential_unknown():
    with pytest.raises(PotentialError):
        get_potential("nope")


def test_well_constants_quartic(qwc):
    assert qwc.lambda_minus == (2.0, 2.0) and qwc.lambda_plus == (2.0, 2.0)
    assert qwc.mu0 <= 1.0
    assert qwc.eta0 <= qwc.mu0**2 / 8
    assert qwc.mu0 == 0.125 and qwc.eta0 == 0.001953125


def test_well_constants_deterministic(quartic):
    a, b = well_constants(quartic), well_constants(make_quartic())
    assert (a.mu0, a.eta0, a.R0) == (b.mu0, b.eta0, b.R0)


@pytest.mark.parametrize("p", [make_quartic(), make_triple_well(), make_vector_double_well()],
                         ids=["quartic", "triple", "vector"])
def test_well_constant_invariants(p):
    wc = well_constants(p)
    rng = np.random.default_rng(7)
    for s, lm, lp in zip(p.minimizers, wc.lambda_minus, wc.lambda_plus):
        assert 0 < lm <= lp
        d = rng.normal(size=(1000, p.dim_k))
        d *= (rng.random((1000, 1)) ** (1 / p.dim_k)) / np.linalg.norm(d, axis=1, keepdims=True)
        H = np.asarray(p.hess(s + wc.mu0 * d)).reshape(-1, p.dim_k, p.dim_k)
        ev = np.linalg.eigvalsh(H)
        assert ev.min() >= 0.5 * lm and ev.max() <= 2 * lp
    sig = p.minimizers
    dd = np.linalg.norm(sig[:, None] - sig[None], axis=-1) + np.eye(len(sig)) * 1e9
    assert dd.min() > 2 * wc.mu0
    # sublevel set {V <= eta0} inside the half-radius balls
    y = rng.uniform(-wc.R0 - 1, wc.R0 + 1, size=(20000, p.dim_k))
    low = p.eval(y) <= wc.eta0
    assert np.all(p.dist_to_wells(y[low]) < 0.5 * wc.mu0)


def test_check_h3():
    q = make_quartic()
    y = np.array([[10.0]])
    assert float(y[0, 0] * q.grad(y)[0, 0]) == pytest.approx(9900.0)
    alpha, R, ok = check_h3(q)
    assert ok and alpha > 0
    assert check_h3(make_flattened())[2] is False


def test_lipschitz_bound_and_floor(quartic, qwc):
    # sup |3u^2 - 1| on [-2, 2] is 11
    assert lipschitz_bound(quartic, 2.0) == pytest.approx(12.0)
    c0 = offwell_floor(quartic, qwc)
    u = 1 - qwc.mu0
    assert c0 == pytest.approx((1 - u * u) ** 2 / 4, rel=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(1e-3, 1.0))
def test_quartic_gradient_matches_difference_quotient(u, h):
    q = make_quartic()
    hh = 1e-6
    fd = (q.eval(np.array([[u + hh]]))[0] - q.eval(np.array([[u - hh]]))[0]) / (2 * hh)
    assert q.grad(np.array([[u]]))[0, 0] == pytest.approx(fd, rel=1e-5, abs=1e-7)
