import numpy as np
import pytest

from qpresponse.fourier import Frequency
from qpresponse.oracles import rk4, system_rhs
from qpresponse.reductions import (HypothesisError, InvalidExponents, check_homogeneous, degenerate_rhs,
                                   degenerate_scale, plan_exponents, rescale_general, rescaled_remainder,
                                   second_order_reduce, second_order_rhs)
from qpresponse.taylor import TaylorFourierField

F1 = Frequency((1.0,), 0.5, 1.0)


def test_plan_examples():
    p = plan_exponents(1, 2)
    assert (p.delta, p.a0, p.b0, p.branch) == (1, 1, 2, "b=2a")
    p = plan_exponents(0.5, 1)
    assert (p.delta, p.a0, p.b0) == (2, 1, 2)
    p = plan_exponents(1, 1.5)
    assert (p.delta, p.a0, p.b0) == (2, 2, 3)
    assert 1 < p.delta1 < 1 + 1 / (p.a0 - 1)
    with pytest.raises(InvalidExponents):
        plan_exponents(1, 0.5)


def test_plan_invariants(rng):
    for _ in range(50):
        a = rng.uniform(0.1, 3)
        b = a + rng.uniform(0.05, 3)
        p = plan_exponents(a, b)
        assert p.b0 > p.a0 > 0 and p.delta >= 1
        assert min(p.delta * a, p.delta * abs(b - 2 * a), p.delta * (b - a)) >= 1 - 1e-12


def test_rescale_general_identity(linear_spec, rng):
    spec = linear_spec.with_(a=0.5, b=1.5, g_terms=((0.0, linear_spec.f), (0.5, linear_spec.f)))
    plan, new = rescale_general(spec)
    assert (new.a, new.b) == (plan.a0, plan.delta * spec.b)
    for _ in range(10):
        th = rng.uniform(0, 6, 2)
        x = rng.uniform(-1, 1, 2)
        e = rng.uniform(0.01, 0.5)
        ref = spec.rhs(th, x, e**plan.delta)
        assert np.abs(new.rhs(th, x, e) - ref).max() <= 1e-10 * np.abs(ref).max()
    f_bar, g2, _ = rescaled_remainder(plan, new, 0.05)
    assert f_bar.oscillation().is_zero()


def _second_order_data(n, DF0, K=4):
    d = 1
    box = 2 * K + 1

    def const(v):
        c = np.zeros((n, box), complex)
        c[:, K] = v
        return c

    coeffs = {tuple(int(i == j) for i in range(2 * n)): const(DF0[:, j]) for j in range(n)}
    c = np.zeros((n, box), complex)
    c[0, K + 1] = c[0, K - 1] = 0.5
    coeffs[(0,) * (2 * n)] = c
    coeffs[tuple(int(i == n) for i in range(2 * n))] = const(np.r_[-0.1, np.zeros(n - 1)])
    F = TaylorFourierField(coeffs, 2 * n, d, K, (n,))
    G = TaylorFourierField.from_polynomial({tuple(2 * int(i == 0) for i in range(2 * n)): np.r_[np.zeros(n - 1), 1.0]},
                                           2 * n, d, K)
    return F, G


def test_second_order_diag_case():
    F, G = _second_order_data(2, np.diag([-1.0, -4.0]))
    red = second_order_reduce(F, [(0.0, G)], 1.0, 2.0, F1)
    assert np.allclose(np.sort_complex(red.doubled), [-2j, -1j, 1j, 2j], atol=1e-12)
    assert red.spec.n == 4 and red.spec.a == 0.5


def test_second_order_random_spectra(rng):
    done = 0
    while done < 50:
        DF0 = rng.normal(size=(2, 2))
        mu = np.linalg.eigvals(DF0)
        if abs(mu[0] - mu[1]) < 0.1 or np.abs(mu).min() < 0.1:
            continue
        F, G = _second_order_data(2, DF0)
        red = second_order_reduce(F, [(0.0, G)], 1.0, 2.0, F1, x_init=np.zeros(2))
        assert red.branch_error <= 1e-10 * max(1, np.abs(mu).max())
        done += 1


def test_second_order_independent_of_velocity():
    n, K = 1, 3
    c = np.zeros((1, 7), complex)
    c[0, 3] = -1.0
    F = TaylorFourierField({(1, 0): c}, 2, 1, K, (1,))
    red = second_order_reduce(F, [], 1.0, 2.0, F1)
    assert all(a[1] == 0 or a == (0, 1) for a in red.spec.f.coeffs)
    assert not red.spec.g_terms


def test_second_order_identity_and_roundtrip(rng):
    F, G = _second_order_data(2, np.diag([-1.0, -4.0]))
    a, b = 1.0, 2.0
    red = second_order_reduce(F, [(0.0, G)], a, b, F1)
    for _ in range(10):
        th = rng.uniform(0, 6, 1)
        x, y = rng.uniform(-0.5, 0.5, 2), rng.uniform(-0.5, 0.5, 2)
        eps = rng.uniform(1e-3, 0.1)
        v = eps ** (a / 2) * y
        ref = np.r_[v, eps ** (a / 2) * F.evaluate(th, np.r_[x, v]).real
                    + eps ** (b - a / 2) * G.evaluate(th, np.r_[x, v]).real]
        assert np.abs(red.spec.rhs(th, np.r_[x, y], eps) - ref).max() <= 1e-10 * np.abs(ref).max()
    eps = 0.01
    T = 10 / eps ** (a / 2)
    x0, v0 = np.array([0.1, -0.2]), np.array([0.01, 0.02])
    _, X1 = rk4(second_order_rhs(F, [(0.0, G)], a, b, F1, eps), np.r_[x0, v0], 0, T, 0.05)
    _, X2 = rk4(system_rhs(red.spec, eps), np.r_[x0, v0 / eps ** (a / 2)], 0, T, 0.05)
    assert np.abs(X1[:, :2] - X2[:, :2]).max() < 1e-6


def test_second_order_rejects_repeated_spectrum():
    F, G = _second_order_data(2, np.diag([-1.0, -1.0]))
    with pytest.raises(Exception):
        second_order_reduce(F, [(0.0, G)], 1.0, 2.0, F1)


def _degenerate_data(K=3):
    phi = TaylorFourierField.from_polynomial({(3,): np.array([1.0])}, 1, 1, K)
    hc = np.zeros((1, 2 * K + 1), complex)
    hc[0, K] = 1
    hc[0, K + 1] = hc[0, K - 1] = 0.25
    h = TaylorFourierField({(4,): hc}, 1, 1, K, (1,))
    fc = np.zeros((1, 2 * K + 1), complex)
    fc[0, K] = 1.0
    fc[0, K + 1] = fc[0, K - 1] = 0.5
    f = TaylorFourierField({(0,): fc, (1,): hc * 0.5}, 1, 1, K, (1,))
    return phi, h, f


def test_degenerate_scale(rng):
    phi, h, f = _degenerate_data()
    ds = degenerate_scale(phi, h, f, 3, F1, x_init=np.array([-0.5]))
    assert ds.x_star[0] == pytest.approx(-1.0)
    assert (ds.spec.a, ds.spec.b) == (2, 3)
    orig = degenerate_rhs(phi, h, f, F1)
    for _ in range(10):
        th = rng.uniform(0, 6, 1)
        y = rng.uniform(-1, 1, 1)
        tau = rng.uniform(0.05, 0.5)
        ref = orig(th, tau * y, tau**3) / tau
        assert np.abs(ds.spec.rhs(th, y, tau) - ref).max() <= 1e-10 * np.abs(ref).max()


def test_degenerate_hypotheses():
    phi, h, f = _degenerate_data()
    assert check_homogeneous(phi, 3) < 1e-12
    with pytest.raises(HypothesisError):
        check_homogeneous(phi, 2)
    low = TaylorFourierField.from_polynomial({(3,): np.array([1.0])}, 1, 1, 3)
    with pytest.raises(HypothesisError):
        degenerate_scale(phi, low, f, 3, F1)
