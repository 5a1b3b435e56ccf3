import math

import numpy as np
import pytest

from qpresponse.averaging import SystemSpec, prepare
from qpresponse.fourier import FourierSeries, Frequency
from qpresponse.kam import (IterationState, ResonantEpsilon, Schedule, check_diophantine_first,
                            check_diophantine_second, homological_residual, linear_transform, run, shift_transform,
                            solve_shifted_homological, solve_sylvester, sylvester_residual)
from qpresponse.spectra import diagonalize
from qpresponse.taylor import TaylorFourierField

from conftest import schedule_for


def state_1d(p, eps, m=0, h=None, B=None, K=4):
    fr = diagonalize(np.array([[1.0]]))
    h = TaylorFourierField.zeros(1, 1, K, (1,), deg_min=2, deg_max=2) if h is None else h
    B = FourierSeries.zeros(1, K, (1, 1)) if B is None else B
    return IterationState(m, np.array([[1.0]]), B, p, h, 1.0, 1.0, fr, FourierSeries.constant(np.eye(1), 1, K),
                          FourierSeries.zeros(1, K, (1,)), eps)


def test_schedule_params():
    s = Schedule(rho0=1.0, c0=0.2, tau=1.0, kappa=1.5)
    rho0, sigma0, nu0, _ = s.params(0)
    assert s.params(1)[0] == pytest.approx(0.75)
    assert sigma0 == pytest.approx(0.875)
    assert nu0 == pytest.approx(0.05)
    assert s.params(2)[3] == pytest.approx(2.25)
    assert s.rho_inf == pytest.approx(1 - math.pi**2 / 24)
    for m in range(30):
        rho, sigma, nu, tau_m = s.params(m)
        assert min(rho, sigma, nu, tau_m) > 0
        assert sigma - s.params(m + 1)[0] - nu > 0
    with pytest.raises(ValueError):
        Schedule(rho0=1.0, c0=0.3)
    with pytest.raises(ValueError):
        Schedule(rho0=1.0, kappa=2.0)


def test_diophantine_first_examples():
    s = Schedule(rho0=0.5, tau=1.0, K_trunc=20)
    for eps in (0.01, 0.05, 0.1):
        assert check_diophantine_first([1.0], eps, [1.0], 0.1, s, 0).passed
    assert check_diophantine_first([1j], 0.0, [1.0, (1 + 5**0.5) / 2], 0.1, Schedule(0.5, tau=1.2), 0).passed
    tiny = Schedule(rho0=1e-9, tau=1.0, K_trunc=3)
    v = check_diophantine_first([1j], 0.5, [1.0], 2.0, tiny, 0)
    assert not v.passed and v.k == (1,) and v.lhs == pytest.approx(0.5)


def test_diophantine_second_examples():
    s = Schedule(rho0=0.5, tau=1.2, K_trunc=30)
    assert check_diophantine_second([1.0], 0.1, [1.0], 0.1, s, 0).passed
    v = check_diophantine_second([1j, -1j], 0.1, [1.0, (1 + 5**0.5) / 2], 0.1, s, 0)
    assert v.passed and v.lhs >= v.rhs
    assert check_diophantine_second([1j, -1j], 0.0, [1.0, (1 + 5**0.5) / 2], 0.1, s, 0).passed


def test_homological_examples():
    eps = 0.1
    zero = state_1d(FourierSeries.zeros(1, 4, (1,)), eps)
    assert solve_shifted_homological(zero, zero.frame, [1.0]).is_zero()
    st = state_1d(FourierSeries.constant(np.array([1.0]), 1, 4), eps)
    u = solve_shifted_homological(st, st.frame, [1.0])
    assert u.coeff((0,))[0] == pytest.approx(-0.1)
    cos = FourierSeries.from_modes({(1,): [0.5], (-1,): [0.5]}, 1, 4, (1,))
    st = state_1d(cos, eps)
    u = solve_shifted_homological(st, st.frame, [1.0])
    assert u.coeff((1,))[0] == pytest.approx(eps**2 * 0.5 / (1j - 0.1), rel=1e-14)
    assert u.coeff((1,))[0] == pytest.approx(-0.000495 - 0.004950j, abs=1e-6)
    assert homological_residual(st, u, [1.0]) < 1e-16


def test_shift_examples():
    eps = 0.1
    p = FourierSeries.constant(np.array([1.0]), 1, 4)
    st = state_1d(p, eps)
    zero_u = FourierSeries.zeros(1, 4, (1,))
    star = shift_transform(st, zero_u, 0.4)
    assert np.allclose(star.A, st.A) and star.p.is_zero() and star.B.is_zero()
    h = TaylorFourierField.from_polynomial({(2,): np.array([1.0])}, 1, 1, 4, deg_min=2, deg_max=2)
    st = state_1d(p, eps, h=h)
    c = 0.01
    star = shift_transform(st, FourierSeries.constant(np.array([c]), 1, 4), 0.4)
    assert star.A[0, 0] == pytest.approx(1 + 2 * c)
    assert star.h.coeffs.keys() == {(2,)}
    assert star.p.coeff((0,))[0] == pytest.approx(c**2 / st.e**2)
    assert star.r == pytest.approx(1 - c)


def test_sylvester_examples():
    eps, e = 0.1, 0.1
    fr = diagonalize(np.diag([1.0, 2.0]))
    assert solve_sylvester(FourierSeries.zeros(1, 4, (2, 2)), fr, eps, e, [1.0]).is_zero()
    c = np.zeros((2, 2, 9), complex)
    c[0, 1, 5] = c[0, 1, 3] = 0.5
    B = FourierSeries(c, 4, 0.5, (2, 2))
    S = solve_sylvester(B, fr, eps, e, [1.0])
    lam = np.sort(fr.lambdas.real)
    for k in (1, -1):
        ref = e * 0.5 / (1j * k - eps * (lam[0] - lam[1]))
        assert S.coeff((k,))[0, 1] == pytest.approx(ref, rel=1e-13)
    assert np.abs(S.c[1, 0]).max() == 0 and np.abs(S.c[0, 0]).max() == 0
    assert sylvester_residual(S, fr.A, B, eps, e, [1.0]) < 1e-16
    fr1 = diagonalize(np.array([[1.0]]))
    B1 = FourierSeries(c[:1, 1:], 4, 0.5, (1, 1))
    S1 = solve_sylvester(B1, fr1, eps, e, [1.0])
    assert S1.coeff((1,))[0, 0] == pytest.approx(e * 0.5 / 1j)


def test_linear_transform_scalar_toy():
    eps, K, sv = 1e-3, 6, 0.3
    sch = Schedule(rho0=0.5, neumann_terms=2)
    st = state_1d(FourierSeries.zeros(1, K, (1,)), eps, K=K)
    Bc = FourierSeries.from_modes({(1,): [[0.25j]], (-1,): [[-0.25j]]}, 1, K, (1, 1))  # -0.5 sin
    from qpresponse.kam import Starred
    star = Starred(st.A, Bc, FourierSeries.constant(np.array([0.2]), 1, K), st.h, 1.0, 0.0)
    S = FourierSeries.from_modes({(1,): [[sv / 2]], (-1,): [[sv / 2]]}, 1, K, (1, 1))
    nxt, rem = linear_transform(st, star, S, FourierSeries.zeros(1, K, (1,)), st.frame, sch, 0.4)
    th = 2 * np.pi * np.arange(64) / 64
    Sv = sv * np.cos(th)
    Bv = -0.5 * np.sin(th)
    BB = (1 - eps * Sv) * Bv * Sv
    mean = BB.mean()
    assert nxt.A[0, 0] - st.A[0, 0] == pytest.approx(eps**2 * mean, abs=1e-15)
    assert np.allclose(nxt.B.evaluate(th[:, None])[:, 0, 0].real, BB - mean, atol=1e-10)
    assert np.allclose(nxt.p.evaluate(th[:, None])[:, 0].real, (1 - eps * Sv) * 0.2, atol=1e-10)


def test_linear_transform_trivial():
    eps, K = 1e-2, 4
    st = state_1d(FourierSeries.zeros(1, K, (1,)), eps, K=K)
    from qpresponse.kam import Starred
    star = Starred(st.A + 0.01, FourierSeries.zeros(1, K, (1, 1)), FourierSeries.constant(np.array([0.2]), 1, K),
                   st.h, 1.0, 0.0)
    nxt, _ = linear_transform(st, star, FourierSeries.zeros(1, K, (1, 1)), FourierSeries.zeros(1, K, (1,)),
                              st.frame, Schedule(0.5), 0.4)
    assert np.allclose(nxt.A, star.A) and nxt.B.is_zero()
    assert np.allclose(nxt.p.c, star.p.c)


def test_run_trivial_system():
    K = 3
    f = TaylorFourierField.from_linear(np.array([[0.0, 1.0], [-1.0, 0.0]]), 2, 2, K, rho=1.0)
    spec = SystemSpec(Frequency((1.0, (1 + 5**0.5) / 2), 0.1, 1.2), f, (), rho=0.5)
    rep = run(prepare(spec, 0.01), schedule_for(spec))
    assert rep.converged and rep.m_final == 0
    assert np.allclose(rep.response.c, 0)


def test_run_resonant_epsilon(linear_spec):
    with pytest.raises(ResonantEpsilon) as err:
        run(prepare(linear_spec, 0.028125), schedule_for(linear_spec))
    assert err.value.verdict.m == 0 and err.value.verdict.k


def test_report_invariants(linear_report, quadratic_report):
    for rep in (linear_report, quadratic_report):
        assert len(rep.rows) == rep.m_final + 1
        rs = [row["r"] for row in rep.rows]
        assert all(a >= b for a, b in zip(rs, rs[1:])) and rs[-1] > 0
        for v in rep.ledger.verdicts:
            assert np.isfinite(v.lhs) and not np.isnan(v.rhs)
        base = rep.normal_form.frame
        assert all(row["A_dist"] < base.alpha for row in rep.rows)
    for stt in quadratic_report.states:
        assert np.abs(stt.B.mean()).max() == 0
        assert stt.h.deg_min == 2


def test_conjugacy_every_step(quadratic_report):
    vals = [row["conjugacy"] for row in quadratic_report.rows if "conjugacy" in row]
    assert len(vals) == 5 and max(vals) < 1e-8
