import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpresponse.spectra import (ConclusionViolation, DegenerateSpectrumError, OutsideBallError, certified_margins,
                                diagonalize, gerschgorin_margins, inf_norm, margins, perturbation_check)

ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def test_diagonal_frame():
    fr = diagonalize(np.diag([1.0, 2.0]))
    assert np.allclose(sorted(fr.lambdas.real), [1, 2])
    assert np.allclose(np.abs(fr.C), np.eye(2))
    assert fr.beta0 == 1


def test_rotation_frame():
    fr = diagonalize(ROT, 0.8)
    assert np.allclose(sorted(fr.lambdas.imag), [-1, 1])
    assert inf_norm(fr.C) == pytest.approx(2)
    assert inf_norm(fr.C_inv) == pytest.approx(1)
    assert fr.beta0 == pytest.approx(2)
    assert fr.mu == pytest.approx(0.4)
    assert fr.alpha == pytest.approx(0.04)
    assert fr.residual() <= 1e-10 * inf_norm(ROT)


def test_repeated_eigenvalue_rejected():
    with pytest.raises(DegenerateSpectrumError):
        diagonalize(np.eye(2))


def test_frame_invariants(rng):
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        fr = diagonalize(A)
        lo, hi = margins(fr.lambdas)
        assert lo > 2 * fr.mu and hi < fr.mu_star
        assert fr.alpha == pytest.approx(2 * fr.mu / (8 * fr.beta0**2), rel=1e-15)


def test_perturbation_examples():
    fr = diagonalize(ROT)
    same = perturbation_check(fr, ROT)
    assert np.allclose(same.lambdas, fr.lambdas) and np.allclose(same.C, fr.C)
    new = perturbation_check(fr, [[0.01, 1], [-1, 0.01]])
    assert np.allclose(sorted(new.lambdas, key=lambda z: z.imag), [0.01 - 1j, 0.01 + 1j])
    with pytest.raises(OutsideBallError):
        perturbation_check(fr, ROT + np.array([[0.05, 0], [0, 0]]))


def test_gerschgorin_examples():
    fr = diagonalize(np.diag([1.0, 2.0]))
    assert gerschgorin_margins(fr, fr.A) == (True, True)
    assert fr.mu == pytest.approx(0.4)
    assert gerschgorin_margins(fr, np.diag([1.05, 1.95])) == (True, True)
    mu_ok, _ = gerschgorin_margins(fr, np.diag([1.5, 1.6]))
    assert not mu_ok
    assert certified_margins(fr, np.diag([1.05, 1.95])) == (True, True)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_perturbation_conclusions(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    fr = diagonalize(A)
    for _ in range(10):
        E = rng.uniform(-1, 1, (3, 3))
        E *= 0.999 * fr.alpha * rng.uniform() / inf_norm(E)
        new = perturbation_check(fr, A + E)
        assert margins(new.lambdas)[0] > fr.mu
        assert new.cond <= 2 * fr.beta0


def test_strict_conclusion_violation_reported():
    fr = diagonalize(np.diag([1.0, 2.0]))
    object.__setattr__(fr, "alpha", 10.0)  # waive the ball precondition
    with pytest.raises(ConclusionViolation):
        perturbation_check(fr, np.diag([1.5, 1.6]))
