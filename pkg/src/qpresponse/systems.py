"""Demo systems used by the scripts, the CLI and the acceptance tests."""

from __future__ import annotations

import numpy as np

from .averaging import SystemSpec
from .fourier import Frequency
from .taylor import TaylorFourierField

GOLDEN = (1 + 5**0.5) / 2


def _constant(vec, d, K):
    c = np.zeros(np.shape(vec) + (2 * K + 1,) * d, dtype=complex)
    c[(Ellipsis,) + (K,) * d] = vec
    return c


def elliptic_demo(K: int = 30, quadratic: bool = False, rho: float = 0.5, gamma: float = 0.1, tau: float = 1.2,
                  g_terms=()) -> SystemSpec:
    """x' = eps (A x + v(theta) [+ Q(x)]) with A a rotation generator and v = (cos theta_1, 0).

    The averaged field has an elliptic equilibrium at 0 (eigenvalues +-i).
    """
    d, n = 2, 2
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    v = np.zeros((n,) + (2 * K + 1,) * d, dtype=complex)
    v[(0, K + 1, K)] = v[(0, K - 1, K)] = 0.5
    coeffs = {(0, 0): v, (1, 0): _constant(A[:, 0], d, K), (0, 1): _constant(A[:, 1], d, K)}
    if quadratic:
        coeffs[(0, 2)] = _constant([1.0, 0.0], d, K)
        coeffs[(1, 1)] = _constant([0.0, 1.0], d, K)
    f = TaylorFourierField(coeffs, n, d, K, (n,), rho=2 * rho, r=1.0)
    freq = Frequency((1.0, GOLDEN), gamma, tau)
    name = "elliptic-quadratic" if quadratic else "elliptic-linear"
    return SystemSpec(freq, f, g_terms, 1.0, 2.0, rho, 1.0, None, 2, name)


def hyperbolic_demo(K: int = 12, rho: float = 0.5) -> SystemSpec:
    """Scalar-pair system with a saddle of the averaged field at the origin."""
    d, n = 1, 2
    A = np.array([[1.0, 0.0], [0.0, -2.0]])
    v = np.zeros((n, 2 * K + 1), dtype=complex)
    v[0, K + 1] = v[0, K - 1] = 0.5
    v[1, K + 1], v[1, K - 1] = -0.5j, 0.5j
    coeffs = {(0, 0): v, (1, 0): _constant(A[:, 0], d, K), (0, 1): _constant(A[:, 1], d, K),
              (2, 0): _constant([0.0, 1.0], d, K)}
    f = TaylorFourierField(coeffs, n, d, K, (n,), rho=2 * rho, r=1.0)
    return SystemSpec(Frequency((1.0,), 0.5, 1.0), f, (), 1.0, 2.0, rho, 1.0, None, 2, "hyperbolic")


DEMOS = {"elliptic-linear": lambda: elliptic_demo(), "elliptic-quadratic": lambda: elliptic_demo(quadratic=True),
         "hyperbolic": lambda: hyperbolic_demo()}
