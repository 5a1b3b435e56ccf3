"""Independent checks on a candidate response: grid residual, exact linear solve, RK4 shadowing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .averaging import SystemSpec
from .fourier import FourierSeries, Frequency, k_list
from .taylor import TaylorFourierField


class OracleError(RuntimeError):
    pass


def theta_grid(d: int, N: int) -> np.ndarray:
    ax = 2 * np.pi * np.arange(N) / N
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)


def residual(spec: SystemSpec, X: FourierSeries, eps: float, grid_size: int = 64) -> float:
    """sup over a uniform angle grid of |w.grad X - eps^a f(X) - eps^b g(X)|."""
    if grid_size < 8:
        raise ValueError("grid_size must be at least 8 per angle")
    th = theta_grid(X.d, grid_size)
    x = X.evaluate(th)
    dx = X.ddt(spec.freq.vector).evaluate(th)
    return float(np.abs(np.real(dx - spec.rhs(th, x, eps))).max())


def linear_fourier_oracle(A, v: FourierSeries, eps: float, freq: Frequency) -> FourierSeries:
    """Exact response of x' = eps(A x + v(wt)): x_k = eps (i<k,w> - eps A)^-1 v_k."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    ks = k_list(v.d, v.K, include_zero=True)
    M = 1j * (ks @ freq.vector)[:, None, None] * np.eye(n) - eps * A
    conds = np.linalg.cond(M)
    if not np.all(np.isfinite(conds)) or conds.max() > 1e14:
        raise OracleError("resolvent is singular at some stored mode")
    idx = tuple((ks + v.K).T)
    vk = np.moveaxis(v.c[(Ellipsis,) + idx], -1, 0)
    xk = np.linalg.solve(M, eps * vk[..., None])[..., 0]
    c = np.zeros_like(v.c)
    c[(Ellipsis,) + idx] = np.moveaxis(xk, 0, -1)
    return FourierSeries(c, v.K, v.rho, (n,), v.is_real).real_projection() if v.is_real else \
        FourierSeries(c, v.K, v.rho, (n,), False)


class CompiledField:
    """Fast pointwise evaluation of a field through its nonzero modes only."""

    def __init__(self, F: TaylorFourierField):
        self.terms = []
        for a in F.coeffs:
            modes = F.coeff(a).modes()
            ks = np.array(list(modes), dtype=float)
            cs = np.array(list(modes.values()))
            self.terms.append((np.array(a), ks, cs))
        self.shape = F.shape

    def __call__(self, theta, z):
        out = np.zeros(self.shape, dtype=complex)
        for a, ks, cs in self.terms:
            ph = np.exp(1j * (ks @ theta))
            out = out + (ph @ cs) * np.prod(z**a)
        return out.real


def system_rhs(spec: SystemSpec, eps: float):
    """x -> x' as a function of (t, x) with theta = w t, fast path for integration."""
    terms = [(eps**spec.a, CompiledField(spec.f))]
    terms += [(eps ** (spec.b + q), CompiledField(G)) for q, G in spec.g_terms]
    omega = spec.freq.vector
    center = np.asarray(spec.center)

    def rhs(t, x):
        th = omega * t
        w = x - center
        return sum(c * F(th, w) for c, F in terms)

    return rhs


def rk4(fun, x0, t0: float, T: float, dt: float, blowup: float = 1e8):
    """Fixed-step classical Runge-Kutta; returns (t, X)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(np.ceil(T / dt))
    h = T / steps
    X = np.empty((steps + 1, len(x0)))
    X[0] = x0
    x = np.array(x0, dtype=float)
    t = t0
    for i in range(steps):
        k1 = fun(t, x)
        k2 = fun(t + h / 2, x + h / 2 * k1)
        k3 = fun(t + h / 2, x + h / 2 * k2)
        k4 = fun(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (i + 1) * h
        if not np.all(np.isfinite(x)) or np.abs(x).max() > blowup:
            raise OracleError(f"trajectory blew up at t={t:.4g}")
        X[i + 1] = x
    return t0 + h * np.arange(steps + 1), X


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    distance: float
    distances: np.ndarray


def integrate_oracle(spec: SystemSpec, x0, eps: float, T: float, dt: float, candidate: FourierSeries | None = None,
                     discard: float = 0.2, stride: int = 1) -> Trajectory:
    """RK4 trajectory and its max distance to X(wt) after the first ``discard`` fraction of T."""
    wmax = float(np.abs(spec.freq.vector).max())
    if dt * wmax > 0.5:
        raise ValueError(f"dt={dt} too coarse for forcing frequency {wmax}")
    t, X = rk4(system_rhs(spec, eps), np.asarray(x0, dtype=float), 0.0, T, dt)
    t, X = t[::stride], X[::stride]
    if candidate is None:
        return Trajectory(t, X, np.nan, np.array([]))
    keep = t >= discard * T
    ref = candidate.evaluate(np.outer(t[keep], spec.freq.vector))
    dist = np.linalg.norm(X[keep] - np.real(ref), axis=1)
    return Trajectory(t, X, float(dist.max(initial=0.0)), dist)
