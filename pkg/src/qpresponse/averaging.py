"""First-order averaging and the normal form at a nondegenerate equilibrium.

A system is ``x' = eps^a f(wt, x) + eps^b g(wt, x, eps)``.  At fixed eps it is
handled in the parameter ``eta = eps^a`` as ``x' = eta f + eta^2 g_eff`` with
``g_eff = eps^(b - 2a) g``, which is the a = 1, b = 2 case verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fourier import FourierSeries, Frequency, divide_by_divisor
from .spectra import SpectralFrame, diagonalize, inf_norm
from .taylor import TaylorFourierField, compose, field_product, taylor_shift


class EpsilonTooLarge(ValueError):
    pass


class EquilibriumError(RuntimeError):
    pass


class DegenerateJacobian(EquilibriumError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    """Forced system in local coordinates ``w = x - center``.

    ``g_terms`` is a sequence of ``(power, field)``; ``g = sum eps^power field``.
    Input series should declare width ``2 * rho``.
    """

    freq: Frequency
    f: TaylorFourierField
    g_terms: tuple = ()
    a: float = 1.0
    b: float = 2.0
    rho: float = 0.5
    r: float = 1.0
    center: tuple = None
    deg_max: int = None
    name: str = "system"
    K_check: int = None

    def __post_init__(self):
        if not self.b > self.a > 0:
            raise ValueError(f"need b > a > 0, got a={self.a}, b={self.b}")
        n = self.f.n
        if self.f.shape != (n,):
            raise ValueError("f must be a vector field on its own state space")
        if self.f.d != self.freq.d:
            raise ValueError("torus dimension of f does not match omega")
        object.__setattr__(self, "g_terms", tuple((float(q), G) for q, G in self.g_terms))
        for q, G in self.g_terms:
            if (G.n, G.d, G.K, G.shape) != (n, self.f.d, self.f.K, (n,)):
                raise ValueError(f"g term eps^{q} is incompatible with f")
        for F in [self.f] + [G for _, G in self.g_terms]:
            if F.is_real and F.reality_defect() > 1e-12:
                raise ValueError("field flagged real violates c(-k) = conj(c(k))")
        if self.center is None:
            object.__setattr__(self, "center", (0.0,) * n)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.deg_max is None:
            degs = self.f.degrees() + [x for _, G in self.g_terms for x in G.degrees()]
            object.__setattr__(self, "deg_max", max([2] + degs))
        Kc = self.f.K if self.K_check is None else self.K_check
        ok, k, lhs, rhs = self.freq.check(Kc)
        if not ok:
            raise ValueError(f"omega fails the Diophantine check at k={k}: {lhs:.3e} < {rhs:.3e}")

    @property
    def n(self):
        return self.f.n

    @property
    def d(self):
        return self.f.d

    @property
    def K(self):
        return self.f.K

    def g_at(self, eps) -> TaylorFourierField:
        out = TaylorFourierField.zeros(self.n, self.d, self.K, (self.n,), self.f.rho, self.r)
        for q, G in self.g_terms:
            out = out + G * eps**q
        return out

    def effective(self, eps):
        """(eta, g_eff) with the system written as eta f + eta^2 g_eff."""
        eta = eps**self.a
        return eta, self.g_at(eps) * eps ** (self.b - 2 * self.a)

    def rhs(self, theta, x, eps):
        """Original right-hand side at absolute state x."""
        w = np.asarray(x) - np.asarray(self.center)
        out = eps**self.a * self.f.evaluate(theta, w)
        for q, G in self.g_terms:
            out = out + eps ** (self.b + q) * G.evaluate(theta, w)
        return out

    def with_(self, **kw):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(kw)
        return SystemSpec(**data)


def compute_average(f: TaylorFourierField) -> TaylorFourierField:
    """Time average: the zero Fourier mode of every state coefficient."""
    return f.mean()


def poly_value(F: TaylorFourierField, w):
    """Value of an angle-independent field at w (zero modes only)."""
    K, d = F.K, F.d
    w = np.asarray(w, dtype=float)
    out = np.zeros(F.shape, dtype=complex)
    for a, c in F.coeffs.items():
        out = out + c[(Ellipsis,) + (K,) * d] * np.prod(w ** np.array(a))
    return out.real


def poly_jacobian(F: TaylorFourierField, w):
    return poly_value(F.jacobian(), w)


def find_equilibrium(f_bar: TaylorFourierField, x_init, tol: float = 1e-12, max_iter: int = 50,
                     margin_fraction: float = 0.8):
    """Newton's method for f_bar(x) = 0, then the spectral frame of the Jacobian.

    Iterates until the Newton step stalls at round-off so that a slowly
    (linearly) converging, degenerate root is told apart from a regular one.
    """
    x = np.array(x_init, dtype=float)
    scale = max([1.0] + [float(np.abs(c).max()) for a, c in f_bar.coeffs.items() if sum(a) >= 1])
    for it in range(max_iter):
        F = poly_value(f_bar, x)
        J = poly_jacobian(f_bar, x)
        try:
            step = np.linalg.solve(J, F)
        except np.linalg.LinAlgError as exc:
            raise DegenerateJacobian(f"singular Jacobian at x={x}") from exc
        x = x - step
        if np.linalg.norm(step, np.inf) <= 1e-15 * max(1.0, np.linalg.norm(x, np.inf)):
            break
    F = poly_value(f_bar, x)
    if np.linalg.norm(F, np.inf) > tol:
        raise EquilibriumError(f"Newton did not converge in {max_iter} steps: |f(x)|={np.linalg.norm(F, np.inf):.3e}")
    J = poly_jacobian(f_bar, x)
    smin = np.linalg.svd(J, compute_uv=False).min()
    if smin <= 1e-6 * scale:
        raise DegenerateJacobian(f"Jacobian nearly singular at the root (sigma_min={smin:.2e})")
    return x, diagonalize(J, margin_fraction)


def _lift(F: TaylorFourierField, extra: int = 1):
    """Same field on the state space extended by ``extra`` trailing variables."""
    coeffs = {a + (0,) * extra: v for a, v in F.coeffs.items()}
    return TaylorFourierField(coeffs, F.n + extra, F.d, F.K, F.shape, F.rho, F.r, F.is_real, F.deg_min, F.deg_max)


def shifted_by(F: TaylorFourierField, u: TaylorFourierField, eta: float, deg_max: int, quotient: bool):
    """F(z + eta u(z)) or, with ``quotient``, (F(z + eta u) - F(z)) / eta.

    Composes with z + s u in an auxiliary variable s and reads off the powers
    of s, so the difference quotient carries no cancellation.
    """
    n = F.n
    s_unit = tuple([0] * n + [1])
    lu = _lift(u)
    # z + s * u(z)
    L = np.eye(n + 1)[:n]
    P = TaylorFourierField.from_linear(L, n + 1, F.d, F.K, F.rho, F.r)
    su = {tuple(x + y for x, y in zip(a, s_unit)): v for a, v in lu.coeffs.items()}
    P = P + TaylorFourierField(su, n + 1, F.d, F.K, (n,), u.rho, u.r, u.is_real)
    Dmax = max(F.degrees(), default=0)
    comp = compose(F, P, deg_max=deg_max + Dmax)
    out = {}
    for a, v in comp.coeffs.items():
        js = a[n]
        za = a[:n]
        if sum(za) > deg_max:
            continue
        if quotient:
            if js == 0:
                continue
            w = eta ** (js - 1)
        else:
            w = eta**js
        out[za] = out[za] + v * w if za in out else v * w
    return TaylorFourierField(out, n, F.d, F.K, F.shape, min(F.rho, u.rho), F.r, comp.is_real, None, None)


def neumann_field(M: TaylorFourierField, scale: float, terms: int, deg_max: int):
    """sum_{j<terms} (-scale M)^j for a matrix field M."""
    n = M.shape[0]
    eye = TaylorFourierField.from_polynomial({(0,) * M.n: np.eye(n)}, M.n, M.d, M.K, M.rho, M.r)
    total, term = eye, eye
    for _ in range(1, terms):
        term = field_product(term, M, "ij,jk->ik", (n, n), deg_max) * (-scale)
        if term.is_zero():
            break
        total = total + term
    return total


@dataclass
class AveragingResult:
    u: TaylorFourierField
    g1: TaylorFourierField
    f_bar: TaylorFourierField
    eta: float
    du_margin: float
    neumann_remainder: float
    u_bound_lhs: float = np.nan
    u_bound_rhs: float = np.nan


def averaging_transform(spec: SystemSpec, eps: float, neumann_terms: int = 8, margin: float = 0.5):
    """Solve du/dt = f~ and assemble the transformed remainder g1.

    ``x = y + eta u(t, y)`` turns the system into ``y' = eta f_bar(y) + eta^2 g1``.
    """
    from .ledger import varpi

    f = spec.f
    deg_max = spec.deg_max
    eta, g_eff = spec.effective(eps)
    omega = spec.freq.vector
    floor = spec.freq.gamma * max(spec.K, 1) ** (-spec.freq.tau)
    f_bar = compute_average(f)
    f_osc = f.oscillation()

    def divisor(ks):
        return 1j * (ks @ omega)

    u = f_osc.map_coeffs(lambda s: divide_by_divisor(s, divisor, floor).real_projection(), is_real=True)
    u = u.with_(rho=spec.rho, r=spec.r)
    Du = u.jacobian()
    du = Du.norm(spec.rho, spec.r)
    q = eta * du
    if q > margin:
        raise EpsilonTooLarge(f"eta*||du/dx|| = {q:.3g} exceeds {margin}")
    N = neumann_field(Du, eta, neumann_terms, deg_max)
    rem = q**neumann_terms / (1 - q) if q < 1 else np.inf
    n = spec.n
    d_fbar = shifted_by(f_bar, u, eta, deg_max, quotient=True)
    d_fosc = shifted_by(f_osc, u, eta, deg_max, quotient=True)
    g_sh = shifted_by(g_eff, u, eta, deg_max, quotient=False)
    inner = d_fbar + d_fosc + g_sh
    g1 = field_product(N, inner, "ij,j->i", (n,), deg_max)
    if not Du.is_zero():
        t1 = field_product(field_product(N, Du, "ij,jk->ik", (n, n), deg_max), f_bar, "ij,j->i", (n,), deg_max)
        g1 = g1 - t1
    g1 = g1.with_(rho=spec.rho, r=spec.r)
    # homological bound in the dominating norm, weights r^|alpha| on both sides
    lhs = u.norm(spec.rho, spec.r)
    rhs = f.norm(2 * spec.rho, spec.r) / spec.freq.gamma * varpi(spec.freq.tau, spec.rho, spec.d).upper
    return AveragingResult(u, g1, f_bar, eta, q, rem, lhs, rhs)


@dataclass
class NormalForm:
    """``z' = eta (A + eta B) z + eta^2 p + eta h`` around the equilibrium."""

    A: np.ndarray
    B: FourierSeries
    p: FourierSeries
    h: TaylorFourierField
    epsilon: float
    eps: float
    rho: float
    r: float
    x_star: np.ndarray
    frame: SpectralFrame
    u: TaylorFourierField
    g1: TaylorFourierField
    f_bar: TaylorFourierField
    center: np.ndarray
    freq: Frequency = None
    deg_max: int = 2
    info: dict = field(default_factory=dict)


def to_normal_form(spec: SystemSpec, x_star, frame: SpectralFrame, avg: AveragingResult, eps: float) -> NormalForm:
    """Taylor expansion at x*: A = Df_bar, B = dg1/dx, p = g1, h the quadratic and higher part."""
    x_star = np.asarray(x_star, dtype=float)
    G = taylor_shift(avg.g1, x_star, spec.deg_max)
    F = taylor_shift(avg.f_bar, x_star, spec.deg_max)
    p = G.constant_part().with_rho(spec.rho)
    B = G.linear_part().with_rho(spec.rho)
    eta = avg.eta
    h = F.degree_part(2, spec.deg_max) + G.degree_part(2, spec.deg_max) * eta
    h = TaylorFourierField(h.coeffs, spec.n, spec.d, spec.K, (spec.n,), spec.rho, spec.r, True, 2, spec.deg_max)
    A = np.real(F.linear_part().mean())
    if inf_norm(A - frame.A) > 1e-10 * max(1.0, inf_norm(A)):
        raise ValueError("frame does not belong to Df_bar(x*)")
    return NormalForm(frame.A.copy(), B, p, h, eta, eps, spec.rho, spec.r, x_star, frame, avg.u, avg.g1, avg.f_bar,
                      np.asarray(spec.center), spec.freq, spec.deg_max, {"du_margin": avg.du_margin, "neumann_remainder": avg.neumann_remainder})


def prepare(spec: SystemSpec, eps: float, x_init=None, neumann_terms: int = 8, margin_fraction: float = 0.8):
    """Averaging, equilibrium and normal form in one call."""
    avg = averaging_transform(spec, eps, neumann_terms)
    x0 = np.zeros(spec.n) if x_init is None else np.asarray(x_init, dtype=float) - np.asarray(spec.center)
    x_star, frame = find_equilibrium(avg.f_bar, x0, margin_fraction=margin_fraction)
    return to_normal_form(spec, x_star, frame, avg, eps)
