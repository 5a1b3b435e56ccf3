"""Preprocessing into the first-order form ``x' = eps^a f + eps^b g``.

* general exponents: parameter rescaling eps -> eps^delta
* second-order systems ``x'' = eps^a F(wt, x, x') + eps^b G``: doubled first-order system
* degenerate systems ``x' = phi(x) + h(wt, x) + eps f(wt, x)`` with phi homogeneous of degree l
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .averaging import SystemSpec, averaging_transform, find_equilibrium, poly_value
from .fourier import Frequency
from .taylor import TaylorFourierField


class InvalidExponents(ValueError):
    pass


class HypothesisError(ValueError):
    pass


@dataclass(frozen=True)
class ExponentPlan:
    a: float
    b: float
    delta: float
    a0: float
    b0: float
    branch: str
    delta1: float | None

    def window(self, eps1: float):
        """Parameter window (eps1^delta1, eps1) when a0 > 1, else (0, eps1)."""
        return (eps1**self.delta1 if self.delta1 else 0.0, eps1)


def plan_exponents(a: float, b: float) -> ExponentPlan:
    """Smallest admissible delta >= 1 and the resulting exponents."""
    if not (a > 0 and b > a):
        raise InvalidExponents(f"need b > a > 0, got a={a}, b={b}")
    if math.isclose(b, 2 * a, rel_tol=1e-12):
        delta = max(1.0, 1 / a)
        branch = "b=2a"
    else:
        delta = max(1.0, 1 / a, 1 / abs(b - 2 * a), 1 / (b - a))
        branch = "b>2a" if b > 2 * a else "b<2a"
    a0 = delta * a
    b0 = 2 * delta * a if b >= 2 * a else delta * b
    delta1 = 0.5 * (1 + 1 + 1 / (a0 - 1)) if a0 > 1 + 1e-12 else None
    return ExponentPlan(a, b, delta, a0, b0, branch, delta1)


def rescale_general(spec: SystemSpec):
    """eps = e^delta: same trajectories, exponents (delta a, delta b), g powers scaled by delta."""
    plan = plan_exponents(spec.a, spec.b)
    d = plan.delta
    g_terms = tuple((d * q, G) for q, G in spec.g_terms)
    new = spec.with_(a=d * spec.a, b=d * spec.b, g_terms=g_terms, name=f"{spec.name}-rescaled")
    return plan, new


def rescaled_remainder(plan: ExponentPlan, rescaled: SystemSpec, eps: float):
    """g2 at fixed eps, so that y' = eps^a0 f_bar(y) + eps^b0 g2 after averaging."""
    avg = averaging_transform(rescaled, eps)
    # averaging gives eta f_bar + eta^2 g1 with eta = eps^a0
    return avg.f_bar, avg.g1 * eps ** (2 * plan.a0 - plan.b0), avg


# ---------------------------------------------------------------------------
# helpers on polynomial fields


def _group(terms):
    """{power: {alpha: coeff}} -> list of (power, coeff dict) with merged powers."""
    out = defaultdict(dict)
    for p, a, v in terms:
        key = round(p, 12)
        out[key][a] = out[key][a] + v if a in out[key] else v
    return sorted(out.items())


def _field(coeffs, template: TaylorFourierField, n, shape):
    return TaylorFourierField(coeffs, n, template.d, template.K, shape, template.rho, template.r, template.is_real)


# ---------------------------------------------------------------------------
# second-order systems


@dataclass
class SecondOrderReduction:
    spec: SystemSpec
    plan: ExponentPlan
    x_star: np.ndarray
    DF0: np.ndarray
    mu: np.ndarray
    doubled: np.ndarray
    branch_error: float


def second_order_reduce(F: TaylorFourierField, G_terms, a: float, b: float, freq: Frequency, rho: float = 0.5,
                        r: float = 1.0, x_init=None, tol: float = 1e-10) -> SecondOrderReduction:
    """First-order system for x'' = eps^a F(wt, x, x') + eps^b G(wt, x, x', eps).

    F lives on (x, v) with v = x'.  In y = eps^(-a/2) v:
    x' = eps^(a/2) y, y' = eps^(a/2) F(x, 0) + eps^a F1 + eps^(b - a/2) G(x, eps^(a/2) y).
    """
    if not (a > 0 and b > a):
        raise InvalidExponents(f"need b > a > 0, got a={a}, b={b}")
    n = F.shape[0]
    if F.n != 2 * n:
        raise ValueError("F must depend on (x, x') with x' of the same dimension as x")
    h = a / 2
    b1 = min(a, b - h)
    d, K = F.d, F.K
    box = (2 * K + 1,) * d

    def pad(v, top):
        out = np.zeros((2 * n,) + box, dtype=complex)
        if top:
            out[:n] = v
        else:
            out[n:] = v
        return out

    f = {}
    for j in range(n):
        e = np.zeros((2 * n,) + box, dtype=complex)
        e[(j,) + (K,) * d] = 1.0
        f[tuple(1 if i == n + j else 0 for i in range(2 * n))] = e
    terms = []
    for alpha, v in F.coeffs.items():
        av = sum(alpha[n:])
        if av == 0:
            f[alpha] = f[alpha] + pad(v, False) if alpha in f else pad(v, False)
        else:
            terms.append((a - b1 + h * (av - 1), alpha, pad(v, False)))
    for q, G in G_terms:
        if G.n != 2 * n or G.shape != (n,):
            raise ValueError("G must match F")
        for alpha, v in G.coeffs.items():
            terms.append((b - h - b1 + h * sum(alpha[n:]) + q, alpha, pad(v, False)))
    ff = _field(f, F, 2 * n, (2 * n,))
    g_terms = [(p, _field(c, F, 2 * n, (2 * n,))) for p, c in _group(terms)]
    spec = SystemSpec(freq, ff.with_(rho=2 * rho, r=r), tuple(g_terms), h, b1, rho, r, None,
                      max(2, max(F.degrees(), default=0)), "second-order")
    # spectral hypothesis on the averaged F(x, 0)
    F0 = _field({al[:n]: v for al, v in F.mean().coeffs.items() if sum(al[n:]) == 0}, F, n, (n,))
    x0 = np.zeros(n) if x_init is None else np.asarray(x_init, float)
    x_star, frame = find_equilibrium(F0, x0)
    DF0 = frame.A
    J = np.block([[np.zeros((n, n)), np.eye(n)], [DF0, np.zeros((n, n))]])
    lam = np.linalg.eigvals(J)
    mu = np.linalg.eigvals(DF0)
    scale = max(1.0, float(np.abs(mu).max()))
    err = max(float(np.min(np.abs(l**2 - mu))) for l in lam)
    for m_ in mu:
        roots = np.sqrt(complex(m_)) * np.array([1, -1])
        err = max(err, max(float(np.min(np.abs(lam - z))) for z in roots))
    if err > tol * scale:
        raise HypothesisError(f"doubled spectrum does not match the square-root branches (err={err:.2e})")
    gaps = np.where(np.eye(2 * n, dtype=bool), np.inf, np.abs(lam[:, None] - lam[None, :]))
    if np.abs(lam).min() <= tol * scale or gaps.min() <= tol * scale:
        raise HypothesisError("doubled Jacobian has a zero or repeated eigenvalue")
    plan = plan_exponents(h, b1)
    return SecondOrderReduction(spec, plan, np.concatenate([x_star, np.zeros(n)]), DF0, mu, lam, err)


def second_order_rhs(F: TaylorFourierField, G_terms, a, b, freq: Frequency, eps):
    """(t, (x, v)) -> (v, eps^a F + eps^b G) for direct integration."""
    from .oracles import CompiledField

    cF = CompiledField(F)
    cG = [(q, CompiledField(G)) for q, G in G_terms]
    n = F.shape[0]
    omega = freq.vector

    def rhs(t, s):
        th = omega * t
        acc = eps**a * cF(th, s) + sum(eps ** (b + q) * c(th, s) for q, c in cG)
        return np.concatenate([s[n:], acc])

    return rhs


# ---------------------------------------------------------------------------
# degenerate systems


def check_homogeneous(phi: TaylorFourierField, l: int, samples: int = 32, rtol: float = 1e-10, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        x = rng.uniform(-1, 1, phi.n)
        s = rng.uniform(0.1, 3.0)
        lhs = poly_value(phi, s * x)
        rhs = s**l * poly_value(phi, x)
        worst = max(worst, float(np.abs(lhs - rhs).max() / max(np.abs(rhs).max(), 1e-300)))
    if worst > rtol:
        raise HypothesisError(f"phi is not homogeneous of degree {l} (rel. defect {worst:.2e})")
    return worst


@dataclass
class DegenerateScaling:
    spec: SystemSpec
    l: int
    phi1: TaylorFourierField
    x_star: np.ndarray | None


def degenerate_scale(phi: TaylorFourierField, h: TaylorFourierField, f: TaylorFourierField, l: int, freq: Frequency,
                     rho: float = 0.5, r: float = 1.0, x_init=None) -> DegenerateScaling:
    """x = tau y, tau = eps^(1/l): y' = tau^(l-1) phi1 + tau^l g(wt, y, tau) as a SystemSpec in tau."""
    if l < 2:
        raise ValueError("degenerate scaling needs l >= 2")
    if any(sum(al) != l for al in phi.coeffs) or not phi.oscillation().is_zero():
        raise HypothesisError("phi must be an angle-independent homogeneous polynomial")
    check_homogeneous(phi, l)
    if any(sum(al) < l + 1 for al in h.coeffs):
        raise HypothesisError(f"h must vanish to order {l + 1}")
    n = phi.n
    zero = (0,) * n
    phi1 = phi + TaylorFourierField({zero: f.coeff(zero).c}, n, f.d, f.K, (n,), f.rho, f.r) \
        if zero in f.coeffs else phi
    terms = []
    for al, v in h.coeffs.items():
        terms.append((sum(al) - l - 1, al, v))
    for al, v in f.coeffs.items():
        if sum(al):
            terms.append((sum(al) - 1, al, v))
    g_terms = tuple((p, _field(c, f, n, (n,))) for p, c in _group(terms))
    spec = SystemSpec(freq, phi1.with_(rho=2 * rho, r=r), g_terms, l - 1, l, rho, r, None,
                      max([2] + phi1.degrees() + [x for _, G in g_terms for x in G.degrees()]), "degenerate")
    x_star = None
    if x_init is not None:
        x_star, _ = find_equilibrium(phi1.mean(), x_init)
    return DegenerateScaling(spec, l, phi1, x_star)


def degenerate_rhs(phi, h, f, freq: Frequency):
    """Original right-hand side (theta, x, eps) -> phi(x) + h(theta, x) + eps f(theta, x)."""

    def rhs(theta, x, eps):
        return np.real(phi.evaluate(theta, x) + h.evaluate(theta, x) + eps * f.evaluate(theta, x))

    return rhs
