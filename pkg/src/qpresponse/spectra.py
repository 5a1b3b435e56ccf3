"""Diagonalisation with conditioning and separation margins.

The base frame fixes beta0, mu, mu_star and the ball radius alpha; frames of
nearby matrices inherit those and carry their own measured conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


class SpectrumError(ValueError):
    pass


class DegenerateSpectrumError(SpectrumError):
    pass


class SingularSpectrumError(SpectrumError):
    pass


class OutsideBallError(SpectrumError):
    pass


class ConclusionViolation(SpectrumError):
    pass


def inf_norm(M) -> float:
    """Induced infinity norm (max row sum); max-abs for vectors."""
    M = np.asarray(M)
    if M.ndim == 1:
        return float(np.abs(M).max(initial=0.0))
    return float(np.abs(M).sum(axis=1).max(initial=0.0))


def margins(lambdas):
    """(min, max) over |lambda_i| and |lambda_i - lambda_j|, i != j."""
    lam = np.asarray(lambdas, dtype=complex)
    vals = list(np.abs(lam))
    n = lam.size
    for i in range(n):
        for j in range(i + 1, n):
            vals.append(abs(lam[i] - lam[j]))
    return min(vals), max(vals)


def _order(lam):
    return np.lexsort((-lam.imag, lam.real))


def _normalise_columns(V):
    """Scale each column so its first largest-modulus entry equals 1."""
    V = V.copy()
    for j in range(V.shape[1]):
        a = np.abs(V[:, j])
        i = int(np.argmax(a >= a.max() * (1 - 1e-12)))
        V[:, j] /= V[i, j]
    return V


@dataclass(frozen=True)
class SpectralFrame:
    A: np.ndarray
    lambdas: np.ndarray
    C: np.ndarray
    C_inv: np.ndarray
    beta0: float
    mu: float
    mu_star: float
    alpha: float
    cond: float = field(default=np.nan)
    base: "SpectralFrame | None" = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return self.A.shape[0]

    def residual(self) -> float:
        """||C^-1 A C - diag(lambdas)||_inf."""
        return inf_norm(self.C_inv @ self.A @ self.C - np.diag(self.lambdas))

    def to_eigenbasis(self, M):
        return self.C_inv @ M @ self.C

    def summary(self):
        return {
            "lambdas_re": self.lambdas.real.tolist(),
            "lambdas_im": self.lambdas.imag.tolist(),
            "beta0": self.beta0,
            "cond": self.cond,
            "mu": self.mu,
            "mu_star": self.mu_star,
            "alpha": self.alpha,
        }


def alpha_radius(mu, beta0, n):
    return 2 * mu / ((3 * n - 1) * beta0**2)


def diagonalize(A, margin_fraction: float = 0.8, tol: float = 1e-9) -> SpectralFrame:
    """Base frame of a real matrix with distinct nonzero eigenvalues."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix expected")
    if not 0 < margin_fraction < 1:
        raise ValueError("margin_fraction must lie in (0, 1)")
    n = A.shape[0]
    scale = max(1.0, inf_norm(A))
    lam, V = np.linalg.eig(A)
    lam = lam.astype(complex)
    idx = _order(lam)
    lam, V = lam[idx], V[:, idx].astype(complex)
    if np.min(np.abs(lam)) <= tol * scale:
        raise SingularSpectrumError(f"zero eigenvalue within tolerance: {lam}")
    if n > 1:
        gaps = np.where(np.eye(n, dtype=bool), np.inf, np.abs(lam[:, None] - lam[None, :]))
        if gaps.min() <= tol * scale:
            raise DegenerateSpectrumError(f"repeated eigenvalue within tolerance: {lam}")
    C = _normalise_columns(V)
    C_inv = np.linalg.inv(C)
    beta0 = max(inf_norm(C), inf_norm(C_inv))
    lo, hi = margins(lam)
    mu = margin_fraction * 0.5 * lo
    mu_star = 1.01 * hi
    frame = SpectralFrame(A, lam, C, C_inv, beta0, mu, mu_star, alpha_radius(mu, beta0, n), beta0)
    res = frame.residual()
    if res > 1e-10 * scale:
        raise SpectrumError(f"diagonalisation residual {res:.2e} too large (ill-conditioned eigenvectors)")
    return frame


def match_eigenvalues(ref, lam):
    """Permutation p with lam[p] closest to ref (optimal assignment)."""
    cost = np.abs(np.asarray(ref)[:, None] - np.asarray(lam)[None, :])
    _, cols = linear_sum_assignment(cost)
    return cols


def perturbation_check(frame0: SpectralFrame, A_new, reference: SpectralFrame | None = None,
                       strict: bool = True) -> SpectralFrame:
    """Frame of a matrix inside the alpha-ball of ``frame0``.

    Eigenvalues are paired with ``reference`` (default ``frame0``) by nearest
    distance and eigenvector columns are aligned to the reference columns, so
    C stays close to the base diagonaliser.
    """
    base = frame0.base or frame0
    ref = reference or frame0
    A_new = np.array(A_new, dtype=float)
    dist = inf_norm(A_new - base.A)
    if dist >= base.alpha:
        raise OutsideBallError(f"||A - A0|| = {dist:.4g} >= alpha = {base.alpha:.4g}")
    lam, V = np.linalg.eig(A_new)
    lam = lam.astype(complex)
    p = match_eigenvalues(ref.lambdas, lam)
    lam, V = lam[p], V[:, p].astype(complex)
    for j in range(V.shape[1]):
        c, c0 = V[:, j], ref.C[:, j]
        V[:, j] = c * (np.vdot(c, c0) / np.vdot(c, c))
    C_inv = np.linalg.inv(V)
    cond = max(inf_norm(V), inf_norm(C_inv))
    frame = SpectralFrame(A_new, lam, V, C_inv, base.beta0, base.mu, base.mu_star, base.alpha, cond, base)
    if strict:
        lo, _ = margins(lam)
        if lo <= base.mu:
            raise ConclusionViolation(f"separation {lo:.4g} <= mu = {base.mu:.4g}")
        if cond > 2 * base.beta0:
            raise ConclusionViolation(f"conditioning {cond:.4g} > 2 beta0 = {2 * base.beta0:.4g}")
    return frame


def gerschgorin_margins(frame: SpectralFrame, A_m):
    """(mu_ok, mu_star_ok) for mu < |lambda_i|, |lambda_i - lambda_j| < mu_star."""
    lam = np.linalg.eigvals(np.asarray(A_m, dtype=float))
    lo, hi = margins(lam)
    return bool(lo > frame.mu), bool(hi < frame.mu_star)


def gerschgorin_discs(frame: SpectralFrame, A_m):
    """Centres and radii of the Gerschgorin discs of C0^-1 A_m C0.

    When the discs are pairwise disjoint each one holds exactly one
    eigenvalue, giving an a-priori enclosure independent of ``eig``.
    """
    M = frame.C_inv @ np.asarray(A_m, dtype=float) @ frame.C
    centres = np.diag(M).copy()
    radii = np.abs(M).sum(axis=1) - np.abs(centres)
    return centres, radii


def certified_margins(frame: SpectralFrame, A_m):
    """Margins certified from the disc enclosure; None when discs overlap."""
    c, r = gerschgorin_discs(frame, A_m)
    n = c.size
    for i in range(n):
        for j in range(i + 1, n):
            if abs(c[i] - c[j]) <= r[i] + r[j]:
                return None
    lo = [abs(c[i]) - r[i] for i in range(n)]
    hi = [abs(c[i]) + r[i] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            lo.append(abs(c[i] - c[j]) - r[i] - r[j])
            hi.append(abs(c[i] - c[j]) + r[i] + r[j])
    return min(lo) > frame.mu, max(hi) < frame.mu_star


def kappa_estimates(eps, frames):
    """Finite-difference Lipschitz constants of lambda(eps) and C(eps).

    Symmetric differences over consecutive triples; one-sided at the ends.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.size < 3:
        raise ValueError("need at least three samples")
    lam = np.array([f.lambdas for f in frames])
    Cs = np.array([f.C for f in frames])
    dl = np.gradient(lam, eps, axis=0)
    dC = np.gradient(Cs, eps, axis=0)
    k_lam = float(np.abs(dl).max())
    k_C = float(max(inf_norm(m) for m in dC))
    return k_C, k_lam
