"""Truncated Fourier series on the d-torus.

Coefficients live on the box ``[-K, K]^d`` with everything outside the
diamond ``|k|_1 <= K`` held at zero.  Products are exact truncated
convolutions computed on an anti-aliased FFT grid whose size follows the
active support of the operands, so structurally absent modes stay exactly
zero.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from itertools import product as iproduct

import numpy as np
import scipy.fft as sfft


NOISE = 1e-15


class WidthError(ValueError):
    """Raised when a norm is requested beyond the declared analyticity width."""


class SmallDivisorError(ArithmeticError):
    """A divisor fell below the admissible floor."""

    def __init__(self, k, value, floor):
        self.k = tuple(int(x) for x in k)
        self.value = float(value)
        self.floor = float(floor)
        super().__init__(f"small divisor |d(k)|={self.value:.3e} < {self.floor:.3e} at k={self.k}")


# ---------------------------------------------------------------------------
# index helpers


@functools.lru_cache(maxsize=64)
def _kaxes(d: int, K: int) -> tuple[np.ndarray, ...]:
    ax = np.arange(-K, K + 1)
    return tuple(np.meshgrid(*([ax] * d), indexing="ij"))


@functools.lru_cache(maxsize=64)
def k_order(d: int, K: int) -> np.ndarray:
    """|k|_1 on the coefficient box."""
    return sum(np.abs(a) for a in _kaxes(d, K))


@functools.lru_cache(maxsize=64)
def diamond(d: int, K: int) -> np.ndarray:
    return k_order(d, K) <= K


@functools.lru_cache(maxsize=64)
def k_list(d: int, K: int, include_zero: bool = False) -> np.ndarray:
    """All k with 0 < |k| <= K (rows), in box order."""
    ks = np.stack([a.ravel() for a in _kaxes(d, K)], axis=1)
    o = np.abs(ks).sum(axis=1)
    keep = (o <= K) & ((o > 0) | include_zero)
    return ks[keep]


def k_dot(d: int, K: int, omega) -> np.ndarray:
    """<k, omega> on the coefficient box."""
    omega = np.asarray(omega, dtype=float)
    return sum(w * a for w, a in zip(omega, _kaxes(d, K)))


def _box_index(k, K):
    return tuple(int(x) + K for x in k)


# ---------------------------------------------------------------------------
# grid transforms


def _extent(c: np.ndarray, d: int, K: int) -> tuple[int, ...]:
    """Per-axis max |k_j| over nonzero coefficients; -1 for an empty series."""
    lead = tuple(range(c.ndim - d))
    nz = np.any(c != 0, axis=lead) if lead else (c != 0)
    if not nz.any():
        return (-1,) * d
    out = []
    for j in range(d):
        other = tuple(a for a in range(d) if a != j)
        line = np.any(nz, axis=other) if other else nz
        idx = np.nonzero(line)[0] - K
        out.append(int(np.abs(idx).max()))
    return tuple(out)


def grid_sizes(extents_a, extents_b, K) -> tuple[int, ...]:
    """Anti-aliased grid for the product of two supports, kept to |k_j| <= K."""
    sizes = []
    for ea, eb in zip(extents_a, extents_b):
        s = max(ea, 0) + max(eb, 0)
        w = min(s, K)
        sizes.append(sfft.next_fast_len(s + w + 1))
    return tuple(sizes)


def to_grid(c: np.ndarray, d: int, K: int, sizes, ext=None) -> np.ndarray:
    """Values on the uniform grid ``theta_j = 2 pi i / N_j``."""
    if ext is None:
        ext = _extent(c, d, K)
    lead = c.shape[: c.ndim - d]
    G = np.zeros(lead + tuple(sizes), dtype=complex)
    if min(ext) < 0:
        return G
    src = tuple(slice(K - e, K + e + 1) for e in ext)
    dst = np.ix_(*[np.arange(-e, e + 1) % N for e, N in zip(ext, sizes)])
    G[(Ellipsis,) + dst] = c[(Ellipsis,) + src]
    axes = tuple(range(-d, 0))
    return sfft.ifftn(G, axes=axes, norm="forward")


def from_grid(vals: np.ndarray, d: int, K: int, keep=None) -> np.ndarray:
    """Fourier coefficients of grid values, truncated to the diamond."""
    sizes = vals.shape[-d:]
    axes = tuple(range(-d, 0))
    F = sfft.fftn(vals, axes=axes, norm="forward")
    lead = vals.shape[: vals.ndim - d]
    c = np.zeros(lead + (2 * K + 1,) * d, dtype=complex)
    if keep is None:
        keep = tuple(min(K, (N - 1) // 2) for N in sizes)
    src = np.ix_(*[np.arange(-w, w + 1) % N for w, N in zip(keep, sizes)])
    dst = tuple(slice(K - w, K + w + 1) for w in keep)
    c[(Ellipsis,) + dst] = F[(Ellipsis,) + src]
    c *= diamond(d, K)
    return c


def hermitian_project(c: np.ndarray, d: int) -> np.ndarray:
    """Average with the conjugate reflection so that c(-k) = conj(c(k)) exactly."""
    axes = tuple(range(c.ndim - d, c.ndim))
    return 0.5 * (c + np.conj(np.flip(c, axis=axes)))


def _value_norm(v: np.ndarray, nshape: int) -> np.ndarray:
    """Vector max-abs / matrix induced inf-norm, broadcast over trailing axes."""
    a = np.abs(v)
    if nshape == 0:
        return a
    if nshape == 1:
        return a.max(axis=0)
    if nshape == 2:
        return a.sum(axis=1).max(axis=0)
    raise ValueError("value rank > 2 not supported")


def value_norm(v) -> float:
    """Sup norm of a vector, induced inf-norm of a matrix."""
    v = np.asarray(v)
    return float(_value_norm(v, v.ndim))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Frequency:
    """Forcing frequency with its Diophantine data (gamma, tau)."""

    omega: tuple
    gamma: float
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.tau <= self.d - 1:
            raise ValueError("tau must exceed d - 1")

    @property
    def d(self) -> int:
        return len(self.omega)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.omega)

    def check(self, K_check: int):
        """Truncated Diophantine check |<k,w>| >= gamma |k|^-tau for 0 < |k| <= K_check.

        Returns ``(passed, worst_k, lhs, rhs)`` at the minimising ratio.
        """
        ks = k_list(self.d, K_check)
        lhs = np.abs(ks @ self.vector)
        rhs = self.gamma * np.abs(ks).sum(axis=1) ** (-self.tau)
        i = int(np.argmin(lhs / rhs))
        return bool(np.all(lhs >= rhs)), tuple(int(x) for x in ks[i]), float(lhs[i]), float(rhs[i])


class FourierSeries:
    """Finite Fourier series ``sum_k c_k e^{i<k, theta>}`` with values of a fixed shape.

    Parameters
    ----------
    coeffs : array, shape ``shape + (2K+1,)*d``
    K : truncation order (|k|_1 <= K)
    rho : declared analyticity width
    shape : value shape, () scalar, (n,) vector, (n, n) matrix
    """

    __slots__ = ("c", "K", "d", "rho", "shape", "is_real")
    __array_ufunc__ = None  # let ndarray @ series defer to __rmatmul__

    def __init__(self, coeffs, K: int, rho: float = 1.0, shape=(), is_real: bool = True):
        c = np.array(coeffs, dtype=complex)
        shape = tuple(shape)
        d = c.ndim - len(shape)
        if d < 1 or c.shape[len(shape):] != (2 * K + 1,) * d:
            raise ValueError(f"coefficient array {c.shape} incompatible with K={K}, shape={shape}")
        if rho <= 0:
            raise ValueError("rho must be positive")
        c *= diamond(d, K)
        c.setflags(write=False)
        self.c, self.K, self.d, self.rho, self.shape, self.is_real = c, int(K), d, float(rho), shape, bool(is_real)

    # -- construction ------------------------------------------------------

    @classmethod
    def zeros(cls, d, K, shape=(), rho=1.0, is_real=True):
        return cls(np.zeros(tuple(shape) + (2 * K + 1,) * d), K, rho, shape, is_real)

    @classmethod
    def constant(cls, value, d, K, rho=1.0):
        value = np.asarray(value, dtype=complex)
        c = np.zeros(value.shape + (2 * K + 1,) * d, dtype=complex)
        c[(Ellipsis,) + (K,) * d] = value
        return cls(c, K, rho, value.shape, bool(np.all(value.imag == 0)))

    @classmethod
    def from_modes(cls, modes: dict, d, K, shape=(), rho=1.0, is_real=True):
        c = np.zeros(tuple(shape) + (2 * K + 1,) * d, dtype=complex)
        for k, v in modes.items():
            k = tuple(k)
            if sum(abs(x) for x in k) > K:
                raise ValueError(f"mode {k} outside truncation K={K}")
            c[(Ellipsis,) + _box_index(k, K)] += np.asarray(v, dtype=complex)
        return cls(c, K, rho, shape, is_real)

    @classmethod
    def from_samples(cls, func, d, K, shape=(), rho=1.0, N=None, is_real=True, chop=1e-15):
        """Interpolate ``func(theta)`` on a grid and truncate.

        ``theta`` has shape ``(N,)*d + (d,)`` and ``func`` returns ``(N,)*d + shape``.
        """
        N = N or sfft.next_fast_len(4 * K + 8)
        ax = 2 * np.pi * np.arange(N) / N
        th = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
        vals = np.asarray(func(th), dtype=complex)
        vals = np.moveaxis(vals, tuple(range(d)), tuple(range(vals.ndim - d, vals.ndim)))
        c = from_grid(vals, d, K, keep=(K,) * d)
        c[np.abs(c) <= chop * np.abs(c).max(initial=0.0)] = 0
        if is_real:
            c = hermitian_project(c, d)
        return cls(c, K, rho, shape, is_real)

    def _new(self, c, rho=None, shape=None, is_real=None):
        return FourierSeries(
            c, self.K, self.rho if rho is None else rho,
            self.shape if shape is None else shape,
            self.is_real if is_real is None else is_real,
        )

    def with_rho(self, rho):
        return self._new(self.c, rho=rho)

    # -- inspection --------------------------------------------------------

    def coeff(self, k):
        k = tuple(k)
        if sum(abs(x) for x in k) > self.K:
            return np.zeros(self.shape, dtype=complex)
        return self.c[(Ellipsis,) + _box_index(k, self.K)]

    def modes(self):
        """Nonzero modes as a dict k -> value."""
        nz = np.any(self.c != 0, axis=tuple(range(len(self.shape)))) if self.shape else self.c != 0
        return {tuple(int(x) - self.K for x in idx): self.c[(Ellipsis,) + tuple(idx)] for idx in zip(*np.nonzero(nz))}

    @property
    def extent(self):
        return _extent(self.c, self.d, self.K)

    def is_zero(self) -> bool:
        return not np.any(self.c)

    def reality_defect(self) -> float:
        """max |c(-k) - conj(c(k))|."""
        axes = tuple(range(len(self.shape), self.c.ndim))
        return float(np.max(np.abs(self.c - np.conj(np.flip(self.c, axis=axes))), initial=0.0))

    def norm(self, rho_eval=None) -> float:
        return majorant_norm(self, self.rho if rho_eval is None else rho_eval)

    def tail(self, order: int, rho_eval=0.0) -> float:
        """Majorant mass carried by modes with |k| >= order."""
        w = np.exp(rho_eval * k_order(self.d, self.K)) * (k_order(self.d, self.K) >= order)
        return float(np.sum(_value_norm(self.c, len(self.shape)) * w))

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, theta):
        """Values at angles ``theta`` of shape (..., d)."""
        theta = np.asarray(theta, dtype=float)
        lead = theta.shape[:-1]
        modes = self.modes()
        out = np.zeros(lead + self.shape, dtype=complex)
        if not modes:
            return out.real if self.is_real else out
        ks = np.array(list(modes.keys()), dtype=float)
        vs = np.array(list(modes.values()))
        ph = np.exp(1j * (theta.reshape(-1, self.d) @ ks.T))
        out = np.tensordot(ph, vs, axes=(1, 0)).reshape(lead + self.shape)
        return out.real if self.is_real else out

    def grid_values(self, N):
        sizes = (N,) * self.d if np.isscalar(N) else tuple(N)
        v = to_grid(self.c, self.d, self.K, sizes)
        return v.real if self.is_real else v

    # -- algebra ------------------------------------------------------------

    def _check(self, other):
        if not isinstance(other, FourierSeries):
            raise TypeError("expected FourierSeries")
        if (other.d, other.K) != (self.d, self.K):
            raise ValueError("incompatible torus dimension or truncation")

    def __add__(self, other):
        if isinstance(other, FourierSeries):
            self._check(other)
            return self._new(self.c + other.c, rho=min(self.rho, other.rho), is_real=self.is_real and other.is_real)
        return self + FourierSeries.constant(np.broadcast_to(other, self.shape), self.d, self.K)

    __radd__ = __add__

    def __neg__(self):
        return self._new(-self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        if isinstance(s, FourierSeries):
            return product(self, s)
        s = complex(s)
        return self._new(self.c * s, is_real=self.is_real and s.imag == 0)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / complex(s))

    def __matmul__(self, other):
        if isinstance(other, FourierSeries):
            return matmul(self, other)
        other = np.asarray(other)
        c = np.moveaxis(np.tensordot(self.c, other, axes=([len(self.shape) - 1], [0])), -1, len(self.shape) - 1) \
            if other.ndim == 2 else np.tensordot(self.c, other, axes=([len(self.shape) - 1], [0]))
        shape = self.shape[:-1] + other.shape[1:]
        return self._new(c, shape=shape, is_real=self.is_real and not np.iscomplexobj(other))

    def __rmatmul__(self, M):
        M = np.asarray(M)
        c = np.tensordot(M, self.c, axes=([M.ndim - 1], [0]))
        return self._new(c, shape=M.shape[:-1] + self.shape[1:], is_real=self.is_real and not np.iscomplexobj(M))

    @property
    def T(self):
        if len(self.shape) != 2:
            raise ValueError("transpose needs a matrix series")
        return self._new(np.swapaxes(self.c, 0, 1), shape=self.shape[::-1])

    def __getitem__(self, idx):
        sub = self.c[idx] if isinstance(idx, tuple) else self.c[idx, ...]
        shape = sub.shape[: sub.ndim - self.d]
        return self._new(sub, shape=shape)

    def real_projection(self):
        """Hermitian projection; marks the result real."""
        return self._new(hermitian_project(self.c, self.d), is_real=True)

    def truncate(self, K_new: int):
        """Drop modes with |k| > K_new (storage K unchanged)."""
        return self._new(self.c * (k_order(self.d, self.K) <= K_new))

    # -- averaging split / homological kernels --------------------------------

    def mean(self):
        return self.c[(Ellipsis,) + (self.K,) * self.d].copy()

    def oscillation(self):
        c = self.c.copy()
        c[(Ellipsis,) + (self.K,) * self.d] = 0
        return self._new(c)

    def average_split(self):
        return average_split(self)

    def ddt(self, omega):
        """Time derivative along theta = omega t: multiply by i<k, omega>."""
        return self._new(self.c * (1j * k_dot(self.d, self.K, omega)))

    def __repr__(self):
        return f"FourierSeries(d={self.d}, K={self.K}, shape={self.shape}, rho={self.rho}, modes={len(self.modes())})"


# ---------------------------------------------------------------------------
# module level operations


def majorant_norm(s: FourierSeries, rho_eval: float) -> float:
    """sum_k ||c_k|| e^{rho |k|}; dominates the sup norm on the strip of width rho."""
    if rho_eval > s.rho * (1 + 1e-12):
        raise WidthError(f"rho_eval={rho_eval} exceeds declared width {s.rho}")
    w = np.exp(rho_eval * k_order(s.d, s.K))
    return float(np.sum(_value_norm(s.c, len(s.shape)) * w))


def average_split(s: FourierSeries):
    """(mean, oscillation) with mean + oscillation == s."""
    return s.mean(), s.oscillation()


def divide_by_divisor(s: FourierSeries, divisor, floor: float, rho=None) -> FourierSeries:
    """Coefficientwise ``c_k / divisor(k)``.

    ``divisor`` receives an integer array of shape (M, d) and returns values of
    shape (M,) or (M,) + s.shape.  Modes where the coefficient vanishes are
    skipped, so a zero-mean input tolerates ``divisor(0) == 0``.
    """
    ks = k_list(s.d, s.K, include_zero=True)
    idx = tuple((ks + s.K).T)
    vals = s.c[(Ellipsis,) + idx]  # shape + (M,)
    vals = np.moveaxis(vals, -1, 0)  # (M,) + shape
    dv = np.asarray(divisor(ks), dtype=complex)
    dv = np.broadcast_to(dv.reshape(dv.shape + (1,) * (vals.ndim - dv.ndim)), vals.shape)
    active = vals != 0
    small = active & (np.abs(dv) < floor)
    if small.any():
        where = np.argwhere(small)[0]
        raise SmallDivisorError(ks[where[0]], abs(dv[tuple(where)]), floor)
    out = np.zeros_like(vals)
    np.divide(vals, dv, out=out, where=active)
    c = np.zeros_like(s.c)
    c[(Ellipsis,) + idx] = np.moveaxis(out, 0, -1)
    return s._new(c, rho=s.rho if rho is None else rho, is_real=False)


def _binary(a: FourierSeries, b: FourierSeries, subscripts: str, shape) -> FourierSeries:
    a._check(b)
    d, K = a.d, a.K
    ea, eb = a.extent, b.extent
    rho = min(a.rho, b.rho)
    real = a.is_real and b.is_real
    if min(ea) < 0 or min(eb) < 0:
        return FourierSeries.zeros(d, K, shape, rho, real)
    sizes = grid_sizes(ea, eb, K)
    ga = to_grid(a.c, d, K, sizes, ea)
    gb = to_grid(b.c, d, K, sizes, eb)
    gv = np.einsum(subscripts, ga, gb)
    keep = tuple(min(x + y, K) for x, y in zip(ea, eb))
    c = from_grid(gv, d, K, keep)
    # FFT round-off lands on structurally empty modes; drop it entrywise
    axes = tuple(range(-d, 0))
    bound = np.einsum(subscripts, np.abs(a.c).sum(axis=axes), np.abs(b.c).sum(axis=axes))
    c[np.abs(c) <= NOISE * bound[(Ellipsis,) + (None,) * d]] = 0
    if real:
        c = hermitian_project(c, d)
    return FourierSeries(c, K, rho, shape, real)


def product(a: FourierSeries, b: FourierSeries) -> FourierSeries:
    """Pointwise product where at least one factor is scalar valued."""
    if a.shape and b.shape:
        raise ValueError("use matmul for two non-scalar series")
    if not a.shape:
        return _binary(a, b, "...,...->...", b.shape) if not b.shape else _binary(a, b, "...,...->...", ())
    return _binary(b, a, "...,...->...", a.shape)


def matmul(a: FourierSeries, b: FourierSeries) -> FourierSeries:
    """Matrix-matrix or matrix-vector product of series."""
    if len(a.shape) != 2:
        raise ValueError("left factor must be matrix valued")
    if len(b.shape) == 2:
        return _binary(a, b, "ij...,jk...->ik...", (a.shape[0], b.shape[1]))
    if len(b.shape) == 1:
        return _binary(a, b, "ij...,j...->i...", (a.shape[0],))
    raise ValueError("right factor must be matrix or vector valued")


def identity(n, d, K) -> FourierSeries:
    return FourierSeries.constant(np.eye(n), d, K)


def neumann_inverse(S: FourierSeries, scale: float, terms: int = 8, rho_eval=None):
    """(I + scale*S)^{-1} by a truncated Neumann series.

    Returns the series and the remainder bound ``q^terms / (1 - q)`` with
    ``q = |scale| * ||S||_rho``; raises if ``q >= 1``.
    """
    n = S.shape[0]
    q = abs(scale) * S.norm(rho_eval)
    if q >= 1:
        raise ValueError(f"Neumann precondition failed: |scale|*||S|| = {q:.3g} >= 1")
    term = identity(n, S.d, S.K).with_rho(S.rho)
    total = term
    for _ in range(1, terms):
        term = matmul(term, S) * (-scale)
        total = total + term
    return total, q**terms / (1 - q)


def count_modes(d: int, s: int) -> int:
    """Number of k in Z^d with |k|_1 == s."""
    if s == 0:
        return 1
    from math import comb

    return sum(2**j * comb(d, j) * comb(s - 1, j - 1) for j in range(1, min(d, s) + 1))


def all_modes(d: int, K: int):
    """Iterate over k with |k| <= K (tuples)."""
    for k in iproduct(range(-K, K + 1), repeat=d):
        if sum(abs(x) for x in k) <= K:
            yield k
