"""Fields polynomial in the state z and Fourier in the angle theta.

A field is stored as ``{alpha: coefficient array}`` where each array has the
value shape followed by the ``(2K+1,)*d`` Fourier box.  Compositions are done
on a single anti-aliased grid and truncated once at the end.
"""

from __future__ import annotations

from itertools import combinations_with_replacement
from math import prod

import numpy as np
import scipy.fft as sfft

from .fourier import (
    NOISE,
    FourierSeries,
    _extent,
    diamond,
    from_grid,
    hermitian_project,
    k_order,
    majorant_norm,
    to_grid,
)

GRID_BUDGET = 1 << 22


class TruncationOverflow(RuntimeError):
    pass


def multi_indices(n: int, lo: int, hi: int) -> list[tuple[int, ...]]:
    """All alpha in N^n with lo <= |alpha| <= hi, graded."""
    out = []
    for deg in range(lo, hi + 1):
        for combo in combinations_with_replacement(range(n), deg):
            a = [0] * n
            for j in combo:
                a[j] += 1
            out.append(tuple(a))
    return out


def unit(n, j):
    a = [0] * n
    a[j] = 1
    return tuple(a)


def _add_into(acc: dict, key, val):
    if key in acc:
        acc[key] = acc[key] + val
    else:
        acc[key] = val


class TaylorFourierField:
    """``F(theta, z) = sum_alpha F_alpha(theta) z^alpha``.

    ``coeffs`` maps alpha to arrays of shape ``shape + (2K+1,)*d`` or to
    FourierSeries.  Zero coefficients are dropped.
    """

    __slots__ = ("coeffs", "n", "d", "K", "shape", "rho", "r", "is_real", "deg_min", "deg_max")
    __array_ufunc__ = None

    def __init__(self, coeffs, n, d, K, shape=None, rho=1.0, r=1.0, is_real=True, deg_min=None, deg_max=None):
        box = (2 * K + 1,) * d
        clean = {}
        for a, v in coeffs.items():
            a = tuple(int(x) for x in a)
            if len(a) != n or min(a, default=0) < 0:
                raise ValueError(f"bad multi-index {a} for n={n}")
            if isinstance(v, FourierSeries):
                v = v.c
            v = np.array(v, dtype=complex)
            if shape is None:
                shape = v.shape[: v.ndim - d]
            if v.shape != tuple(shape) + box:
                raise ValueError(f"coefficient for {a} has shape {v.shape}")
            if np.any(v):
                v *= diamond(d, K)
                v.setflags(write=False)
                clean[a] = v
        if shape is None:
            raise ValueError("cannot infer value shape from an empty field")
        degs = [sum(a) for a in clean]
        lo = min(degs, default=0) if deg_min is None else int(deg_min)
        hi = max(degs, default=lo) if deg_max is None else int(deg_max)
        if any(g < lo or g > hi for g in degs):
            raise ValueError(f"stored degrees {sorted(set(degs))} outside window [{lo}, {hi}]")
        self.coeffs = clean
        self.n, self.d, self.K, self.shape = int(n), int(d), int(K), tuple(shape)
        self.rho, self.r, self.is_real = float(rho), float(r), bool(is_real)
        self.deg_min, self.deg_max = lo, hi

    # -- construction ------------------------------------------------------

    @classmethod
    def zeros(cls, n, d, K, shape, rho=1.0, r=1.0, deg_min=0, deg_max=0):
        return cls({}, n, d, K, shape, rho, r, True, deg_min, deg_max)

    @classmethod
    def from_polynomial(cls, terms: dict, n, d, K, rho=1.0, r=1.0, deg_min=None, deg_max=None):
        """Angle-independent field from ``{alpha: value}``."""
        coeffs = {}
        shape = None
        for a, v in terms.items():
            v = np.asarray(v, dtype=complex)
            shape = v.shape
            c = np.zeros(v.shape + (2 * K + 1,) * d, dtype=complex)
            c[(Ellipsis,) + (K,) * d] = v
            coeffs[a] = c
        real = all(np.all(np.asarray(v).imag == 0) for v in terms.values())
        return cls(coeffs, n, d, K, shape, rho, r, real, deg_min, deg_max)

    @classmethod
    def from_series(cls, c: FourierSeries, n, r=1.0):
        """Degree-0 field carrying the series ``c``."""
        return cls({(0,) * n: c.c}, n, c.d, c.K, c.shape, c.rho, r, c.is_real, 0, 0)

    @classmethod
    def from_linear(cls, L, n=None, d=None, K=None, rho=1.0, r=1.0):
        """Degree-1 field ``z -> L z`` for a constant matrix or a matrix FourierSeries."""
        if isinstance(L, FourierSeries):
            n = L.shape[1]
            coeffs = {unit(n, j): L.c[:, j] for j in range(n)}
            return cls(coeffs, n, L.d, L.K, (L.shape[0],), L.rho, r, L.is_real, 1, 1)
        L = np.asarray(L)
        n = L.shape[1]
        return cls.from_polynomial({unit(n, j): L[:, j] for j in range(n)}, n, d, K, rho, r, 1, 1)

    @classmethod
    def identity(cls, n, d, K, rho=1.0, r=1.0):
        return cls.from_linear(np.eye(n), n, d, K, rho, r)

    def _new(self, coeffs, shape=None, deg_min=None, deg_max=None, is_real=None, rho=None, r=None, n=None):
        return TaylorFourierField(
            coeffs, self.n if n is None else n, self.d, self.K,
            self.shape if shape is None else shape,
            self.rho if rho is None else rho,
            self.r if r is None else r,
            self.is_real if is_real is None else is_real,
            deg_min, deg_max,
        )

    def with_(self, rho=None, r=None):
        return self._new(self.coeffs, rho=rho, r=r, deg_min=self.deg_min, deg_max=self.deg_max)

    # -- inspection --------------------------------------------------------

    def coeff(self, alpha) -> FourierSeries:
        alpha = tuple(alpha)
        c = self.coeffs.get(alpha)
        if c is None:
            return FourierSeries.zeros(self.d, self.K, self.shape, self.rho, self.is_real)
        return FourierSeries(c, self.K, self.rho, self.shape, self.is_real)

    def degrees(self):
        return sorted({sum(a) for a in self.coeffs})

    def is_zero(self):
        return not self.coeffs

    def degree_part(self, lo, hi=None):
        hi = lo if hi is None else hi
        sel = {a: v for a, v in self.coeffs.items() if lo <= sum(a) <= hi}
        return self._new(sel, deg_min=lo, deg_max=hi)

    def constant_part(self) -> FourierSeries:
        return self.coeff((0,) * self.n)

    def linear_part(self) -> FourierSeries:
        """Series of the Jacobian at z = 0, shape ``shape + (n,)``."""
        c = np.stack([self.coeff(unit(self.n, j)).c for j in range(self.n)], axis=len(self.shape))
        return FourierSeries(c, self.K, self.rho, self.shape + (self.n,), self.is_real)

    def extent(self):
        e = np.full(self.d, -1)
        for v in self.coeffs.values():
            e = np.maximum(e, _extent(v, self.d, self.K))
        return tuple(int(x) for x in e)

    def reality_defect(self):
        return max((self.coeff(a).reality_defect() for a in self.coeffs), default=0.0)

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, theta, z):
        """Pointwise values; ``theta`` (..., d) and ``z`` (..., n) broadcast."""
        theta = np.asarray(theta, dtype=float)
        z = np.asarray(z)
        lead = np.broadcast_shapes(theta.shape[:-1], z.shape[:-1])
        out = np.zeros(lead + self.shape, dtype=complex)
        for a, _ in self.coeffs.items():
            ca = FourierSeries(self.coeffs[a], self.K, self.rho, self.shape, False)
            mono = np.prod(z ** np.array(a), axis=-1)
            v = ca.evaluate(theta)
            out = out + v * mono.reshape(mono.shape + (1,) * len(self.shape))
        return out.real if self.is_real and not np.iscomplexobj(z) else out

    def __call__(self, theta, z):
        return self.evaluate(theta, z)

    # -- algebra ------------------------------------------------------------

    def _compat(self, other):
        if (other.n, other.d, other.K) != (self.n, self.d, self.K):
            raise ValueError("incompatible fields")

    def __add__(self, other):
        if isinstance(other, FourierSeries):
            other = TaylorFourierField.from_series(other, self.n, self.r)
        self._compat(other)
        out = dict(self.coeffs)
        for a, v in other.coeffs.items():
            _add_into(out, a, v)
        lo = min(self.deg_min, other.deg_min)
        hi = max(self.deg_max, other.deg_max)
        return self._new(out, deg_min=lo, deg_max=hi, is_real=self.is_real and other.is_real,
                         rho=min(self.rho, other.rho), r=min(self.r, other.r))

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, s):
        s = complex(s)
        return self._new({a: v * s for a, v in self.coeffs.items()}, deg_min=self.deg_min, deg_max=self.deg_max,
                         is_real=self.is_real and s.imag == 0)

    __rmul__ = __mul__

    def __rmatmul__(self, M):
        """Constant matrix applied to the values."""
        M = np.asarray(M)
        out = {a: np.tensordot(M, v, axes=([M.ndim - 1], [0])) for a, v in self.coeffs.items()}
        return self._new(out, shape=M.shape[:-1] + self.shape[1:], deg_min=self.deg_min, deg_max=self.deg_max,
                         is_real=self.is_real and not np.iscomplexobj(M))

    def map_coeffs(self, fn, shape=None, is_real=None):
        """Apply ``fn`` to every coefficient FourierSeries."""
        out = {}
        for a in self.coeffs:
            s = fn(self.coeff(a))
            out[a] = s.c
            shape = s.shape
        return self._new(out, shape=shape, deg_min=self.deg_min, deg_max=self.deg_max, is_real=is_real)

    def mean(self):
        """Zero Fourier mode of every coefficient (the time average)."""
        out = {}
        for a, v in self.coeffs.items():
            c = np.zeros_like(v)
            c[(Ellipsis,) + (self.K,) * self.d] = v[(Ellipsis,) + (self.K,) * self.d]
            out[a] = c
        return self._new(out, deg_min=self.deg_min, deg_max=self.deg_max)

    def oscillation(self):
        out = {}
        for a, v in self.coeffs.items():
            c = v.copy()
            c[(Ellipsis,) + (self.K,) * self.d] = 0
            out[a] = c
        return self._new(out, deg_min=self.deg_min, deg_max=self.deg_max)

    def jacobian(self):
        """State derivative, value shape ``shape + (n,)``."""
        out = {}
        nsh = len(self.shape)
        for a, v in self.coeffs.items():
            for j in range(self.n):
                if a[j] == 0:
                    continue
                b = list(a)
                b[j] -= 1
                c = np.zeros(self.shape + (self.n,) + v.shape[nsh:], dtype=complex)
                c[(slice(None),) * nsh + (j,)] = a[j] * v
                _add_into(out, tuple(b), c)
        return self._new(out, shape=self.shape + (self.n,), deg_min=max(self.deg_min - 1, 0),
                         deg_max=max(self.deg_max - 1, 0))

    def truncate_degree(self, deg_max):
        sel = {a: v for a, v in self.coeffs.items() if sum(a) <= deg_max}
        return self._new(sel, deg_min=min(self.deg_min, deg_max), deg_max=deg_max)

    def truncate_modes(self, K_new):
        w = k_order(self.d, self.K) <= K_new
        return self._new({a: v * w for a, v in self.coeffs.items()}, deg_min=self.deg_min, deg_max=self.deg_max)

    # -- norms ----------------------------------------------------------------

    def norm(self, rho=None, r=None) -> float:
        """sum_alpha ||F_alpha||_rho r^|alpha|; dominates the sup over the polydisc times strip."""
        rho = self.rho if rho is None else rho
        r = self.r if r is None else r
        return float(sum(majorant_norm(self.coeff(a), rho) * r ** sum(a) for a in self.coeffs))

    def curvature_bound(self, rho=None, r=None) -> float:
        """Majorant bound on sup ||D^2_z F|| (row-sum over both derivative slots)."""
        rho = self.rho if rho is None else rho
        r = self.r if r is None else r
        if len(self.shape) != 1:
            raise ValueError("curvature bound needs a vector field")
        tot = np.zeros(self.shape[0])
        w = np.exp(rho * k_order(self.d, self.K))
        for a, v in self.coeffs.items():
            deg = sum(a)
            if deg < 2:
                continue
            second = sum(a[j] * (a[l] - (j == l)) for j in range(self.n) for l in range(self.n))
            nrm = (np.abs(v) * w).reshape(self.shape[0], -1).sum(axis=1)
            tot += second * r ** (deg - 2) * nrm
        return float(tot.max(initial=0.0))

    def __repr__(self):
        return (f"TaylorFourierField(n={self.n}, d={self.d}, K={self.K}, shape={self.shape}, "
                f"deg=[{self.deg_min},{self.deg_max}], terms={len(self.coeffs)})")


# ---------------------------------------------------------------------------
# grid-level polynomial algebra


def _sizes_for(extent_total, K):
    sizes = []
    for e in extent_total:
        e = max(int(e), 0)
        sizes.append(sfft.next_fast_len(e + min(e, K) + 1))
    if prod(sizes) > GRID_BUDGET:
        raise TruncationOverflow(f"grid {sizes} exceeds budget")
    return tuple(sizes)


def _field_to_grid(F: TaylorFourierField, sizes):
    """Grid values plus an entrywise bound on their sup (coefficient l1 mass)."""
    axes = tuple(range(-F.d, 0))
    return ({a: to_grid(v, F.d, F.K, sizes) for a, v in F.coeffs.items()},
            {a: np.abs(v).sum(axis=axes) for a, v in F.coeffs.items()})


def _grid_to_field(G: dict, M: dict, template: TaylorFourierField, shape, extent_total, real, n,
                   deg_min=None, deg_max=None, rho=None, r=None):
    keep = tuple(min(max(int(e), 0), template.K) for e in extent_total)
    d = template.d
    out = {}
    for a, g in G.items():
        c = from_grid(g, d, template.K, keep)
        # round-off on structurally empty modes, relative to the entry's mass
        c[np.abs(c) <= NOISE * M[a][(Ellipsis,) + (None,) * d]] = 0
        if real:
            c = hermitian_project(c, d)
        out[a] = c
    return TaylorFourierField(out, n, d, template.K, shape, template.rho if rho is None else rho,
                              template.r if r is None else r, real, deg_min, deg_max)


def _poly_mul(P, Q, subscripts: str, deg_max: int):
    """Product of grid polynomials given as (values, masses) pairs."""
    Pv, Pm = P
    Qv, Qm = Q
    vsub = subscripts.replace("->", "").split(",")
    msub = subscripts.replace("...", "")
    out_v, out_m = {}, {}
    for a, pa in Pv.items():
        da = sum(a)
        for b, qb in Qv.items():
            if da + sum(b) > deg_max:
                continue
            g = tuple(x + y for x, y in zip(a, b))
            _add_into(out_v, g, np.einsum(subscripts, pa, qb))
            _add_into(out_m, g, np.einsum(msub, Pm[a], Qm[b]))
    return out_v, out_m


def field_product(a: TaylorFourierField, b: TaylorFourierField, subscripts: str, shape, deg_max=None):
    """Product of two fields with value contraction ``subscripts`` (einsum on value axes).

    Example: matrix field times vector field uses ``"ij,j->i"``.
    """
    a._compat(b)
    deg_max = a.deg_max + b.deg_max if deg_max is None else deg_max
    lo = min(a.deg_min + b.deg_min, deg_max)
    real = a.is_real and b.is_real
    if a.is_zero() or b.is_zero():
        return TaylorFourierField({}, a.n, a.d, a.K, shape, min(a.rho, b.rho), min(a.r, b.r), True, lo, deg_max)
    ext = tuple(x + y for x, y in zip(a.extent(), b.extent()))
    sizes = _sizes_for(ext, a.K)
    ins, out = subscripts.split("->")
    sa, sb = ins.split(",")
    sub = f"{sa}...,{sb}...->{out}..."
    Gv, Gm = _poly_mul(_field_to_grid(a, sizes), _field_to_grid(b, sizes), sub, deg_max)
    return _grid_to_field(Gv, Gm, a, shape, ext, real, a.n, lo, deg_max, rho=min(a.rho, b.rho), r=min(a.r, b.r))


def compose(h: TaylorFourierField, P: TaylorFourierField, deg_max=None, r=None):
    """Expansion of ``(theta, w) -> h(theta, P(theta, w))``.

    ``P`` is a vector field with ``P.shape == (h.n,)`` polynomial in the new
    state w (dimension ``P.n``).  The result is exact up to Fourier truncation
    K and state degree ``deg_max``.
    """
    if P.shape != (h.n,):
        raise ValueError(f"map has value shape {P.shape}, expected {(h.n,)}")
    if (P.d, P.K) != (h.d, h.K):
        raise ValueError("incompatible torus data")
    Dh = max(h.degrees(), default=0)
    if deg_max is None:
        deg_max = max(h.deg_max * max(P.deg_max, 1), 0)
    real = h.is_real and P.is_real
    rho = min(h.rho, P.rho)
    r = h.r if r is None else r
    if h.is_zero():
        return TaylorFourierField({}, P.n, h.d, h.K, h.shape, rho, r, real, 0, deg_max)
    eh = np.maximum(h.extent(), 0)
    eP = np.maximum(P.extent(), 0)
    ext = tuple(int(x) for x in eh + Dh * eP)
    sizes = _sizes_for(ext, h.K)
    axes = tuple(range(-h.d, 0))
    comp = []
    for i in range(h.n):
        sel = {a: v[i] for a, v in P.coeffs.items() if np.any(v[i])}
        comp.append(({a: to_grid(v, h.d, h.K, sizes) for a, v in sel.items()},
                     {a: np.abs(v).sum(axis=axes) for a, v in sel.items()}))
    zero = (0,) * P.n
    mono = {(0,) * h.n: ({zero: np.ones(sizes, dtype=complex)}, {zero: np.float64(1.0)})}

    def monomial(alpha):
        if alpha in mono:
            return mono[alpha]
        i = next(j for j, x in enumerate(alpha) if x > 0)
        prev = list(alpha)
        prev[i] -= 1
        m = _poly_mul(monomial(tuple(prev)), comp[i], "...,...->...", deg_max)
        mono[alpha] = m
        return m

    nsh = len(h.shape)
    Gv, Gm = {}, {}
    for a, v in h.coeffs.items():
        hg = to_grid(v, h.d, h.K, sizes)
        hm = np.abs(v).sum(axis=axes)
        mv, mm = monomial(a)
        for b, m in mv.items():
            _add_into(Gv, b, hg * m[(None,) * nsh])
            _add_into(Gm, b, hm * mm[b])
    return _grid_to_field(Gv, Gm, h, h.shape, ext, real, P.n, None, deg_max, rho=rho, r=r)


def substitute(h: TaylorFourierField, c: FourierSeries | None, L: FourierSeries | None, deg_max=None, r=None):
    """``h(theta, c(theta) + L(theta) z)`` with explicit low-degree slots."""
    n = h.n
    P = TaylorFourierField.identity(n, h.d, h.K, h.rho, h.r) if L is None else TaylorFourierField.from_linear(L, r=h.r)
    if c is not None:
        if c.shape != (n,):
            raise ValueError(f"offset has shape {c.shape}, expected {(n,)}")
        P = P + TaylorFourierField.from_series(c, n, h.r)
    if deg_max is None:
        deg_max = h.deg_max
    out = compose(h, P, deg_max, r=r)
    return out


def taylor_shift(h: TaylorFourierField, x0, deg_max=None, r=None):
    """Recentre at the constant point x0: ``z -> h(theta, x0 + z)``."""
    x0 = np.asarray(x0, dtype=float)
    c = FourierSeries.constant(x0, h.d, h.K, h.rho)
    return substitute(h, c, None, deg_max, r)
