"""Resonant parameter sets and their measure.

Flags use the complex divisors |i<k,w> - phi| with phi = eps*lam (first kind)
or eps*(lam_i - lam_j) (second kind), minimised exactly over each grid cell.
The real-shift set R(delta) is measured exactly as a union of intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fourier import Frequency, k_list
from .kam import Schedule, run

CHUNK = 128


def cell_edges(eps1: float, cells: int) -> np.ndarray:
    return np.linspace(0.0, eps1, cells + 1)


def thresholds(ks, gamma, s: Schedule, m: int):
    _, _, nu, tau_m = s.params(m)
    nk = np.abs(ks).sum(axis=1).astype(float)
    return 0.5 * gamma * nk ** (-tau_m) * np.exp(-nu * nk)


def cell_min_divisor(kw, lam, lo, hi):
    """min over eps in [lo, hi] of |i kw - eps lam|, shapes (M,), (C, b), (C,), (C,) -> (C, M, b)."""
    a = 1j * kw[None, :, None]
    b = lam[:, None, :]
    bb = np.abs(b) ** 2
    t = np.where(bb > 0, (np.conj(b) * a).real / np.where(bb > 0, bb, 1), 0.0)
    t = np.clip(t, lo[:, None, None], hi[:, None, None])
    return np.abs(a - t * b)


@dataclass
class CellScan:
    flagged: np.ndarray
    worst_k: np.ndarray
    branch: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray


def _scan(freq: Frequency, lam, edges, thr_list, K_trunc):
    """Per-cell worst ratio over k, branches and the threshold rows in ``thr_list``."""
    ks = k_list(freq.d, K_trunc)
    kw = ks @ freq.vector
    C = len(edges) - 1
    lo, hi = edges[:-1], edges[1:]
    best = np.full(C, np.inf)
    wk = np.zeros((C, freq.d), dtype=int)
    br = np.full(C, -1)
    lhs = np.full(C, np.nan)
    rhs = np.full(C, np.nan)
    if lam.shape[1] == 0 or C == 0:
        return CellScan(np.zeros(C, bool), wk, br, lhs, rhs)
    thr = np.max(np.atleast_2d(thr_list), axis=0)
    for c0 in range(0, C, CHUNK):
        sl = slice(c0, min(C, c0 + CHUNK))
        D = cell_min_divisor(kw, lam[sl], lo[sl], hi[sl])
        ratio = D / thr[None, :, None]
        flat = ratio.reshape(ratio.shape[0], -1)
        j = np.argmin(flat, axis=1)
        r = flat[np.arange(flat.shape[0]), j]
        ik, ib = np.unravel_index(j, ratio.shape[1:])
        best[sl] = r
        wk[sl] = ks[ik]
        br[sl] = ib
        lhs[sl] = D[np.arange(flat.shape[0]), ik, ib]
        rhs[sl] = thr[ik]
    return CellScan(best < 1, wk, br, lhs, rhs)


def resonant_set_scan(freq: Frequency, phi_of_eps, delta: float, s: Schedule, m: int, K_trunc: int, grid=None):
    """Flag the cells of ``grid`` (edges in [0, delta]) where |i<k,w> - phi(eps)| drops below the step-m threshold.

    ``phi_of_eps`` maps eps to an array of complex values; each is treated as
    eps times a rate that is constant across the cell.
    """
    edges = cell_edges(delta, 2048) if grid is None else np.asarray(grid, dtype=float)
    if edges.size and (edges[0] < 0 or edges[-1] > delta * (1 + 1e-12)):
        raise ValueError("grid must lie in [0, delta]")
    centres = 0.5 * (edges[:-1] + edges[1:])
    lam = np.array([np.atleast_1d(phi_of_eps(e)) / e for e in centres], dtype=complex)
    lam = lam.reshape(len(centres), -1)
    ks = k_list(freq.d, K_trunc)
    return _scan(freq, lam, edges, thresholds(ks, freq.gamma, s, m), K_trunc)


# ---------------------------------------------------------------------------
# real-shift set and the measure fit


def real_shift_measure(freq: Frequency, delta: float, s: Schedule, K_trunc: int, m_max: int = 200) -> float:
    """Lebesgue measure of the union over m and 0 < |k| <= K of {phi in (0, delta): |<k,w> - phi| < thr_m(k)}."""
    ks = k_list(freq.d, K_trunc)
    centre = np.abs(ks @ freq.vector)
    nk = np.abs(ks).sum(axis=1)
    thr = np.max([thresholds(ks, freq.gamma, s, m) for m in range(m_max + 1)], axis=0)
    thr = np.where(nk == 1, 0.5 * freq.gamma, thr)  # |k| = 1: thresholds increase to gamma/2 as m grows
    lo = np.clip(centre - thr, 0, delta)
    hi = np.clip(centre + thr, 0, delta)
    keep = hi > lo
    iv = sorted(zip(lo[keep], hi[keep]))
    total, cur_lo, cur_hi = 0.0, None, None
    for a, b in iv:
        if cur_hi is None or a > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = a, b
        else:
            cur_hi = max(cur_hi, b)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def measure_majorant(delta, a1, a2):
    return delta * math.exp(-a1 / delta**a2)


def fit_a1(deltas, measures, a2: float = 0.5, a3: float = 1.0) -> float:
    """Largest a1 with measure <= a3 delta exp(-a1/delta^a2) at every sample (inf if all measures vanish)."""
    vals = [d**a2 * math.log(a3 * d / m) for d, m in zip(deltas, measures) if m > 0]
    return min(vals) if vals else math.inf


# ---------------------------------------------------------------------------
# excluded parameters of a system


@dataclass
class EigenCurves:
    eps: np.ndarray
    lam: np.ndarray       # (E, M, n) eigenvalues of A_m
    lam_star: np.ndarray  # (E, M, n) eigenvalues of A*_m

    def at(self, eps):
        def interp(arr):
            if len(self.eps) == 1:
                return np.broadcast_to(arr[0], (len(eps),) + arr.shape[1:])
            flat = arr.reshape(len(self.eps), -1)
            re = np.array([np.interp(eps, self.eps, flat[:, j].real) for j in range(flat.shape[1])]).T
            im = np.array([np.interp(eps, self.eps, flat[:, j].imag) for j in range(flat.shape[1])]).T
            return (re + 1j * im).reshape((len(eps),) + arr.shape[1:])
        return interp(self.lam), interp(self.lam_star)


def eigen_curves(spec, eps_values, schedule: Schedule, preview_m: int = 2, x_init=None) -> EigenCurves:
    """Eigenvalues of A_m and A*_m from m-capped engine runs (no resonance abort)."""
    from dataclasses import replace

    from .averaging import prepare

    sch = replace(schedule, m_max=preview_m, p_tol=0.0)
    L, Ls = [], []
    for e in eps_values:
        rep = run(prepare(spec, e, x_init), sch, require_convergence=False, check_resonance=False)
        if rep.frames:
            L.append([f.lambdas for f, _ in rep.frames])
            Ls.append([g.lambdas for _, g in rep.frames])
        else:
            L.append([rep.final_state.frame.lambdas])
            Ls.append([rep.final_state.frame.lambdas])
    M = min(len(x) for x in L)
    return EigenCurves(np.asarray(eps_values, float), np.array([x[:M] for x in L]), np.array([x[:M] for x in Ls]))


def _pairs(lam):
    n = lam.shape[-1]
    ij = [(i, j) for i in range(n) for j in range(n) if i != j]
    if not ij:
        return np.zeros(lam.shape[:-1] + (0,), complex), ij
    return np.stack([lam[..., i] - lam[..., j] for i, j in ij], axis=-1), ij


@dataclass
class ResonanceScan:
    eps1: float
    edges: np.ndarray
    flags: np.ndarray
    m: np.ndarray
    kind: list
    worst_k: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    excluded_measure: float
    mu_star: float
    real_shift: float
    bound_value: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def fraction(self):
        return self.excluded_measure / self.eps1 if self.eps1 > 0 else 0.0

    def rows(self):
        out = []
        for c in range(len(self.edges) - 1):
            out.append({"eps_lo": self.edges[c], "eps_hi": self.edges[c + 1], "m": int(self.m[c]),
                        "worst_k": " ".join(str(int(x)) for x in self.worst_k[c]), "lhs": self.lhs[c],
                        "rhs": self.rhs[c], "flagged": int(self.flags[c])})
        return out


def excluded_parameters(spec, eps1: float, cells: int, schedule: Schedule, preview_m: int = 2, m_scan: int | None = None,
                        anchors: int | None = None, a1: float | None = None, a2: float = 0.5, a3: float = 1.0,
                        curves: EigenCurves | None = None, x_init=None) -> ResonanceScan:
    """Union of the first- and second-kind resonant cells over m = 0..m_scan on (0, eps1).

    Eigenvalue curves come from preview runs at every cell centre, or at
    ``anchors`` evenly spaced points with linear interpolation in between.
    """
    edges = cell_edges(eps1, cells)
    if cells == 0:
        return ResonanceScan(eps1, edges, np.zeros(0, bool), np.zeros(0, int), [], np.zeros((0, spec.d), int),
                             np.zeros(0), np.zeros(0), 0.0, float("nan"), 0.0)
    centres = 0.5 * (edges[:-1] + edges[1:])
    if curves is None:
        pts = centres if anchors is None or anchors >= cells else np.linspace(centres[0], centres[-1], anchors)
        curves = eigen_curves(spec, pts, schedule, preview_m, x_init)
    lam, lam_star = curves.at(centres)
    M = lam.shape[1]
    m_scan = schedule.m_max if m_scan is None else m_scan
    ks = k_list(spec.d, schedule.K_trunc)
    best = np.full(cells, np.inf)
    mm = np.full(cells, -1)
    kind = [""] * cells
    wk = np.zeros((cells, spec.d), int)
    lhs = np.full(cells, np.nan)
    rhs = np.full(cells, np.nan)
    for m in range(M):
        # the last available frame stands in for every later step
        ms = range(m, m_scan + 1) if m == M - 1 else [m]
        thr = [thresholds(ks, spec.freq.gamma, schedule, j) for j in ms]
        diffs, _ = _pairs(lam_star[:, m])
        for name, rates in (("first", lam[:, m]), ("second", diffs)):
            sc = _scan(spec.freq, rates, edges, thr, schedule.K_trunc)
            ratio = np.where(np.isnan(sc.lhs), np.inf, sc.lhs / np.where(np.isnan(sc.rhs), 1, sc.rhs))
            upd = ratio < best
            best = np.where(upd, ratio, best)
            mm = np.where(upd, m, mm)
            wk[upd] = sc.worst_k[upd]
            lhs = np.where(upd, sc.lhs, lhs)
            rhs = np.where(upd, sc.rhs, rhs)
            for c in np.nonzero(upd)[0]:
                kind[c] = name
    flags = best < 1
    width = np.diff(edges)
    excluded = float(width[flags].sum())
    base = curves.lam[:, 0]
    mags = [np.abs(base).max()]
    if base.shape[-1] > 1:
        mags.append(np.abs(_pairs(base)[0]).max())
    mu_star = 1.01 * float(max(mags))
    R = real_shift_measure(spec.freq, mu_star * eps1, schedule, schedule.K_trunc)
    bound = a3 * measure_majorant(mu_star * eps1, a1, a2) if a1 is not None else float("nan")
    return ResonanceScan(eps1, edges, flags, np.where(flags, mm, -1), kind, wk, lhs, rhs, excluded, mu_star, R, bound,
                         {"anchors": len(curves.eps), "m_available": M, "m_scan": m_scan})


def measure_trend(spec, eps1_list, cells: int, schedule: Schedule, a2: float = 0.5, a3: float = 1.0, **kw):
    """Scans at each eps1 plus the delta exp(-a1/delta^a2) fit on the exact real-shift measure."""
    scans = [excluded_parameters(spec, e, cells, schedule, a2=a2, a3=a3, **kw) for e in eps1_list]
    deltas = [s.mu_star * s.eps1 for s in scans]
    a1 = fit_a1(deltas, [s.real_shift for s in scans], a2, a3)
    a1_excl = fit_a1(deltas, [s.excluded_measure for s in scans], a2, a3)
    fr = [s.fraction for s in scans]
    order = np.argsort(eps1_list)[::-1]
    nonincreasing = all(fr[order[i + 1]] <= fr[order[i]] for i in range(len(order) - 1))
    for s, d in zip(scans, deltas):
        s.bound_value = a3 * measure_majorant(d, a1, a2) if np.isfinite(a1) else 0.0
    return {"scans": scans, "fractions": fr, "a1": a1, "a1_excluded": a1_excl, "a2": a2, "a3": a3,
            "nonincreasing": nonincreasing, "deltas": deltas}


def lipschitz_separation_check(eps_grid, lam_values, mu: float, a0: float | None = None, eps1: float | None = None,
                               delta1: float | None = None):
    """Two-point separation |e'lam(e') - e''lam(e'')| >= (mu/2)|e' - e''| over all grid pairs.

    With ``a0`` the variant >= eps1^a0 |e' - e''| is checked on (eps1^delta1, eps1).
    Returns (passed, worst pair, lhs, rhs).
    """
    e = np.asarray(eps_grid, dtype=float)
    lam = np.asarray(lam_values, dtype=complex)
    if e.size < 3:
        raise ValueError("need at least three samples")
    if a0 is not None:
        if eps1 is None or delta1 is None:
            raise ValueError("a0 variant needs eps1 and delta1")
        keep = (e > eps1**delta1) & (e < eps1)
        e, lam = e[keep], lam[keep]
        const = eps1**a0
    else:
        const = mu / 2
    phi = e * lam
    i, j = np.triu_indices(e.size, 1)
    lhs = np.abs(phi[i] - phi[j])
    rhs = const * np.abs(e[i] - e[j])
    if lhs.size == 0:
        return True, None, math.inf, 0.0
    w = int(np.argmin(lhs - rhs))
    return bool(np.all(lhs >= rhs * (1 - 1e-12))), (float(e[i[w]]), float(e[j[w]])), float(lhs[w]), float(rhs[w])
