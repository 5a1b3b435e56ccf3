"""KAM iteration for the normal form ``z' = eps(A + eps B)z + eps^2 p + eps h``.

Step m works on ``z' = eps(A_m + e B_m)z + eps e p_m + eps h_m`` with
``e = eps^(2^m)``.  A shift ``z = y + u_m`` removes p_m to leading order, a
linear change ``y = (I + eps S_m) z'`` removes the oscillating linear part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .averaging import NormalForm
from .fourier import FourierSeries, divide_by_divisor, identity, k_list, matmul, neumann_inverse
from .ledger import BoundsLedger, ledger_step, lipschitz_checks
from .spectra import OutsideBallError, SpectralFrame, margins, perturbation_check, inf_norm
from .taylor import TaylorFourierField, compose, field_product, substitute


class KamError(RuntimeError):
    pass


class ResonantEpsilon(KamError):
    def __init__(self, verdict):
        self.verdict = verdict
        super().__init__(f"resonant epsilon at m={verdict.m}: k={verdict.k}, pair={verdict.pair}, "
                         f"|divisor|={verdict.lhs:.3e} < {verdict.rhs:.3e}")


class KamDivergence(KamError):
    pass


class NotConverged(KamError):
    pass


@dataclass(frozen=True)
class Schedule:
    rho0: float
    c0: float = 0.2
    kappa: float = 1.5
    tau: float = 1.2
    K_trunc: int = 30
    deg_max: int = 2
    m_max: int = 12
    p_tol: float = 1e-14
    neumann_terms: int = 8

    def __post_init__(self):
        if not 0 < self.c0 < 0.25:
            raise ValueError("c0 must lie in (0, 1/4)")
        if not 1 < self.kappa < 2:
            raise ValueError("kappa must lie in (1, 2)")
        if self.rho0 <= 0 or self.tau <= 0:
            raise ValueError("rho0 and tau must be positive")

    def rho(self, m: int) -> float:
        return self.rho0 * (1 - 0.25 * sum(1 / j**2 for j in range(1, m + 1)))

    def params(self, m: int):
        """(rho_m, sigma_m, nu_m, tau_m)."""
        if m < 0:
            raise ValueError("m must be nonnegative")
        rho = self.rho(m)
        q = (m + 1) ** 2
        return rho, rho - self.rho0 / (8 * q), self.c0 * self.rho0 / (4 * q), self.tau * self.kappa**m

    @property
    def rho_inf(self):
        return self.rho0 * (1 - math.pi**2 / 24)


def schedule_params(s: Schedule, m: int):
    return s.params(m)


@dataclass
class DiophantineVerdict:
    passed: bool
    m: int
    k: tuple
    pair: tuple
    lhs: float
    rhs: float


def _thresholds(ks, gamma, tau_m, nu_m):
    nk = np.abs(ks).sum(axis=1).astype(float)
    return 0.5 * gamma * nk ** (-tau_m) * np.exp(-nu_m * nk)


def _verdict(D, thr, ks, m, pairs):
    ratio = D / thr.reshape((-1,) + (1,) * (D.ndim - 1))
    idx = np.unravel_index(int(np.nanargmin(ratio)), ratio.shape)
    lhs, rhs = float(D[idx]), float(thr[idx[0]])
    return DiophantineVerdict(bool(np.nanmin(ratio) >= 1), m, tuple(int(x) for x in ks[idx[0]]),
                              pairs(idx[1:]), lhs, rhs)


def check_diophantine_first(lambdas, eps, omega, gamma, s: Schedule, m: int, K_trunc=None) -> DiophantineVerdict:
    """|i<k,w> - eps lam_i| >= (gamma/2)|k|^-tau_m exp(-nu_m |k|) for 0 < |k| <= K."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    K = s.K_trunc if K_trunc is None else K_trunc
    _, _, nu, tau_m = s.params(m)
    ks = k_list(omega.size, K)
    lam = np.asarray(lambdas, dtype=complex)
    D = np.abs(1j * (ks @ omega)[:, None] - eps * lam[None, :])
    return _verdict(D, _thresholds(ks, gamma, tau_m, nu), ks, m, lambda i: (int(i[0]),))


def check_diophantine_second(lambdas, eps, omega, gamma, s: Schedule, m: int, K_trunc=None) -> DiophantineVerdict:
    """Same threshold for |i<k,w> - eps(lam_i - lam_j)|, i != j."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    K = s.K_trunc if K_trunc is None else K_trunc
    lam = np.asarray(lambdas, dtype=complex)
    n = lam.size
    if n < 2:
        return DiophantineVerdict(True, m, (), (), math.inf, 0.0)
    _, _, nu, tau_m = s.params(m)
    ks = k_list(omega.size, K)
    diff = lam[:, None] - lam[None, :]
    D = np.abs(1j * (ks @ omega)[:, None, None] - eps * diff[None])
    D[:, np.arange(n), np.arange(n)] = np.nan
    return _verdict(D, _thresholds(ks, gamma, tau_m, nu), ks, m, lambda i: (int(i[0]), int(i[1])))


# ---------------------------------------------------------------------------
# state and single-step operators


@dataclass
class IterationState:
    m: int
    A: np.ndarray
    B: FourierSeries
    p: FourierSeries
    h: TaylorFourierField
    r: float
    K: float
    frame: SpectralFrame
    Phi: FourierSeries
    Psi: FourierSeries
    epsilon: float

    @property
    def e(self):
        return self.epsilon ** (2**self.m)

    def field(self, theta, z):
        """Right-hand side of the step-m system."""
        eps, e = self.epsilon, self.e
        lin = self.A + e * self.B.evaluate(theta)
        out = eps * np.einsum("...ij,...j->...i", lin, z) + eps * e * self.p.evaluate(theta)
        if not self.h.is_zero():
            out = out + eps * self.h.evaluate(theta, z)
        return np.real(out)


@dataclass
class Starred:
    A: np.ndarray
    B: FourierSeries
    p: FourierSeries
    h: TaylorFourierField
    r: float
    K_measured: float


def initial_state(nf: NormalForm, s: Schedule) -> IterationState:
    """Fold the mean of B into A so the iteration starts from a zero-mean B."""
    eps = nf.epsilon
    rho = s.rho0
    B = nf.B.with_rho(rho)
    A0 = nf.A + eps * np.real(B.mean())
    try:
        frame = perturbation_check(nf.frame, A0, strict=False)
    except OutsideBallError as exc:
        raise KamDivergence(f"folded A leaves the alpha ball: {exc}") from exc
    h = nf.h.with_(rho=rho, r=nf.r)
    n, d, Kt = nf.A.shape[0], nf.B.d, nf.B.K
    return IterationState(0, A0, B.oscillation(), nf.p.with_rho(rho), h, nf.r, h.curvature_bound(rho, nf.r), frame,
                          identity(n, d, Kt).with_rho(rho), FourierSeries.zeros(d, Kt, (n,), rho), eps)


def solve_shifted_homological(state: IterationState, frame: SpectralFrame, omega, sigma=None) -> FourierSeries:
    """u with u' = eps A u + eps e p, solved mode by mode in the eigenbasis."""
    eps, e = state.epsilon, state.e
    lam = frame.lambdas
    omega = np.asarray(omega, dtype=float)
    q = frame.C_inv @ state.p

    def divisor(ks):
        return 1j * (ks @ omega)[:, None] - eps * lam[None, :]

    y = divide_by_divisor(q * (eps * e), divisor, 0.0)
    u = (frame.C @ y).real_projection()
    return u.with_rho(state.p.rho if sigma is None else sigma)


def homological_residual(state: IterationState, u: FourierSeries, omega) -> float:
    res = u.ddt(omega) - (state.A * state.epsilon) @ u - state.p * (state.epsilon * state.e)
    return float(np.abs(res.c).max(initial=0.0))


def shift_transform(state: IterationState, u: FourierSeries, sigma: float) -> Starred:
    """z = y + u: new linear part from Dh(u), new forcing from B u and h(u)."""
    e = state.e
    n = state.A.shape[0]
    unorm = u.norm(sigma)
    r_star = state.r - unorm
    if r_star <= 0:
        raise KamDivergence(f"radius exhausted at m={state.m}: ||u|| = {unorm:.3e} >= r = {state.r:.3e}")
    Bu = matmul(state.B, u)
    if state.h.is_zero():
        J = FourierSeries.zeros(u.d, u.K, (n, n), sigma)
        hu = FourierSeries.zeros(u.d, u.K, (n,), sigma)
        h_star = state.h
    else:
        G = substitute(state.h, u, None, state.h.deg_max)
        hu = G.constant_part()
        J = G.linear_part()
        h_star = G.degree_part(2, state.h.deg_max)
    A_star = state.A + np.real(J.mean())
    B_star = (state.B + J.oscillation() * (1 / e)).with_rho(sigma)
    p_star = (Bu * (1 / e) + hu * (1 / e**2)).with_rho(sigma)
    h_star = TaylorFourierField(h_star.coeffs, n, u.d, u.K, (n,), sigma, r_star, True, 2, state.h.deg_max)
    K_meas = h_star.curvature_bound(sigma, r_star) if not h_star.is_zero() else 0.0
    return Starred(A_star, B_star, p_star, h_star, r_star, K_meas)


def solve_sylvester(B_star: FourierSeries, frame: SpectralFrame, eps: float, e: float, omega, rho_next=None):
    """S' = eps(A* S - S A*) + e B*, diagonal in the eigenbasis of A*."""
    if np.abs(B_star.mean()).max(initial=0.0) > 1e-14 * max(1.0, B_star.norm(0.0)):
        raise ValueError("B* must have zero mean")
    lam = frame.lambdas
    omega = np.asarray(omega, dtype=float)
    R = frame.C_inv @ B_star.oscillation() @ frame.C
    diff = lam[:, None] - lam[None, :]

    def divisor(ks):
        return 1j * (ks @ omega)[:, None, None] - eps * diff[None]

    G = divide_by_divisor(R * e, divisor, 0.0)
    S = (frame.C @ G @ frame.C_inv).real_projection()
    return S.with_rho(B_star.rho if rho_next is None else rho_next)


def sylvester_residual(S: FourierSeries, A_star, B_star: FourierSeries, eps, e, omega) -> float:
    res = S.ddt(omega) - (A_star * eps) @ S + (S @ (A_star * eps)) - B_star * e
    return float(np.abs(res.c).max(initial=0.0))


def linear_transform(state: IterationState, st: Starred, S: FourierSeries, u: FourierSeries, frame_star,
                     s: Schedule, rho_next: float):
    """y = (I + eps S) z; returns the next state and the Neumann remainder bound."""
    eps, e, m = state.epsilon, state.e, state.m
    n = state.A.shape[0]
    snorm = S.norm(rho_next)
    if eps * snorm >= 1:
        raise KamDivergence(f"Neumann precondition fails at m={m}: eps*||S|| = {eps * snorm:.3e}")
    N, rem = neumann_inverse(S, eps, s.neumann_terms, rho_eval=rho_next)
    N = N.with_rho(rho_next)
    BB = matmul(N, matmul(st.B, S))
    A_next = st.A + eps ** (2**m + 1) * np.real(BB.mean())
    B_next = (BB.oscillation() * eps ** (-(2**m - 1))).with_rho(rho_next)
    p_next = matmul(N, st.p).with_rho(rho_next)
    if st.h.is_zero():
        h_next = st.h
    else:
        L = (identity(n, S.d, S.K) + S * eps).with_rho(rho_next)
        hc = substitute(st.h, None, L, st.h.deg_max)
        Nf = TaylorFourierField.from_series(N, n, st.r)
        h_next = field_product(Nf, hc, "ij,j->i", (n,), st.h.deg_max)
    r_next = st.r / (1 + eps * snorm)
    K_next = (1 + eps * snorm) ** 2 / (1 - eps * snorm) * state.K
    h_next = TaylorFourierField(h_next.coeffs, n, S.d, S.K, (n,), rho_next, r_next, True, 2, state.h.deg_max)
    Psi = (state.Psi + matmul(state.Phi, u)).with_rho(rho_next)
    Phi = matmul(state.Phi, identity(n, S.d, S.K) + S * eps).with_rho(rho_next)
    nxt = IterationState(m + 1, A_next, B_next, p_next, h_next, r_next, K_next, frame_star, Phi, Psi, eps)
    return nxt, rem


def conjugacy_error(state: IterationState, nxt: IterationState, u: FourierSeries, S: FourierSeries, omega,
                    rng, samples: int = 16) -> float:
    """Relative mismatch of the step-m field against the pushforward of the step-(m+1) field."""
    n, d = state.A.shape[0], u.d
    theta = rng.uniform(0, 2 * np.pi, (samples, d))
    z = rng.uniform(-0.5, 0.5, (samples, n)) * nxt.r
    Sv = S.evaluate(theta).real
    T = np.eye(n) + state.epsilon * Sv
    zm = u.evaluate(theta).real + np.einsum("sij,sj->si", T, z)
    lhs = state.field(theta, zm)
    rhs = (u.ddt(omega).evaluate(theta).real
           + state.epsilon * np.einsum("sij,sj->si", S.ddt(omega).evaluate(theta).real, z)
           + np.einsum("sij,sj->si", T, nxt.field(theta, z)))
    scale = np.abs(lhs).max()
    return float(np.abs(lhs - rhs).max() / scale) if scale > 0 else float(np.abs(rhs).max())


# ---------------------------------------------------------------------------
# driver


@dataclass
class KamReport:
    converged: bool
    reason: str
    m_final: int
    A_inf: np.ndarray
    h_inf: TaylorFourierField
    Phi: FourierSeries
    Psi: FourierSeries
    response: FourierSeries
    rows: list
    ledger: BoundsLedger
    final_state: IterationState
    states: list = field(default_factory=list, repr=False)
    normal_form: NormalForm = field(default=None, repr=False)
    frames: list = field(default_factory=list, repr=False)
    steps: list = field(default_factory=list, repr=False)

    @property
    def decay_p(self):
        return [row["eps_p"] for row in self.rows]

    @property
    def decay_B(self):
        return [row["eps_B"] for row in self.rows]

    def contraction_constant(self):
        """Smallest C with ||p_{m+1}|| <= C ||p_m||^2 over the run."""
        out = 0.0
        for a, b in zip(self.rows, self.rows[1:]):
            base = a["p"] ** 2
            if base > 0:
                out = max(out, b["p"] / base)
        return out

    def max_residuals(self):
        keys = ("hom_residual", "syl_residual", "conjugacy")
        return {k: max((row[k] for row in self.rows if k in row), default=0.0) for k in keys}


def response_series(nf: NormalForm, Psi: FourierSeries) -> FourierSeries:
    """x(theta) = center + x* + Psi + eta u(theta, x* + Psi)."""
    n = nf.A.shape[0]
    w = Psi + FourierSeries.constant(nf.x_star, Psi.d, Psi.K, Psi.rho)
    if nf.u.is_zero():
        uw = FourierSeries.zeros(Psi.d, Psi.K, (n,), Psi.rho)
    else:
        P = TaylorFourierField.from_series(w, nf.u.n, nf.u.r)
        uw = compose(nf.u, P, deg_max=0).constant_part()
    x = w + uw * nf.epsilon + FourierSeries.constant(nf.center, Psi.d, Psi.K, Psi.rho)
    return x.real_projection()


def run(nf: NormalForm, schedule: Schedule, ledger: BoundsLedger | None = None, require_convergence: bool = True,
        conjugacy_samples: int = 0, seed: int = 0, keep_states: bool = False, Mtilde=(1.0, 1.0, 1.0, 1.0),
        check_resonance: bool = True):
    """Iterate until eps^(2^m+1)||p_m|| <= p_tol or m reaches m_max.

    With ``check_resonance`` off, failed Diophantine checks are only recorded
    (preview runs for the resonance scan).
    """
    ledger = BoundsLedger() if ledger is None else ledger
    omega = nf.freq.vector
    gamma = nf.freq.gamma
    d = omega.size
    eps = nf.epsilon
    base = nf.frame
    rng = np.random.default_rng(seed)
    state = initial_state(nf, schedule)
    rows, states = [], [state] if keep_states else []
    frames, steps = [], []
    growth, prev_size = 0, None
    reason = "m_max"
    while True:
        m = state.m
        rho, sigma, nu, tau_m = schedule.params(m)
        rho_next = schedule.params(m + 1)[0]
        e = state.e
        pn, Bn = state.p.norm(rho), state.B.norm(rho)
        row = {"m": m, "p": pn, "B": Bn, "A": inf_norm(state.A), "r": state.r, "K": state.K,
               "eps_p": eps * e * pn, "eps_B": e * Bn, "mean_B": float(np.abs(state.B.mean()).max(initial=0.0)),
               "A_dist": inf_norm(state.A - base.A), "frame_cond": state.frame.cond,
               "frame_sep": margins(state.frame.lambdas)[0]}
        rows.append(row)
        if eps * e * pn <= schedule.p_tol:
            reason = "p_tol"
            break
        if m >= schedule.m_max:
            reason = "m_max"
            break
        if e * e == 0.0:
            reason = "underflow"
            break
        size = max(eps * e * pn, e * Bn)
        growth = growth + 1 if prev_size is not None and size > prev_size else 0
        prev_size = size
        if growth >= 3:
            raise KamDivergence(f"remainder grew for 3 consecutive steps (m={m})")

        v1 = check_diophantine_first(state.frame.lambdas, eps, omega, gamma, schedule, m)
        row["dioph1"] = v1.lhs / v1.rhs
        if not v1.passed and check_resonance:
            raise ResonantEpsilon(v1)
        u = solve_shifted_homological(state, state.frame, omega, sigma)
        row["hom_residual"] = homological_residual(state, u, omega)
        st = shift_transform(state, u, sigma)
        try:
            frame_star = perturbation_check(base, st.A, reference=state.frame, strict=False)
        except OutsideBallError as exc:
            raise KamDivergence(f"A* leaves the alpha ball at m={m}: {exc}") from exc
        v2 = check_diophantine_second(frame_star.lambdas, eps, omega, gamma, schedule, m)
        row["dioph2"] = v2.lhs / v2.rhs if v2.rhs > 0 else math.inf
        if not v2.passed and check_resonance:
            raise ResonantEpsilon(v2)
        S = solve_sylvester(st.B, frame_star, eps, e, omega, rho_next)
        row["syl_residual"] = sylvester_residual(S, st.A, st.B, eps, e, omega)
        nxt, rem = linear_transform(state, st, S, u, frame_star, schedule, rho_next)
        try:
            nxt.frame = perturbation_check(base, nxt.A, reference=frame_star, strict=False)
        except OutsideBallError as exc:
            raise KamDivergence(f"A_{m + 1} leaves the alpha ball: {exc}") from exc
        if conjugacy_samples:
            row["conjugacy"] = conjugacy_error(state, nxt, u, S, omega, rng, conjugacy_samples)
        q = {"d": d, "eps": eps, "gamma": gamma, "beta0": base.beta0, "mu": base.mu, "rho": rho, "sigma": sigma,
             "nu": nu, "tau_m": tau_m, "rho_next": rho_next, "B": Bn, "p": pn, "A": inf_norm(state.A),
             "K": state.K, "r": state.r, "r_next": nxt.r, "u": u.norm(sigma), "A_star": inf_norm(st.A), "B_star": st.B.norm(sigma),
             "p_star": st.p.norm(sigma), "K_star": st.K_measured, "S": S.norm(rho_next),
             "A_next": inf_norm(nxt.A), "B_next": nxt.B.norm(rho_next), "p_next": nxt.p.norm(rho_next),
             "K_next": nxt.K,
             "K_next_measured": nxt.h.curvature_bound(rho_next, nxt.r) if not nxt.h.is_zero() else 0.0,
             "Mtilde": Mtilde}
        ledger_step(ledger, m, q)
        ledger.check("frame_separation", m + 1, base.mu, margins(nxt.frame.lambdas)[0])
        ledger.check("frame_conditioning", m + 1, nxt.frame.cond, 2 * base.beta0)
        row.update({"u": q["u"], "S": q["S"], "neumann_remainder": rem, "r_star": st.r})
        frames.append((state.frame, frame_star))
        if keep_states:
            steps.append({"u": u, "star": st, "S": S})
        state = nxt
        if keep_states:
            states.append(state)
    converged = reason == "p_tol"
    if require_convergence and not converged:
        raise NotConverged(f"stopped at m={state.m} ({reason}) with eps^(2^m+1)||p|| = {rows[-1]['eps_p']:.3e}")
    resp = response_series(nf, state.Psi)
    return KamReport(converged, reason, state.m, state.A, state.h, state.Phi, state.Psi, resp, rows, ledger, state,
                     states, nf, frames, steps)


def _lip(a, b, h, rho):
    """Majorant norm of a symmetric difference quotient."""
    if isinstance(a, np.ndarray):
        return inf_norm(a - b) / (2 * h)
    return (a - b).norm(rho) / (2 * h)


def lipschitz_study(spec, eps: float, h: float, schedule: Schedule, x_init=None, Mtilde=(1.0, 1.0, 1.0, 1.0)):
    """Finite-difference Lipschitz data at eps from runs at eps - h, eps, eps + h, checked step by step."""
    from .averaging import prepare

    reps = []
    for e in (eps - h, eps, eps + h):
        nf = prepare(spec, e, x_init)
        reps.append(run(nf, schedule, require_convergence=False, keep_states=True, Mtilde=Mtilde))
    lo, mid, hi = reps
    ledger = mid.ledger
    M = min(len(r.steps) for r in reps)
    out = []
    for m in range(M):
        rho, sigma, _, _ = schedule.params(m)
        rho1 = schedule.params(m + 1)[0]
        w = lambda e, k=0: e ** (2**m + k)
        a, b = lo.states[m], hi.states[m]
        sa, sb = lo.steps[m], hi.steps[m]
        an, bn = lo.states[m + 1], hi.states[m + 1]
        ea, eb = eps - h, eps + h
        L = {
            "u": _lip(sa["u"], sb["u"], h, sigma),
            "A": _lip(a.A, b.A, h, rho),
            "A_star": _lip(sa["star"].A, sb["star"].A, h, sigma),
            "eB": _lip(a.B * w(ea), b.B * w(eb), h, rho),
            "eB_star": _lip(sa["star"].B * w(ea), sb["star"].B * w(eb), h, sigma),
            "ep": _lip(a.p * w(ea), b.p * w(eb), h, rho),
            "e2p_star": _lip(sa["star"].p * w(ea) ** 2, sb["star"].p * w(eb) ** 2, h, sigma),
            "h": _field_lip(a.h, b.h, h, rho),
            "h_star": _field_lip(sa["star"].h, sb["star"].h, h, sigma),
            "S": _lip(sa["S"], sb["S"], h, rho1),
            "A_next": _lip(an.A, bn.A, h, rho1),
            "eB_next": _lip(an.B * ea ** (2 ** (m + 1)), bn.B * eb ** (2 ** (m + 1)), h, rho1),
            "ep_next": _lip(an.p * ea ** (2 ** (m + 1)), bn.p * eb ** (2 ** (m + 1)), h, rho1),
            "h_next": _field_lip(an.h, bn.h, h, rho1),
        }
        rec = ledger.steps[m]
        q = dict(rec)
        q.update({"eps1": eps + h, "r": mid.states[m].r, "r_star": mid.steps[m]["star"].r})
        out.append({"m": m, "L": L, **lipschitz_checks(ledger, m, L, q, Mtilde)})
    return out, mid


def _field_lip(a, b, h, rho):
    if a.is_zero() and b.is_zero():
        return 0.0
    return (a - b).norm(rho, min(a.r, b.r)) / (2 * h)


def solve(spec, eps: float, schedule: Schedule | None = None, x_init=None, **kw) -> KamReport:
    """Averaging, normal form and KAM iteration in one call."""
    from .averaging import prepare

    nf = prepare(spec, eps, x_init)
    if schedule is None:
        schedule = Schedule(rho0=spec.rho, tau=spec.freq.tau, K_trunc=spec.K, deg_max=spec.deg_max)
    return run(nf, schedule, **kw)
