"""Analytic bounds ledger.

Every verdict stores both sides of the inequality it checks.  Quantities that
rest on unspecified existence constants (the M-tilde factors, Delta_1/2,
kappa_1/2) are tagged ``effective``; the rest are ``exact`` evaluations of the
stated formulas with majorant norms plugged in.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb, gammaln


class LedgerViolation(RuntimeError):
    pass


class LedgerWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# lattice sums


def _log_counts(s: np.ndarray, d: int) -> np.ndarray:
    """log N_d(s), N_d(s) = #{k in Z^d : |k|_1 = s}, s >= 1."""
    tot = np.zeros(s.shape)
    for j in range(1, d + 1):
        tot = tot + 2.0**j * comb(d, j) * comb(s - 1, j - 1)
    return np.log(tot)


@dataclass(frozen=True)
class VarpiValue:
    value: float
    tail: float
    terms: int

    @property
    def upper(self):
        return self.value + self.tail


@functools.lru_cache(maxsize=4096)
def varpi(tau: float, nu: float, d: int, rtol: float = 1e-13) -> VarpiValue:
    """sum_{k != 0} e^{-nu |k|} |k|^tau as partial sum plus a certified tail bound."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    peak = max(1.0, (d - 1 + tau) / nu)
    block = 4096
    s0 = 1
    total = 0.0
    log_shift = None
    while True:
        s = np.arange(s0, s0 + block, dtype=float)
        logt = _log_counts(s, d) + tau * np.log(s) - nu * s
        if log_shift is None:
            log_shift = float(logt.max())
        total += float(np.exp(logt - log_shift).sum())
        S = s[-1]
        s0 += block
        block *= 2
        if S < peak:
            continue
        # majorant 2^d C(S+d-1, d-1) S^tau e^{-nu S} has decreasing ratio q(S)
        Sn = S + 1
        q = (Sn + d) / (Sn + 1) * ((Sn + 1) / Sn) ** tau * math.exp(-nu)
        if q >= 1:
            continue
        log_next = d * math.log(2) + _log_binom(Sn + d - 1, d - 1) + tau * math.log(Sn) - nu * Sn
        tail = math.exp(log_next - log_shift) / (1 - q)
        if tail <= rtol * total:
            scale = math.exp(log_shift) if log_shift < 709 else math.inf
            return VarpiValue(total * scale, tail * scale, int(S))


def _log_binom(a, b):
    return float(gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1))


def varpi_bound(tau: float, nu: float, d: int) -> float:
    """20 d / (3 nu^{d+tau}) ((d+tau-1)/e)^{d+tau-1} sqrt(d+tau-1)."""
    q = d + tau - 1
    return 20 * d / (3 * nu ** (d + tau)) * (q / math.e) ** q * math.sqrt(q)


def L1(beta0, mu, eps, gamma, tau_m, nu_m, d):
    return 4 * beta0**2 * (1 / mu + 2 * eps / gamma * varpi(tau_m, nu_m, d).upper)


def L2(beta0, gamma, tau_m, width, d):
    return 32 * beta0**4 / gamma * varpi(tau_m, width, d).upper


def E_factors(sched, m, d, Mtilde=(1.0, 1.0, 1.0, 1.0)):
    rho, sigma, nu, tau_m = sched.params(m)
    rho1 = sched.params(m + 1)[0]
    return (
        Mtilde[0] * varpi(2 * tau_m, rho - 2 * nu - sigma, d).upper,
        Mtilde[1] * varpi(tau_m, rho - nu - sigma, d).upper,
        Mtilde[2] * varpi(2 * tau_m, sigma - rho1 - 2 * nu, d).upper,
        Mtilde[3] * varpi(tau_m, sigma - rho1 - nu, d).upper,
    )


def delta_default(a: float) -> float:
    """Monotone surrogate (1 - a)^-3 for the Cauchy-majorant factors Delta_1, Delta_2."""
    if a >= 1:
        return math.inf
    return (1 - a) ** -3


# ---------------------------------------------------------------------------
# verdicts


@dataclass
class Verdict:
    name: str
    m: int
    lhs: float
    rhs: float
    kind: str = "exact"
    note: str = ""

    @property
    def ok(self) -> bool:
        return bool(self.lhs <= self.rhs * (1 + 1e-12) + 1e-300)

    def row(self):
        return {"m": self.m, "name": self.name, "lhs": self.lhs, "rhs": self.rhs, "ok": self.ok,
                "kind": self.kind, "note": self.note}


@dataclass
class BoundsLedger:
    strict: bool = False
    steps: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)

    def check(self, name, m, lhs, rhs, kind="exact", note=""):
        v = Verdict(name, m, float(lhs), float(rhs), kind, note)
        self.verdicts.append(v)
        if not v.ok:
            msg = f"ledger: {name} at m={m}: {lhs:.4e} > {rhs:.4e} ({kind})"
            if self.strict:
                raise LedgerViolation(msg)
            warnings.warn(msg, LedgerWarning, stacklevel=3)
        return v

    def failures(self, kind=None):
        return [v for v in self.verdicts if not v.ok and (kind is None or v.kind == kind)]

    def rows(self):
        return [v.row() for v in self.verdicts]

    def summary(self):
        out = {}
        for v in self.verdicts:
            key = v.name
            a, b = out.get(key, (0, 0))
            out[key] = (a + v.ok, b + 1)
        return {k: f"{a}/{b}" for k, (a, b) in out.items()}


def ledger_step(ledger: BoundsLedger, m: int, q: dict) -> dict:
    """Record the step-m quantities and check the inequalities they enter.

    ``q`` holds the measured norms of one KAM step together with the frame and
    schedule data; see :func:`qpresponse.kam.run` for the keys.
    """
    d, eps, gamma = q["d"], q["eps"], q["gamma"]
    beta0, mu = q["beta0"], q["mu"]
    rho, sigma, nu, tau_m = q["rho"], q["sigma"], q["nu"], q["tau_m"]
    rho1 = q["rho_next"]
    e = eps ** (2**m)
    l1 = L1(beta0, mu, eps, gamma, tau_m, nu, d)
    l2 = L2(beta0, gamma, tau_m, sigma - rho1 - nu, d)
    widths = {
        "nu": (tau_m, nu),
        "L2": (tau_m, sigma - rho1 - nu),
        "E1": (2 * tau_m, rho - 2 * nu - sigma),
        "E2": (tau_m, rho - nu - sigma),
        "E3": (2 * tau_m, sigma - rho1 - 2 * nu),
    }
    rec = {"m": m, "L1": l1, "L2": l2}
    for key, (t, w) in widths.items():
        vv = varpi(t, w, d)
        rec[f"varpi_{key}"] = vv.upper
        ledger.check("varpi_majorant", m, vv.upper, varpi_bound(t, w, d), note=key)
    Mt = q.get("Mtilde", (1.0, 1.0, 1.0, 1.0))
    rec["E"] = [Mt[0] * rec["varpi_E1"], Mt[1] * rec["varpi_E2"], Mt[2] * rec["varpi_E3"], Mt[3] * rec["varpi_L2"]]

    nB, np_, nA, K = q["B"], q["p"], q["A"], q["K"]
    nu_m = q["u"]
    ledger.check("u_bound", m, nu_m, e * np_ * l1)
    if "A_star" in q:
        ledger.check("shift_A", m, q["A_star"], nA + e * K * l1 * np_)
        lhs = q["B_star"]
        v1 = ledger.check("shift_B", m, lhs, nB + 2 * K * l1 * np_, note="factor-2 form")
        rec["shift_B_single_factor_holds"] = bool(lhs <= nB + K * l1 * np_)
        rec["shift_B_double_factor_holds"] = v1.ok
        ledger.check("shift_p", m, q["p_star"], K * l1**2 / 2 * np_**2 + l1 * nB * np_)
        ledger.check("shift_K", m, q["K_star"], K)
    if "S" in q:
        s = q["S"]
        ledger.check("S_bound", m, s, e * q["B_star"] * l2)
        den = 1 - eps * s
        ledger.check("linear_A", m, q["A_next"], q["A_star"] + eps ** (2**m + 1) * s / den * q["B_star"])
        ledger.check("linear_B", m, q["B_next"], 2 * s / (eps ** (2**m - 1) * den) * q["B_star"])
        ledger.check("linear_p", m, q["p_next"], q["p_star"] / den)
        ledger.check("linear_K", m, q["K_next_measured"], q["K_next"])
        ledger.check("B_recursion", m, q["B_next"], 4 * eps * l2 * (nB + K * l1 * np_) ** 2)
        ledger.check("p_recursion", m, q["p_next"], K * l1**2 * np_**2 + 2 * l1 * nB * np_)
        ledger.check("A_recursion", m, q["A_next"], nA + eps ** (2 ** (m + 1)) * nB + e * (1 + 2 * eps) * K * l1 * np_)
        ledger.check("S_recursion", m, s, e * (nB + K * l1 * np_) * l2)
        ledger.check("S_half", m, s, 0.5)
    rec.update({k: v for k, v in q.items() if isinstance(v, (int, float))})
    ledger.steps.append(rec)
    return rec


def effective_constants(ledger: BoundsLedger, eps: float) -> dict:
    """Observed stand-ins for the existence constants of the convergence proof."""
    st = ledger.steps
    if not st:
        return {}

    def sup_root(vals):
        return max((v ** (1.0 / 2**m) for m, v in vals if v > 0 and np.isfinite(v)), default=0.0)

    out = {
        "M1": sup_root((r["m"], r["L2"]) for r in st),
        "M2": sup_root((r["m"], max(r.get("B", 0.0), r.get("p", 0.0))) for r in st),
        "M4": sup_root((r["m"], r["S"] / eps ** (2 ** r["m"])) for r in st if "S" in r),
        "M5": sup_root((r["m"], max(r["E"])) for r in st),
        "c1": max(r["L1"] / r["L2"] for r in st),
        "K_inf": st[-1].get("K_next", st[-1].get("K")),
        "r_inf": st[-1].get("r_next", st[-1].get("r")),
    }
    return out


# ---------------------------------------------------------------------------
# Lipschitz-in-epsilon recursions


def lipschitz_checks(ledger: BoundsLedger, m: int, L: dict, q: dict, Mtilde=(1.0, 1.0, 1.0, 1.0),
                     delta1=delta_default, delta2=delta_default):
    """Check the step-m Lipschitz inequalities from finite-difference data.

    ``L`` holds symmetric-difference Lipschitz estimates (keys ``u, A, A_star,
    eB, eB_star, ep, e2p_star, h, h_star, S, A_next, eB_next, ep_next, h_next``,
    where ``e`` prefixes mean the epsilon-power weighted quantity) and ``q`` the
    step norms at the centre point plus ``eps1`` (grid upper end), ``kappa1``,
    ``kappa2``.  All verdicts are ``effective``.
    """
    eps1 = q["eps1"]
    e1 = eps1 ** (2**m)
    E1, E2, E3, E4 = q["E"]
    nu_r = q["u"] / q["r"]
    eta = E1 * e1 * q["p"] * (L["A"] + 1) + E2 * L["ep"] + delta1(nu_r) * L["h"] * nu_r
    kind = "effective"
    ledger.check("lip_u", m, L["u"], E1 * e1 * q["p"] * (L["A"] + 1) + E2 * L["ep"], kind)
    ledger.check("lip_shift_A", m, L["A_star"], L["A"] + eta, kind)
    ledger.check("lip_shift_B", m, L["eB_star"], L["eB"] + 2 * eta, kind)
    ledger.check("lip_shift_p", m, L["e2p_star"],
                 L["eB"] * q["u"] + (e1 * q["B"] + q["K"] * q["u"]) * L["u"]
                 + delta2(nu_r) * L["h"] * nu_r**2, kind)
    ledger.check("lip_shift_h", m, L["h_star"], 3 * q["K"] * q["r"] * L["u"] + 2 * L["h"] + delta1(nu_r) * L["h"] * q["u"],
                 kind)
    if "S" in L:
        s = q["S"]
        ledger.check("lip_S", m, L["S"], E3 * e1 * q["B_star"] * (L["A_star"] + 1) + E4 * L["eB_star"], kind)
        den = 1 - eps1 * s
        core = e1 * q["B_star"] / den**2 * (s + eps1 * L["S"])
        ledger.check("lip_linear_A", m, L["A_next"], L["A_star"] + eps1 * s / den * L["eB_star"] + core, kind)
        ledger.check("lip_linear_B", m, L["eB_next"], 2 * eps1 * s / den * L["eB_star"] + 2 * core, kind)
        ledger.check("lip_linear_p", m, L["ep_next"],
                     L["e2p_star"] / den + eps1 ** (2 ** (m + 1)) * q["p_star"] / den**2 * (s + eps1 * L["S"]), kind)
        rs2 = q["K"] * q["r_star"] ** 2
        ledger.check("lip_linear_h", m, L["h_next"],
                     rs2 / (2 * den**2) * (s + eps1 * L["S"]) + (rs2 * s + eps1 * rs2 * L["S"] + L["h_star"]) / den,
                     kind)
    phi = max(L["A"], L["eB"], L["ep"], L["h"], 1.0)
    return {"phi": phi, "eta": eta}


def composed_lipschitz_bound(L0: float, Lip: float, tau: float, width: float, d: int) -> float:
    """Right side L0 + L varpi(tau, width) of the composed Lipschitz bound."""
    return L0 + Lip * varpi(tau, width, d).upper
