"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed in the terminal
summary (see conftest.py) and also when this file is run as a script.
"""
import json
import math
import time

import numpy as np
import pytest

from qpresponse.averaging import SystemSpec, averaging_transform
from qpresponse.cli import main as cli_main
from qpresponse.fourier import Frequency
from qpresponse.io import series_from_json
from qpresponse.kam import solve
from qpresponse.ledger import varpi, varpi_bound
from qpresponse.oracles import linear_fourier_oracle, residual, rk4, system_rhs
from qpresponse.reductions import (degenerate_rhs, degenerate_scale, rescale_general, second_order_reduce,
                                   second_order_rhs)
from qpresponse.resonance import measure_trend
from qpresponse.spectra import DegenerateSpectrumError, diagonalize, inf_norm, margins, perturbation_check
from qpresponse.systems import GOLDEN
from qpresponse.taylor import TaylorFourierField

from conftest import schedule_for

RESULTS = []
F1 = Frequency((1.0,), 0.5, 1.0)
FG = Frequency((1.0, GOLDEN), 0.1, 1.2)
ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def record(name, ok, detail):
    RESULTS.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


def test_linear_oracle_equivalence(tmp_path, linear_spec):
    t0 = time.perf_counter()
    code = cli_main(["run", "--config", "elliptic-linear", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    rep = json.loads((tmp_path / "report.json").read_text())
    X = series_from_json(rep["response"])
    ref = linear_fourier_oracle(ROT, linear_spec.f.coeff((0, 0)), 1e-3, FG)
    K = min(X.K, ref.K)
    diff = np.abs(X.truncate(K).c - ref.truncate(K).c).max()
    tails = max(X.tail(K), ref.tail(K))
    ok = code == 0 and diff <= 1e-10 and tails <= 1e-10 and elapsed < 10
    record("linear oracle equivalence", ok, f"max coeff diff {diff:.2e}, runtime {elapsed:.2f} s")


def test_quadratic_contraction(quadratic_spec):
    t0 = time.perf_counter()
    s = schedule_for(quadratic_spec, m_max=5, p_tol=0.0)
    rep = solve(quadratic_spec, 1e-2, s, require_convergence=False)
    elapsed = time.perf_counter() - t0
    decay = rep.decay_p
    C = rep.contraction_constant()
    ps = [row["p"] for row in rep.rows]
    quad = all(b <= C * a * a * (1 + 1e-12) for a, b in zip(ps, ps[1:]))
    res = residual(quadratic_spec, rep.response, 1e-2, 64)
    ok = (len(decay) == 6 and all(b < a for a, b in zip(decay, decay[1:])) and quad and np.isfinite(C)
          and res <= 1e-8 and elapsed < 60)
    record("quadratic contraction", ok,
           f"eps^(2^m+1)|p_m| = {', '.join(f'{v:.1e}' for v in decay)}; C = {C:.3g}; "
           f"residual {res:.1e}; runtime {elapsed:.1f} s")


def _random_field(rng, K, rho):
    """n = 2, d = 2 field whose coefficients decay like exp(-2 rho |k|) times a random factor."""
    n, d = 2, 2
    ks = np.arange(-K, K + 1)
    norm1 = np.abs(ks)[:, None] + np.abs(ks)[None, :]
    decay = np.exp(-2.2 * rho * norm1)
    coeffs = {}
    for alpha in ((0, 0), (1, 0), (0, 1), (2, 0)):
        c = (rng.normal(size=(n, 2 * K + 1, 2 * K + 1)) + 1j * rng.normal(size=(n, 2 * K + 1, 2 * K + 1))) * decay
        c = 0.5 * (c + np.conj(c[:, ::-1, ::-1]))
        coeffs[alpha] = c
    coeffs[(1, 0)][:, K, K] = [-1.0, 0.3]
    coeffs[(0, 1)][:, K, K] = [0.2, -2.0]
    return TaylorFourierField(coeffs, n, d, K, (n,), rho=2 * rho, r=1.0)


def test_homological_bound(rng):
    worst = 0.0
    for _ in range(20):
        rho = rng.uniform(0.2, 0.6)
        f = _random_field(rng, 8, rho)
        spec = SystemSpec(FG, f, (), rho=rho)
        avg = averaging_transform(spec, 1e-4)
        worst = max(worst, avg.u_bound_lhs / avg.u_bound_rhs)
    record("homological bound", worst <= 1.0, f"max ||u|| / bound over 20 fields = {worst:.2e}")


def test_varpi_and_bound():
    v = varpi(1.0, 1.0, 1)
    closed = 2 * math.exp(-1) / (1 - math.exp(-1)) ** 2
    ok = abs(v.upper - 1.841347) <= 1e-6 and abs(v.value - closed) <= 1e-6
    ok &= abs(varpi_bound(1.0, 1.0, 1) - 20 / (3 * math.e)) <= 1e-12 and varpi_bound(1.0, 1.0, 1) >= v.upper
    cells = 0
    for tau in (1.0, 2.0, 3.0):
        for nu in (0.5, 1.0):
            for d in (1, 2):
                cells += 1
                ok &= varpi(tau, nu, d).upper <= varpi_bound(tau, nu, d)
    record("varpi value and majorant", ok, f"varpi(1,1,1) = {v.upper:.7f}, bound holds in {cells} cells")


def test_perturbation_suite(rng):
    bases = failures = 0
    while bases < 100:
        A = rng.normal(size=(3, 3))
        try:
            fr = diagonalize(A)
        except DegenerateSpectrumError:
            continue
        if margins(fr.lambdas)[0] < 0.1:
            continue
        bases += 1
        for _ in range(100):
            E = rng.uniform(-1, 1, (3, 3))
            E *= 0.999 * fr.alpha * rng.uniform() / inf_norm(E)
            new = perturbation_check(fr, A + E, strict=False)
            lo, hi = margins(new.lambdas)
            good = lo > fr.mu and hi < fr.mu_star
            good &= inf_norm(new.C) <= 2 * fr.beta0 and inf_norm(new.C_inv) <= 2 * fr.beta0
            failures += not good
    record("perturbation conclusions", failures == 0, f"{failures} failures in 100 x 100 perturbations")


def _converged_runs(linear_report, quadratic_report, hyperbolic_spec):
    hyp = solve(hyperbolic_spec, 1e-2, schedule_for(hyperbolic_spec))
    return {"linear": linear_report, "quadratic": quadratic_report, "hyperbolic": hyp}


def test_solver_exactness(linear_report, quadratic_report, hyperbolic_spec):
    runs = _converged_runs(linear_report, quadratic_report, hyperbolic_spec)
    worst = {name: max(max(r.get("hom_residual", 0.0), r.get("syl_residual", 0.0)) for r in rep.rows)
             for name, rep in runs.items()}
    ok = all(v <= 1e-12 for v in worst.values())
    record("solver exactness", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_conjugacy(quadratic_report):
    vals = [row["conjugacy"] for row in quadratic_report.rows if "conjugacy" in row]
    ok = len(vals) == quadratic_report.m_final and max(vals) <= 1e-8
    record("conjugacy", ok, f"{len(vals)} steps, worst relative error {max(vals):.1e}")


def test_measure_trend(linear_spec):
    t0 = time.perf_counter()
    sch = schedule_for(linear_spec, m_max=4)
    out = measure_trend(linear_spec, [0.1, 0.05, 0.025], 2048, sch, a2=0.5, anchors=17)
    elapsed = time.perf_counter() - t0
    a1 = out["a1"]
    ok = out["nonincreasing"] and np.isfinite(a1) and a1 > 0 and 0.5 < 1 / linear_spec.freq.tau
    for s in out["scans"]:
        ok &= s.real_shift <= s.bound_value * (1 + 1e-12) or s.real_shift == 0
    ok &= elapsed < 600
    fr = ", ".join(f"{f:.4f}" for f in out["fractions"])
    record("measure trend", ok, f"fractions {fr}; largest feasible a1 = {a1:.4f}; runtime {elapsed:.1f} s")


def _second_order_data(n, DF0, K=4):
    box = 2 * K + 1

    def const(v):
        c = np.zeros((n, box), complex)
        c[:, K] = v
        return c

    coeffs = {tuple(int(i == j) for i in range(2 * n)): const(DF0[:, j]) for j in range(n)}
    c = np.zeros((n, box), complex)
    c[0, K + 1] = c[0, K - 1] = 0.5
    coeffs[(0,) * (2 * n)] = c
    coeffs[tuple(int(i == n) for i in range(2 * n))] = const(np.r_[-0.1, np.zeros(n - 1)])
    F = TaylorFourierField(coeffs, 2 * n, 1, K, (n,))
    G = TaylorFourierField.from_polynomial({tuple(2 * int(i == 0) for i in range(2 * n)): np.r_[np.zeros(n - 1), 1.0]},
                                           2 * n, 1, K)
    return F, G


def test_second_order_spectra(rng):
    worst, done = 0.0, 0
    while done < 50:
        DF0 = rng.normal(size=(2, 2))
        mu = np.linalg.eigvals(DF0)
        if abs(mu[0] - mu[1]) < 0.1 or np.abs(mu).min() < 0.1:
            continue
        F, G = _second_order_data(2, DF0)
        red = second_order_reduce(F, [(0.0, G)], 1.0, 2.0, F1, x_init=np.zeros(2))
        worst = max(worst, red.branch_error / max(1.0, np.abs(mu).max()))
        done += 1
    F, G = _second_order_data(2, np.diag([-1.0, -4.0]))
    diag = np.sort_complex(second_order_reduce(F, [(0.0, G)], 1.0, 2.0, F1).doubled)
    diag_err = np.abs(diag - np.array([-2j, -1j, 1j, 2j])).max()
    ok = worst <= 1e-10 and diag_err <= 1e-10
    record("second-order spectra", ok, f"worst branch error {worst:.1e}; diag(-1,-4) error {diag_err:.1e}")


def _degenerate_data(K=3):
    phi = TaylorFourierField.from_polynomial({(3,): np.array([1.0])}, 1, 1, K)
    hc = np.zeros((1, 2 * K + 1), complex)
    hc[0, K] = 1
    hc[0, K + 1] = hc[0, K - 1] = 0.25
    h = TaylorFourierField({(4,): hc}, 1, 1, K, (1,))
    fc = np.zeros((1, 2 * K + 1), complex)
    fc[0, K] = 1.0
    fc[0, K + 1] = fc[0, K - 1] = 0.5
    f = TaylorFourierField({(0,): fc, (1,): hc * 0.5}, 1, 1, K, (1,))
    return phi, h, f


def test_reduction_round_trips(linear_spec, rng):
    rel = []
    spec = linear_spec.with_(a=0.5, b=1.5, g_terms=((0.0, linear_spec.f), (0.5, linear_spec.f)))
    plan, new = rescale_general(spec)
    for _ in range(20):
        th, x, e = rng.uniform(0, 6, 2), rng.uniform(-1, 1, 2), rng.uniform(0.01, 0.5)
        ref = spec.rhs(th, x, e**plan.delta)
        rel.append(np.abs(new.rhs(th, x, e) - ref).max() / np.abs(ref).max())
    phi, h, f = _degenerate_data()
    ds = degenerate_scale(phi, h, f, 3, F1, x_init=np.array([-0.5]))
    orig = degenerate_rhs(phi, h, f, F1)
    for _ in range(20):
        th, y, tau = rng.uniform(0, 6, 1), rng.uniform(-1, 1, 1), rng.uniform(0.05, 0.5)
        ref = orig(th, tau * y, tau**3) / tau
        rel.append(np.abs(ds.spec.rhs(th, y, tau) - ref).max() / np.abs(ref).max())
    F, G = _second_order_data(2, np.diag([-1.0, -4.0]))
    a, b, eps = 1.0, 2.0, 0.01
    red = second_order_reduce(F, [(0.0, G)], a, b, F1)
    T = 10 / eps ** (a / 2)
    x0, v0 = np.array([0.1, -0.2]), np.array([0.01, 0.02])
    _, X1 = rk4(second_order_rhs(F, [(0.0, G)], a, b, F1, eps), np.r_[x0, v0], 0, T, 0.05)
    _, X2 = rk4(system_rhs(red.spec, eps), np.r_[x0, v0 / eps ** (a / 2)], 0, T, 0.05)
    traj = np.abs(X1[:, :2] - X2[:, :2]).max()
    ok = max(rel) <= 1e-10 and traj <= 1e-6
    record("reduction round trips", ok, f"worst identity error {max(rel):.1e}; trajectory gap {traj:.1e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
