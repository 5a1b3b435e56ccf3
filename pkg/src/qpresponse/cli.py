"""Command-line driver: ``qpresponse <command> --config FILE --out DIR``.

Exit codes: 0 success, 2 config error, 3 resonant epsilon, 4 divergence or
no convergence, 5 verification failure.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .averaging import (EpsilonTooLarge, EquilibriumError, averaging_transform, compute_average, find_equilibrium,
                        prepare)
from .fourier import FourierSeries
from .kam import KamDivergence, NotConverged, ResonantEpsilon, run
from .ledger import BoundsLedger, LedgerViolation, LedgerWarning, effective_constants, varpi_bound, varpi
from .oracles import OracleError, integrate_oracle, linear_fourier_oracle, residual
from .reductions import (HypothesisError, InvalidExponents, degenerate_scale, plan_exponents, rescale_general,
                         second_order_reduce)
from .resonance import excluded_parameters
from .spectra import SpectrumError, margins

OK, CONFIG, RESONANT, DIVERGED, VERIFY = 0, 2, 3, 4, 5


class Exit(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def bundled_configs():
    root = resources.files("qpresponse") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _config_path(name):
    p = Path(name)
    if p.exists():
        return p
    cand = resources.files("qpresponse") / "configs" / f"{name}.json"
    if cand.is_file():
        return Path(str(cand))
    raise Exit(CONFIG, f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")


def _load(args):
    if not args.config:
        raise Exit(CONFIG, "--config is required")
    return io.load_config(_config_path(args.config))


def _need_system(cfg):
    if cfg.system is None:
        raise Exit(CONFIG, "system: missing required field")
    return cfg.system


def _need_eps(cfg, allow_sweep=False):
    if cfg.epsilon is None:
        raise Exit(CONFIG, "epsilon: missing required field")
    if cfg.is_sweep and not allow_sweep:
        raise Exit(CONFIG, "epsilon: this command needs a single value, not a sweep")
    return cfg.epsilon


def _cx(v):
    v = np.asarray(v)
    return {"re": np.real(v).tolist(), "im": np.imag(v).tolist()}


# ---------------------------------------------------------------------------
# commands


def cmd_average(cfg, args, out):
    spec = _need_system(cfg)
    x0 = np.zeros(spec.n) if cfg.x_init is None else cfg.x_init - np.asarray(spec.center)
    f_bar = compute_average(spec.f)
    x_star, frame = find_equilibrium(f_bar, x0)
    doc = {"system": spec.name, "f_bar": io.field_to_json(f_bar), "x_star": np.asarray(spec.center) + x_star,
           "spectrum": _cx(frame.lambdas), "separation": margins(frame.lambdas)[0], "cond": frame.cond,
           "beta0": frame.beta0}
    if cfg.epsilon is not None and not cfg.is_sweep:
        avg = averaging_transform(spec, cfg.epsilon)
        doc.update({"epsilon": cfg.epsilon, "eta": avg.eta, "du_margin": avg.du_margin,
                    "u_bound": {"lhs": avg.u_bound_lhs, "rhs": avg.u_bound_rhs}})
    io.dump_json(doc, out / "average.json")
    return OK


def cmd_normal_form(cfg, args, out):
    spec = _need_system(cfg)
    eps = _need_eps(cfg)
    nf = prepare(spec, eps, cfg.x_init)
    doc = {"system": spec.name, "epsilon": eps, "eta": nf.epsilon, "x_star": nf.center + nf.x_star,
           "A": nf.A, "spectrum": _cx(nf.frame.lambdas), "B": io.series_to_json(nf.B), "p": io.series_to_json(nf.p),
           "h": io.field_to_json(nf.h), "info": nf.info}
    io.dump_json(doc, out / "normal_form.json")
    return OK


def _iteration_rows(rep):
    bad = {}
    for v in rep.ledger.verdicts:
        bad.setdefault(v.m, [0, 0])
        bad[v.m][0] += not v.ok
        bad[v.m][1] += 1
    rows = []
    for row in rep.rows:
        f, t = bad.get(row["m"], (0, 0))
        rows.append(dict(row, ledger_failures=f, ledger_checks=t))
    return rows


ITER_COLUMNS = ["m", "p", "B", "u", "S", "r", "K", "eps_p", "eps_B", "A_dist", "dioph1", "dioph2", "hom_residual",
                "syl_residual", "conjugacy", "neumann_remainder", "ledger_failures", "ledger_checks"]


def cmd_run(cfg, args, out):
    spec = _need_system(cfg)
    eps = _need_eps(cfg)
    t0 = time.perf_counter()
    nf = prepare(spec, eps, cfg.x_init)
    ledger = BoundsLedger(strict=args.strict_ledger)
    rep = run(nf, cfg.schedule, ledger, conjugacy_samples=int(cfg.oracles["conjugacy_samples"]), seed=args.seed)
    elapsed = time.perf_counter() - t0
    res = residual(spec, rep.response, eps, int(cfg.oracles["grid_size"]))
    bound = cfg.oracles["residual_bound"]
    doc = {"system": spec.name, "epsilon": eps, "converged": rep.converged, "reason": rep.reason,
           "m_final": rep.m_final, "residual": res, "residual_bound": bound,
           "grid_size": int(cfg.oracles["grid_size"]), "contraction_constant": rep.contraction_constant(),
           "max_residuals": rep.max_residuals(), "A_inf": rep.A_inf, "ledger": rep.ledger.summary(),
           "ledger_failures": len(rep.ledger.failures()), "effective_constants": effective_constants(rep.ledger, eps),
           "response": io.series_to_json(rep.response), "timing": {"seconds": elapsed}}
    io.dump_json(doc, out / "report.json")
    io.write_csv(_iteration_rows(rep), out / "iterations.csv", ITER_COLUMNS)
    io.write_csv(rep.ledger.rows(), out / "ledger.csv", ["m", "name", "lhs", "rhs", "ok", "kind", "note"])
    print(f"converged at m={rep.m_final}, residual {res:.3e} (bound {bound:.1e}), {elapsed:.2f} s")
    if res > bound:
        raise Exit(VERIFY, f"residual {res:.3e} exceeds bound {bound:.3e}")
    return OK


def _sweep_one(doc, eps, seed):
    """Worker: status of one KAM run at eps (runs in a child process when threads > 1)."""
    warnings.simplefilter("ignore", LedgerWarning)
    cfg = io.config_from_json(doc)
    try:
        nf = prepare(cfg.system, eps, cfg.x_init)
        rep = run(nf, cfg.schedule, seed=seed)
        return {"epsilon": eps, "status": "converged", "code": OK, "m_final": rep.m_final,
                "residual": residual(cfg.system, rep.response, eps, int(cfg.oracles["grid_size"]))}
    except ResonantEpsilon as exc:
        return {"epsilon": eps, "status": "resonant", "code": RESONANT, "detail": str(exc)}
    except (KamDivergence, NotConverged, EpsilonTooLarge) as exc:
        return {"epsilon": eps, "status": "diverged", "code": DIVERGED, "detail": str(exc)}


def cmd_sweep(cfg, args, out):
    spec = _need_system(cfg)
    sw = _need_eps(cfg, allow_sweep=True)
    if not cfg.is_sweep:
        raise Exit(CONFIG, "epsilon: sweep needs {lo, hi, cells}")
    t0 = time.perf_counter()
    anchors = cfg.sweep["anchors"]
    scan = excluded_parameters(spec, sw["hi"], sw["cells"], cfg.schedule, preview_m=int(cfg.sweep["preview_m"]),
                               anchors=None if anchors is None else int(anchors), a2=cfg.sweep["a2"],
                               a3=cfg.sweep["a3"], x_init=cfg.x_init)
    rows = scan.rows()
    for r in rows:
        r["excluded"] = (r["eps_hi"] - r["eps_lo"]) * r["flagged"]
    io.write_csv(rows, out / "cells.csv", ["eps_lo", "eps_hi", "m", "worst_k", "lhs", "rhs", "flagged", "excluded"])
    runs = []
    nrun = int(cfg.sweep["runs"])
    if nrun:
        edges = scan.edges
        idx = np.unique(np.linspace(0, len(edges) - 2, nrun).round().astype(int))
        eps_list = [float(0.5 * (edges[i] + edges[i + 1])) for i in idx]
        if args.threads > 1:
            with ProcessPoolExecutor(args.threads) as ex:
                runs = list(ex.map(_sweep_one, [cfg.raw] * len(eps_list), eps_list, [args.seed] * len(eps_list)))
        else:
            runs = [_sweep_one(cfg.raw, e, args.seed) for e in eps_list]
        io.write_csv(runs, out / "runs.csv", ["epsilon", "status", "code", "m_final", "residual", "detail"])
    tally = {s: sum(r["status"] == s for r in runs) for s in ("converged", "resonant", "diverged")}
    doc = {"system": spec.name, "eps1": sw["hi"], "cells": sw["cells"], "excluded_measure": scan.excluded_measure,
           "excluded_fraction": scan.fraction, "flagged_cells": int(scan.flags.sum()), "mu_star": scan.mu_star,
           "real_shift_measure": scan.real_shift, "info": scan.info, "runs": tally,
           "timing": {"seconds": time.perf_counter() - t0}}
    io.dump_json(doc, out / "sweep.json")
    print(f"{int(scan.flags.sum())}/{sw['cells']} cells flagged, excluded measure {scan.excluded_measure:.4e} "
          f"(fraction {scan.fraction:.4f})")
    return OK


def cmd_verify(cfg, args, out):
    spec = _need_system(cfg)
    path = Path(args.response) if args.response else out / "report.json"
    if not path.exists():
        raise Exit(CONFIG, f"response file {path} not found")
    doc = io.load_json(path)
    X = io.series_from_json(io._get(doc, "response", str(path)), "response")
    eps = doc.get("epsilon", cfg.epsilon)
    if eps is None or isinstance(eps, dict):
        raise Exit(CONFIG, "epsilon: needed to verify a response")
    if X.shape != (spec.n,) or X.d != spec.d:
        raise Exit(CONFIG, f"response shape {X.shape} on T^{X.d} does not match the system")
    o = cfg.oracles
    checks = []
    res = residual(spec, X, eps, int(o["grid_size"]))
    checks.append({"check": "residual", "value": res, "bound": o["residual_bound"], "ok": res <= o["residual_bound"]})
    linear = not spec.g_terms and max(spec.f.degrees(), default=0) <= 1
    if linear:
        n = spec.n
        A = np.stack([np.real(spec.f.coeff(tuple(int(i == j) for i in range(n))).mean()) for j in range(n)], axis=1)
        v = spec.f.coeff((0,) * n).with_rho(X.rho)
        try:
            ref = linear_fourier_oracle(A, v, eps, spec.freq)
            ref = ref + FourierSeries.constant(np.asarray(spec.center), spec.d, spec.K, X.rho)
            if ref.K != X.K:
                raise OracleError("truncation mismatch")
            diff = float(np.abs(ref.c - X.c).max())
            checks.append({"check": "linear_oracle", "value": diff, "bound": o["oracle_bound"],
                           "ok": diff <= o["oracle_bound"]})
        except OracleError as exc:
            checks.append({"check": "linear_oracle", "value": float("nan"), "bound": o["oracle_bound"], "ok": False,
                           "detail": str(exc)})
    if o["T"] > 0:
        x0 = np.real(X.evaluate(np.zeros(spec.d)))
        tr = integrate_oracle(spec, x0, eps, o["T"], o["dt"], X, o["discard"])
        checks.append({"check": "shadowing", "value": tr.distance, "bound": o["shadow_bound"],
                       "ok": tr.distance <= o["shadow_bound"]})
    passed = all(c["ok"] for c in checks)
    io.dump_json({"response": str(path), "epsilon": eps, "passed": passed, "checks": checks}, out / "verify.json")
    for c in checks:
        print(f"{'PASS' if c['ok'] else 'FAIL'} {c['check']}: {c['value']:.3e} (bound {c['bound']:.1e})")
    if not passed:
        raise Exit(VERIFY, "verification failed")
    return OK


def _header(sec, where):
    """Torus/frequency data shared by the reduce inputs."""
    g = io._get
    d = io._num(g(sec, "d", where), f"{where}.d", 1, integer=True)
    n = io._num(g(sec, "n", where), f"{where}.n", 1, integer=True)
    K = io._num(g(sec, "K", where), f"{where}.K", 1, 400, integer=True)
    omega = io._vec(g(sec, "omega", where), f"{where}.omega", d)
    gamma = io._num(g(sec, "gamma", where), f"{where}.gamma", 0, strict_lo=True)
    tau = io._num(g(sec, "tau", where), f"{where}.tau", d - 1, strict_lo=True)
    rho = io._num(g(sec, "rho", where, 0.5), f"{where}.rho", 0, strict_lo=True)
    r = io._num(g(sec, "r", where, 1.0), f"{where}.r", 0, strict_lo=True)
    return n, d, K, io.Frequency(omega, gamma, tau), rho, r


def cmd_reduce(cfg, args, out):
    sec = cfg.reduce
    if sec is None:
        if cfg.system is None:
            raise Exit(CONFIG, "reduce: missing required field")
        sec = {"kind": "general"}
    kind = io._get(sec, "kind", "reduce")
    doc = {"kind": kind}
    if kind == "general":
        spec = _need_system(cfg)
        plan, new = rescale_general(spec)
    elif kind == "second-order":
        n, d, K, freq, rho, r = _header(sec, "reduce")
        a = io._num(io._get(sec, "a", "reduce"), "reduce.a", 0, strict_lo=True)
        b = io._num(io._get(sec, "b", "reduce"), "reduce.b", a, strict_lo=True)
        F = io.field_from_json(io._get(sec, "F", "reduce"), "reduce.F", 2 * n, d, K, 2 * rho, r, n)
        G = [(float(q), io.field_from_json(v, f"reduce.G[{q}]", 2 * n, d, K, 2 * rho, r, n))
             for q, v in io._get(sec, "G", "reduce", {}).items()]
        x_init = sec.get("x_init")
        red = second_order_reduce(F, G, a, b, freq, rho, r, None if x_init is None else np.asarray(x_init, float))
        new, plan = red.spec, red.plan
        doc.update({"x_star": red.x_star, "DF0_spectrum": _cx(red.mu), "doubled_spectrum": _cx(red.doubled),
                    "branch_error": red.branch_error})
    elif kind == "degenerate":
        n, d, K, freq, rho, r = _header(sec, "reduce")
        l = io._num(io._get(sec, "l", "reduce"), "reduce.l", 2, integer=True)
        fields = {k: io.field_from_json(io._get(sec, k, "reduce"), f"reduce.{k}", n, d, K, 2 * rho, r)
                  for k in ("phi", "h", "f")}
        x_init = sec.get("x_init")
        ds = degenerate_scale(fields["phi"], fields["h"], fields["f"], l, freq, rho, r,
                              None if x_init is None else np.asarray(x_init, float))
        new = ds.spec
        plan = plan_exponents(new.a, new.b)
        doc.update({"l": l, "x_star": ds.x_star, "parameter": "tau = eps^(1/l)"})
    else:
        raise Exit(CONFIG, f"reduce.kind: unknown kind {kind!r} (general, second-order, degenerate)")
    doc["plan"] = {k: getattr(plan, k) for k in plan.__dataclass_fields__}
    io.dump_json(doc, out / "reduce.json")
    io.dump_json(io.config_to_json(new), out / "reduced_config.json")
    print(f"{kind}: exponents (a, b) = ({new.a:g}, {new.b:g}), delta = {plan.delta:g}")
    return OK


def cmd_bounds(cfg, args, out):
    spec = _need_system(cfg)
    s = cfg.schedule
    ledger = BoundsLedger(strict=args.strict_ledger)
    rows = []
    for m in range(s.m_max + 1):
        rho, sigma, nu, tau_m = s.params(m)
        vv = varpi(tau_m, nu, spec.d)
        bound = varpi_bound(tau_m, nu, spec.d)
        ledger.check("varpi_majorant", m, vv.upper, bound, note="schedule")
        rows.append({"m": m, "rho": rho, "sigma": sigma, "nu": nu, "tau_m": tau_m, "varpi": vv.value,
                     "varpi_tail": vv.tail, "varpi_bound": bound})
    io.write_csv(rows, out / "schedule.csv", ["m", "rho", "sigma", "nu", "tau_m", "varpi", "varpi_tail",
                                               "varpi_bound"])
    doc = {"system": spec.name}
    if cfg.epsilon is not None and not cfg.is_sweep:
        nf = prepare(spec, cfg.epsilon, cfg.x_init)
        rep = run(nf, s, ledger, require_convergence=False)
        doc.update({"epsilon": cfg.epsilon, "converged": rep.converged,
                    "effective_constants": effective_constants(ledger, cfg.epsilon)})
    doc.update({"summary": ledger.summary(), "failures": [v.row() for v in ledger.failures()]})
    io.write_csv(ledger.rows(), out / "ledger.csv", ["m", "name", "lhs", "rhs", "ok", "kind", "note"])
    io.dump_json(doc, out / "bounds.json")
    exact = ledger.failures("exact")
    print(f"{len(ledger.verdicts)} checks, {len(exact)} exact failures")
    if args.strict_ledger and exact:
        raise Exit(VERIFY, f"{len(exact)} ledger checks failed")
    return OK


COMMANDS = {"average": cmd_average, "normal-form": cmd_normal_form, "run": cmd_run, "sweep": cmd_sweep,
            "verify": cmd_verify, "reduce": cmd_reduce, "bounds": cmd_bounds}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file or bundled config name")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")
    common.add_argument("--strict-ledger", action="store_true", default=argparse.SUPPRESS,
                        help="stop at the first failed ledger inequality")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker processes for sweep runs")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for sampled checks")
    p = argparse.ArgumentParser(prog="qpresponse", parents=[common],
                                description="Quasi-periodic response solutions by averaging and KAM iteration.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"average": "averaged field, equilibrium and spectrum", "normal-form": "recentred normal form data",
             "run": "full KAM iteration and report", "sweep": "resonant-cell scan over (0, eps1)",
             "verify": "residual and oracle checks on a stored response", "reduce": "preprocessing into first order",
             "bounds": "ledger-only evaluation"}
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "verify":
            sp.add_argument("--response", default=None, help="report/response JSON (default OUT/report.json)")
    return p


def main(argv=None) -> int:
    p = build_parser()
    args = p.parse_args(argv)
    for key, val in (("config", None), ("out", "."), ("strict_ledger", False), ("threads", 1), ("seed", 0)):
        if not hasattr(args, key):
            setattr(args, key, val)
    if not hasattr(args, "response"):
        args.response = None
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg = _load(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LedgerWarning)
            return COMMANDS[args.command](cfg, args, out)
    except Exit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except io.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG
    except (HypothesisError, InvalidExponents, EquilibriumError, SpectrumError) as exc:
        print(f"hypothesis not met: {exc}", file=sys.stderr)
        return CONFIG
    except ResonantEpsilon as exc:
        print(f"resonant epsilon: {exc}", file=sys.stderr)
        return RESONANT
    except (KamDivergence, NotConverged, EpsilonTooLarge) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return DIVERGED
    except LedgerViolation as exc:
        print(f"ledger violation: {exc}", file=sys.stderr)
        return VERIFY


if __name__ == "__main__":
    sys.exit(main())
