"""JSON (de)serialization of systems, schedules and responses.

Coefficients are stored as records ``{k, alpha, re, im}`` with one entry of
``re``/``im`` per component; ``g`` is nested by eps-power.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .averaging import SystemSpec
from .fourier import FourierSeries, Frequency
from .kam import Schedule
from .taylor import TaylorFourierField

FORMAT = "qpresponse/1"


class ConfigError(ValueError):
    """Malformed configuration; ``where`` is a field path or a line/column."""

    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


# ---------------------------------------------------------------------------
# primitives


def _num(x, where, lo=None, hi=None, integer=False, strict_lo=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(where, f"expected a number, got {x!r}")
    if integer and int(x) != x:
        raise ConfigError(where, f"expected an integer, got {x!r}")
    if not math.isfinite(x):
        raise ConfigError(where, "must be finite")
    if lo is not None and (x <= lo if strict_lo else x < lo):
        raise ConfigError(where, f"must be {'>' if strict_lo else '>='} {lo}, got {x}")
    if hi is not None and x > hi:
        raise ConfigError(where, f"must be <= {hi}, got {x}")
    return int(x) if integer else float(x)


def _vec(x, where, length=None):
    if not isinstance(x, list):
        raise ConfigError(where, f"expected a list, got {type(x).__name__}")
    if length is not None and len(x) != length:
        raise ConfigError(where, f"expected {length} entries, got {len(x)}")
    return [_num(v, f"{where}[{i}]") for i, v in enumerate(x)]


def _ivec(x, where, length):
    if not isinstance(x, list) or len(x) != length:
        raise ConfigError(where, f"expected a list of {length} integers")
    return tuple(_num(v, f"{where}[{i}]", integer=True) for i, v in enumerate(x))


def _get(obj, key, where, default=...):
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected an object")
    if key not in obj:
        if default is ...:
            raise ConfigError(f"{where}.{key}" if where else key, "missing required field")
        return default
    return obj[key]


def _f(x):
    return float(x)


# ---------------------------------------------------------------------------
# fields and series


def field_to_json(F: TaylorFourierField) -> dict:
    recs = []
    for alpha in sorted(F.coeffs):
        s = F.coeff(alpha)
        for k in sorted(s.modes()):
            v = np.asarray(s.coeff(k)).reshape(-1)
            recs.append({"k": list(k), "alpha": list(alpha), "re": [_f(x) for x in v.real],
                         "im": [_f(x) for x in v.imag]})
    return {"n": F.n, "components": int(np.prod(F.shape)), "rho": F.rho, "r": F.r, "real": F.is_real,
            "deg_min": F.deg_min, "deg_max": F.deg_max, "terms": recs}


def field_from_json(obj, where: str, n: int, d: int, K: int, rho: float, r: float, comps: int | None = None):
    """Accepts the full object form or a bare list of records."""
    if isinstance(obj, list):
        obj = {"terms": obj}
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected an object or a list of coefficient records")
    nn = _num(_get(obj, "n", where, n), f"{where}.n", 1, integer=True)
    comps = _num(_get(obj, "components", where, comps if comps is not None else nn), f"{where}.components", 1,
                 integer=True)
    rho = _num(_get(obj, "rho", where, rho), f"{where}.rho", 0, strict_lo=True)
    r = _num(_get(obj, "r", where, r), f"{where}.r", 0, strict_lo=True)
    real = _get(obj, "real", where, True)
    if not isinstance(real, bool):
        raise ConfigError(f"{where}.real", "expected true/false")
    terms = _get(obj, "terms", where)
    if not isinstance(terms, list):
        raise ConfigError(f"{where}.terms", "expected a list of records")
    box = (2 * K + 1,) * d
    coeffs = {}
    for i, rec in enumerate(terms):
        w = f"{where}.terms[{i}]"
        k = _ivec(_get(rec, "k", w), f"{w}.k", d)
        if sum(abs(x) for x in k) > K:
            raise ConfigError(f"{w}.k", f"mode {list(k)} exceeds K={K}")
        alpha = _ivec(_get(rec, "alpha", w), f"{w}.alpha", nn)
        if min(alpha) < 0:
            raise ConfigError(f"{w}.alpha", "multi-index entries must be nonnegative")
        re = _vec(_get(rec, "re", w), f"{w}.re", comps)
        im = _vec(_get(rec, "im", w, [0.0] * comps), f"{w}.im", comps)
        c = coeffs.setdefault(alpha, np.zeros((comps,) + box, dtype=complex))
        c[(slice(None),) + tuple(x + K for x in k)] += np.array(re) + 1j * np.array(im)
    dmin = _get(obj, "deg_min", where, None)
    dmax = _get(obj, "deg_max", where, None)
    try:
        F = TaylorFourierField(coeffs, nn, d, K, (comps,), rho, r, real, dmin, dmax)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None
    if real and F.reality_defect() > 1e-12:
        raise ConfigError(where, "coefficients violate the reality pairing c(-k) = conj(c(k))")
    return F


def series_to_json(s: FourierSeries) -> dict:
    recs = []
    for k in sorted(s.modes()):
        v = np.asarray(s.coeff(k)).reshape(-1)
        recs.append({"k": list(k), "re": [_f(x) for x in v.real], "im": [_f(x) for x in v.imag]})
    return {"d": s.d, "K": s.K, "rho": s.rho, "shape": list(s.shape), "real": s.is_real, "modes": recs}


def series_from_json(obj, where: str = "response") -> FourierSeries:
    d = _num(_get(obj, "d", where), f"{where}.d", 1, integer=True)
    K = _num(_get(obj, "K", where), f"{where}.K", 0, integer=True)
    rho = _num(_get(obj, "rho", where), f"{where}.rho", 0, strict_lo=True)
    shape = tuple(_ivec(_get(obj, "shape", where), f"{where}.shape", len(_get(obj, "shape", where))))
    comps = int(np.prod(shape)) if shape else 1
    modes = {}
    for i, rec in enumerate(_get(obj, "modes", where)):
        w = f"{where}.modes[{i}]"
        k = _ivec(_get(rec, "k", w), f"{w}.k", d)
        if sum(abs(x) for x in k) > K:
            raise ConfigError(f"{w}.k", f"mode {list(k)} exceeds K={K}")
        v = np.array(_vec(_get(rec, "re", w), f"{w}.re", comps)) + 1j * np.array(
            _vec(_get(rec, "im", w), f"{w}.im", comps))
        modes[k] = v.reshape(shape)
    return FourierSeries.from_modes(modes, d, K, shape, rho, bool(_get(obj, "real", where, True)))


# ---------------------------------------------------------------------------
# systems and schedules


def spec_to_json(spec: SystemSpec) -> dict:
    fr = spec.freq
    return {"name": spec.name, "n": spec.n, "d": spec.d, "K": spec.K, "omega": list(fr.omega), "gamma": fr.gamma,
            "tau": fr.tau, "a": spec.a, "b": spec.b, "rho": spec.rho, "r": spec.r, "center": list(spec.center),
            "deg_max": spec.deg_max, "K_check": spec.K_check, "f": field_to_json(spec.f),
            "g": {repr(q): field_to_json(G) for q, G in spec.g_terms}}


def spec_from_json(obj, where: str = "system") -> SystemSpec:
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected an object")
    d = _num(_get(obj, "d", where), f"{where}.d", 1, integer=True)
    n = _num(_get(obj, "n", where), f"{where}.n", 1, integer=True)
    K = _num(_get(obj, "K", where), f"{where}.K", 1, 400, integer=True)
    omega = _vec(_get(obj, "omega", where), f"{where}.omega", d)
    gamma = _num(_get(obj, "gamma", where), f"{where}.gamma", 0, strict_lo=True)
    tau = _num(_get(obj, "tau", where), f"{where}.tau", d - 1, strict_lo=True)
    a = _num(_get(obj, "a", where, 1.0), f"{where}.a", 0, strict_lo=True)
    b = _num(_get(obj, "b", where, 2.0), f"{where}.b", a, strict_lo=True)
    rho = _num(_get(obj, "rho", where, 0.5), f"{where}.rho", 0, strict_lo=True)
    r = _num(_get(obj, "r", where, 1.0), f"{where}.r", 0, strict_lo=True)
    center = _get(obj, "center", where, None)
    center = None if center is None else _vec(center, f"{where}.center", n)
    deg_max = _get(obj, "deg_max", where, None)
    deg_max = None if deg_max is None else _num(deg_max, f"{where}.deg_max", 1, 8, integer=True)
    K_check = _get(obj, "K_check", where, None)
    K_check = None if K_check is None else _num(K_check, f"{where}.K_check", 1, integer=True)
    f = field_from_json(_get(obj, "f", where), f"{where}.f", n, d, K, 2 * rho, r)
    g = _get(obj, "g", where, {})
    if not isinstance(g, dict):
        raise ConfigError(f"{where}.g", "expected an object keyed by eps-power")
    g_terms = []
    for key in g:
        try:
            q = float(key)
        except ValueError:
            raise ConfigError(f"{where}.g", f"eps-power key {key!r} is not a number") from None
        if q < 0 or not math.isfinite(q):
            raise ConfigError(f"{where}.g", f"eps-power {key!r} must be nonnegative")
        g_terms.append((q, field_from_json(g[key], f"{where}.g[{key}]", n, d, K, 2 * rho, r)))
    for w, F in [("f", f)] + [(f"g[{q!r}]", G) for q, G in g_terms]:
        if F.n != n or F.shape != (n,):
            raise ConfigError(f"{where}.{w}", f"must be a field on R^{n} with {n} components")
    try:
        return SystemSpec(Frequency(omega, gamma, tau), f, tuple(g_terms), a, b, rho, r, center, deg_max,
                          str(_get(obj, "name", where, "system")), K_check)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


SCHEDULE_RANGES = {"rho0": (0, None, False), "c0": (0, 0.25, False), "kappa": (1, 2, False),
                   "tau": (0, None, False), "K_trunc": (1, 400, True), "deg_max": (1, 8, True),
                   "m_max": (0, 60, True), "p_tol": (0, None, False), "neumann_terms": (1, 64, True)}


def schedule_to_json(s: Schedule) -> dict:
    return {k: getattr(s, k) for k in s.__dataclass_fields__}


def schedule_from_json(obj, spec: SystemSpec, where: str = "schedule") -> Schedule:
    obj = {} if obj is None else obj
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected an object")
    kw = {"rho0": spec.rho, "tau": spec.freq.tau, "K_trunc": spec.K, "deg_max": spec.deg_max}
    for key, val in obj.items():
        if key not in SCHEDULE_RANGES:
            raise ConfigError(f"{where}.{key}", "unknown schedule field")
        lo, hi, integer = SCHEDULE_RANGES[key]
        kw[key] = _num(val, f"{where}.{key}", lo, hi, integer, strict_lo=not integer and key != "p_tol")
    if kw["K_trunc"] > spec.K:
        raise ConfigError(f"{where}.K_trunc", f"exceeds the system truncation K={spec.K}")
    try:
        return Schedule(**kw)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


# ---------------------------------------------------------------------------
# run configuration


DEFAULT_ORACLES = {"grid_size": 64, "residual_bound": 1e-8, "dt": 0.05, "T": 0.0, "discard": 0.2,
                   "shadow_bound": 1e-6, "oracle_bound": 1e-10, "conjugacy_samples": 4}
DEFAULT_SWEEP = {"preview_m": 2, "anchors": None, "runs": 0, "a2": 0.5, "a3": 1.0}


class RunConfig:
    """Parsed configuration document."""

    def __init__(self, system, schedule, epsilon, x_init, oracles, sweep, reduce, raw):
        self.system, self.schedule, self.epsilon = system, schedule, epsilon
        self.x_init, self.oracles, self.sweep, self.reduce, self.raw = x_init, oracles, sweep, reduce, raw

    @property
    def is_sweep(self):
        return isinstance(self.epsilon, dict)


def _epsilon(obj, where="epsilon"):
    if isinstance(obj, dict):
        lo = _num(_get(obj, "lo", where, 0.0), f"{where}.lo", 0)
        hi = _num(_get(obj, "hi", where), f"{where}.hi", lo, strict_lo=True)
        if lo != 0:
            raise ConfigError(f"{where}.lo", "sweeps start at 0 (cells partition (0, hi))")
        cells = _num(_get(obj, "cells", where), f"{where}.cells", 1, 10**6, integer=True)
        return {"lo": lo, "hi": hi, "cells": cells}
    return _num(obj, where, 0, 1, strict_lo=True)


def _section(obj, defaults, where):
    obj = {} if obj is None else obj
    if not isinstance(obj, dict):
        raise ConfigError(where, "expected an object")
    out = dict(defaults)
    for key, val in obj.items():
        if key not in defaults:
            raise ConfigError(f"{where}.{key}", "unknown field")
        if val is not None:
            integer = key in ("grid_size", "preview_m", "anchors", "runs", "conjugacy_samples")
            val = _num(val, f"{where}.{key}", 0, integer=integer)
        out[key] = val
    return out


def config_from_json(doc) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    known = {"format", "system", "schedule", "epsilon", "x_init", "oracles", "sweep", "reduce"}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown top-level field")
    system = spec_from_json(_get(doc, "system", "")) if "system" in doc else None
    if system is None and "reduce" not in doc:
        raise ConfigError("system", "missing required field")
    schedule = schedule_from_json(doc.get("schedule"), system) if system is not None else None
    epsilon = _epsilon(doc["epsilon"]) if "epsilon" in doc else None
    x_init = doc.get("x_init")
    if x_init is not None:
        x_init = np.array(_vec(x_init, "x_init", system.n if system else None))
    oracles = _section(doc.get("oracles"), DEFAULT_ORACLES, "oracles")
    if oracles["grid_size"] < 8:
        raise ConfigError("oracles.grid_size", "must be at least 8 per angle")
    sweep = _section(doc.get("sweep"), DEFAULT_SWEEP, "sweep")
    return RunConfig(system, schedule, epsilon, x_init, oracles, sweep, doc.get("reduce"), doc)


def load_json(path) -> dict:
    """Read a JSON document, turning syntax errors into line/column diagnostics."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None


def load_config(path) -> RunConfig:
    return config_from_json(load_json(path))


def config_to_json(spec: SystemSpec, schedule: Schedule | None = None, epsilon=None, **sections) -> dict:
    doc = {"format": FORMAT, "system": spec_to_json(spec)}
    if schedule is not None:
        doc["schedule"] = schedule_to_json(schedule)
    if epsilon is not None:
        doc["epsilon"] = epsilon
    doc.update({k: v for k, v in sections.items() if v is not None})
    return doc


# ---------------------------------------------------------------------------
# output


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _clean(x.real), "im": _clean(x.imag)}
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def dump_json(obj, path):
    Path(path).write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")


def write_csv(rows, path, columns=None):
    columns = columns or sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def specs_equal(a: SystemSpec, b: SystemSpec) -> bool:
    """Exact equality of two systems (coefficients, widths, exponents)."""

    def feq(F, G):
        return (F.n, F.d, F.K, F.shape, F.rho, F.r, F.is_real, F.deg_min, F.deg_max) == \
               (G.n, G.d, G.K, G.shape, G.rho, G.r, G.is_real, G.deg_min, G.deg_max) and \
               F.coeffs.keys() == G.coeffs.keys() and all(np.array_equal(F.coeffs[k], G.coeffs[k]) for k in F.coeffs)

    head = ("freq", "a", "b", "rho", "r", "center", "deg_max", "name", "K_check")
    return all(getattr(a, k) == getattr(b, k) for k in head) and feq(a.f, b.f) and \
        len(a.g_terms) == len(b.g_terms) and all(p == q and feq(F, G) for (p, F), (q, G) in zip(a.g_terms, b.g_terms))
