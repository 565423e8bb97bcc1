"""
Manifest-driven experiment runner.

A manifest is a YAML mapping with a ``kind`` and the parameters of that
kind.  A ``cases`` list runs several experiments of the same kind; top-level
keys are defaults for every case.  Each case may carry an ``expect`` mapping
checked against its summary.

Exit codes: 0 pass, 1 expectation failure, 2 input error, 3 ambiguous rank.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import itertools
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import fredholm as fa
from . import regularity as rg
from .pdo_calculus import default_directions, default_points, petrovskii_check
from .refined_spaces import (
    FourierField,
    ManifoldSpec,
    RefinedIndex,
    embedding_ratio_experiment,
    field_from_csv,
    field_to_csv,
    multiplier_norm,
    norm,
    random_field,
)
from .slowly_varying import (
    check_slow_variation,
    default_t_grid,
    embedding_criterion,
    octave_ratio_verdict,
    parse_phi,
)
from .systems import SystemFileError, load_system

EXIT_OK, EXIT_EXPECT, EXIT_INPUT, EXIT_AMBIGUOUS = 0, 1, 2, 3
KINDS = (
    "ellipticity",
    "index",
    "index-invariance",
    "solve",
    "apriori",
    "embedding",
    "smoothness",
    "lift",
    "continuity",
    "slow-variation",
    "norm-identity",
)
ALIASES = {"check-ellipticity": "ellipticity"}
COMMON_KEYS = {"kind", "name", "seed", "expect", "cases", "output"}
KIND_KEYS = {
    "ellipticity": {"system", "points", "angles", "delta"},
    "index": {"system", "s", "phi", "K", "rank_tol", "time_budget_s"},
    "index-invariance": {"system", "s", "phi", "K", "rank_tol"},
    "solve": {"system", "s", "phi", "K", "rank_tol", "tol", "data"},
    "apriori": {"system", "s", "phi", "sigma", "K"},
    "embedding": {"phi", "K", "rho", "ratio_phi"},
    "smoothness": {"n", "K", "data"},
    "lift": {"system", "s", "phi", "K", "data", "cutoff"},
    "continuity": {"n", "K", "rho", "phi", "data", "extremal_K"},
    "slow-variation": {"phi", "lambdas", "t_max", "tol", "power_exponents"},
    "norm-identity": {"n", "K", "count", "s", "phi"},
}


class ManifestError(ValueError):
    """Invalid manifest, with the offending field path."""


# -- field readers -----------------------------------------------------------


def _need(case: dict, key: str, where: str):
    if key not in case:
        raise ManifestError(f"{where}.{key}: required field missing")
    return case[key]


def _as_list(value, key: str, where: str, conv: Callable, nonempty: bool = True) -> list:
    items = value if isinstance(value, list) else [value]
    if nonempty and not items:
        raise ManifestError(f"{where}.{key}: list must be nonempty")
    out = []
    for i, v in enumerate(items):
        try:
            out.append(conv(v))
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{where}.{key}[{i}]: {exc}") from exc
    return out


def _pos_int(v) -> int:
    if isinstance(v, bool) or int(v) != v or int(v) < 1:
        raise ValueError(f"expected a positive integer, got {v!r}")
    return int(v)


def _real(v) -> float:
    if isinstance(v, bool):
        raise ValueError(f"expected a real number, got {v!r}")
    return float(v)


def _phi(v):
    if v is None or v == [] or v == 1:
        return parse_phi(None)
    if isinstance(v, (int, float)):
        return parse_phi([float(v)])
    return parse_phi(v)


def _scalar(case, key, where, conv, default=None):
    if key not in case:
        if default is None:
            raise ManifestError(f"{where}.{key}: required field missing")
        return default
    try:
        return conv(case[key])
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}.{key}: {exc}") from exc


def _list(case, key, where, conv, default=None):
    if key not in case:
        if default is None:
            raise ManifestError(f"{where}.{key}: required field missing")
        return list(default)
    return _as_list(case[key], key, where, conv)


def _phi_list(case, where, key="phi", default=((),)):
    if key not in case:
        return [_phi(list(v)) for v in default]
    value = case[key]
    # a flat list of numbers (or []) is one exponent tuple; a list of lists is several
    if value is None or (isinstance(value, list) and all(isinstance(v, (int, float)) for v in value)):
        value = [value or []]
    return _as_list(value, key, where, _phi)


@dataclass
class Context:
    base: Path
    seed: int
    out: Path | None
    write_csv: bool


def _system(case, where, ctx: Context):
    src = str(_need(case, "system", where))
    if not src.startswith("builtin:") and not Path(src).is_absolute():
        src = str(ctx.base / src)
    try:
        return load_system(src)
    except FileNotFoundError as exc:
        raise ManifestError(f"{where}.system: {exc}") from exc
    except SystemFileError as exc:
        raise ManifestError(f"{where}.system: {exc}") from exc


def _field(spec_data, where: str, n: int, K: int, ctx: Context) -> FourierField:
    spec = ManifoldSpec(n)
    if not isinstance(spec_data, dict):
        raise ManifestError(f"{where}: data entry must be a mapping")
    K = int(spec_data.get("K", K))
    try:
        if "zero" in spec_data:
            return FourierField.zeros(spec, K)
        if "power" in spec_data:
            return rg.power_data(
                spec,
                K,
                float(spec_data["power"]),
                float(spec_data.get("log", 0.0)),
                bool(spec_data.get("mean_zero", False)),
            )
        if "modes" in spec_data:
            modes = {}
            for i, row in enumerate(spec_data["modes"]):
                xi, re, im = row
                xi = tuple(xi) if isinstance(xi, list) else (xi,)
                if len(xi) != n:
                    raise ValueError(f"modes[{i}]: mode {xi} is not {n}-dimensional")
                modes[xi] = complex(float(re), float(im))
            return FourierField.from_modes(spec, modes, K)
        if "csv" in spec_data:
            path = Path(spec_data["csv"])
            path = path if path.is_absolute() else ctx.base / path
            if not path.is_file():
                raise ValueError(f"CSV file {path} not found")
            return field_from_csv(path, K)
        if "random" in spec_data:
            rng = np.random.default_rng(ctx.seed)
            return random_field(spec, K, rng)
    except (TypeError, ValueError, KeyError) as exc:
        raise ManifestError(f"{where}: {exc}") from exc
    raise ManifestError(f"{where}: expected one of zero, power, modes, csv, random")


def _data(case, where, n, p, K, ctx) -> list[FourierField]:
    raw = _need(case, "data", where)
    raw = raw if isinstance(raw, list) else [raw]
    if len(raw) != p:
        raise ManifestError(f"{where}.data: expected {p} components, got {len(raw)}")
    return [_field(d, f"{where}.data[{i}]", n, K, ctx) for i, d in enumerate(raw)]


def _cutoff(case, where, n):
    if "cutoff" not in case or case["cutoff"] is None:
        return None
    c = case["cutoff"]
    spec = ManifoldSpec(n)
    try:
        kind = c.get("kind", "flat-top")
        power = int(c.get("power", 3))
        center = c.get("center")
        if kind == "flat-top":
            return rg.flat_top_cutoff(spec, power, center)
        if kind == "bump":
            return rg.bump_cutoff(spec, power, center)
        raise ValueError(f"unknown cutoff kind {kind!r}")
    except (AttributeError, TypeError, ValueError) as exc:
        raise ManifestError(f"{where}.cutoff: {exc}") from exc


# -- runners -----------------------------------------------------------------
#
# Each returns (summary, details, files).  Summary values are the quantities
# expectations refer to.


def run_ellipticity(case, where, ctx):
    A = _system(case, where, ctx)
    per_axis = _scalar(case, "points", where, _pos_int, 16)
    n_angles = _scalar(case, "angles", where, _pos_int, 256)
    delta = _scalar(case, "delta", where, _real, 1e-8)
    rep = petrovskii_check(A, default_points(A.n, per_axis), default_directions(A.n, n_angles), delta)
    summary = {"elliptic": bool(rep.elliptic), "min_abs_det": float(rep.min_abs_det)}
    details = {"column_orders": [float(m) for m in rep.column_orders], "system": A.name}
    return summary, details, {}


def run_index(case, where, ctx):
    A = _system(case, where, ctx)
    s_list = _list(case, "s", where, _real, [0.0])
    phis = _phi_list(case, where)
    K_list = _list(case, "K", where, _pos_int)
    rank_tol = _scalar(case, "rank_tol", where, _real, 1e-8)
    budget = case.get("time_budget_s")
    rows, files = [], {}
    t0 = time.perf_counter()
    for s, phi, K in itertools.product(s_list, phis, K_list):
        rep = fa.fredholm_report(fa.truncate(A, K, s, phi), rank_tol)
        rows.append(rep.to_dict())
        if ctx.write_csv:
            name = f"singular_values_s{s:g}_K{K}_phi{'_'.join(f'{r:g}' for r in phi.to_list()) or '1'}.csv"
            files[name] = "sigma\n" + "".join(f"{v!r}\n" for v in rep.singular_values.tolist())
    elapsed = time.perf_counter() - t0
    summary = {
        "index": [r["index"] for r in rows],
        "dimN": [r["dimN"] for r in rows],
        "dimN_plus": [r["dimN_plus"] for r in rows],
        "sigma_gap_min": min(r["sigma_gap"] if r["sigma_gap"] != "inf" else math.inf for r in rows),
        "ambiguous_rank": any(r["ambiguous_rank"] for r in rows),
    }
    if budget is not None:
        summary["within_time_budget"] = elapsed < float(budget)
    return summary, {"reports": rows}, files


def run_index_invariance(case, where, ctx):
    A = _system(case, where, ctx)
    s_list = _list(case, "s", where, _real, [0.0])
    phis = _phi_list(case, where)
    if len(phis) == 1 and len(s_list) > 1:
        phis = phis * len(s_list)
    if len(phis) != len(s_list):
        raise ManifestError(f"{where}.phi: needs one entry per s value ({len(s_list)})")
    K_list = _list(case, "K", where, _pos_int)
    rank_tol = _scalar(case, "rank_tol", where, _real, 1e-8)
    table = fa.index_invariance_experiment(A, [RefinedIndex(s, p) for s, p in zip(s_list, phis)], K_list, rank_tol)
    summary = {
        "consistent": table.consistent,
        "index": table.indices,
        "dimN": [r["dimN"] for r in table.rows],
        "dimN_plus": [r["dimN_plus"] for r in table.rows],
        "ambiguous_rank": any(r["ambiguous_rank"] for r in table.rows),
    }
    return summary, {"rows": list(table.rows), "flags": list(table.flags)}, {}


def run_solve(case, where, ctx):
    A = _system(case, where, ctx)
    K = _scalar(case, "K", where, lambda v: _as_list(v, "K", where, _pos_int)[0])
    s = _scalar(case, "s", where, lambda v: _as_list(v, "s", where, _real)[0], 0.0)
    phi = _phi_list(case, where)[0]
    rank_tol = _scalar(case, "rank_tol", where, _real, 1e-8)
    tol = _scalar(case, "tol", where, _real, 1e-8)
    f = _data(case, where, A.n, A.p, K, ctx)
    if any(fj.K > K for fj in f):
        raise ManifestError(f"{where}.data: field band exceeds K = {K}")
    f = [fj.resized(K) for fj in f]
    G = fa.truncate(A, K, s, phi)
    rep = fa.fredholm_report(G, rank_tol)
    summary: dict[str, Any] = {"ambiguous_rank": rep.ambiguous, "dimN": rep.dim_kernel, "dimN_plus": rep.dim_cokernel}
    files = {}
    if rep.ambiguous:
        summary.update(solvable=None)
        return summary, {"report": rep.to_dict()}, files
    try:
        res = fa.solve(G, rep, f, solvability_tol=tol)
    except fa.Unsolvable as exc:
        summary.update(solvable=False, defects_abs=[float(abs(d)) for d in exc.defects])
        return summary, {"report": rep.to_dict()}, files
    summary.update(
        solvable=True,
        residual=res.residual,
        condition=res.condition,
        defects_abs=[float(abs(d)) for d in fa.solvability_test(f, rep, tol).defects],
    )
    details = {"report": rep.to_dict(), "u": [_field_json(uk) for uk in res.u]}
    if ctx.write_csv:
        for k, uk in enumerate(res.u):
            files[f"u{k + 1}.csv"] = field_to_csv(uk)
    return summary, details, files


def _field_json(u: FourierField, limit: int = 64) -> list:
    """Nonzero coefficients as ``[xi, re, im]`` rows (at most ``limit``)."""
    flat = u.coeffs.ravel()
    order = np.argsort(-np.abs(flat), kind="stable")[:limit]
    rows = []
    K = u.K
    for i in sorted(order.tolist()):
        if abs(flat[i]) < 1e-14:
            continue
        xi = [int(v) - K for v in np.unravel_index(i, u.coeffs.shape)]
        rows.append([xi, float(flat[i].real), float(flat[i].imag)])
    return rows


def run_apriori(case, where, ctx):
    A = _system(case, where, ctx)
    s = _scalar(case, "s", where, lambda v: _as_list(v, "s", where, _real)[0], 0.0)
    phi = _phi_list(case, where)[0]
    sigma = _scalar(case, "sigma", where, _real, 1.0)
    if not sigma > 0:
        raise ManifestError(f"{where}.sigma: must be positive")
    K_list = _list(case, "K", where, _pos_int)
    rep = fa.apriori_report(A, s, phi, sigma, K_list)
    summary = {"c_quad": list(rep.c_quad), "growth": list(rep.growth), "verdict": rep.verdict}
    return summary, {"K": list(rep.K), "sigma": rep.sigma}, {}


def run_embedding(case, where, ctx):
    phis = _phi_list(case, where)
    analytic = [embedding_criterion(p).value for p in phis]
    numeric = [octave_ratio_verdict(p).verdict.value for p in phis]
    summary: dict[str, Any] = {"analytic": analytic, "numeric": numeric, "agree": analytic == numeric}
    details: dict[str, Any] = {"phi": [p.to_list() for p in phis]}
    if "K" in case:
        K_list = _list(case, "K", where, _pos_int)
        rho = _scalar(case, "rho", where, int, 0)
        ratio_phis = _phi_list(case, where, key="ratio_phi")
        growth, ratios = [], []
        for p in ratio_phis:
            res = embedding_ratio_experiment(rho, p, K_list)
            ratios.append(res.ratios.tolist())
            growth.append(res.octave_growth().tolist())
        summary["max_octave_growth"] = [max(g) for g in growth]
        summary["min_octave_growth"] = [min(g) for g in growth]
        details.update(K=K_list, ratio_phi=[p.to_list() for p in ratio_phis], ratios=ratios, octave_growth=growth)
    return summary, details, {}


def run_smoothness(case, where, ctx):
    n = _scalar(case, "n", where, _pos_int, 1)
    K = _scalar(case, "K", where, lambda v: _as_list(v, "K", where, _pos_int)[0])
    (u,) = _data(case, where, n, 1, K, ctx)
    try:
        est = rg.smoothness_fit(u)
    except rg.InsufficientShells as exc:
        raise ManifestError(f"{where}.K: {exc}") from exc
    summary = {"s_star": est.s_star, "r_star": est.r_star, "residual": est.residual, "model": est.model}
    files = {}
    if ctx.write_csv:
        files["shell_sums.csv"] = "R,S\n" + "".join(f"{r!r},{v!r}\n" for r, v in est.shell_table())
    return summary, {"window": list(est.window)}, files


def run_lift(case, where, ctx):
    A = _system(case, where, ctx)
    K = _scalar(case, "K", where, lambda v: _as_list(v, "K", where, _pos_int)[0])
    s = _scalar(case, "s", where, lambda v: _as_list(v, "s", where, _real)[0], 0.0)
    phi = _phi_list(case, where)[0]
    f = _data(case, where, A.n, A.p, K, ctx)
    chi = _cutoff(case, where, A.n)
    try:
        res = rg.lifting_experiment(A, f, s, phi, K, chi)
    except fa.Unsolvable as exc:
        return {"solvable": False, "defects_abs": [float(abs(d)) for d in exc.defects]}, {}, {}
    except fa.AmbiguousRank:
        return {"ambiguous_rank": True}, {}, {}
    summary = {
        "solvable": True,
        "gaps": list(res.gaps),
        "expected": list(res.expected),
        "max_gap_error": res.max_error(),
    }
    if res.localized_gaps is not None:
        summary["localized_gaps"] = list(res.localized_gaps)
        summary["max_localized_error"] = res.max_error(localized=True)
    return summary, res.to_dict(), {}


def run_continuity(case, where, ctx):
    n = _scalar(case, "n", where, _pos_int, 1)
    K = _scalar(case, "K", where, lambda v: _as_list(v, "K", where, _pos_int)[0], 4096)
    rho = _scalar(case, "rho", where, int, 0)
    phi = _phi_list(case, where)[0]
    summary: dict[str, Any] = {}
    details: dict[str, Any] = {}
    if "data" in case:
        (u,) = _data(case, where, n, 1, K, ctx)
        res = rg.continuity_check(u, rho, phi)
        summary.update(
            certified=res.certified,
            criterion_holds=res.criterion_holds,
            membership_ok=res.membership_ok,
            increments_summable=res.increments_summable,
            verdict=res.verdict,
        )
        details.update(res.to_dict())
    if "extremal_K" in case:
        K_list = _list(case, "extremal_K", where, _pos_int)
        ext = embedding_ratio_experiment(rho, phi, K_list, ManifoldSpec(n))
        summary.update(extremal_ratios=ext.ratios.tolist(), extremal_unbounded=ext.unbounded())
        details.update(extremal_K=K_list, extremal_sq_increments=ext.squared_increments().tolist())
    if not summary:
        raise ManifestError(f"{where}: continuity needs data or extremal_K")
    return summary, details, {}


def run_slow_variation(case, where, ctx):
    phis = _phi_list(case, where)
    lambdas = _list(case, "lambdas", where, _real, [0.5, 2.0])
    t_max = _scalar(case, "t_max", where, _real, 1e6)
    tol = _scalar(case, "tol", where, _real, 0.1)
    grid = default_t_grid(t_max)
    reports = [check_slow_variation(p, lambdas, grid, tol) for p in phis]
    summary: dict[str, Any] = {"passed": [r.passed for r in reports]}
    details: dict[str, Any] = {
        "phi": [p.to_list() for p in phis],
        "deviation_at_top": [[r.octave_deviations[l][-1] for l in r.lambdas] for r in reports],
    }
    if "power_exponents" in case:
        powers = _list(case, "power_exponents", where, _real)
        pr = [check_slow_variation(lambda t, a=a: np.asarray(t, dtype=float) ** a, lambdas, grid, tol) for a in powers]
        summary["power_passed"] = [r.passed for r in pr]
        details["power_exponents"] = powers
    return summary, details, {}


def run_norm_identity(case, where, ctx):
    n = _scalar(case, "n", where, _pos_int, 1)
    K = _scalar(case, "K", where, lambda v: _as_list(v, "K", where, _pos_int)[0], 16)
    count = _scalar(case, "count", where, _pos_int, 100)
    s_list = _list(case, "s", where, _real, [0.0])
    phis = _phi_list(case, where)
    rng = np.random.default_rng(ctx.seed)
    spec = ManifoldSpec(n)
    worst = 0.0
    for _ in range(count):
        u = random_field(spec, K, rng)
        for s, phi in itertools.product(s_list, phis):
            idx = RefinedIndex(s, phi)
            a, b = multiplier_norm(u, idx), norm(u, idx)
            worst = max(worst, abs(a - b) / b)
    return {"max_rel_error": worst, "fields": count}, {"s": s_list, "phi": [p.to_list() for p in phis]}, {}


RUNNERS: dict[str, Callable] = {
    "ellipticity": run_ellipticity,
    "index": run_index,
    "index-invariance": run_index_invariance,
    "solve": run_solve,
    "apriori": run_apriori,
    "embedding": run_embedding,
    "smoothness": run_smoothness,
    "lift": run_lift,
    "continuity": run_continuity,
    "slow-variation": run_slow_variation,
    "norm-identity": run_norm_identity,
}


# -- expectations ------------------------------------------------------------


def _lookup(summary: dict, key: str):
    base, _, rest = key.partition("[")
    if base not in summary:
        raise KeyError(key)
    value = summary[base]
    if rest:
        value = value[int(rest.rstrip("]"))]
    return value


def _to_float(v):
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    return v


def _check_one(actual, rule) -> bool:
    if isinstance(actual, list) and not (isinstance(rule, dict) and "approx" in rule and isinstance(rule["approx"], list)):
        if isinstance(rule, list):
            return len(actual) == len(rule) and all(_check_one(a, r) for a, r in zip(actual, rule))
        return bool(actual) and all(_check_one(a, rule) for a in actual)
    if isinstance(rule, dict):
        ok = True
        if "approx" in rule:
            tol = float(rule.get("tol", 1e-12))
            target = rule["approx"]
            if isinstance(target, list):
                ok &= isinstance(actual, list) and len(actual) == len(target)
                ok &= ok and all(abs(float(a) - float(t)) <= tol for a, t in zip(actual, target))
            else:
                ok &= actual is not None and abs(float(actual) - float(target)) <= tol
        if "min" in rule:
            ok &= actual is not None and float(_to_float(actual)) >= float(rule["min"])
        if "max" in rule:
            ok &= actual is not None and float(_to_float(actual)) <= float(rule["max"])
        if "lt" in rule:
            ok &= actual is not None and float(_to_float(actual)) < float(rule["lt"])
        if "equals" in rule:
            ok &= _check_one(actual, rule["equals"])
        return bool(ok)
    if isinstance(rule, float) and isinstance(_to_float(actual), float):
        return _to_float(actual) == rule
    return actual == rule


def check_expectations(summary: dict, expect: dict | None, where: str) -> list[dict]:
    results = []
    for key, rule in (expect or {}).items():
        try:
            actual = _lookup(summary, key)
        except (KeyError, IndexError, ValueError) as exc:
            raise ManifestError(f"{where}.expect.{key}: no such summary value") from exc
        results.append({"key": key, "rule": rule, "actual": actual, "passed": _check_one(actual, rule)})
    return results


# -- manifests ---------------------------------------------------------------


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ManifestError(f"{path}{loc}: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: manifest must be a mapping")
    return data


def _normalize_kind(kind, where):
    kind = ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ManifestError(f"{where}.kind: unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    return kind


def _json_safe(value):
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        return _json_safe(value.item())
    return value


def run_manifest(manifest: dict, base: Path, out: Path | None = None, write_csv: bool = False) -> tuple[int, dict]:
    """Run every case of a manifest; returns (exit code, report)."""
    where = "manifest"
    kind = _normalize_kind(_need(manifest, "kind", where), where)
    seed = int(manifest.get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ManifestError(f"{where}.seed: must be a 64-bit unsigned integer")
    defaults = {k: v for k, v in manifest.items() if k not in ("cases", "expect", "name", "output")}
    cases = manifest.get("cases")
    if cases is None:
        cases = [{"name": manifest.get("name", kind), "expect": manifest.get("expect")}]
    if not isinstance(cases, list) or not cases:
        raise ManifestError(f"{where}.cases: must be a nonempty list")
    ctx = Context(base, seed, out, write_csv)
    report: dict[str, Any] = {"kind": kind, "seed": seed, "cases": []}
    code = EXIT_OK
    files: dict[str, str] = {}
    for i, raw in enumerate(cases):
        cw = f"{where}.cases[{i}]"
        if not isinstance(raw, dict):
            raise ManifestError(f"{cw}: case must be a mapping")
        case = {**defaults, **raw}
        unknown = sorted(set(case) - COMMON_KEYS - KIND_KEYS[kind])
        if unknown:
            bad = unknown[0]
            loc = cw if bad in raw else where
            raise ManifestError(f"{loc}.{bad}: unknown field for kind {kind!r}")
        if "kind" in raw and _normalize_kind(raw["kind"], cw) != kind:
            raise ManifestError(f"{cw}.kind: one manifest runs one experiment kind")
        name = str(case.get("name", f"case{i}"))
        summary, details, case_files = RUNNERS[kind](case, cw, ctx)
        checks = check_expectations(summary, case.get("expect"), cw)
        passed = all(c["passed"] for c in checks)
        ambiguous = bool(summary.get("ambiguous_rank")) and not _expects_ambiguity(case.get("expect"))
        if ambiguous:
            code = EXIT_AMBIGUOUS
        elif not passed and code == EXIT_OK:
            code = EXIT_EXPECT
        report["cases"].append(
            {"name": name, "summary": summary, "details": details, "expectations": checks, "passed": passed}
        )
        for fname, text in case_files.items():
            files[f"{name}/{fname}" if len(cases) > 1 else fname] = text
    report["passed"] = code == EXIT_OK
    report["exit_code"] = code
    report = _json_safe(report)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dumps(report))
        for fname, text in files.items():
            dest = out / fname
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_text(text)
    return code, report


def _expects_ambiguity(expect) -> bool:
    return isinstance(expect, dict) and "ambiguous_rank" in expect


def _output_dir(manifest: dict, base: Path) -> Path | None:
    out = manifest.get("output")
    if out is None:
        return None
    out = Path(str(out))
    return out if out.is_absolute() else base / out


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _run_file(path: str, out: str | None, write_csv: bool) -> tuple[str, int, str]:
    p = Path(path)
    try:
        manifest = load_manifest(p)
        code, report = run_manifest(manifest, p.parent, Path(out) if out else _output_dir(manifest, p.parent), write_csv)
        return path, code, dumps(report)
    except ManifestError as exc:
        return path, EXIT_INPUT, f"error: {exc}\n"


def run_suite(directory: Path, out: Path | None, write_csv: bool, jobs: int = 1) -> int:
    files = sorted(str(p) for p in directory.glob("*.yaml"))
    if not files:
        print(f"error: no manifests in {directory}", file=sys.stderr)
        return EXIT_INPUT
    outs = [str(out / Path(f).stem) if out else None for f in files]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_file, files, outs, [write_csv] * len(files)))
    else:
        results = [_run_file(f, o, write_csv) for f, o in zip(files, outs)]
    worst = EXIT_OK
    rank = {EXIT_OK: 0, EXIT_EXPECT: 1, EXIT_AMBIGUOUS: 2, EXIT_INPUT: 3}
    for path, code, text in results:
        status = {0: "PASS", 1: "FAIL", 2: "ERROR", 3: "AMBIGUOUS"}[code]
        print(f"{status:9s} {Path(path).name}")
        if code == EXIT_INPUT:
            print(text.rstrip(), file=sys.stderr)
        if rank[code] > rank[worst]:
            worst = code
    return worst


# -- command line ------------------------------------------------------------


def _parse_expect(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ManifestError(f"--expect {item!r}: use key=value")
        try:
            out[key.strip()] = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ManifestError(f"--expect {item!r}: {exc}") from exc
    return out


def _yaml_arg(value: str):
    try:
        return yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refined-scale",
        description="Galerkin experiments for elliptic systems in refined Sobolev scales on the torus.",
    )
    parser.add_argument("--suite", type=Path, help="run every *.yaml manifest in a directory")
    parser.add_argument("--out", type=Path, help="directory for report.json and CSV files")
    parser.add_argument("--csv", action="store_true", help="also write CSV data tables")
    parser.add_argument("--jobs", type=int, default=1, help="parallel manifests in a suite")
    sub = parser.add_subparsers(dest="kind")
    for kind in KINDS + tuple(ALIASES):
        p = sub.add_parser(kind, help=f"{ALIASES.get(kind, kind)} experiment")
        p.add_argument("--manifest", type=Path, help="YAML manifest")
        p.add_argument("--system", help="system file or builtin:<name>")
        p.add_argument("--s", type=float, action="append", help="smoothness index (repeatable)")
        p.add_argument("--phi", type=_yaml_arg, action="append", help="phi exponents, e.g. '[0.5, 0.7]' (repeatable)")
        p.add_argument("--K", type=int, action="append", help="band limit (repeatable)")
        p.add_argument("--sigma", type=float)
        p.add_argument("--rho", type=int)
        p.add_argument("--rank-tol", type=float, dest="rank_tol")
        p.add_argument("--tol", type=float)
        p.add_argument("--n", type=int, help="torus dimension for field-only experiments")
        p.add_argument("--data", type=_yaml_arg, help="data field(s) as YAML, e.g. '{power: 2}'")
        p.add_argument("--seed", type=int)
        p.add_argument("--expect", action="append", default=[], help="key=value expectation (repeatable)")
        p.add_argument("--out", type=Path, dest="sub_out")
        p.add_argument("--csv", action="store_true", dest="sub_csv")
    return parser


def _manifest_from_args(args) -> tuple[dict, Path]:
    if args.manifest is not None:
        manifest = load_manifest(args.manifest)
        base = args.manifest.parent
    else:
        manifest, base = {}, Path.cwd()
    kind = ALIASES.get(args.kind, args.kind)
    if "kind" in manifest and _normalize_kind(manifest["kind"], "manifest") != kind:
        raise ManifestError(f"manifest.kind: {manifest['kind']!r} does not match subcommand {args.kind!r}")
    manifest["kind"] = kind
    for key in ("system", "s", "phi", "K", "sigma", "rho", "rank_tol", "tol", "n", "data", "seed"):
        value = getattr(args, key)
        if value is not None:
            manifest[key] = value
    if args.expect:
        manifest["expect"] = {**(manifest.get("expect") or {}), **_parse_expect(args.expect)}
    return manifest, base


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = getattr(args, "sub_out", None) or args.out
    write_csv = bool(getattr(args, "sub_csv", False) or args.csv)
    if args.suite is not None:
        if not args.suite.is_dir():
            print(f"error: suite directory {args.suite} not found", file=sys.stderr)
            return EXIT_INPUT
        return run_suite(args.suite, out, write_csv, args.jobs)
    if args.kind is None:
        parser.print_usage(sys.stderr)
        print("error: give an experiment kind or --suite", file=sys.stderr)
        return EXIT_INPUT
    try:
        manifest, base = _manifest_from_args(args)
        code, report = run_manifest(manifest, base, out or _output_dir(manifest, base), write_csv)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(dumps(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
