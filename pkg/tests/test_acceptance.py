"""Exit gate: one PASS/FAIL line per acceptance criterion.

Each test recomputes its criterion from the library and asserts the exact
thresholds.  Run ``pytest tests/test_acceptance.py -v -s`` to see the lines
inline; they are also collected in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from refined_scale import systems
from refined_scale.fredholm import (
    Unsolvable,
    apriori_constant,
    apriori_report,
    fredholm_report,
    index_invariance_experiment,
    projectors,
    solvability_test,
    solve,
    truncate,
)
from refined_scale.refined_spaces import (
    FourierField,
    ManifoldSpec,
    RefinedIndex,
    embedding_ratio_experiment,
    multiplier_norm,
    norm,
    random_field,
)
from refined_scale.regularity import continuity_check, flat_top_cutoff, lifting_experiment, power_data
from refined_scale.slowly_varying import (
    CONSTANT_ONE,
    EmbeddingVerdict,
    check_slow_variation,
    default_t_grid,
    embedding_criterion,
    make_standard_phi,
    octave_ratio_verdict,
)

pytestmark = pytest.mark.acceptance

T1, T2 = ManifoldSpec(1), ManifoldSpec(2)
std = make_standard_phi


def test_criterion_01_shift_toeplitz_index(report_criterion):
    start = time.perf_counter()
    reps = [fredholm_report(truncate(systems.shift_toeplitz(), K, 0.0)) for K in (32, 64, 128)]
    elapsed = time.perf_counter() - start
    dims = [(r.index, r.dim_kernel, r.dim_cokernel) for r in reps]
    gap = min(r.sigma_gap for r in reps)
    ok = all(d == (-1, 0, 1) for d in dims) and gap >= 1e3 and elapsed < 5.0
    report_criterion("1", ok, f"(index, dimN, dimN+) = {dims[0]} at K = 32, 64, 128; min gap {gap:.3g}; {elapsed:.2f} s")
    assert ok


def test_criterion_02_index_invariance(report_criterion):
    params = [(0.0, CONSTANT_ONE), (2.0, CONSTANT_ONE), (-1.0, std([1.0])), (0.5, std([0.6]))]
    cases = [
        ("shift-toeplitz", [32, 64], -1),
        ("one-minus-laplacian", [32, 64], 0),
        ("minus-laplacian", [32, 64], 0),
        ("cauchy-riemann", [8, 16], 0),
    ]
    found = {}
    ok = True
    for name, Ks, expected in cases:
        table = index_invariance_experiment(systems.BUILTIN_SYSTEMS[name](), params, Ks)
        found[name] = sorted(set(table.indices), key=str)
        ok &= table.consistent and set(table.indices) == {expected}
    report_criterion("2", ok, ", ".join(f"{k}: {v}" for k, v in found.items()))
    assert ok


def test_criterion_03_scalar_index_torus2(report_criterion):
    idx = {
        (name, K): fredholm_report(truncate(systems.BUILTIN_SYSTEMS[name](), K, 0.0)).index
        for name in ("one-minus-laplacian-T2", "perturbed-helmholtz-T2")
        for K in (8, 16)
    }
    ok = all(v == 0 for v in idx.values())
    report_criterion("3", ok, "indices " + str(sorted(set(idx.values()), key=str)) + " at K = 8, 16")
    assert ok


def test_criterion_04_range(report_criterion):
    K = 16
    G = truncate(systems.minus_laplacian(1), K, 0.0)
    rep = fredholm_report(G)
    res = solve(G, rep, [FourierField.basis(T1, K, 1)])
    try:
        solve(G, rep, [FourierField.basis(T1, K, 0)])
        defect = 0.0
    except Unsolvable as exc:
        defect = float(abs(exc.defects[0]))
    rep_st = fredholm_report(truncate(systems.shift_toeplitz(), K, 0.0))
    st_rejected = not solvability_test([FourierField.basis(T1, K, 0)], rep_st).solvable
    ok = res.residual <= 1e-10 and abs(defect - 2 * math.pi) <= 1e-10 and st_rejected
    report_criterion(
        "4", ok, f"e1 residual {res.residual:.2g}; constant defect {defect:.12f}; shift e0 rejected: {st_rejected}"
    )
    assert ok


def test_criterion_05_norm_identity(report_criterion):
    rng = np.random.default_rng(20240611)
    phis = [CONSTANT_ONE, std([1.0]), std([0.5, 0.7])]
    worst = 0.0
    for _ in range(100):
        u = random_field(T1, 16, rng)
        for s in (-2.0, -0.5, 0.0, 1.0, 3.0):
            for phi in phis:
                idx = RefinedIndex(s, phi)
                a, b = multiplier_norm(u, idx), norm(u, idx)
                worst = max(worst, abs(a - b) / b)
    ok = worst <= 1e-12
    report_criterion("5", ok, f"max relative error {worst:.2g} over 100 fields x 15 indices")
    assert ok


def test_criterion_06_embedding(report_criterion):
    tuples = [[], [1.0], [0.5], [0.4], [0.5, 1.0], [0.5, 0.4], [0.5, 0.5, 0.7]]
    agree = all(embedding_criterion(std(e)) == octave_ratio_verdict(std(e)).verdict for e in tuples)
    Ks = [4096, 8192, 16384, 32768, 65536]
    bounded = embedding_ratio_experiment(0, std([0.6]), Ks).octave_growth()
    growing = embedding_ratio_experiment(0, std([0.4]), Ks).octave_growth()
    part_a = agree and bounded.max() < 0.02
    part_b = growing.min() >= 0.05
    report_criterion(
        "6",
        part_a and part_b,
        f"verdicts agree on 7 tuples: {agree}; phi=L1^0.6 max octave growth {bounded.max():.2%} (< 2%); "
        f"phi=L1^0.4 min octave growth {growing.min():.2%} (needs >= 5%)",
    )
    assert agree
    assert bounded.max() < 0.02
    assert growing.min() >= 0.05


def test_criterion_07_apriori(report_criterion):
    errs = []
    for K in (8, 16, 32, 64):
        b = math.sqrt(1.0 + K * K)
        exact = math.sqrt(b**4 / (b**4 + b**-2))
        errs.append(abs(apriori_constant(systems.one_minus_laplacian(1), 0.0, CONSTANT_ONE, 1.0, K) - exact))
    cr = apriori_report(systems.cauchy_riemann(), 0.0, CONSTANT_ONE, 1.0, [16, 32, 64])
    d1 = apriori_report(systems.d1_torus2(), 0.0, CONSTANT_ONE, 1.0, [4, 8, 16])
    cr_var = max(cr.c_quad) / min(cr.c_quad) - 1.0
    ok = max(errs) <= 1e-10 and cr_var <= 0.1 and min(d1.growth) >= 2.0
    report_criterion(
        "7", ok, f"closed-form error {max(errs):.2g}; CR variation {cr_var:.2%}; d1 growth {min(d1.growth):.2f}x"
    )
    assert ok


def test_criterion_08_projectors(report_criterion):
    cases = [
        ("one-minus-laplacian", 16),
        ("minus-laplacian", 16),
        ("shift-toeplitz", 16),
        ("cauchy-riemann", 8),
        ("perturbed-helmholtz-T2", 6),
    ]
    idem, resid = 0.0, 0.0
    rng = np.random.default_rng(7)
    for name, K in cases:
        A = systems.BUILTIN_SYSTEMS[name]()
        G = truncate(A, K, 0.0)
        rep = fredholm_report(G)
        pp = projectors(G, rep)
        idem = max(idem, np.abs(pp.P @ pp.P - pp.P).max(), np.abs(pp.P_plus @ pp.P_plus - pp.P_plus).max())
        # band-limited data projected onto the range
        F = np.concatenate([random_field(A.spec, K // 2, rng).resized(K).coeffs.ravel() for _ in range(A.p)])
        F = pp.P_plus @ F
        N = (2 * K + 1) ** A.n
        f = [FourierField(A.spec, K, F[k * N : (k + 1) * N].reshape((2 * K + 1,) * A.n)) for k in range(A.p)]
        res = solve(G, rep, f)
        resid = max(resid, res.residual / max(1.0, np.linalg.norm(G.w_target * F)))
    G = truncate(systems.minus_laplacian(1), 16, 0.0)
    pp = projectors(G, fredholm_report(G))
    mean_sub = np.eye(33)
    mean_sub[16, 16] = 0.0
    lap = max(np.abs(pp.P - mean_sub).max(), np.abs(pp.P_plus - mean_sub).max())
    ok = idem <= 1e-10 and lap <= 1e-10 and resid <= 1e-10
    report_criterion("8", ok, f"idempotency {idem:.2g}; -Laplacian vs mean subtraction {lap:.2g}; solve residual {resid:.2g}")
    assert ok


def test_criterion_09_lifting(report_criterion):
    diag = lifting_experiment(
        systems.one_minus_laplacian(1), [power_data(T1, 4096, 2.0)], K=4096, chi=flat_top_cutoff(T1, 3)
    )
    f = [power_data(T2, 128, 3.0, mean_zero=True), FourierField.zeros(T2, 128)]
    cr = lifting_experiment(systems.cauchy_riemann(), f, K=128, chi=flat_top_cutoff(T2, 3))
    errs = [diag.max_error(), cr.max_error(), diag.max_error(True), cr.max_error(True)]
    ok = max(errs) <= 0.05
    report_criterion(
        "9",
        ok,
        f"gaps diag {diag.gaps[0]:.4f}, CR {cr.gaps[0]:.4f}/{cr.gaps[1]:.4f}; "
        f"localized diag {diag.localized_gaps[0]:.4f}, CR {cr.localized_gaps[0]:.4f}/{cr.localized_gaps[1]:.4f}",
    )
    assert ok


def test_criterion_10_continuity(report_criterion):
    phi = std([0.6])
    good = continuity_check(power_data(T1, 4096, 1.0, r=-1.5), 0, phi)
    bad = continuity_check(power_data(T1, 4096, 1.0, r=-0.5), 0, phi)
    ext = embedding_ratio_experiment(0, CONSTANT_ONE, [256, 512, 1024, 2048, 4096, 8192, 16384])
    ok = good.certified and not bad.certified and not bad.membership_ok and ext.unbounded()
    report_criterion(
        "10",
        ok,
        f"L1^-1.5 field: {good.verdict}; L1^-0.5 field: {bad.verdict}; phi=1 ratios "
        f"{ext.ratios[0]:.3f} -> {ext.ratios[-1]:.3f}, unbounded: {ext.unbounded()}",
    )
    assert ok


def test_criterion_11_slow_variation(report_criterion):
    grid = default_t_grid(1e6)
    tuples = [[0.5], [-0.5], [1.0], [-1.0], [0.5, 0.7]]
    passed = [check_slow_variation(std(e), t_grid=grid).passed for e in tuples]
    powers = [check_slow_variation(lambda t, a=a: np.asarray(t, dtype=float) ** a, t_grid=grid).passed for a in (0.1, -0.1)]
    ok = all(passed) and not any(powers)
    report_criterion("11", ok, f"standard phi pass: {passed}; t^0.1, t^-0.1 pass: {powers}")
    assert ok
