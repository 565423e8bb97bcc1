import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refined_scale import systems
from refined_scale.fredholm import Unsolvable
from refined_scale.refined_spaces import (
    FourierField,
    ManifoldSpec,
    SpecMismatch,
    embedding_ratio_experiment,
    random_field,
    synthesize,
)
from refined_scale.regularity import (
    CutoffFunction,
    InsufficientShells,
    bump_cutoff,
    constant_cutoff,
    continuity_check,
    dyadic_sup_increments,
    flat_top_cutoff,
    lifting_experiment,
    localize,
    power_data,
    shell_sums,
    smoothness_fit,
)
from refined_scale.slowly_varying import CONSTANT_ONE, make_standard_phi

T1, T2 = ManifoldSpec(1), ManifoldSpec(2)
STD06 = make_standard_phi([0.6])


# -- cutoffs and localisation ---------------------------------------------------


def test_localize_convolution_example():
    chi = FourierField.from_modes(T1, {-1: 0.5, 0: 1.0, 1: 0.5})
    out = localize(FourierField.basis(T1, 4, 2), CutoffFunction(chi))
    assert out.K == 5
    assert (out[1], out[2], out[3]) == (0.5, 1.0, 0.5)
    assert np.count_nonzero(out.coeffs) == 3


@given(seed=st.integers(0, 2**32 - 1))
def test_localize_constant_is_identity(seed):
    u = random_field(T2, 3, np.random.default_rng(seed))
    assert localize(u, constant_cutoff(T2)).allclose(u, atol=0)


def test_localize_zero():
    out = localize(FourierField.zeros(T1, 5), flat_top_cutoff(T1))
    assert not out.coeffs.any() and out.K == 8


def test_localize_spec_mismatch():
    with pytest.raises(SpecMismatch):
        localize(FourierField.zeros(T1, 3), flat_top_cutoff(T2))


def test_cutoff_validation():
    with pytest.raises(ValueError):
        CutoffFunction(FourierField.from_modes(T1, {1: 1.0}))
    with pytest.raises(ValueError):
        # 1 - 2 cos x is negative near x = 0
        CutoffFunction(FourierField.from_modes(T1, {-1: -1.0, 0: 1.0, 1: -1.0}))


@pytest.mark.parametrize("make", [bump_cutoff, flat_top_cutoff])
def test_cutoffs_shape(make):
    chi = make(T1, 3)
    x = synthesize(chi.field, 64).real
    assert x[0] == pytest.approx(1.0)
    assert x[32] == pytest.approx(0.0, abs=1e-14)
    assert x.min() >= -1e-12
    assert chi.bandwidth == 3


def test_flat_top_moments_vanish():
    c = flat_top_cutoff(T1, 3).field
    k = np.arange(-3, 4)
    for m in range(2, 6):
        assert abs(np.sum(k**m * c.coeffs)) <= 1e-14


def test_cutoff_center_moves_peak():
    x = synthesize(flat_top_cutoff(T1, 2, center=[math.pi]).field, 64).real
    assert x[32] == pytest.approx(1.0) and x[0] == pytest.approx(0.0, abs=1e-14)


# -- smoothness fit ---------------------------------------------------------------


@pytest.mark.parametrize("a", [1.5, 2.0, 3.0])
def test_smoothness_pure_power(a):
    est = smoothness_fit(power_data(T1, 4096, a))
    assert est.valid
    assert abs(est.s_star - (a - 0.5)) <= 0.05
    assert est.r_star == 0.0


def test_smoothness_log_boundary():
    est = smoothness_fit(power_data(T1, 4096, 2.0, r=-1.0))
    assert est.model == "power-log"
    assert est.s_star == pytest.approx(1.5, abs=0.05)
    assert est.r_star == pytest.approx(-1.0, abs=0.1)


def test_smoothness_torus2():
    est = smoothness_fit(power_data(T2, 128, 3.0))
    assert est.s_star == pytest.approx(2.0, abs=0.05)


def test_smoothness_band_limited():
    est = smoothness_fit(FourierField.basis(T1, 256, 3))
    assert est.s_star == math.inf and est.model == "band-limited"
    assert est.to_dict()["s_star"] == "inf"


def test_smoothness_insufficient_shells():
    with pytest.raises(InsufficientShells):
        smoothness_fit(power_data(T1, 16, 2.0))


def test_shell_sums_partition():
    u = power_data(T1, 64, 1.0)
    radii, sums = shell_sums(u)
    b = np.sqrt(1.0 + np.arange(-64, 65) ** 2.0)
    R = radii[2]
    manual = np.sum(np.abs(u.coeffs[(b > R) & (b <= 2 * R)]) ** 2)
    assert sums[2] == pytest.approx(manual, rel=1e-14)


@settings(max_examples=10)
@given(a=st.floats(1.2, 3.5), center=st.floats(0.0, 6.28))
def test_localization_keeps_smoothness(a, center):
    u = power_data(T1, 4096, a)
    chi = flat_top_cutoff(T1, 3, center=[center])
    base = smoothness_fit(u).s_star
    loc = smoothness_fit(localize(u, chi), min_radius=2 * chi.bandwidth).s_star
    assert loc >= base - 0.05


# -- lifting ------------------------------------------------------------------------


def test_lifting_diagonal():
    res = lifting_experiment(systems.one_minus_laplacian(1), [power_data(T1, 4096, 2.0)], K=4096)
    assert res.gaps[0] == pytest.approx(2.0, abs=0.05)
    assert res.u[0][5] == pytest.approx(26.0**-2, rel=1e-12)


def test_lifting_cauchy_riemann_localized():
    f = [power_data(T2, 128, 3.0, mean_zero=True), FourierField.zeros(T2, 128)]
    res = lifting_experiment(systems.cauchy_riemann(), f, K=128, chi=flat_top_cutoff(T2, 3))
    assert res.max_error() <= 0.05
    assert res.max_error(localized=True) <= 0.05
    assert res.expected == (1.0, 1.0)


def test_lifting_unsolvable_data():
    with pytest.raises(Unsolvable):
        lifting_experiment(systems.minus_laplacian(1), [power_data(T1, 1024, 2.0)], K=1024)


# -- continuity -----------------------------------------------------------------------


def test_continuity_certified():
    res = continuity_check(power_data(T1, 4096, 1.0, r=-1.5), 0, STD06)
    assert res.certified and res.criterion_holds and res.membership_ok and res.increments_summable


def test_continuity_membership_fails():
    res = continuity_check(power_data(T1, 4096, 1.0, r=-0.5), 0, STD06)
    assert not res.certified
    assert not res.membership_ok


def test_continuity_finite_band():
    res = continuity_check(FourierField.basis(T1, 64, 5), 2, CONSTANT_ONE)
    assert res.certified and res.verdict == "continuous (finite band)"


def test_continuity_rejects_dirichlet_family():
    ext = embedding_ratio_experiment(0, CONSTANT_ONE, [256, 512, 1024, 2048, 4096, 8192, 16384])
    assert ext.unbounded()
    # the Dirichlet-kernel field itself is never certified under phi = 1
    res = continuity_check(power_data(T1, 4096, 1.0), 0, CONSTANT_ONE)
    assert not res.certified and not res.criterion_holds


def test_continuity_bounded_family_not_unbounded():
    ext = embedding_ratio_experiment(0, STD06, [256, 512, 1024, 2048, 4096])
    assert not ext.unbounded()


def test_sup_increments_pure_power():
    inc = dyadic_sup_increments(power_data(T1, 4096, 2.0))
    # positive coefficients: the sup of each band sits at x = 0 and equals the coefficient sum
    k = np.arange(-4096, 4097)
    b = np.sqrt(1.0 + k**2.0)
    for j, R in enumerate(2.0 ** np.arange(inc.size)):
        exact = np.sum(b[(b > R) & (b <= 2 * R)] ** -2.0)
        assert inc[j] == pytest.approx(exact, rel=1e-12)


def test_continuity_negative_rho():
    with pytest.raises(ValueError):
        continuity_check(FourierField.basis(T1, 8, 1), -1, CONSTANT_ONE)
