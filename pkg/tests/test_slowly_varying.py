import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from refined_scale.slowly_varying import (
    CONSTANT_ONE,
    DomainError,
    EmbeddingVerdict,
    check_slow_variation,
    default_t_grid,
    embedding_criterion,
    embedding_integral_numeric,
    eval_phi,
    iterated_logs,
    log_phi_from_log_t,
    make_standard_phi,
    octave_ratio_verdict,
    parse_phi,
    phi_s,
    scaled_phi,
)

# reference values from 30-digit mpmath evaluations
PHI_1_AT_10 = 2.4611501717344747950
PHI_05_07_AT_100 = 3.3032714352749459191
PHI_1_M1_AT_1E6 = 5.0366102964905257960
INTEGRAL_R1_TO_1E6 = 1.4093181363772157268
INTEGRAL_R06_TO_1E6 = 2.6572080314593171063
INTEGRAL_R1_TO_INF = 1.4817005489465540049


def test_reference_values_reproduce_with_mpmath():
    mpmath.mp.dps = 30
    L1 = lambda t: mpmath.log(mpmath.e - 1 + t)
    assert float(L1(10)) == pytest.approx(PHI_1_AT_10, rel=1e-15)
    val = mpmath.quad(lambda x: L1(mpmath.e**x) ** -2, [0, 1, 5, mpmath.log(10**6)])
    assert float(val) == pytest.approx(INTEGRAL_R1_TO_1E6, rel=1e-15)


def test_constant_one_and_shifted_logs_are_one_at_one():
    assert eval_phi(CONSTANT_ONE, 7.0) == 1.0
    for L in iterated_logs(1.0, 4):
        assert L == pytest.approx(1.0, abs=1e-15)
    assert eval_phi(make_standard_phi([0.3, -2.0, 5.0]), 1.0) == pytest.approx(1.0, abs=1e-14)


def test_frozen_phi_values():
    assert eval_phi(make_standard_phi([1.0]), 10.0) == pytest.approx(PHI_1_AT_10, rel=1e-14)
    assert eval_phi(make_standard_phi([0.5, 0.7]), 100.0) == pytest.approx(PHI_05_07_AT_100, rel=1e-14)
    assert eval_phi(make_standard_phi([1.0, -1.0]), 1e6) == pytest.approx(PHI_1_M1_AT_1E6, rel=1e-14)


def test_domain_errors():
    with pytest.raises(DomainError):
        eval_phi(make_standard_phi([1.0]), 0.5)
    with pytest.raises(DomainError):
        eval_phi(CONSTANT_ONE, np.array([2.0, float("nan")]))
    with pytest.raises(DomainError):
        phi_s(CONSTANT_ONE, 1.0)(0.0)


def test_parse_phi_forms():
    assert parse_phi(None) is CONSTANT_ONE
    assert parse_phi("[]") is CONSTANT_ONE
    assert parse_phi("0.5, 0.7").exponents == (0.5, 0.7)
    assert parse_phi([1]).exponents == (1.0,)
    assert str(make_standard_phi([0.5, 0.7])) == "standard(0.5, 0.7)"


def test_scaled_phi_equals_power():
    base = make_standard_phi([1.0, 0.5])
    t = np.array([1.0, 10.0, 1e5])
    assert np.allclose(eval_phi(scaled_phi(base, 2.0), t), eval_phi(base, t) ** 2, rtol=1e-14)
    assert embedding_criterion(scaled_phi(base, 2.0)) is EmbeddingVerdict.UNDECIDABLE


def test_log_phi_from_log_t_matches_direct():
    phi = make_standard_phi([0.5, -0.3, 1.2])
    x = np.array([0.0, 1.0, 10.0, 30.0])
    assert np.allclose(log_phi_from_log_t(phi, x), np.log(eval_phi(phi, np.exp(x))), rtol=1e-12, atol=1e-14)
    # far beyond float range of t
    assert np.isfinite(log_phi_from_log_t(phi, 1e5))


def test_phi_s_examples():
    f = phi_s(CONSTANT_ONE, 2.0)
    assert f(4.0) == pytest.approx(4.0)
    g = phi_s(make_standard_phi([1.0]), 0.0)
    assert g(0.25) == pytest.approx(1.0)
    assert g(101.0) == pytest.approx(math.log(math.e - 1 + math.sqrt(101.0)))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 50), st.integers(0, 50))
def test_phi_s_reproduces_fourier_weight(s, r, k1, k2):
    phi = make_standard_phi([r])
    b = math.sqrt(1 + k1**2 + k2**2)
    assert phi_s(phi, s)(1 + k1**2 + k2**2) == pytest.approx(b**s * eval_phi(phi, b), rel=1e-12)


def test_embedding_integral_constant_one():
    res = embedding_integral_numeric(CONSTANT_ONE, math.exp(10.0))
    assert res.partial[-1] == pytest.approx(10.0, rel=1e-12)


def test_embedding_integral_frozen_values():
    assert embedding_integral_numeric(make_standard_phi([1.0]), 1e6).partial[-1] == pytest.approx(
        INTEGRAL_R1_TO_1E6, rel=1e-9
    )
    assert embedding_integral_numeric(make_standard_phi([0.6]), 1e6).partial[-1] == pytest.approx(
        INTEGRAL_R06_TO_1E6, rel=1e-9
    )
    # the convergent integral approaches its limit from below
    far = embedding_integral_numeric(make_standard_phi([1.0]), 1e300).partial[-1]
    assert INTEGRAL_R1_TO_1E6 < far < INTEGRAL_R1_TO_INF


@pytest.mark.parametrize(
    "exps, verdict",
    [
        ((), EmbeddingVerdict.DIVERGES),
        ((1.0,), EmbeddingVerdict.CONVERGES),
        ((0.5,), EmbeddingVerdict.DIVERGES),
        ((0.4,), EmbeddingVerdict.DIVERGES),
        ((0.5, 1.0), EmbeddingVerdict.CONVERGES),
        ((0.5, 0.4), EmbeddingVerdict.DIVERGES),
        ((0.5, 0.5, 0.7), EmbeddingVerdict.CONVERGES),
    ],
)
def test_embedding_criterion_examples(exps, verdict):
    phi = make_standard_phi(exps)
    assert embedding_criterion(phi) is verdict
    assert octave_ratio_verdict(phi).verdict is verdict


@given(st.lists(st.sampled_from([-1.0, 0.0, 0.3, 0.5, 0.7, 1.0, 2.0]), min_size=1, max_size=3))
def test_octave_ratio_agrees_with_lexicographic_rule(exps):
    phi = make_standard_phi(exps)
    assert octave_ratio_verdict(phi).verdict is embedding_criterion(phi)


def test_octave_ratios_of_divergent_and_convergent_tails():
    div = octave_ratio_verdict(make_standard_phi([0.5]))
    assert np.all(div.ratios[-4:] > 1.0)
    conv = octave_ratio_verdict(make_standard_phi([1.0]))
    assert conv.ratios[-1] < 1e-3


def test_slow_variation_examples():
    assert check_slow_variation(make_standard_phi([1.0])).passed
    assert check_slow_variation(CONSTANT_ONE).passed
    assert not check_slow_variation(lambda t: np.asarray(t, dtype=float) ** 0.1).passed
    assert not check_slow_variation(lambda t: np.asarray(t, dtype=float) ** -0.1).passed


def test_slow_variation_rejects_bad_grids():
    with pytest.raises(DomainError):
        check_slow_variation(CONSTANT_ONE, t_grid=[0.5, 2.0, 100.0])
    with pytest.raises(DomainError):
        check_slow_variation(CONSTANT_ONE, t_grid=[1.0, 2.0])
    with pytest.raises(DomainError):
        check_slow_variation(CONSTANT_ONE, lambdas=(0.0,))


@given(st.lists(st.floats(-3, 3).filter(lambda r: abs(r) > 1e-3), min_size=1, max_size=3))
def test_standard_functions_vary_slowly_on_long_grid(exps):
    # deep grids are needed once exponents or lambda are large
    report = check_slow_variation(make_standard_phi(exps), (0.5, 2.0, 10.0), default_t_grid(1e40))
    assert report.passed


@given(st.floats(0.05, 2.0), st.sampled_from([1.0, -1.0]))
def test_powers_are_not_slowly_varying(a, sign):
    assert not check_slow_variation(lambda t: np.asarray(t, dtype=float) ** (sign * a)).passed
