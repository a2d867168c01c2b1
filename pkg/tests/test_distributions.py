import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from huberlearn.distributions import (
    Example1, GaussMixture, RegressionModel, StudentT, SymmetricPareto, derive_seed, example1_cdf,
    example1_pdf, example1_quantile, generate_dataset, model_from_config, moment, noise_from_config,
    response_moment, sample_noise, toy_model, two_sin_pi, unit_scale, zero,
)
from huberlearn.errors import InvalidInputError
from huberlearn.integrate import integrate

# E eps^2 for the Example 1 density; frozen from a 40-digit mpmath integration
EXAMPLE1_M2 = 1.1875

SPECS = [Example1(), GaussMixture(), GaussMixture((0.3, 0.7), (0.7, -0.3), (1.0, 2.0)),
         StudentT(1.5), StudentT(4.0, 2.0), SymmetricPareto(2.5), SymmetricPareto(1.5, 0.5)]


# log-spaced cuts so heavy tails out to the 1e-12 quantile are resolved
CUTS = [s * 10.0**k for k in range(-1, 13) for s in (-1, 1)]


def _quad(spec, g):
    lo, hi = spec.support()
    return integrate(lambda t: g(t) * spec.pdf_scalar(t), lo, hi, breakpoints=(*spec.breakpoints, *CUTS),
                     tol=1e-9)


def test_example1_pdf_values():
    assert example1_pdf(-0.25) == 0.5
    assert example1_pdf(0.75) == pytest.approx(0.5 * math.exp(-1), rel=1e-15)
    assert example1_pdf(-1.25) == pytest.approx(math.exp(-2), rel=1e-15)
    with pytest.raises(InvalidInputError):
        example1_pdf(math.nan)


def test_example1_cdf_and_quantile_values():
    assert example1_cdf(-0.25) == 0.5
    assert example1_quantile(0.5) == -0.25
    assert example1_cdf(50.0) == pytest.approx(1.0, abs=1e-12)
    for u in (0.0, 1.0, -0.1, 1.5, math.nan):
        with pytest.raises(InvalidInputError):
            example1_quantile(u)


@given(st.floats(-30, 30))
def test_example1_quantile_inverts_cdf(t):
    u = example1_cdf(t)
    if 1e-12 < u < 1 - 1e-12:
        assert example1_quantile(u) == pytest.approx(t, abs=1e-12 / min(u, 1 - u) + 1e-12)


@given(st.floats(1e-9, 1 - 1e-9))
def test_example1_cdf_inverts_quantile(u):
    assert example1_cdf(example1_quantile(u)) == pytest.approx(u, abs=1e-12)


def test_example1_normalisation_against_mpmath():
    mpmath.mp.dps = 30
    total = mpmath.quad(lambda t: mpmath.exp(2 * (t + 0.25)), [-mpmath.inf, -0.25]) + \
        mpmath.quad(lambda t: 0.5 * mpmath.exp(-(t + 0.25)), [-0.25, mpmath.inf])
    assert float(total) == pytest.approx(1.0, abs=1e-25)
    assert integrate(example1_pdf, -math.inf, math.inf, breakpoints=(-0.25,)) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: repr(s))
def test_normalisation_zero_mean_and_cdf(spec):
    assert _quad(spec, lambda t: 1.0) == pytest.approx(1.0, abs=1e-8)
    assert abs(_quad(spec, lambda t: t)) < 1e-8 * max(1.0, moment(spec, 1.0))
    for t in (-2.0, -0.3, 0.0, 0.4, 3.0):
        ref = integrate(spec.pdf_scalar, -math.inf, t, breakpoints=(*spec.breakpoints, *CUTS), tol=1e-9)
        assert spec.cdf(t) == pytest.approx(ref, abs=1e-8)


@pytest.mark.parametrize("k", range(len(SPECS)), ids=[repr(s) for s in SPECS])
def test_sampler_matches_cdf(k):
    spec, n = SPECS[k], 100_000
    x = sample_noise(spec, n, seed=derive_seed(7, k))
    ks = stats.kstest(x, lambda t: spec.cdf(t)).statistic
    assert ks < 1.95 / math.sqrt(n)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: repr(s))
def test_quantile_roundtrip(spec):
    u = np.array([1e-6, 0.01, 0.3, 0.5, 0.77, 0.999])
    np.testing.assert_allclose(spec.cdf(spec.quantile(u)), u, atol=1e-12)


def test_example1_sample_mean():
    x = sample_noise(Example1(), 1_000_000, seed=99)
    assert abs(x.mean()) < 4 * x.std() / math.sqrt(len(x))


def test_sampling_is_deterministic_and_handles_empty():
    for spec in SPECS:
        assert sample_noise(spec, 0, 1).shape == (0,)
        np.testing.assert_array_equal(sample_noise(spec, 50, 3), sample_noise(spec, 50, 3))
    with pytest.raises(InvalidInputError):
        sample_noise(Example1(), -1, 0)


def test_moments():
    assert moment(GaussMixture(), 2) == pytest.approx(3.25, rel=1e-14)
    assert moment(Example1(), 2) == pytest.approx(EXAMPLE1_M2, abs=1e-8)
    assert moment(StudentT(1.5), 2) == math.inf
    assert moment(SymmetricPareto(2.5), 2.5) == math.inf
    with pytest.raises(InvalidInputError):
        moment(Example1(), 0)
    with pytest.raises(InvalidInputError):
        moment(Example1(), -1)


@pytest.mark.parametrize("df, p", [(4.0, 3.5), (1.5, 1.4), (3.0, 2.0), (2.5, 1.0)])
def test_student_t_moment_closed_form(df, p):
    # E|T|^p = df^(p/2) Gamma((p+1)/2) Gamma((df-p)/2) / (sqrt(pi) Gamma(df/2))
    exact = df ** (p / 2) * math.gamma((p + 1) / 2) * math.gamma((df - p) / 2) / (
        math.sqrt(math.pi) * math.gamma(df / 2))
    assert moment(StudentT(df), p) == pytest.approx(exact, rel=1e-8)


@pytest.mark.parametrize("p", [0.5, 1.0, 1.5, 2.0, 3.0])
def test_mixture_and_pareto_moments_against_quadrature(p):
    spec = GaussMixture((0.3, 0.7), (0.7, -0.3), (1.0, 2.0))
    assert moment(spec, p) == pytest.approx(_quad(spec, lambda t: abs(t) ** p), rel=1e-8)
    par = SymmetricPareto(3.5, 0.5)
    ref = integrate(lambda t: t**p * par.pdf_scalar(t), 0.5, math.inf, tol=1e-10) * 2
    assert moment(par, p) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("spec, eps, finite", [
    (StudentT(1.5), 0.4, True), (StudentT(1.5), 0.5, False), (StudentT(4.0), 2.5, True),
    (SymmetricPareto(2.5), 1.0, True), (SymmetricPareto(2.5), 2.0, False),
    (Example1(), 5.0, True), (GaussMixture(), 9.0, True),
])
def test_moment_regime(spec, eps, finite):
    assert math.isfinite(moment(spec, 1 + eps)) is finite


@pytest.mark.parametrize("bad", [
    dict(weights=(0.5, 0.6), means=(0, 0), stds=(1, 1)),
    dict(weights=(-0.5, 1.5), means=(0, 0), stds=(1, 1)),
    dict(weights=(0.5, 0.5), means=(1, 0), stds=(1, 1)),
    dict(weights=(0.5, 0.5), means=(0, 0), stds=(1, 0)),
])
def test_invalid_mixture(bad):
    with pytest.raises(InvalidInputError):
        GaussMixture(**bad)


def test_invalid_heavy_tailed_specs():
    for ctor in (lambda: StudentT(1.0), lambda: StudentT(3, -1), lambda: SymmetricPareto(1.0),
                 lambda: SymmetricPareto(2, 0)):
        with pytest.raises(InvalidInputError):
            ctor()


def test_noise_config_roundtrip():
    for spec in SPECS:
        assert noise_from_config(spec.to_config()) == spec
    with pytest.raises(InvalidInputError):
        noise_from_config({"family": "cauchy"})
    with pytest.raises(InvalidInputError):
        noise_from_config({"family": "student_t", "nu": 3})


def test_generate_dataset():
    m = toy_model()
    assert len(generate_dataset(m, 0, 1)) == 0
    a, b = generate_dataset(m, 1000, 5), generate_dataset(m, 1000, 5)
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.ys, b.ys)
    assert a.seed == 5
    assert np.all((a.xs >= 0) & (a.xs <= 1))


def test_toy_residual_mean():
    d = generate_dataset(toy_model(), 1_000_000, 21)
    r = d.ys - 2 * np.sin(np.pi * d.xs[:, 0])
    assert abs(r.mean()) < 4 * r.std() / math.sqrt(len(r))


def test_model_validation():
    with pytest.raises(InvalidInputError):
        RegressionModel(two_sin_pi, unit_scale, Example1(), 1.5)
    with pytest.raises(InvalidInputError):
        RegressionModel(zero, lambda x: -np.ones(len(x)), Example1(), 1.0)
    m = model_from_config({"truth": "zero", "scale": "unit", "noise": {"family": "student_t", "df": 3}})
    assert m.noise == StudentT(3.0)
    with pytest.raises(InvalidInputError):
        model_from_config({"truth": "cosine"})


def test_response_moment_closed_form():
    # E Y^2 = E 4 sin^2(pi X) + E (1 + 2X)^2 E eps^2 = 2 + 13/3 * 3.25
    assert response_moment(toy_model(), 2.0) == pytest.approx(2 + 13 / 3 * 3.25, rel=1e-8)
    m = RegressionModel(zero, unit_scale, Example1(), 1.0)
    assert response_moment(m, 2.0) == pytest.approx(EXAMPLE1_M2, rel=1e-8)
    assert response_moment(toy_model(StudentT(1.5)), 2.0) == math.inf


def test_derive_seed():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(1, n, r) for n in range(20) for r in range(20)}) == 400
    with pytest.raises(InvalidInputError):
        derive_seed(-1, 0)
