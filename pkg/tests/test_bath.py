from __future__ import annotations

import math

import numpy as np
import pytest

from bath import (
    BathDecomposition,
    BathError,
    Divergent,
    ExponentialSeries,
    Lorentz,
    NegativeTime,
    NonDecayingSeries,
    OhmicDrude,
    PoleCollision,
    UnsupportedCombination,
    bcf_quadrature,
    decompose,
    empty_decomposition,
    fit_report,
    make_spectral_density,
    series_eval,
)

DRUDE = OhmicDrude(chi=0.1, omega_c=1.0)
DRUDE_BETA = 0.5
LORENTZ = Lorentz(gamma=5.0, lam=0.2, omega_0=1.0)


def test_drude_leading_terms():
    chi, wc, beta = 0.002, 5.0, 0.015
    decomp = decompose(OhmicDrude(chi=chi, omega_c=wc), beta, matsubara_terms=2, self_adjoint=True)

    zetas, kappas = decomp.alpha_series.zetas, decomp.alpha_series.kappas
    assert decomp.self_adjoint
    assert decomp.n_alpha == 3 and decomp.n_alpha_tilde == 0
    assert zetas[0] == pytest.approx(complex(chi * wc / math.tan(beta * wc / 2), -chi * wc))
    assert kappas[0] == pytest.approx(wc)
    for n in (1, 2):
        nu = 2 * n * math.pi / beta
        assert kappas[n] == pytest.approx(nu)
        assert zetas[n] == pytest.approx(4 * chi * wc / beta * nu / (nu ** 2 - wc ** 2))


def test_drude_series_matches_quadrature():
    decomp = decompose(DRUDE, DRUDE_BETA, matsubara_terms=3, self_adjoint=True)
    for t in (0.5, 1.0, 3.0):
        exact = bcf_quadrature("xi", DRUDE, DRUDE_BETA, t)
        assert abs(series_eval(decomp.alpha_series, t) - exact) < 1e-8


def test_lorentz_is_single_exponential():
    decomp = decompose(LORENTZ, math.inf)
    (zeta, kappa), = decomp.alpha_series.terms
    assert zeta == pytest.approx(0.5 * 5.0 * 0.2)
    assert kappa == pytest.approx(complex(0.2, 1.0))
    assert decomp.n_alpha_tilde == 0

    report = fit_report(decomp, LORENTZ, math.inf, [0.0, 0.5, 2.0, 7.5])
    assert report.max_abs_error < 1e-9
    assert {p.channel for p in report.per_point} == {"alpha", "alpha_tilde"}


def test_kernel_identities():
    t = 0.7
    alpha = bcf_quadrature("alpha", DRUDE, DRUDE_BETA, t)
    alpha_t = bcf_quadrature("alpha_tilde", DRUDE, DRUDE_BETA, t)
    assert bcf_quadrature("xi", DRUDE, DRUDE_BETA, t) == pytest.approx(alpha + alpha_t, abs=5e-10)
    assert bcf_quadrature("acute", DRUDE, DRUDE_BETA, t) == pytest.approx(alpha.conjugate() - alpha_t, abs=5e-10)
    assert bcf_quadrature("grave", DRUDE, DRUDE_BETA, t) == pytest.approx(alpha.conjugate() + alpha_t, abs=5e-10)


def test_zero_temperature_kernels():
    assert bcf_quadrature("alpha_tilde", LORENTZ, math.inf, 1.0) == 0j
    alpha = bcf_quadrature("alpha", LORENTZ, math.inf, 1.0)
    assert bcf_quadrature("xi", LORENTZ, math.inf, 1.0) == pytest.approx(alpha, abs=1e-10)
    assert bcf_quadrature("acute", LORENTZ, math.inf, 1.0) == pytest.approx(alpha.conjugate(), abs=1e-10)


def test_drude_kernel_diverges_at_zero():
    with pytest.raises(Divergent):
        bcf_quadrature("xi", DRUDE, DRUDE_BETA, 0.0)
    # the occupation-weighted kernel stays finite
    assert np.isfinite(abs(bcf_quadrature("alpha_tilde", DRUDE, DRUDE_BETA, 0.0)))


@pytest.mark.parametrize("beta", [2.0, 5.0])
def test_low_temperature_drude_kernels(beta):
    # beta * omega runs far past the float exponent range inside the quadrature
    assert np.isfinite(abs(bcf_quadrature("alpha_tilde", DRUDE, beta, 0.0)))
    exact = bcf_quadrature("xi", DRUDE, beta, 0.3)
    decomp = decompose(DRUDE, beta, matsubara_terms=100, self_adjoint=True)
    assert abs(series_eval(decomp.alpha_series, 0.3) - exact) < 1e-8


def test_negative_time_rejected():
    with pytest.raises(NegativeTime):
        bcf_quadrature("alpha", LORENTZ, math.inf, -0.1)
    with pytest.raises(NegativeTime):
        series_eval(ExponentialSeries(((1.0, 1.0),)), -1.0)


def test_unsupported_combinations():
    with pytest.raises(UnsupportedCombination):
        decompose(DRUDE, math.inf, self_adjoint=True)
    with pytest.raises(UnsupportedCombination):
        decompose(DRUDE, DRUDE_BETA, self_adjoint=False)
    with pytest.raises(UnsupportedCombination):
        decompose(LORENTZ, 1.0)
    with pytest.raises(UnsupportedCombination):
        bcf_quadrature("alpha", LORENTZ, 1.0, 0.5)


def test_pole_collision():
    # beta * omega_c / 2 == pi puts the cutoff on the first Matsubara frequency
    with pytest.raises(PoleCollision):
        decompose(OhmicDrude(chi=0.1, omega_c=5.0), 2 * math.pi / 5.0, self_adjoint=True)


def test_series_validation_and_algebra():
    with pytest.raises(NonDecayingSeries):
        ExponentialSeries(((1.0, -0.5),))
    with pytest.raises(NonDecayingSeries):
        ExponentialSeries(((1.0, 2j),))

    a = ExponentialSeries(((1.0, 1.0 + 1j),))
    b = ExponentialSeries(((2.0j, 3.0),))
    t = np.array([0.0, 0.4, 1.3])
    np.testing.assert_allclose(series_eval(a + b, t), series_eval(a, t) + series_eval(b, t))
    np.testing.assert_allclose(series_eval(a.conjugate(), t), np.conj(series_eval(a, t)))
    np.testing.assert_allclose(series_eval(a.scaled(-2.0), t), -2.0 * series_eval(a, t))
    assert series_eval(ExponentialSeries(), 1.0) == 0j


def test_decomposition_guards():
    series = ExponentialSeries(((1.0, 1.0),))
    with pytest.raises(BathError):
        BathDecomposition(series, series, beta=math.inf)
    with pytest.raises(BathError):
        BathDecomposition(series, series, beta=1.0, self_adjoint=True)
    with pytest.raises(BathError):
        decompose(DRUDE, DRUDE_BETA, matsubara_terms=-1, self_adjoint=True)
    assert empty_decomposition().channel_count == 0


def test_acute_and_grave_series():
    alpha = ExponentialSeries(((1.0 + 0.5j, 2.0 + 1j),))
    alpha_t = ExponentialSeries(((0.3, 4.0),))
    decomp = BathDecomposition(alpha, alpha_t, beta=1.0)
    t = np.linspace(0.0, 2.0, 5)
    np.testing.assert_allclose(
        series_eval(decomp.acute_series(), t), np.conj(series_eval(alpha, t)) - series_eval(alpha_t, t)
    )
    np.testing.assert_allclose(
        series_eval(decomp.grave_series(), t), np.conj(series_eval(alpha, t)) + series_eval(alpha_t, t)
    )


def test_make_spectral_density():
    J = make_spectral_density("lorentz", {"gamma": 5.0, "lambda": 0.2, "omega_0": 1.0})
    assert J == LORENTZ
    assert J.to_dict() == {"kind": "lorentz", "gamma": 5.0, "lambda": 0.2, "omega_0": 1.0}
    assert make_spectral_density("ohmic_drude", {"chi": 0.1, "omega_c": 1.0}) == DRUDE
    with pytest.raises(BathError):
        make_spectral_density("ohmic_drude", {"chi": 0.1})
    with pytest.raises(BathError):
        make_spectral_density("super_ohmic", {})
    with pytest.raises(BathError):
        OhmicDrude(chi=-1.0, omega_c=1.0)
