from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad

from bath import ExponentialSeries, NegativeTime, series_eval
from operators import build_model, initial_state
from oracles import (
    decay_amplitude,
    decay_cross_check,
    decay_exact,
    decay_memory_solution,
    dephasing_exact,
    double_integral,
    free_evolution_exact,
)

TIMES = np.linspace(0.0, 10.0, 101)


def test_double_integral_against_quadrature():
    series = ExponentialSeries(((0.3 - 0.1j, 1.5 + 2j), (0.05, 7.0)))
    for t in (0.2, 1.0, 4.0):
        re, _ = quad(lambda s: ((t - s) * series_eval(series, s)).real, 0.0, t, epsabs=1e-13)
        im, _ = quad(lambda s: ((t - s) * series_eval(series, s)).imag, 0.0, t, epsabs=1e-13)
        assert double_integral(series, np.array([t]))[0] == pytest.approx(complex(re, im), abs=1e-11)


def test_dephasing_exact_limits():
    series = ExponentialSeries(((0.2, 1.0),))
    curve = dephasing_exact(1.0, series, 0.5, TIMES)
    assert curve.values[0] == pytest.approx(0.5)
    assert np.all(np.diff(np.abs(curve.values)) <= 0)
    free = dephasing_exact(2.0, ExponentialSeries(), 0.5, TIMES)
    np.testing.assert_allclose(free.values, 0.5 * np.exp(-2j * TIMES))


def test_dephasing_imaginary_kernel_leaves_no_phase():
    # purely imaginary kernel: F is imaginary and sigma_z coupling cancels it
    curve = dephasing_exact(1.0, ExponentialSeries(((0.3j, 2.0),)), 0.5, TIMES)
    np.testing.assert_allclose(curve.values, 0.5 * np.exp(-1j * TIMES), atol=1e-14)


def test_dephasing_general_coupling():
    series = ExponentialSeries(((0.2 + 0.1j, 1.0 + 0.5j),))
    F = double_integral(series, TIMES)
    curve = dephasing_exact(0.0, series, 1.0, TIMES, coupling=(1.0, 0.0))
    np.testing.assert_allclose(curve.values, np.exp(-F))


def test_decay_closed_form_matches_memory_kernel():
    assert decay_cross_check(1.0, 5.0, 0.2, TIMES) < 1e-8
    # overdamped and detuned regimes
    assert decay_cross_check(1.0, 0.1, 2.0, TIMES) < 1e-8
    assert decay_cross_check(1.0, 5.0, 0.2, TIMES, bath_omega_0=1.7) < 1e-8


def test_decay_exact_properties():
    curve = decay_exact(1.0, 5.0, 0.2, 0.8, TIMES)
    assert curve.values[0] == pytest.approx(0.8)
    assert np.all(curve.values.real <= 0.8 + 1e-12)
    assert np.all(curve.values.real >= 0.0)
    assert curve.method == "closed-form"
    # strong coupling: the population revives
    assert np.any(np.diff(curve.values.real) > 0)
    assert decay_amplitude(5.0, 0.2, 0.0, 0.0) == pytest.approx(1.0)


def test_decay_memory_solution_edge_cases():
    curve = decay_memory_solution(1.0, 5.0, 0.2, 1.0, [0.0])
    assert curve.values[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        decay_exact(1.0, -5.0, 0.2, 1.0, TIMES)


def test_negative_times_rejected():
    with pytest.raises(NegativeTime):
        decay_exact(1.0, 5.0, 0.2, 1.0, [-1.0, 0.0])
    with pytest.raises(NegativeTime):
        dephasing_exact(1.0, ExponentialSeries(), 0.5, [-0.5])


def test_free_evolution_spin_boson():
    model = build_model("spin_boson", {"delta": 0.5})
    curves = free_evolution_exact(model, initial_state("excited"), TIMES)
    np.testing.assert_allclose(curves["sigma_z"].values, np.cos(0.5 * TIMES), atol=1e-12)
    np.testing.assert_allclose(curves["sigma_x"].values, 0.0, atol=1e-12)
    np.testing.assert_allclose(curves["sigma_y"].values, np.sin(0.5 * TIMES), atol=1e-12)
