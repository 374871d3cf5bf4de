"""
Reference solutions for the exactly solvable benchmarks.

dephasing_exact  - coherence of a qubit under diagonal coupling, second
                   cumulant of the exponential kernel series (exact for
                   linear diagonal coupling)
decay_exact      - excited-state population of a qubit coupled through
                   sigma_- to a zero-temperature Lorentz bath
free_evolution_exact - closed-system propagation via the matrix exponential
"""

from __future__ import annotations

import cmath
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from bath import ExponentialSeries, NegativeTime
from operators import SystemModel, as_matrix, observable_series

_LOGGER = logging.getLogger(__name__)

# ======================== Configuration =========================
SINHC_SERIES_CUTOFF = 1e-4
ODE_RTOL = 1e-12
ODE_ATOL = 1e-14
# =================================================================


@dataclass
class OracleCurve:
    times: np.ndarray
    values: np.ndarray
    method: str  # closed-form | quadrature | ode

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.times.shape != self.values.shape:
            raise ValueError("oracle times and values differ in length")


def _as_times(times: Sequence[float]) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(grid < 0):
        raise NegativeTime("oracle times must be non-negative")
    return grid


def double_integral(series: ExponentialSeries, times: np.ndarray) -> np.ndarray:
    """F(t) = int_0^t (t - s) xi(s) ds, term by term: t/k - (1 - e^{-kt})/k^2."""
    times = np.asarray(times, dtype=float)
    total = np.zeros(times.shape, dtype=complex)
    for zeta, kappa in series.terms:
        total += zeta * (times / kappa + np.expm1(-kappa * times) / kappa ** 2)
    return total


def dephasing_exact(
    omega_0: float,
    xi_series: ExponentialSeries,
    rho_eg_0: complex,
    times: Sequence[float],
    coupling: Tuple[float, float] = (1.0, -1.0),
) -> OracleCurve:
    """
    rho_eg(t) for H = omega_0 sigma_z / 2 and S = diag(s_e, s_g).

    rho_eg(t) = rho_eg(0) e^{-i omega_0 t}
                exp(-[(s_e^2 - s_e s_g) F(t) + (s_g^2 - s_e s_g) conj(F(t))])

    For sigma_z coupling (1, -1) the exponent is 4 Re F(t): the imaginary
    part of the kernel only shifts both levels by the same amount, so it
    leaves no phase on the coherence.
    """
    grid = _as_times(times)
    s_e, s_g = coupling
    F = double_integral(xi_series, grid)
    exponent = (s_e * s_e - s_e * s_g) * F + (s_g * s_g - s_e * s_g) * np.conj(F)
    values = rho_eg_0 * np.exp(-1j * omega_0 * grid) * np.exp(-exponent)
    return OracleCurve(grid, values, "closed-form")


def _sinhc(z: complex) -> complex:
    if abs(z) < SINHC_SERIES_CUTOFF:
        return 1.0 + z * z / 6.0
    return cmath.sinh(z) / z


def decay_amplitude(gamma: float, lam: float, detuning: float, t: float) -> complex:
    """
    Excited-state amplitude c(t) solving c'' + L c' + (gamma lam / 2) c = 0,
    c(0) = 1, c'(0) = 0, with L = lam + i detuning. Both branches of the
    square root give the same value.
    """
    rate = complex(lam, detuning)
    D = cmath.sqrt(rate * rate - 2.0 * gamma * lam)
    half = 0.5 * D * t
    return cmath.exp(-0.5 * rate * t) * (cmath.cosh(half) + 0.5 * rate * t * _sinhc(half))


def decay_exact(
    omega_0: float,
    gamma: float,
    lam: float,
    rho_ee_0: float,
    times: Sequence[float],
    bath_omega_0: Optional[float] = None,
) -> OracleCurve:
    """
    rho_ee(t) = rho_ee(0) |c(t)|^2 for the zero-temperature Lorentz bath.

    ``bath_omega_0`` is the Lorentz center; it defaults to the qubit
    frequency (resonant coupling).
    """
    if not (gamma > 0 and lam > 0):
        raise ValueError(f"gamma and lambda must be positive, got gamma={gamma}, lambda={lam}")
    grid = _as_times(times)
    detuning = (omega_0 if bath_omega_0 is None else bath_omega_0) - omega_0
    values = [rho_ee_0 * abs(decay_amplitude(gamma, lam, detuning, float(t))) ** 2 for t in grid]
    return OracleCurve(grid, values, "closed-form")


def decay_memory_solution(
    omega_0: float,
    gamma: float,
    lam: float,
    rho_ee_0: float,
    times: Sequence[float],
    bath_omega_0: Optional[float] = None,
) -> OracleCurve:
    """
    Same population from the memory-kernel amplitude equation
    c'(t) = -(gamma lam / 2) int_0^t e^{-L (t - s)} c(s) ds, integrated
    numerically through its auxiliary variable u(t) = int_0^t e^{-L(t-s)} c(s) ds.
    """
    grid = _as_times(times)
    detuning = (omega_0 if bath_omega_0 is None else bath_omega_0) - omega_0
    rate = complex(lam, detuning)
    coupling = 0.5 * gamma * lam
    if not grid.size or grid.max() == 0.0:
        return OracleCurve(grid, np.full(grid.shape, rho_ee_0, dtype=complex), "ode")

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        c, u = y
        return np.array([-coupling * u, c - rate * u])

    solution = solve_ivp(
        rhs,
        (0.0, float(grid.max())),
        np.array([1.0 + 0j, 0.0 + 0j]),
        method="DOP853",
        t_eval=grid,
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
    )
    if not solution.success:
        raise RuntimeError(f"memory-kernel solve failed: {solution.message}")
    values = rho_ee_0 * np.abs(solution.y[0]) ** 2
    return OracleCurve(grid, values, "ode")


def decay_cross_check(
    omega_0: float,
    gamma: float,
    lam: float,
    times: Sequence[float],
    bath_omega_0: Optional[float] = None,
) -> float:
    """Largest deviation between the closed form and the memory-kernel solve."""
    closed = decay_exact(omega_0, gamma, lam, 1.0, times, bath_omega_0)
    numeric = decay_memory_solution(omega_0, gamma, lam, 1.0, times, bath_omega_0)
    deviation = float(np.max(np.abs(closed.values - numeric.values))) if closed.values.size else 0.0
    _LOGGER.debug("decay oracle cross-check deviation %.3e", deviation)
    return deviation


def free_evolution_states(model: SystemModel, rho0: np.ndarray, times: Sequence[float]) -> np.ndarray:
    """e^{-iHt} rho0 e^{iHt} for every time, shape (len(times), dim, dim)."""
    grid = _as_times(times)
    rho0 = as_matrix(rho0)
    states = np.empty((len(grid),) + rho0.shape, dtype=complex)
    for k, t in enumerate(grid):
        U = expm(-1j * t * np.asarray(model.h_s))
        states[k] = U @ rho0 @ U.conj().T
    return states


def free_evolution_exact(
    model: SystemModel,
    rho0: np.ndarray,
    times: Sequence[float],
    observables: Sequence[str] = ("sigma_x", "sigma_y", "sigma_z"),
) -> Dict[str, OracleCurve]:
    grid = _as_times(times)
    states = free_evolution_states(model, rho0, grid)
    return {name: OracleCurve(grid, observable_series(name, states), "closed-form") for name in observables}
