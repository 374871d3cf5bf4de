"""
Bath spectra, correlation kernels and their exponential decompositions.

Two parametric spectral densities are supported: the Ohmic spectrum with a
Drude cutoff (finite temperature, self-adjoint coupling) and the Lorentz
spectrum (zero temperature). Every correlation kernel the solvers consume
can be evaluated two independent ways: by adaptive Fourier quadrature of the
spectrum, and from the finite exponential series the hierarchy is built on.
The second is what the solvers use; the first is what checks it.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import IntegrationWarning, quad

_LOGGER = logging.getLogger(__name__)

# ======================== Configuration =========================
QUAD_ABS_TOL = 1e-10  # absolute tolerance of every kernel quadrature
QUAD_LIMIT = 400  # subintervals per adaptive pass
QUAD_LIMLST = 200  # Fourier cycles for the semi-infinite oscillatory rule
DEFAULT_MATSUBARA_TERMS = 2
POLE_REL_TOL = 1e-12
KERNEL_KINDS = ("alpha", "alpha_tilde", "xi", "acute", "grave")
# =================================================================

TimeLike = Union[float, np.ndarray]


class BathError(ValueError):
    """Invalid bath input or an unsupported spectrum/temperature pairing."""


class UnsupportedCombination(BathError):
    pass


class PoleCollision(BathError):
    pass


class NegativeTime(BathError):
    pass


class NonDecayingSeries(BathError):
    pass


class QuadratureError(RuntimeError):
    """A kernel integral could not be evaluated to the requested tolerance."""


class NonConvergent(QuadratureError):
    pass


class Divergent(QuadratureError):
    pass


def is_zero_temperature(beta: float) -> bool:
    return math.isinf(beta)


def _check_beta(beta: float) -> None:
    if not (beta > 0):
        raise BathError(f"inverse temperature must be positive or inf, got {beta}")


# ----------------------------------------------------------------------------
# Spectral densities
# ----------------------------------------------------------------------------


class SpectralDensity:
    """Interface shared by the parametric spectra."""

    kind = "base"
    # Integration domain of the correlation kernels: True means the whole
    # real axis, False means [0, inf).
    full_axis = False

    def evaluate(self, omega: float) -> float:
        raise NotImplementedError

    def slope_at_zero(self) -> float:
        """Limit of J(w)/w as w -> 0, used for the thermal factor at w = 0."""
        raise NotImplementedError

    def to_dict(self) -> Dict[str, float]:
        raise NotImplementedError


@dataclass(frozen=True)
class OhmicDrude(SpectralDensity):
    """J(w) = (1/pi) * 2 chi w_c w / (w^2 + w_c^2)."""

    chi: float
    omega_c: float

    kind = "ohmic_drude"
    full_axis = False

    def __post_init__(self) -> None:
        if not (self.chi > 0 and self.omega_c > 0):
            raise BathError(f"OhmicDrude parameters must be positive: chi={self.chi}, omega_c={self.omega_c}")

    def evaluate(self, omega: float) -> float:
        return 2.0 * self.chi * self.omega_c * omega / (math.pi * (omega * omega + self.omega_c * self.omega_c))

    def slope_at_zero(self) -> float:
        return 2.0 * self.chi / (math.pi * self.omega_c)

    def to_dict(self) -> Dict[str, float]:
        return {"kind": self.kind, "chi": self.chi, "omega_c": self.omega_c}


@dataclass(frozen=True)
class Lorentz(SpectralDensity):
    """J(w) = (1/2pi) * gamma lam^2 / ((w - w_0)^2 + lam^2).

    Kernels of this spectrum integrate over the whole frequency axis, which
    makes the zero-temperature kernel a single exponential.
    """

    gamma: float
    lam: float
    omega_0: float

    kind = "lorentz"
    full_axis = True

    def __post_init__(self) -> None:
        if not (self.gamma > 0 and self.lam > 0 and self.omega_0 > 0):
            raise BathError(
                f"Lorentz parameters must be positive: gamma={self.gamma}, lambda={self.lam}, omega_0={self.omega_0}"
            )

    def evaluate(self, omega: float) -> float:
        detuning = omega - self.omega_0
        return self.gamma * self.lam ** 2 / (2.0 * math.pi * (detuning * detuning + self.lam ** 2))

    def slope_at_zero(self) -> float:
        # J(0) > 0, so J(w)/w has no finite limit; only zero temperature is supported.
        raise UnsupportedCombination("Lorentz spectrum has no thermal kernel at finite temperature")

    def to_dict(self) -> Dict[str, float]:
        return {"kind": self.kind, "gamma": self.gamma, "lambda": self.lam, "omega_0": self.omega_0}


def make_spectral_density(kind: str, params: Dict[str, float]) -> SpectralDensity:
    """Build a spectrum from its configuration name and parameter map."""
    try:
        if kind == OhmicDrude.kind:
            return OhmicDrude(chi=float(params["chi"]), omega_c=float(params["omega_c"]))
        if kind == Lorentz.kind:
            return Lorentz(
                gamma=float(params["gamma"]),
                lam=float(params["lambda"]),
                omega_0=float(params["omega_0"]),
            )
    except KeyError as exc:
        raise BathError(f"spectral density '{kind}' is missing parameter {exc.args[0]!r}") from exc
    raise BathError(f"unknown spectral density kind: {kind!r}")


def spectral_density_eval(J: SpectralDensity, omega: float) -> float:
    return J.evaluate(omega)


# ----------------------------------------------------------------------------
# Kernels by quadrature
# ----------------------------------------------------------------------------

# Thermal weights multiplying J(w): "one", "n" (Bose occupation), "n1" (n + 1)
# and "coth" (2n + 1). Each kernel is
#   Re = int J w_cos cos(wt),  Im = sign * int J w_sin sin(wt).
_KERNEL_WEIGHTS: Dict[str, Tuple[str, str, float]] = {
    "alpha": ("n1", "n1", -1.0),
    "alpha_tilde": ("n", "n", 1.0),
    "xi": ("coth", "one", -1.0),
    "acute": ("one", "one", 1.0),
    "grave": ("coth", "coth", 1.0),
}


def _weighted_density(J: SpectralDensity, beta: float, weight: str) -> Callable[[float], float]:
    """Return w -> J(w) * weight(w), finite at w = 0."""
    if is_zero_temperature(beta):
        # n -> 0, n + 1 -> 1, coth -> 1
        if weight == "n":
            return lambda omega: 0.0
        return J.evaluate

    if weight == "one":
        return J.evaluate

    slope = J.slope_at_zero()

    def occupation_term(omega: float) -> float:
        # J(w) * n(w) with its w -> 0 limit
        if omega == 0.0:
            return slope / beta
        x = beta * omega
        if x > 0.0:
            # e^{-x} / (1 - e^{-x}) underflows to 0 instead of overflowing
            return J.evaluate(omega) * math.exp(-x) / -math.expm1(-x)
        return J.evaluate(omega) / math.expm1(x)

    if weight == "n":
        return occupation_term
    if weight == "n1":
        return lambda omega: occupation_term(omega) + J.evaluate(omega)
    if weight == "coth":
        return lambda omega: 2.0 * occupation_term(omega) + J.evaluate(omega)
    raise ValueError(f"unknown thermal weight {weight!r}")


def _integrate(func: Callable[[float], float], t: float, trig: str, tol: float) -> float:
    """int_0^inf func(w) trig(w t) dw with a Fourier rule for t > 0."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            if t == 0.0:
                if trig == "sin":
                    return 0.0
                value, _ = quad(func, 0.0, np.inf, epsabs=tol, epsrel=0.0, limit=QUAD_LIMIT)
            else:
                value, _ = quad(
                    func,
                    0.0,
                    np.inf,
                    weight=trig,
                    wvar=t,
                    epsabs=tol,
                    limit=QUAD_LIMIT,
                    limlst=QUAD_LIMLST,
                )
        except IntegrationWarning as exc:
            raise NonConvergent(f"quadrature did not reach tolerance {tol:g} at t={t:g}: {exc}") from exc
    return float(value)


def bcf_quadrature(kind: str, J: SpectralDensity, beta: float, t: float, tol: float = QUAD_ABS_TOL) -> complex:
    """
    Evaluate one of the five correlation kernels by adaptive quadrature.

    Args:
        kind: one of alpha, alpha_tilde, xi, acute, grave
        J: spectral density
        beta: inverse temperature, math.inf for zero temperature
        t: time lag, t >= 0
        tol: absolute tolerance of each real quadrature

    Returns:
        Kernel value as a complex number.
    """
    if kind not in _KERNEL_WEIGHTS:
        raise BathError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")
    if t < 0:
        raise NegativeTime(f"kernels are defined for t >= 0 only, got t={t}")
    _check_beta(beta)

    if kind == "alpha_tilde" and is_zero_temperature(beta):
        return 0j
    if J.full_axis and not is_zero_temperature(beta):
        raise UnsupportedCombination(f"{J.kind} kernels are only available at zero temperature")
    if t == 0.0 and not J.full_axis and kind != "alpha_tilde":
        # J ~ 1/w at large w: the cosine integral has a logarithmic UV divergence.
        raise Divergent(f"{kind}(0) diverges for the {J.kind} spectrum")

    cos_weight, sin_weight, sin_sign = _KERNEL_WEIGHTS[kind]
    f_cos = _weighted_density(J, beta, cos_weight)
    f_sin = _weighted_density(J, beta, sin_weight)

    if J.full_axis:
        # int_-inf^inf f(w) e^{...}: fold the negative half onto [0, inf)
        real = _integrate(lambda w: f_cos(w) + f_cos(-w), t, "cos", tol)
        imag = _integrate(lambda w: f_sin(w) - f_sin(-w), t, "sin", tol)
    else:
        real = _integrate(f_cos, t, "cos", tol)
        imag = _integrate(f_sin, t, "sin", tol)
    return complex(real, sin_sign * imag)


# ----------------------------------------------------------------------------
# Exponential series
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialSeries:
    """sum_n zeta_n exp(-kappa_n t) with Re kappa_n > 0."""

    terms: Tuple[Tuple[complex, complex], ...] = ()

    def __post_init__(self) -> None:
        normalized = tuple((complex(zeta), complex(kappa)) for zeta, kappa in self.terms)
        for zeta, kappa in normalized:
            if not kappa.real > 0:
                raise NonDecayingSeries(f"decay rate {kappa} must have a positive real part")
        object.__setattr__(self, "terms", normalized)

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def zetas(self) -> np.ndarray:
        return np.array([zeta for zeta, _ in self.terms], dtype=complex)

    @property
    def kappas(self) -> np.ndarray:
        return np.array([kappa for _, kappa in self.terms], dtype=complex)

    def conjugate(self) -> "ExponentialSeries":
        return ExponentialSeries(tuple((zeta.conjugate(), kappa.conjugate()) for zeta, kappa in self.terms))

    def __add__(self, other: "ExponentialSeries") -> "ExponentialSeries":
        return ExponentialSeries(self.terms + other.terms)

    def scaled(self, factor: complex) -> "ExponentialSeries":
        return ExponentialSeries(tuple((factor * zeta, kappa) for zeta, kappa in self.terms))

    def to_dict(self) -> Dict[str, List[List[float]]]:
        return {
            "zeta": [[zeta.real, zeta.imag] for zeta, _ in self.terms],
            "kappa": [[kappa.real, kappa.imag] for _, kappa in self.terms],
        }


def series_eval(series: ExponentialSeries, t: TimeLike) -> Union[complex, np.ndarray]:
    """Evaluate the series at a time or an array of times (t >= 0)."""
    times = np.asarray(t, dtype=float)
    if np.any(times < 0):
        raise NegativeTime("exponential series are evaluated for t >= 0 only")
    if not series.terms:
        return 0j if times.ndim == 0 else np.zeros(times.shape, dtype=complex)
    values = np.exp(-np.multiply.outer(times, series.kappas)) @ series.zetas
    if times.ndim == 0:
        return complex(values)
    return values


@dataclass(frozen=True)
class BathDecomposition:
    """Exponential series feeding the hierarchy, one per bath channel family.

    With ``self_adjoint`` set, ``alpha_series`` holds the combined kernel
    xi = alpha + alpha_tilde and ``alpha_tilde_series`` is empty.
    """

    alpha_series: ExponentialSeries
    alpha_tilde_series: ExponentialSeries
    beta: float
    self_adjoint: bool = False

    def __post_init__(self) -> None:
        _check_beta(self.beta)
        if is_zero_temperature(self.beta) and len(self.alpha_tilde_series):
            raise BathError("alpha_tilde vanishes at zero temperature; its series must be empty")
        if self.self_adjoint and len(self.alpha_tilde_series):
            raise BathError("a self-adjoint decomposition keeps the combined kernel in alpha_series only")

    @property
    def n_alpha(self) -> int:
        return len(self.alpha_series)

    @property
    def n_alpha_tilde(self) -> int:
        return len(self.alpha_tilde_series)

    @property
    def channel_count(self) -> int:
        return self.n_alpha + self.n_alpha_tilde

    def acute_series(self) -> ExponentialSeries:
        """conj(alpha) - alpha_tilde as a series."""
        return self.alpha_series.conjugate() + self.alpha_tilde_series.scaled(-1.0)

    def grave_series(self) -> ExponentialSeries:
        """conj(alpha) + alpha_tilde as a series."""
        return self.alpha_series.conjugate() + self.alpha_tilde_series

    def to_dict(self) -> Dict[str, object]:
        return {
            "alpha_series": self.alpha_series.to_dict(),
            "alpha_tilde_series": self.alpha_tilde_series.to_dict(),
            "beta": "inf" if is_zero_temperature(self.beta) else self.beta,
            "self_adjoint": self.self_adjoint,
        }


def empty_decomposition(beta: float = math.inf) -> BathDecomposition:
    """No bath channels: the closed-system limit."""
    return BathDecomposition(ExponentialSeries(), ExponentialSeries(), beta=beta, self_adjoint=False)


def _drude_matsubara(J: OhmicDrude, beta: float, matsubara_terms: int) -> ExponentialSeries:
    half = beta * J.omega_c / 2.0
    n_pole = half / math.pi
    if round(n_pole) >= 1 and abs(n_pole - round(n_pole)) <= POLE_REL_TOL * max(1.0, n_pole):
        raise PoleCollision(
            f"cutoff omega_c={J.omega_c} coincides with Matsubara frequency n={round(n_pole)} at beta={beta}"
        )

    chi_wc = J.chi * J.omega_c
    terms: List[Tuple[complex, complex]] = [(complex(chi_wc / math.tan(half), -chi_wc), complex(J.omega_c))]
    for n in range(1, matsubara_terms + 1):
        nu = 2.0 * n * math.pi / beta
        zeta = 4.0 * chi_wc / beta * nu / (nu * nu - J.omega_c ** 2)
        terms.append((complex(zeta), complex(nu)))
    return ExponentialSeries(tuple(terms))


def decompose(
    J: SpectralDensity,
    beta: float,
    matsubara_terms: int = DEFAULT_MATSUBARA_TERMS,
    self_adjoint: bool = False,
) -> BathDecomposition:
    """
    Produce the finite exponential decomposition for a spectrum.

    Ohmic-Drude: combined Matsubara series of xi (finite temperature,
    self-adjoint coupling only). Lorentz: the exact single exponential at
    zero temperature.
    """
    _check_beta(beta)
    if matsubara_terms < 0:
        raise BathError(f"matsubara_terms must be >= 0, got {matsubara_terms}")

    if isinstance(J, OhmicDrude):
        if is_zero_temperature(beta):
            raise UnsupportedCombination("the Ohmic-Drude decomposition needs a finite temperature")
        if not self_adjoint:
            raise UnsupportedCombination(
                "the Ohmic-Drude decomposition is only available as the combined kernel (self_adjoint=True)"
            )
        series = _drude_matsubara(J, beta, matsubara_terms)
        _LOGGER.debug("Drude decomposition with %d Matsubara terms: %s", matsubara_terms, series.terms)
        return BathDecomposition(series, ExponentialSeries(), beta=beta, self_adjoint=True)

    if isinstance(J, Lorentz):
        if not is_zero_temperature(beta):
            raise UnsupportedCombination("the Lorentz decomposition is only available at zero temperature")
        term = (complex(J.gamma * J.lam / 2.0), complex(J.lam, J.omega_0))
        return BathDecomposition(ExponentialSeries((term,)), ExponentialSeries(), beta=beta, self_adjoint=self_adjoint)

    raise UnsupportedCombination(f"no decomposition available for {type(J).__name__}")


# ----------------------------------------------------------------------------
# Fit quality
# ----------------------------------------------------------------------------


@dataclass
class FitPoint:
    t: float
    channel: str
    series_value: complex
    quadrature_value: complex

    @property
    def error(self) -> float:
        return abs(self.series_value - self.quadrature_value)

    def to_dict(self) -> Dict[str, float]:
        return {
            "t": self.t,
            "channel": self.channel,
            "series_re": self.series_value.real,
            "series_im": self.series_value.imag,
            "quadrature_re": self.quadrature_value.real,
            "quadrature_im": self.quadrature_value.imag,
            "error": self.error,
        }


@dataclass
class FitReport:
    max_abs_error: float = 0.0
    per_point: List[FitPoint] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "max_abs_error": self.max_abs_error,
            "per_point": [point.to_dict() for point in self.per_point],
        }


def _fit_channels(decomp: BathDecomposition) -> List[Tuple[str, ExponentialSeries]]:
    if decomp.self_adjoint:
        return [("xi", decomp.alpha_series)]
    return [("alpha", decomp.alpha_series), ("alpha_tilde", decomp.alpha_tilde_series)]


def fit_report(
    decomp: BathDecomposition,
    J: SpectralDensity,
    beta: float,
    grid: Sequence[float],
    tol: float = QUAD_ABS_TOL,
) -> FitReport:
    """Compare each fitted channel with its quadrature kernel on a time grid."""
    report = FitReport()
    for channel, series in _fit_channels(decomp):
        for t in grid:
            point = FitPoint(
                t=float(t),
                channel=channel,
                series_value=complex(series_eval(series, float(t))),
                quadrature_value=bcf_quadrature(channel, J, beta, float(t), tol=tol),
            )
            report.per_point.append(point)
            report.max_abs_error = max(report.max_abs_error, point.error)
    _LOGGER.info("Fit report over %d points: max error %.3e", len(report.per_point), report.max_abs_error)
    return report
