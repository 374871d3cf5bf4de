"""
Dense operator algebra and the catalogue of benchmark system models.

Basis convention: |e> is index 0 and |g> is index 1, so sigma_z = diag(1, -1)
and the lowering operator sigma_- = |g><e| has its single entry at [1, 0].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

_LOGGER = logging.getLogger(__name__)

# ======================== Configuration =========================
HERMITIAN_TOL = 1e-12
MODEL_PARAMS: Dict[str, Tuple[str, ...]] = {
    "pure_dephasing": ("omega_0",),
    "spontaneous_decay": ("omega_0",),
    "spin_boson": ("delta",),
}
DEFAULT_INITIAL_STATE = {
    "pure_dephasing": "plus",
    "spontaneous_decay": "excited",
    "spin_boson": "excited",
}
OBSERVABLE_NAMES = ("sigma_x", "sigma_y", "sigma_z", "rho_ee", "rho_eg", "trace_defect", "herm_defect")
# =================================================================

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T
PROJ_E = np.array([[1, 0], [0, 0]], dtype=complex)


class OperatorError(ValueError):
    """Invalid operator input."""


class MissingParameter(OperatorError):
    pass


class DimensionMismatch(OperatorError):
    pass


class UnknownModel(OperatorError):
    pass


def as_matrix(data) -> np.ndarray:
    """Return a square complex matrix, rejecting anything else."""
    matrix = np.array(data, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
        raise DimensionMismatch(f"expected a square matrix, got shape {matrix.shape}")
    return matrix


def dagger(matrix: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(matrix, -1, -2))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


def hermitian_defect(matrix: np.ndarray) -> float:
    """Largest entrywise |A - A^dagger|."""
    return float(np.max(np.abs(matrix - dagger(matrix)))) if matrix.size else 0.0


def is_hermitian(matrix: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return hermitian_defect(matrix) <= tol


@dataclass(frozen=True, eq=False)
class SystemModel:
    """System Hamiltonian and the operator coupling it to the bath."""

    h_s: np.ndarray
    s: np.ndarray
    kind: str = "custom"

    def __post_init__(self) -> None:
        h_s = as_matrix(self.h_s)
        s = as_matrix(self.s)
        if h_s.shape != s.shape:
            raise DimensionMismatch(f"h_s is {h_s.shape} but s is {s.shape}")
        if not is_hermitian(h_s):
            raise OperatorError(f"h_s is not Hermitian (defect {hermitian_defect(h_s):.3e})")
        h_s.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "h_s", h_s)
        object.__setattr__(self, "s", s)

    @property
    def dim(self) -> int:
        return self.h_s.shape[0]

    @property
    def s_dag(self) -> np.ndarray:
        return dagger(self.s)

    @property
    def self_adjoint(self) -> bool:
        return is_hermitian(self.s)

    def uncoupled(self) -> "SystemModel":
        return SystemModel(self.h_s, np.zeros_like(self.s), kind=self.kind)


def build_model(kind: str, params: Dict[str, float]) -> SystemModel:
    """
    Build one of the benchmark qubit models.

    pure_dephasing{omega_0}:     H = omega_0 sigma_z / 2, S = sigma_z
    spontaneous_decay{omega_0}:  H = omega_0 sigma_z / 2, S = sigma_-
    spin_boson{delta}:           H = -delta sigma_x / 2,  S = sigma_z / 2
    """
    if kind not in MODEL_PARAMS:
        raise UnknownModel(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_PARAMS)}")
    for name in MODEL_PARAMS[kind]:
        if name not in params:
            raise MissingParameter(f"model '{kind}' requires parameter '{name}'")

    if kind == "pure_dephasing":
        model = SystemModel(0.5 * float(params["omega_0"]) * SIGMA_Z, SIGMA_Z, kind=kind)
    elif kind == "spontaneous_decay":
        model = SystemModel(0.5 * float(params["omega_0"]) * SIGMA_Z, SIGMA_MINUS, kind=kind)
    else:
        model = SystemModel(-0.5 * float(params["delta"]) * SIGMA_X, 0.5 * SIGMA_Z, kind=kind)
    _LOGGER.debug("Built %s model with params %s", kind, params)
    return model


def initial_state(name: str) -> np.ndarray:
    """Named qubit density matrices: excited, ground, plus, mixed."""
    if name == "excited":
        return PROJ_E.copy()
    if name == "ground":
        return IDENTITY - PROJ_E
    if name == "plus":
        return 0.5 * np.ones((2, 2), dtype=complex)
    if name == "mixed":
        return 0.5 * IDENTITY
    raise OperatorError(f"unknown initial state {name!r}")


def expectation(rho: np.ndarray, obs: np.ndarray) -> complex:
    """tr(rho obs)."""
    rho = np.asarray(rho)
    obs = np.asarray(obs)
    if rho.shape != obs.shape:
        raise DimensionMismatch(f"rho is {rho.shape} but the observable is {obs.shape}")
    return complex(np.einsum("ij,ji->", rho, obs))


def observable_series(name: str, rhos: np.ndarray) -> np.ndarray:
    """
    Evaluate a catalogue observable on a stack of density matrices.

    Args:
        name: entry of OBSERVABLE_NAMES
        rhos: array of shape (..., 2, 2)

    Returns:
        Complex array with the leading shape of ``rhos``.
    """
    if name == "sigma_x":
        return np.einsum("...ij,ji->...", rhos, SIGMA_X)
    if name == "sigma_y":
        return np.einsum("...ij,ji->...", rhos, SIGMA_Y)
    if name == "sigma_z":
        return np.einsum("...ij,ji->...", rhos, SIGMA_Z)
    if name == "rho_ee":
        return rhos[..., 0, 0].astype(complex)
    if name == "rho_eg":
        return rhos[..., 0, 1].astype(complex)
    if name == "trace_defect":
        return np.abs(np.trace(rhos, axis1=-2, axis2=-1) - 1.0).astype(complex)
    if name == "herm_defect":
        diff = np.abs(rhos - dagger(rhos))
        return np.max(diff, axis=(-2, -1)).astype(complex)
    raise OperatorError(f"unknown observable {name!r}; expected one of {OBSERVABLE_NAMES}")


def validate_observables(names: Iterable[str]) -> Tuple[str, ...]:
    names = tuple(names)
    for name in names:
        if name not in OBSERVABLE_NAMES:
            raise OperatorError(f"unknown observable {name!r}; expected one of {OBSERVABLE_NAMES}")
    return names


def is_real_valued(name: str) -> bool:
    """Observables whose value is real for a Hermitian state."""
    return name != "rho_eg"
