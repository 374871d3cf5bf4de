"""
Truncated hierarchy of auxiliary density matrices.

A multi-index carries one slot per exponential term per side, in the order
[j (ket, alpha terms), j_tilde (ket, alpha_tilde terms), i (bra, alpha terms),
i_tilde (bra, alpha_tilde terms)]. The element with all slots zero is the
reduced density matrix; every other element is an auxiliary matrix.

Neighbor tables are built once per layout. The right-hand side then works on
a stacked array of matrices with an extra zero matrix appended, so that
out-of-truncation neighbors resolve to that sentinel row and read as zero.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from bath import BathDecomposition
from operators import DimensionMismatch, SystemModel, as_matrix, dagger, hermitian_defect

_LOGGER = logging.getLogger(__name__)

# ======================== Configuration =========================
DEFAULT_MEM_BUDGET = 1 << 30  # bytes
MEM_BUDGET_ENV = "HEOM_MEM_BUDGET"
INITIAL_STATE_TOL = 1e-10
BYTES_PER_ENTRY = np.dtype(complex).itemsize
# =================================================================

# Slot groups, in layout order.
KET_ALPHA, KET_TILDE, BRA_ALPHA, BRA_TILDE = range(4)


class HierarchyError(ValueError):
    """Invalid hierarchy construction or input state."""


class CapacityExceeded(HierarchyError):
    pass


class BadInitialState(HierarchyError):
    pass


class IncompatibleDecomposition(HierarchyError):
    pass


def memory_budget() -> int:
    """Layout memory budget in bytes, overridable through HEOM_MEM_BUDGET."""
    raw = os.environ.get(MEM_BUDGET_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_MEM_BUDGET
    try:
        budget = int(float(raw))
    except ValueError as exc:
        raise HierarchyError(f"{MEM_BUDGET_ENV} must be a byte count, got {raw!r}") from exc
    if budget <= 0:
        raise HierarchyError(f"{MEM_BUDGET_ENV} must be positive, got {budget}")
    return budget


@dataclass(frozen=True)
class MultiIndex:
    j: Tuple[int, ...] = ()
    j_tilde: Tuple[int, ...] = ()
    i: Tuple[int, ...] = ()
    i_tilde: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if len(self.j) != len(self.i) or len(self.j_tilde) != len(self.i_tilde):
            raise DimensionMismatch("bra index lists must mirror the ket lists")
        if any(n < 0 for n in self.slots):
            raise HierarchyError(f"multi-index entries must be non-negative: {self}")

    @classmethod
    def from_slots(cls, slots: Sequence[int], n_alpha: int, n_alpha_tilde: int) -> "MultiIndex":
        slots = tuple(int(n) for n in slots)
        if len(slots) != 2 * (n_alpha + n_alpha_tilde):
            raise DimensionMismatch(
                f"{len(slots)} slots do not match {n_alpha} alpha and {n_alpha_tilde} alpha_tilde channels"
            )
        a, b = n_alpha, n_alpha + n_alpha_tilde
        return cls(slots[:a], slots[a:b], slots[b : b + n_alpha], slots[b + n_alpha :])

    @property
    def slots(self) -> Tuple[int, ...]:
        return self.j + self.j_tilde + self.i + self.i_tilde

    @property
    def order(self) -> int:
        return sum(self.slots)

    def mirror(self) -> "MultiIndex":
        """Index of the adjoint element: ket and bra halves swapped."""
        return MultiIndex(self.i, self.i_tilde, self.j, self.j_tilde)


def _compositions(total: int, parts: int) -> Iterator[Tuple[int, ...]]:
    # Larger leading entries first: (1, 0) precedes (0, 1).
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class HierarchyLayout:
    """
    Ordered multi-index set with precomputed neighbor tables.

    ``lower[m, k]`` / ``upper[m, k]`` give the offset of index k with slot m
    decreased / increased by one, or ``size`` (the zero sentinel) when that
    index lies outside the truncation.
    """

    n_alpha: int
    n_alpha_tilde: int
    depth: int
    indices: Tuple[MultiIndex, ...]
    lookup: Dict[Tuple[int, ...], int]
    slot_table: np.ndarray  # (size, n_slots) int
    lower: np.ndarray  # (n_slots, size) int
    upper: np.ndarray  # (n_slots, size) int
    mirror: np.ndarray  # (size,) int

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def n_slots(self) -> int:
        return 2 * (self.n_alpha + self.n_alpha_tilde)

    @property
    def sentinel(self) -> int:
        return self.size

    def slot_groups(self) -> List[Tuple[int, np.ndarray]]:
        """(group, slot numbers) for the four slot groups, in layout order."""
        a, t = self.n_alpha, self.n_alpha_tilde
        bounds = [0, a, a + t, 2 * a + t, 2 * (a + t)]
        return [(group, np.arange(bounds[group], bounds[group + 1])) for group in range(4)]

    def offset(self, idx: MultiIndex) -> int:
        try:
            return self.lookup[idx.slots]
        except KeyError as exc:
            raise HierarchyError(f"{idx} is not part of this layout") from exc

    def damping(self, decomp: BathDecomposition) -> np.ndarray:
        """damping_rate for every index at once."""
        return self.slot_table @ _slot_rates(self, decomp)


def enumerate_layout(
    n_alpha: int,
    n_alpha_tilde: int,
    depth: int,
    dim: int = 2,
    budget: Optional[int] = None,
) -> HierarchyLayout:
    """
    Enumerate all multi-indices with total order <= depth, graded then
    lexicographic, and build their neighbor tables.
    """
    if n_alpha < 0 or n_alpha_tilde < 0 or depth < 0:
        raise HierarchyError(
            f"channel counts and depth must be non-negative: n_alpha={n_alpha}, "
            f"n_alpha_tilde={n_alpha_tilde}, depth={depth}"
        )
    n_slots = 2 * (n_alpha + n_alpha_tilde)
    count = math.comb(n_slots + depth, n_slots)
    budget = memory_budget() if budget is None else budget
    required = count * dim * dim * BYTES_PER_ENTRY
    if required > budget:
        raise CapacityExceeded(
            f"{count} auxiliary matrices of dimension {dim} need {required} bytes, budget is {budget}"
        )

    slot_rows: List[Tuple[int, ...]] = []
    for grade in range(depth + 1):
        slot_rows.extend(_compositions(grade, n_slots))
    lookup = {slots: k for k, slots in enumerate(slot_rows)}
    size = len(slot_rows)

    slot_table = np.array(slot_rows, dtype=np.int64).reshape(size, n_slots)
    lower = np.full((n_slots, size), size, dtype=np.int64)
    upper = np.full((n_slots, size), size, dtype=np.int64)
    for k, slots in enumerate(slot_rows):
        for m in range(n_slots):
            raised = slots[:m] + (slots[m] + 1,) + slots[m + 1 :]
            upper[m, k] = lookup.get(raised, size)
            if slots[m] > 0:
                lower[m, k] = lookup[slots[:m] + (slots[m] - 1,) + slots[m + 1 :]]

    indices = tuple(MultiIndex.from_slots(slots, n_alpha, n_alpha_tilde) for slots in slot_rows)
    mirror = np.array([lookup[idx.mirror().slots] for idx in indices], dtype=np.int64)

    _LOGGER.info(
        "Hierarchy layout: %d slots, depth %d, %d matrices (%.1f MiB per copy)",
        n_slots,
        depth,
        size,
        required / 2 ** 20,
    )
    return HierarchyLayout(
        n_alpha=n_alpha,
        n_alpha_tilde=n_alpha_tilde,
        depth=depth,
        indices=indices,
        lookup=lookup,
        slot_table=slot_table,
        lower=lower,
        upper=upper,
        mirror=mirror,
    )


def _check_counts(n_alpha: int, n_alpha_tilde: int, decomp: BathDecomposition) -> None:
    if n_alpha != decomp.n_alpha or n_alpha_tilde != decomp.n_alpha_tilde:
        raise DimensionMismatch(
            f"hierarchy has {n_alpha}+{n_alpha_tilde} channels, decomposition has "
            f"{decomp.n_alpha}+{decomp.n_alpha_tilde}"
        )


def _slot_rates(layout: HierarchyLayout, decomp: BathDecomposition) -> np.ndarray:
    _check_counts(layout.n_alpha, layout.n_alpha_tilde, decomp)
    kappa = decomp.alpha_series.kappas
    kappa_t = decomp.alpha_tilde_series.kappas
    return np.concatenate([kappa, kappa_t, kappa.conj(), kappa_t.conj()])


def _slot_amplitudes(layout: HierarchyLayout, decomp: BathDecomposition) -> np.ndarray:
    _check_counts(layout.n_alpha, layout.n_alpha_tilde, decomp)
    zeta = decomp.alpha_series.zetas
    zeta_t = decomp.alpha_tilde_series.zetas
    return np.concatenate([zeta, zeta_t, zeta.conj(), zeta_t.conj()])


def damping_rate(idx: MultiIndex, decomp: BathDecomposition) -> complex:
    """j.kappa + i.conj(kappa) + j_tilde.kappa_tilde + i_tilde.conj(kappa_tilde)."""
    _check_counts(len(idx.j), len(idx.j_tilde), decomp)
    kappa = decomp.alpha_series.kappas
    kappa_t = decomp.alpha_tilde_series.kappas
    total = np.dot(idx.j, kappa) + np.dot(idx.i, kappa.conj())
    total += np.dot(idx.j_tilde, kappa_t) + np.dot(idx.i_tilde, kappa_t.conj())
    return complex(total)


@dataclass(eq=False)
class HierarchyState:
    layout: HierarchyLayout
    matrices: np.ndarray  # (layout.size, dim, dim)

    def __post_init__(self) -> None:
        object.__setattr__(self, "matrices", np.asarray(self.matrices, dtype=complex))
        if self.matrices.ndim != 3 or self.matrices.shape[0] != self.layout.size:
            raise DimensionMismatch(
                f"state has shape {self.matrices.shape}, layout expects {self.layout.size} matrices"
            )
        if self.matrices.shape[1] != self.matrices.shape[2]:
            raise DimensionMismatch(f"auxiliary matrices must be square, got {self.matrices.shape[1:]}")

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def copy(self) -> "HierarchyState":
        return HierarchyState(self.layout, self.matrices.copy())


def initial_hierarchy(layout: HierarchyLayout, rho0: np.ndarray) -> HierarchyState:
    """Top element rho0, every auxiliary matrix zero."""
    rho0 = as_matrix(rho0)
    trace_error = abs(np.trace(rho0) - 1.0)
    if trace_error > INITIAL_STATE_TOL:
        raise BadInitialState(f"initial state must have unit trace (|tr - 1| = {trace_error:.3e})")
    if hermitian_defect(rho0) > INITIAL_STATE_TOL:
        raise BadInitialState(f"initial state is not Hermitian (defect {hermitian_defect(rho0):.3e})")
    matrices = np.zeros((layout.size,) + rho0.shape, dtype=complex)
    matrices[0] = rho0
    return HierarchyState(layout, matrices)


class HeomGenerator:
    """
    Right-hand side of the hierarchy bound to one model and decomposition.

    Lowering terms of each slot group are accumulated first and then hit by
    a single operator product; raising terms likewise. Slots are visited in
    layout order, so results do not depend on how the work is scheduled.
    """

    def __init__(self, layout: HierarchyLayout, model: SystemModel, decomp: BathDecomposition):
        _check_counts(layout.n_alpha, layout.n_alpha_tilde, decomp)
        if decomp.self_adjoint and not model.self_adjoint:
            raise IncompatibleDecomposition(
                "a combined (self-adjoint) decomposition needs a Hermitian coupling operator"
            )
        self.layout = layout
        self.model = model
        self.decomp = decomp
        self.dim = model.dim
        self.h = np.array(model.h_s)
        self.s = np.array(model.s)
        self.s_dag = dagger(self.s)
        self.damping = layout.damping(decomp)[:, None, None]

        amplitudes = _slot_amplitudes(layout, decomp)
        # coefficient j_n * zeta_n for the lowering move of slot n
        lower_coeff = layout.slot_table.T * amplitudes[:, None]
        self._groups = []
        for group, slots in layout.slot_groups():
            if len(slots):
                self._groups.append(
                    (group, layout.lower[slots], lower_coeff[slots][:, :, None, None], layout.upper[slots])
                )

    def __call__(self, matrices: np.ndarray) -> np.ndarray:
        size = self.layout.size
        if matrices.shape != (size, self.dim, self.dim):
            raise DimensionMismatch(f"state has shape {matrices.shape}, expected {(size, self.dim, self.dim)}")
        h, s, s_dag = self.h, self.s, self.s_dag

        out = -1j * (h @ matrices - matrices @ h) - self.damping * matrices
        if not self._groups:
            return out

        padded = np.concatenate([matrices, np.zeros((1, self.dim, self.dim), dtype=complex)])
        for group, lower, coeff, upper in self._groups:
            down = np.sum(coeff * padded[lower], axis=0)
            up = np.sum(padded[upper], axis=0)
            if group == KET_ALPHA:
                out += s @ down
                out -= s_dag @ up - up @ s_dag
            elif group == KET_TILDE:
                out += s_dag @ down
                out -= s @ up - up @ s
            elif group == BRA_ALPHA:
                out += down @ s_dag
                out += s @ up - up @ s
            else:
                out += down @ s
                out += s_dag @ up - up @ s_dag
        return out

    def max_damping(self) -> float:
        return float(np.max(np.abs(self.damping))) if self.damping.size else 0.0


def heom_rhs(
    layout: HierarchyLayout,
    model: SystemModel,
    decomp: BathDecomposition,
    state: HierarchyState,
) -> HierarchyState:
    """Time derivative of every element of the hierarchy."""
    if state.layout.size != layout.size:
        raise DimensionMismatch("state does not conform to the layout")
    if state.dim != model.dim:
        raise DimensionMismatch(f"state dimension {state.dim} differs from model dimension {model.dim}")
    generator = HeomGenerator(layout, model, decomp)
    return HierarchyState(layout, generator(state.matrices))


def reduced_density(state: HierarchyState) -> np.ndarray:
    return state.matrices[0].copy()


def conjugate_symmetry_defect(state: HierarchyState) -> float:
    """Largest entrywise deviation from adjoint(rho[idx]) == rho[mirror(idx)]."""
    matrices = state.matrices
    return float(np.max(np.abs(dagger(matrices) - matrices[state.layout.mirror])))
