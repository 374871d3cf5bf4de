"""
Fixed-step RK4 propagation of the hierarchy and depth convergence sweeps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from bath import BathDecomposition
from hierarchy import (
    HeomGenerator,
    HierarchyState,
    conjugate_symmetry_defect,
    enumerate_layout,
    initial_hierarchy,
)
from operators import (
    DEFAULT_INITIAL_STATE,
    SystemModel,
    hermitian_defect,
    initial_state,
    observable_series,
    validate_observables,
)

_LOGGER = logging.getLogger(__name__)

# ======================== Configuration =========================
BLOWUP_THRESHOLD = 1e12
RK4_STABILITY_LIMIT = 2.785  # real-axis extent of the classical RK4 stability region
STEP_ROUNDING_TOL = 1e-9
DEFAULT_DT = 1e-3
DEFAULT_RECORD_STRIDE = 10
# =================================================================

ArrayRhs = Callable[[np.ndarray], np.ndarray]


class NumericalBlowup(RuntimeError):
    pass


class NotConverged(RuntimeError):
    def __init__(self, message: str, report: "ConvergenceReport"):
        super().__init__(message)
        self.report = report


@dataclass
class IntegrationConfig:
    t_final: float
    dt: float = DEFAULT_DT
    record_stride: int = DEFAULT_RECORD_STRIDE
    observables: List[str] = field(default_factory=lambda: ["sigma_z"])

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        if self.record_stride < 1:
            raise ValueError(f"record_stride must be >= 1, got {self.record_stride}")
        self.observables = list(validate_observables(self.observables))

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def check_grid(self) -> None:
        if abs(self.steps * self.dt - self.t_final) > STEP_ROUNDING_TOL * max(1.0, self.t_final):
            _LOGGER.warning(
                "t_final=%g is not a multiple of dt=%g; propagating to %g",
                self.t_final,
                self.dt,
                self.steps * self.dt,
            )

    def record_steps(self) -> List[int]:
        """Step numbers at which samples are recorded; the last step is always included."""
        steps = self.steps
        recorded = list(range(0, steps + 1, self.record_stride))
        if recorded[-1] != steps:
            recorded.append(steps)
        return recorded


@dataclass
class Trajectory:
    times: np.ndarray
    reduced: np.ndarray  # (samples, dim, dim)
    observable_series: Dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: Dict[str, np.ndarray] = field(default_factory=dict)
    std_errors: Optional[Dict[str, np.ndarray]] = None
    excluded: int = 0

    def __post_init__(self) -> None:
        n = len(self.times)
        if len(self.reduced) != n:
            raise ValueError("reduced matrices and times differ in length")
        for name, values in list(self.observable_series.items()) + list(self.diagnostics.items()):
            if len(values) != n:
                raise ValueError(f"series '{name}' differs in length from times")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def observable(self, name: str) -> np.ndarray:
        if name not in self.observable_series:
            self.observable_series[name] = observable_series(name, self.reduced)
        return self.observable_series[name]

    def max_diagnostic(self) -> float:
        if not self.diagnostics:
            return 0.0
        return float(max(np.max(values) for values in self.diagnostics.values()))


def _check_finite(y: np.ndarray) -> None:
    magnitude = np.max(np.abs(y)) if y.size else 0.0
    if not np.isfinite(magnitude) or magnitude > BLOWUP_THRESHOLD:
        raise NumericalBlowup(f"state magnitude {magnitude:.3e} exceeds {BLOWUP_THRESHOLD:.0e}")


def _rk4(rhs: ArrayRhs, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(y_next)
    return y_next


def rk4_step(
    rhs: Callable,
    state: Union[HierarchyState, np.ndarray],
    dt: float,
) -> Union[HierarchyState, np.ndarray]:
    """
    One classical Runge-Kutta step. ``rhs`` maps a state to its derivative;
    a HierarchyState or a plain array are both accepted. The input is never
    modified.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if isinstance(state, HierarchyState):
        layout = state.layout

        def array_rhs(y: np.ndarray) -> np.ndarray:
            return rhs(HierarchyState(layout, y)).matrices

        return HierarchyState(layout, _rk4(array_rhs, state.matrices, dt))
    return _rk4(rhs, np.asarray(state), dt)


def _check_stability(generator: HeomGenerator, dt: float) -> None:
    extent = dt * generator.max_damping()
    if extent > RK4_STABILITY_LIMIT:
        _LOGGER.warning(
            "dt=%g times the fastest damping rate %.3g is %.3g, beyond the RK4 stability limit %.3g",
            dt,
            generator.max_damping(),
            extent,
            RK4_STABILITY_LIMIT,
        )


def evolve(
    model: SystemModel,
    decomp: BathDecomposition,
    depth: int,
    config: IntegrationConfig,
    rho0: Optional[np.ndarray] = None,
) -> Trajectory:
    """
    Propagate the hierarchy from the product initial condition.

    ``rho0`` defaults to the model's benchmark initial state; models other
    than qubits must pass one.
    """
    if rho0 is None:
        if model.dim != 2:
            raise ValueError(f"rho0 is required for a {model.dim}-level model")
        rho0 = initial_state(DEFAULT_INITIAL_STATE.get(model.kind, "excited"))
    layout = enumerate_layout(decomp.n_alpha, decomp.n_alpha_tilde, depth, dim=model.dim)
    generator = HeomGenerator(layout, model, decomp)
    state = initial_hierarchy(layout, rho0)
    _check_stability(generator, config.dt)
    config.check_grid()

    recorded = set(config.record_steps())
    steps = config.steps
    times: List[float] = []
    reduced: List[np.ndarray] = []
    symmetry: List[float] = []

    y = state.matrices
    _LOGGER.info("Propagating %d steps of dt=%g at depth %d (%d matrices)", steps, config.dt, depth, layout.size)
    for step in range(steps + 1):
        if step in recorded:
            times.append(step * config.dt)
            reduced.append(y[0].copy())
            symmetry.append(conjugate_symmetry_defect(HierarchyState(layout, y)))
        if step < steps:
            try:
                y = _rk4(generator, y, config.dt)
            except NumericalBlowup as exc:
                raise NumericalBlowup(f"{exc} at t={(step + 1) * config.dt:g}") from exc
            if _LOGGER.isEnabledFor(logging.DEBUG) and step % 1000 == 0:
                _LOGGER.debug("step %d: |rho_s| max %.3e", step, np.max(np.abs(y[0])))

    return build_trajectory(np.array(times), np.array(reduced), config.observables, np.array(symmetry))


def build_trajectory(
    times: np.ndarray,
    reduced: np.ndarray,
    observables: Sequence[str],
    symmetry: Optional[np.ndarray] = None,
) -> Trajectory:
    """Assemble a trajectory with its observables and conservation diagnostics."""
    observable_values = {name: observable_series(name, reduced) for name in observables}
    diagnostics = {
        "trace_defect": np.abs(np.trace(reduced, axis1=1, axis2=2) - 1.0),
        "herm_defect": np.array([hermitian_defect(rho) for rho in reduced]),
    }
    if symmetry is not None:
        diagnostics["symmetry_defect"] = symmetry
    return Trajectory(times=times, reduced=reduced, observable_series=observable_values, diagnostics=diagnostics)


@dataclass
class ConvergenceReport:
    depth_schedule: List[int]
    tol: float
    chosen_depth: Optional[int] = None
    trajectories: Dict[int, Trajectory] = field(default_factory=dict)
    pairwise_max_diffs: List[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.chosen_depth is not None

    def to_dict(self) -> Dict[str, object]:
        return {
            "depth_schedule": self.depth_schedule,
            "tol": self.tol,
            "converged": self.converged,
            "chosen_depth": self.chosen_depth,
            "pairwise_max_diffs": [
                {"depth": low, "next_depth": high, "max_diff": diff}
                for low, high, diff in zip(self.depth_schedule, self.depth_schedule[1:], self.pairwise_max_diffs)
            ],
        }


def max_reduced_difference(a: Trajectory, b: Trajectory) -> float:
    if a.reduced.shape != b.reduced.shape:
        raise ValueError("trajectories were recorded on different grids")
    return float(np.max(np.abs(a.reduced - b.reduced)))


def converge_depth(
    model: SystemModel,
    decomp: BathDecomposition,
    config: IntegrationConfig,
    depth_schedule: Sequence[int],
    tol: float,
    rho0: Optional[np.ndarray] = None,
) -> ConvergenceReport:
    """
    Run every depth of the schedule and pick the first one whose reduced
    dynamics differ from the next depth by less than ``tol``.

    Raises:
        NotConverged: no depth met the tolerance; the report is attached.
    """
    schedule = [int(depth) for depth in depth_schedule]
    if len(schedule) < 2 or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError(f"depth_schedule must be strictly increasing with at least two entries: {schedule}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")

    report = ConvergenceReport(depth_schedule=schedule, tol=tol)
    for depth in schedule:
        report.trajectories[depth] = evolve(model, decomp, depth, config, rho0=rho0)

    for low, high in zip(schedule, schedule[1:]):
        diff = max_reduced_difference(report.trajectories[low], report.trajectories[high])
        report.pairwise_max_diffs.append(diff)
        _LOGGER.info("Depth %d vs %d: max reduced difference %.3e", low, high, diff)
        if report.chosen_depth is None and diff < tol:
            report.chosen_depth = low

    if not report.converged:
        raise NotConverged(f"no depth in {schedule} reached tolerance {tol:g}", report)
    _LOGGER.info("Converged at depth %d (tol %g)", report.chosen_depth, tol)
    return report
