"""
Built-in acceptance suite.

Each check returns a Criterion with the measured value, the threshold it was
held to and a pass flag. ``full`` (the default) runs every criterion at its
stated size; ``quick`` shrinks depths, grids and ensembles for development.
All randomness is seeded, so two runs of the same profile produce the same
report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from bath import (
    QUAD_ABS_TOL,
    QuadratureError,
    BathDecomposition,
    Lorentz,
    OhmicDrude,
    bcf_quadrature,
    decompose,
    empty_decomposition,
    fit_report,
    series_eval,
)
from hierarchy import (
    BRA_ALPHA,
    BRA_TILDE,
    KET_ALPHA,
    KET_TILDE,
    HierarchyLayout,
    HierarchyState,
    enumerate_layout,
    heom_rhs,
)
from integrator import ConvergenceReport, IntegrationConfig, NotConverged, Trajectory, converge_depth, evolve
from operators import SIGMA_MINUS, SIGMA_PLUS, SIGMA_Z, SystemModel, build_model, dagger, initial_state
from oracles import decay_cross_check, decay_exact, dephasing_exact, free_evolution_exact
from stochastic import TimeGrid, ensemble_mean, mean_field, mean_field_kernels, noise_statistics_check, sample_noise_paths

_LOGGER = logging.getLogger(__name__)

# ======================== Configuration =========================
VALIDATION_SEED = 20240917
CURVE_TOL = 1e-3
CONSERVATION_TOL = 1e-10
GENERATOR_TOL = 1e-13
REFERENCE_RHS_TOL = 1e-12
CLOSED_SYSTEM_TOL = 1e-8
ORACLE_CROSS_TOL = 1e-8
ORDER_RATIO_RANGE = (8.0, 32.0)
SE_FACTOR = 3.0
ZERO_SPREAD_TOL = 1e-12  # SD vs HEOM where the ensemble has no spread

# Benchmark parameters
DEPHASING = {"omega_0": 1.0, "chi": 0.002, "omega_c": 5.0, "beta": 0.015}
DECAY = {"omega_0": 1.0, "gamma": 5.0, "lambda": 0.2}
SPIN_BOSON = {"delta": 0.5, "gamma": 0.5, "lambda": 0.25, "omega_0": 0.5}

PROFILES: Dict[str, Dict[str, object]] = {
    "quick": {
        "dephasing_depth": 3,
        "dephasing_dt": 2e-3,
        "decay_depth": 4,
        "spin_boson_schedule": [2, 4, 6],
        "spin_boson_t_final": 10.0,
        "heom_dt": 0.01,
        "sd_traj": 1000,
        "sd_dt": 2e-3,
        "noise_steps": 100_000,
        "bcf_points": 5,
        "random_states": 20,
    },
    "full": {
        "dephasing_depth": 4,
        "dephasing_dt": 1e-3,
        "decay_depth": 8,
        "spin_boson_schedule": [2, 4, 6, 8],
        "spin_boson_t_final": 20.0,
        "heom_dt": 0.01,
        "sd_traj": 10_000,
        "sd_dt": 1e-3,
        "noise_steps": 200_000,
        "bcf_points": 20,
        "random_states": 100,
    },
}
# =================================================================


@dataclass
class Criterion:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


def _criterion(name: str, value: float, threshold: float, detail: str = "", below: bool = True) -> Criterion:
    passed = bool(np.isfinite(value) and (value < threshold if below else value >= threshold))
    return Criterion(name=name, passed=passed, value=float(value), threshold=float(threshold), detail=detail)


# ----------------------------------------------------------------------------
# Benchmark models
# ----------------------------------------------------------------------------


def dephasing_setup(matsubara_terms: int = 1):
    model = build_model("pure_dephasing", {"omega_0": DEPHASING["omega_0"]})
    J = OhmicDrude(chi=DEPHASING["chi"], omega_c=DEPHASING["omega_c"])
    decomp = decompose(J, DEPHASING["beta"], matsubara_terms, self_adjoint=True)
    return model, J, decomp


def decay_setup():
    model = build_model("spontaneous_decay", {"omega_0": DECAY["omega_0"]})
    J = Lorentz(gamma=DECAY["gamma"], lam=DECAY["lambda"], omega_0=DECAY["omega_0"])
    return model, J, decompose(J, math.inf)


def spin_boson_setup():
    model = build_model("spin_boson", {"delta": SPIN_BOSON["delta"]})
    J = Lorentz(gamma=SPIN_BOSON["gamma"], lam=SPIN_BOSON["lambda"], omega_0=SPIN_BOSON["omega_0"])
    return model, J, decompose(J, math.inf, self_adjoint=True)


def _stride(sample_every: float, dt: float) -> int:
    return max(1, int(round(sample_every / dt)))


# ----------------------------------------------------------------------------
# Independent reference right-hand sides
# ----------------------------------------------------------------------------


def _left(op: np.ndarray) -> np.ndarray:
    # row-major vectorization: vec(A X) = (A kron I) vec(X)
    return np.kron(op, np.eye(op.shape[0]))


def _right(op: np.ndarray) -> np.ndarray:
    # vec(X B) = (I kron B^T) vec(X)
    return np.kron(np.eye(op.shape[0]), op.T)


def dense_generator(layout: HierarchyLayout, model: SystemModel, decomp: BathDecomposition) -> np.ndarray:
    """
    Explicit linear generator of the hierarchy, assembled block by block from
    multi-index lookups and superoperator Kronecker products.
    """
    d = model.dim
    block = d * d
    n = layout.size
    h, s = np.asarray(model.h_s), np.asarray(model.s)
    s_dag = dagger(s)
    kappa = decomp.alpha_series.kappas
    kappa_t = decomp.alpha_tilde_series.kappas
    zeta = decomp.alpha_series.zetas
    zeta_t = decomp.alpha_tilde_series.zetas
    rates = list(kappa) + list(kappa_t) + list(kappa.conj()) + list(kappa_t.conj())
    amplitudes = list(zeta) + list(zeta_t) + list(zeta.conj()) + list(zeta_t.conj())
    group_of = []
    for group, slots in layout.slot_groups():
        group_of.extend([group] * len(slots))

    lower_op = {KET_ALPHA: _left(s), KET_TILDE: _left(s_dag), BRA_ALPHA: _right(s_dag), BRA_TILDE: _right(s)}
    raise_op = {
        KET_ALPHA: -(_left(s_dag) - _right(s_dag)),
        KET_TILDE: -(_left(s) - _right(s)),
        BRA_ALPHA: _left(s) - _right(s),
        BRA_TILDE: _left(s_dag) - _right(s_dag),
    }
    liouville = -1j * (_left(h) - _right(h))

    G = np.zeros((n * block, n * block), dtype=complex)
    for k, idx in enumerate(layout.indices):
        slots = idx.slots
        rows = slice(k * block, (k + 1) * block)
        damping = sum(count * rate for count, rate in zip(slots, rates))
        G[rows, rows] += liouville - damping * np.eye(block)
        for m, count in enumerate(slots):
            group = group_of[m]
            if count > 0:
                target = layout.lookup[slots[:m] + (count - 1,) + slots[m + 1 :]]
                G[rows, target * block : (target + 1) * block] += count * amplitudes[m] * lower_op[group]
            raised = slots[:m] + (count + 1,) + slots[m + 1 :]
            if raised in layout.lookup:
                target = layout.lookup[raised]
                G[rows, target * block : (target + 1) * block] += raise_op[group]
    return G


def decay_reference_rhs(
    states: Dict[tuple, np.ndarray], omega_0: float, gamma: float, lam: float, depth: int
) -> Dict[tuple, np.ndarray]:
    """
    Hand-written hierarchy for sigma_- coupling to a zero-temperature Lorentz
    bath, indexed by (p, k) = (ket order, bra order).
    """
    h = 0.5 * omega_0 * SIGMA_Z
    v = complex(lam, omega_0)
    amp = 0.5 * gamma * lam
    zero = np.zeros((2, 2), dtype=complex)

    def get(p: int, k: int) -> np.ndarray:
        return states.get((p, k), zero) if p >= 0 and k >= 0 and p + k <= depth else zero

    out = {}
    for (p, k), rho in states.items():
        d = -1j * (h @ rho - rho @ h) - (p * v + k * v.conjugate()) * rho
        d += amp * (p * SIGMA_MINUS @ get(p - 1, k) + k * get(p, k - 1) @ SIGMA_PLUS)
        up_p, up_k = get(p + 1, k), get(p, k + 1)
        d -= SIGMA_PLUS @ up_p - up_p @ SIGMA_PLUS
        d += SIGMA_MINUS @ up_k - up_k @ SIGMA_MINUS
        out[(p, k)] = d
    return out


def dephasing_reference_rhs(
    states: Dict[tuple, np.ndarray], omega_0: float, zetas: Sequence[complex], kappas: Sequence[complex], depth: int
) -> Dict[tuple, np.ndarray]:
    """
    Hand-written hierarchy for sigma_z coupling with a combined kernel
    series, indexed by the ket orders followed by the bra orders.
    """
    h = 0.5 * omega_0 * SIGMA_Z
    n = len(zetas)
    zero = np.zeros((2, 2), dtype=complex)

    def get(index: tuple) -> np.ndarray:
        if min(index) < 0 or sum(index) > depth:
            return zero
        return states.get(index, zero)

    def shifted(index: tuple, slot: int, step: int) -> tuple:
        return index[:slot] + (index[slot] + step,) + index[slot + 1 :]

    out = {}
    for index, rho in states.items():
        ket, bra = index[:n], index[n:]
        damping = sum(ket[q] * kappas[q] + bra[q] * np.conj(kappas[q]) for q in range(n))
        d = -1j * (h @ rho - rho @ h) - damping * rho
        for q in range(n):
            d += ket[q] * zetas[q] * SIGMA_Z @ get(shifted(index, q, -1))
            d += bra[q] * np.conj(zetas[q]) * get(shifted(index, n + q, -1)) @ SIGMA_Z
            up = get(shifted(index, q, 1)) - get(shifted(index, n + q, 1))
            d -= SIGMA_Z @ up - up @ SIGMA_Z
        out[index] = d
    return out


def _random_state(rng: np.random.Generator, size: int, dim: int = 2) -> np.ndarray:
    return rng.standard_normal((size, dim, dim)) + 1j * rng.standard_normal((size, dim, dim))


# ----------------------------------------------------------------------------
# Checks
# ----------------------------------------------------------------------------


def check_generator_oracle(random_states: int = 100, seed: int = VALIDATION_SEED) -> List[Criterion]:
    rng = np.random.default_rng(seed)

    model, _, decomp = decay_setup()
    layout = enumerate_layout(decomp.n_alpha, decomp.n_alpha_tilde, 2)
    G = dense_generator(layout, model, decomp)
    worst_dense = 0.0
    for _ in range(random_states):
        y = _random_state(rng, layout.size)
        fast = heom_rhs(layout, model, decomp, HierarchyState(layout, y)).matrices
        worst_dense = max(worst_dense, float(np.max(np.abs(fast.reshape(-1) - G @ y.reshape(-1)))))

    depth = 3
    layout = enumerate_layout(decomp.n_alpha, decomp.n_alpha_tilde, depth)
    worst_decay = 0.0
    for _ in range(random_states):
        y = _random_state(rng, layout.size)
        fast = heom_rhs(layout, model, decomp, HierarchyState(layout, y)).matrices
        ref = decay_reference_rhs(
            {idx.slots: y[k] for k, idx in enumerate(layout.indices)},
            DECAY["omega_0"],
            DECAY["gamma"],
            DECAY["lambda"],
            depth,
        )
        scale = max(1.0, max(float(np.max(np.abs(v))) for v in ref.values()))
        worst_decay = max(
            worst_decay,
            max(float(np.max(np.abs(fast[k] - ref[idx.slots]))) for k, idx in enumerate(layout.indices)) / scale,
        )

    dmodel, _, ddecomp = dephasing_setup(matsubara_terms=1)
    layout = enumerate_layout(ddecomp.n_alpha, ddecomp.n_alpha_tilde, 2)
    worst_dephasing = 0.0
    for _ in range(random_states):
        y = _random_state(rng, layout.size)
        fast = heom_rhs(layout, dmodel, ddecomp, HierarchyState(layout, y)).matrices
        ref = dephasing_reference_rhs(
            {idx.slots: y[k] for k, idx in enumerate(layout.indices)},
            DEPHASING["omega_0"],
            ddecomp.alpha_series.zetas,
            ddecomp.alpha_series.kappas,
            2,
        )
        scale = max(1.0, max(float(np.max(np.abs(v))) for v in ref.values()))
        worst_dephasing = max(
            worst_dephasing,
            max(float(np.max(np.abs(fast[k] - ref[idx.slots]))) for k, idx in enumerate(layout.indices)) / scale,
        )

    return [
        _criterion("generator_dense_decay_L2", worst_dense, GENERATOR_TOL, "24x24 assembled generator"),
        _criterion("generator_reference_decay", worst_decay, REFERENCE_RHS_TOL, "hand-written sigma_- hierarchy"),
        _criterion("generator_reference_dephasing", worst_dephasing, REFERENCE_RHS_TOL, "hand-written sigma_z hierarchy"),
    ]


def _heom_dephasing(profile: Dict[str, object]) -> Trajectory:
    model, _, decomp = dephasing_setup(matsubara_terms=1)
    dt = float(profile["dephasing_dt"])
    config = IntegrationConfig(t_final=10.0, dt=dt, record_stride=_stride(0.1, dt), observables=["sigma_x"])
    return evolve(model, decomp, int(profile["dephasing_depth"]), config, rho0=initial_state("plus"))


def check_dephasing(profile: Dict[str, object], trajectories: List[Trajectory]) -> List[Criterion]:
    _, _, decomp = dephasing_setup(matsubara_terms=1)
    traj = _heom_dephasing(profile)
    trajectories.append(traj)
    oracle = dephasing_exact(DEPHASING["omega_0"], decomp.alpha_series, 0.5, traj.times)
    diff = float(np.max(np.abs(traj.observable("sigma_x").real - 2.0 * oracle.values.real)))
    return [_criterion("dephasing_vs_exact", diff, CURVE_TOL, "max |<sigma_x> HEOM - exact| on [0, 10]")]


def check_decay(profile: Dict[str, object], trajectories: List[Trajectory]) -> List[Criterion]:
    model, _, decomp = decay_setup()
    dt = float(profile["heom_dt"])
    config = IntegrationConfig(t_final=10.0, dt=dt, record_stride=_stride(0.1, dt), observables=["rho_ee"])
    traj = evolve(model, decomp, int(profile["decay_depth"]), config, rho0=initial_state("excited"))
    trajectories.append(traj)
    oracle = decay_exact(DECAY["omega_0"], DECAY["gamma"], DECAY["lambda"], 1.0, traj.times)
    diff = float(np.max(np.abs(traj.observable("rho_ee").real - oracle.values.real)))
    cross = decay_cross_check(DECAY["omega_0"], DECAY["gamma"], DECAY["lambda"], traj.times)
    return [
        _criterion("decay_vs_exact", diff, CURVE_TOL, "max |rho_ee HEOM - exact| on [0, 10]"),
        _criterion("decay_oracle_cross_check", cross, ORACLE_CROSS_TOL, "closed form vs memory-kernel ODE"),
    ]


def _cross_method(
    name: str,
    model: SystemModel,
    decomp: BathDecomposition,
    heom: Trajectory,
    observable: str,
    horizon: float,
    profile: Dict[str, object],
    rho0: np.ndarray,
) -> Criterion:
    dt = float(profile["sd_dt"])
    grid = TimeGrid.spanning(horizon, dt)
    ensemble = ensemble_mean(
        model,
        mean_field_kernels(decomp),
        int(profile["sd_traj"]),
        grid,
        VALIDATION_SEED,
        rho0,
        record_stride=_stride(0.5, dt),
        observables=[observable],
        method="recursive",
    )
    heom_values = dict(zip(np.round(heom.times, 9), heom.observable(observable).real))
    worst = 0.0
    for k, t in enumerate(np.round(ensemble.times, 9)):
        if t not in heom_values:
            continue
        diff = abs(ensemble.observable(observable)[k].real - heom_values[t])
        band = SE_FACTOR * ensemble.std_errors[observable][k].real
        if band > ZERO_SPREAD_TOL:
            ratio = diff / band
        else:
            # every trajectory agrees here (t = 0): the difference itself must vanish
            ratio = 0.0 if diff <= ZERO_SPREAD_TOL else math.inf
        worst = max(worst, ratio)
    detail = (
        f"max |SD - HEOM| / ({SE_FACTOR:g} SE) on [0, {horizon:g}], "
        f"{ensemble.excluded} trajectories excluded"
    )
    return Criterion(name, bool(worst <= 1.0), worst, 1.0, detail)


def depth_convergence_criterion(name: str, report: ConvergenceReport) -> Criterion:
    """The deepest pair of the schedule must agree within CURVE_TOL."""
    schedule = report.depth_schedule
    return _criterion(
        name,
        report.pairwise_max_diffs[-1],
        CURVE_TOL,
        f"depth {schedule[-2]} vs {schedule[-1]} of {schedule}, chosen depth {report.chosen_depth}",
    )


def check_spin_boson(
    profile: Dict[str, object], trajectories: List[Trajectory], include_stochastic: bool = True
) -> List[Criterion]:
    model, _, decomp = spin_boson_setup()
    dt = float(profile["heom_dt"])
    config = IntegrationConfig(
        t_final=float(profile["spin_boson_t_final"]), dt=dt, record_stride=_stride(0.1, dt), observables=["sigma_z"]
    )
    schedule = list(profile["spin_boson_schedule"])
    try:
        report = converge_depth(model, decomp, config, schedule, CURVE_TOL, rho0=initial_state("excited"))
    except NotConverged as exc:
        report = exc.report
    trajectories.extend(report.trajectories.values())
    depth = report.chosen_depth if report.converged else schedule[-1]
    sigma_z = report.trajectories[depth].observable("sigma_z").real
    crossed = bool(sigma_z[0] > 0 and np.any(sigma_z < 0))

    results = [
        depth_convergence_criterion("spin_boson_depth_convergence", report),
        Criterion("spin_boson_damped_oscillation", crossed, float(sigma_z.min()), 0.0, "<sigma_z> crosses zero"),
    ]
    if include_stochastic:
        # ensemble comparison points every 0.5
        reference = evolve(
            model,
            decomp,
            depth,
            IntegrationConfig(t_final=3.0, dt=dt, record_stride=_stride(0.5, dt), observables=["sigma_z"]),
            rho0=initial_state("excited"),
        )
        results.append(
            _cross_method("spin_boson_sd_vs_heom", model, decomp, reference, "sigma_z", 3.0, profile, initial_state("excited"))
        )
    return results


def check_cross_methods(profile: Dict[str, object]) -> List[Criterion]:
    """Stochastic ensembles against the hierarchy for the two other benchmarks."""
    results = []

    model, _, decomp = dephasing_setup(matsubara_terms=1)
    dt = float(profile["dephasing_dt"])
    heom = evolve(
        model,
        decomp,
        int(profile["dephasing_depth"]),
        IntegrationConfig(t_final=2.0, dt=dt, record_stride=_stride(0.5, dt), observables=["sigma_x"]),
        rho0=initial_state("plus"),
    )
    results.append(_cross_method("dephasing_sd_vs_heom", model, decomp, heom, "sigma_x", 2.0, profile, initial_state("plus")))

    model, _, decomp = decay_setup()
    dt = float(profile["heom_dt"])
    heom = evolve(
        model,
        decomp,
        int(profile["decay_depth"]),
        IntegrationConfig(t_final=1.0, dt=dt, record_stride=_stride(0.5, dt), observables=["rho_ee"]),
        rho0=initial_state("excited"),
    )
    results.append(_cross_method("decay_sd_vs_heom", model, decomp, heom, "rho_ee", 1.0, profile, initial_state("excited")))
    return results


def check_conservation(trajectories: Sequence[Trajectory]) -> Criterion:
    worst = max((traj.max_diagnostic() for traj in trajectories), default=0.0)
    return _criterion(
        "conservation", worst, CONSERVATION_TOL, f"trace/Hermiticity/symmetry defects over {len(trajectories)} runs"
    )


def _halving_ratio(run: Callable[[float], np.ndarray], dt: float) -> float:
    coarse, mid, fine = run(dt), run(dt / 2), run(dt / 4)
    return float(np.max(np.abs(coarse - mid)) / np.max(np.abs(mid - fine)))


def check_integrator_order() -> List[Criterion]:
    def final_reduced(model: SystemModel, decomp: BathDecomposition, depth: int, t_final: float, rho0: np.ndarray):
        def run(dt: float) -> np.ndarray:
            config = IntegrationConfig(t_final=t_final, dt=dt, record_stride=10 ** 6, observables=[])
            return evolve(model, decomp, depth, config, rho0=rho0).reduced[-1]

        return run

    low, high = ORDER_RATIO_RANGE
    dmodel, _, ddecomp = dephasing_setup(matsubara_terms=0)
    emodel, _, edecomp = decay_setup()
    smodel, _, sdecomp = spin_boson_setup()
    cases = [
        ("order_dephasing", final_reduced(dmodel, ddecomp, 3, 1.0, initial_state("plus")), 0.02),
        ("order_decay", final_reduced(emodel, edecomp, 4, 2.0, initial_state("excited")), 0.1),
        ("order_spin_boson", final_reduced(smodel, sdecomp, 4, 2.0, initial_state("excited")), 0.1),
    ]
    results = []
    for name, run, dt in cases:
        ratio = _halving_ratio(run, dt)
        results.append(
            Criterion(name, bool(low <= ratio <= high), ratio, 16.0, f"step-halving error ratio from dt={dt:g}")
        )
    return results


def check_noise_statistics(profile: Dict[str, object]) -> Criterion:
    grid = TimeGrid(dt=0.01, steps=int(profile["noise_steps"]))
    report = noise_statistics_check(sample_noise_paths(VALIDATION_SEED, grid, "general"))
    worst = float(max(np.max(report.mean_z), np.max(report.cov_ww_z), np.max(report.cov_wwstar_z)))
    return Criterion("noise_statistics", report.passed, worst, 5.0, f"{report.samples} increments per channel")


def check_convolution_methods() -> Criterion:
    _, _, decomp = dephasing_setup(matsubara_terms=2)
    kernels = mean_field_kernels(decomp)
    noises = sample_noise_paths(VALIDATION_SEED, TimeGrid(dt=1e-3, steps=500), "self_adjoint")
    direct = mean_field(kernels, noises, "direct").g
    recursive = mean_field(kernels, noises, "recursive").g
    diff = float(np.max(np.abs(direct - recursive)) / max(1.0, np.max(np.abs(direct))))
    return _criterion("mean_field_direct_vs_recursive", diff, 1e-10, "relative difference")


def _bcf_identity_defect(points: int) -> float:
    tol = QUAD_ABS_TOL / 10
    worst = 0.0
    spectra = [
        (OhmicDrude(chi=DEPHASING["chi"], omega_c=DEPHASING["omega_c"]), DEPHASING["beta"], np.linspace(0.5, 10.0, points)),
        (Lorentz(gamma=DECAY["gamma"], lam=DECAY["lambda"], omega_0=DECAY["omega_0"]), math.inf, np.linspace(0.0, 10.0, points)),
    ]
    for J, beta, grid in spectra:
        for t in map(float, grid):
            alpha = bcf_quadrature("alpha", J, beta, t, tol)
            alpha_t = bcf_quadrature("alpha_tilde", J, beta, t, tol)
            worst = max(
                worst,
                abs(bcf_quadrature("xi", J, beta, t, tol) - (alpha + alpha_t)),
                abs(bcf_quadrature("acute", J, beta, t, tol) - (alpha.conjugate() - alpha_t)),
                abs(bcf_quadrature("grave", J, beta, t, tol) - (alpha.conjugate() + alpha_t)),
            )
    return worst


def check_bcf(profile: Dict[str, object]) -> List[Criterion]:
    points = int(profile["bcf_points"])
    try:
        identity_defect = _bcf_identity_defect(points)

        _, J, lorentz_decomp = decay_setup()
        grid = np.linspace(0.0, 10.0, points)
        closed = (0.5 * J.gamma * J.lam) * np.exp(-complex(J.lam, J.omega_0) * grid)
        exact_error = float(np.max(np.abs(series_eval(lorentz_decomp.alpha_series, grid) - closed)))
        lorentz_fit = fit_report(lorentz_decomp, J, math.inf, list(grid)).max_abs_error

        drude = OhmicDrude(chi=DEPHASING["chi"], omega_c=DEPHASING["omega_c"])
        drude_grid = list(np.geomspace(1e-2, 10.0, points))
        errors = [
            fit_report(
                decompose(drude, DEPHASING["beta"], terms, self_adjoint=True), drude, DEPHASING["beta"], drude_grid
            ).max_abs_error
            for terms in range(3)
        ]
    except QuadratureError as exc:
        _LOGGER.error("Kernel quadrature failed during validation: %s", exc)
        return [Criterion("bcf_quadrature", False, math.nan, QUAD_ABS_TOL, str(exc))]

    increases = max(b - a for a, b in zip(errors, errors[1:]))
    sweep = ", ".join(f"{e:.2e}" for e in errors)
    return [
        _criterion("bcf_identities", identity_defect, 2 * QUAD_ABS_TOL, "xi = alpha + alpha_tilde, acute, grave"),
        _criterion("bcf_lorentz_exact", exact_error, 1e-12, "series vs closed-form kernel"),
        _criterion("bcf_lorentz_fit", lorentz_fit, 1e-9, "series vs quadrature"),
        _criterion("bcf_drude_monotone", increases, 1e-12, f"fit errors for 0, 1, 2 Matsubara terms: {sweep}"),
    ]


def check_closed_system() -> Criterion:
    worst = 0.0
    for model, rho0 in (
        (build_model("pure_dephasing", {"omega_0": 1.0}), initial_state("plus")),
        (build_model("spontaneous_decay", {"omega_0": 1.0}), initial_state("excited")),
        (build_model("spin_boson", {"delta": 0.5}), initial_state("excited")),
    ):
        config = IntegrationConfig(t_final=10.0, dt=5e-3, record_stride=20, observables=["sigma_x", "sigma_y", "sigma_z"])
        traj = evolve(model, empty_decomposition(), 0, config, rho0=rho0)
        exact = free_evolution_exact(model, rho0, traj.times)
        for name, curve in exact.items():
            worst = max(worst, float(np.max(np.abs(traj.observable(name) - curve.values))))
    return _criterion("closed_system_limit", worst, CLOSED_SYSTEM_TOL, "empty decomposition vs matrix exponential")


# ----------------------------------------------------------------------------
# Suite
# ----------------------------------------------------------------------------


def run_validation(profile: str = "full", include_stochastic: bool = True) -> List[Criterion]:
    if profile not in PROFILES:
        raise ValueError(f"unknown validation profile {profile!r}; expected one of {sorted(PROFILES)}")
    settings = PROFILES[profile]
    _LOGGER.info("Running %s validation profile", profile)

    trajectories: List[Trajectory] = []
    results: List[Criterion] = []
    results += check_dephasing(settings, trajectories)
    results += check_decay(settings, trajectories)
    results += check_spin_boson(settings, trajectories, include_stochastic)
    results.append(check_conservation(trajectories))
    results += check_generator_oracle(int(settings["random_states"]))
    results += check_integrator_order()
    results.append(check_noise_statistics(settings))
    results.append(check_convolution_methods())
    results += check_bcf(settings)
    results.append(check_closed_system())
    if include_stochastic:
        results += check_cross_methods(settings)

    for criterion in results:
        log = _LOGGER.info if criterion.passed else _LOGGER.warning
        log("%-34s %s value=%.3e threshold=%.3e", criterion.name, "PASS" if criterion.passed else "FAIL",
            criterion.value, criterion.threshold)
    return results


def format_table(results: Sequence[Criterion]) -> str:
    width = max(len(c.name) for c in results) if results else 10
    lines = [f"{'criterion':<{width}}  {'result':<6}  {'value':>12}  {'threshold':>12}"]
    for c in results:
        lines.append(f"{c.name:<{width}}  {'PASS' if c.passed else 'FAIL':<6}  {c.value:>12.4e}  {c.threshold:>12.4e}")
    return "\n".join(lines)


def validation_report(results: Sequence[Criterion], profile: str) -> Dict[str, object]:
    return {
        "profile": profile,
        "passed": all(c.passed for c in results),
        "criteria": [asdict(c) for c in results],
    }
