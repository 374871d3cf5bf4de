from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from bath import ExponentialSeries, BathDecomposition, Lorentz, OhmicDrude, decompose, empty_decomposition
from hierarchy import HierarchyState, enumerate_layout
from integrator import (
    IntegrationConfig,
    NotConverged,
    NumericalBlowup,
    converge_depth,
    evolve,
    max_reduced_difference,
    rk4_step,
)
from operators import SystemModel, build_model, initial_state
from oracles import decay_exact, dephasing_exact, free_evolution_exact

DECAY_MODEL = build_model("spontaneous_decay", {"omega_0": 1.0})
DECAY_BATH = decompose(Lorentz(gamma=5.0, lam=0.2, omega_0=1.0), math.inf)


def test_rk4_step_on_scalar_decay():
    y = np.array([1.0 + 0j])
    y1 = rk4_step(lambda v: -v, y, 0.1)
    # fourth-order Taylor polynomial of exp(-0.1)
    assert y1[0] == pytest.approx(1 - 0.1 + 0.1 ** 2 / 2 - 0.1 ** 3 / 6 + 0.1 ** 4 / 24)
    assert y[0] == 1.0


def test_rk4_step_accepts_hierarchy_state():
    layout = enumerate_layout(0, 0, 0)
    state = HierarchyState(layout, initial_state("plus")[None])
    out = rk4_step(lambda s: HierarchyState(s.layout, -1j * s.matrices), state, 0.01)
    assert isinstance(out, HierarchyState)
    np.testing.assert_allclose(out.matrices, state.matrices * np.exp(-0.01j), atol=1e-11)
    with pytest.raises(ValueError):
        rk4_step(lambda v: v, state, 0.0)


def test_rk4_blowup_detected():
    with pytest.raises(NumericalBlowup):
        rk4_step(lambda v: 1e14 * v, np.array([1.0 + 0j]), 1.0)


def test_integration_config_grid():
    config = IntegrationConfig(t_final=1.0, dt=0.3, record_stride=2, observables=["sigma_z"])
    assert config.steps == 3
    assert config.record_steps() == [0, 2, 3]
    with pytest.raises(ValueError):
        IntegrationConfig(t_final=1.0, dt=0.0)
    with pytest.raises(ValueError):
        IntegrationConfig(t_final=-1.0, dt=0.1)
    with pytest.raises(ValueError):
        IntegrationConfig(t_final=1.0, dt=0.1, record_stride=0)


def test_closed_system_matches_matrix_exponential():
    model = build_model("spin_boson", {"delta": 0.5})
    config = IntegrationConfig(t_final=5.0, dt=0.01, record_stride=50, observables=["sigma_x", "sigma_z"])
    traj = evolve(model, empty_decomposition(), 0, config, rho0=initial_state("excited"))
    exact = free_evolution_exact(model, initial_state("excited"), traj.times, ["sigma_x", "sigma_z"])
    for name, curve in exact.items():
        np.testing.assert_allclose(traj.observable(name), curve.values, atol=1e-8)


def test_non_qubit_model_needs_initial_state():
    model = SystemModel(np.diag([0.0, 1.0, 2.0]), np.diag([1.0, 0.0, -1.0]))
    config = IntegrationConfig(t_final=0.1, dt=0.01, record_stride=10, observables=[])
    with pytest.raises(ValueError, match="rho0 is required"):
        evolve(model, empty_decomposition(), 0, config)


def test_depth_zero_decouples_the_bath():
    model = build_model("pure_dephasing", {"omega_0": 1.0})
    decomp = decompose(OhmicDrude(chi=0.1, omega_c=1.0), 0.5, matsubara_terms=1, self_adjoint=True)
    config = IntegrationConfig(t_final=1.0, dt=0.01, record_stride=100, observables=["sigma_x"])
    traj = evolve(model, decomp, 0, config)
    assert traj.observable("sigma_x")[-1].real == pytest.approx(math.cos(1.0), abs=1e-9)


def test_decay_matches_exact_population():
    config = IntegrationConfig(t_final=5.0, dt=0.01, record_stride=25, observables=["rho_ee"])
    traj = evolve(DECAY_MODEL, DECAY_BATH, 6, config, rho0=initial_state("excited"))
    exact = decay_exact(1.0, 5.0, 0.2, 1.0, traj.times)
    assert np.max(np.abs(traj.observable("rho_ee").real - exact.values.real)) < 1e-3
    assert traj.max_diagnostic() < 1e-10


def test_dephasing_matches_exact_coherence():
    model = build_model("pure_dephasing", {"omega_0": 1.0})
    decomp = decompose(OhmicDrude(chi=0.002, omega_c=5.0), 0.015, matsubara_terms=1, self_adjoint=True)
    config = IntegrationConfig(t_final=3.0, dt=2e-3, record_stride=50, observables=["sigma_x"])
    traj = evolve(model, decomp, 3, config, rho0=initial_state("plus"))
    exact = dephasing_exact(1.0, decomp.alpha_series, 0.5, traj.times)
    assert np.max(np.abs(traj.observable("sigma_x").real - 2 * exact.values.real)) < 1e-3
    assert traj.diagnostics["symmetry_defect"].max() < 1e-10


def test_trajectory_records_grid_and_diagnostics():
    config = IntegrationConfig(t_final=1.0, dt=0.1, record_stride=3, observables=["rho_ee", "rho_eg"])
    traj = evolve(DECAY_MODEL, DECAY_BATH, 2, config)
    np.testing.assert_allclose(traj.times, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert traj.reduced.shape == (5, 2, 2)
    assert set(traj.diagnostics) == {"trace_defect", "herm_defect", "symmetry_defect"}
    assert traj.observable("rho_ee")[0] == pytest.approx(1.0)


def test_fourth_order_convergence():
    def final(dt):
        config = IntegrationConfig(t_final=2.0, dt=dt, record_stride=10 ** 6, observables=[])
        return evolve(DECAY_MODEL, DECAY_BATH, 4, config).reduced[-1]

    coarse, mid, fine = final(0.1), final(0.05), final(0.025)
    ratio = np.max(np.abs(coarse - mid)) / np.max(np.abs(mid - fine))
    assert 8 <= ratio <= 32


def test_stability_warning(caplog):
    decomp = BathDecomposition(ExponentialSeries(((0.01, 100.0),)), ExponentialSeries(), beta=math.inf)
    config = IntegrationConfig(t_final=0.05, dt=0.05, record_stride=1, observables=[])
    with caplog.at_level(logging.WARNING, logger="integrator"):
        evolve(DECAY_MODEL, decomp, 1, config)
    assert any("stability limit" in record.getMessage() for record in caplog.records)


def test_converge_depth_picks_first_converged_depth():
    config = IntegrationConfig(t_final=3.0, dt=0.01, record_stride=10, observables=["rho_ee"])
    report = converge_depth(DECAY_MODEL, DECAY_BATH, config, [2, 4, 6, 8], 1e-3)
    assert report.converged
    assert report.chosen_depth in (2, 4, 6)
    assert len(report.pairwise_max_diffs) == 3
    k = report.depth_schedule.index(report.chosen_depth)
    assert report.pairwise_max_diffs[k] < 1e-3
    assert all(d >= 1e-3 for d in report.pairwise_max_diffs[:k])
    doc = report.to_dict()
    assert doc["converged"] and doc["chosen_depth"] == report.chosen_depth


def test_converge_depth_failure_carries_report():
    config = IntegrationConfig(t_final=3.0, dt=0.01, record_stride=10, observables=["rho_ee"])
    with pytest.raises(NotConverged) as excinfo:
        converge_depth(DECAY_MODEL, DECAY_BATH, config, [0, 1], 1e-12)
    report = excinfo.value.report
    assert not report.converged
    assert report.to_dict()["chosen_depth"] is None
    assert len(report.pairwise_max_diffs) == 1


def test_converge_depth_rejects_bad_schedule():
    config = IntegrationConfig(t_final=1.0, dt=0.1)
    with pytest.raises(ValueError):
        converge_depth(DECAY_MODEL, DECAY_BATH, config, [4, 2], 1e-3)
    with pytest.raises(ValueError):
        converge_depth(DECAY_MODEL, DECAY_BATH, config, [2], 1e-3)


def test_max_reduced_difference_requires_same_grid():
    a = evolve(DECAY_MODEL, DECAY_BATH, 1, IntegrationConfig(t_final=1.0, dt=0.1, record_stride=1, observables=[]))
    b = evolve(DECAY_MODEL, DECAY_BATH, 1, IntegrationConfig(t_final=1.0, dt=0.1, record_stride=2, observables=[]))
    assert max_reduced_difference(a, a) == 0.0
    with pytest.raises(ValueError):
        max_reduced_difference(a, b)
