"""
Service Layer for the HEOM solver.

This module provides the service class behind the command-line front end:
each method takes a validated RunSpec, drives one workflow (deterministic
run, depth convergence sweep, bath fit report, stochastic ensemble) and
returns a result dict with 'success' and 'message'. Output files are written
to a temporary sibling and renamed, so a failed run never leaves a partial
file behind.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from bath import (
    BathDecomposition,
    SpectralDensity,
    decompose,
    fit_report,
    make_spectral_density,
)
from config import RunSpec
from integrator import IntegrationConfig, NotConverged, Trajectory, converge_depth, evolve
from operators import SystemModel, build_model, initial_state, is_real_valued
from stochastic import TimeGrid, ensemble_mean, mean_field_kernels

# Setup logging
logger = logging.getLogger(__name__)

# Configuration
CSV_FLOAT_FORMAT = "%.17e"
DIAGNOSTIC_COLUMNS = ("trace_defect", "herm_defect")
BCF_GRID_POINTS = 20
DEFAULT_OUTPUTS = {
    "run": "run.csv",
    "converge": "converge.json",
    "bcf": "bcf.csv",
    "stochastic": "stochastic.csv",
}


def format_float(value: float) -> str:
    """Locale-independent scientific notation with 17 significant digits."""
    return CSV_FLOAT_FORMAT % float(value)


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def observable_columns(observables: Sequence[str]) -> List[Tuple[str, str, str]]:
    """(column, observable, part) for every non-diagnostic observable."""
    columns = []
    for name in observables:
        if name in DIAGNOSTIC_COLUMNS:
            continue
        columns.append((f"{name}_re", name, "re"))
        if not is_real_valued(name):
            columns.append((f"{name}_im", name, "im"))
    return columns


def trajectory_csv(traj: Trajectory, observables: Sequence[str]) -> str:
    """
    Render a trajectory as CSV: t, observable columns, diagnostics, and for
    stochastic ensembles standard-error columns plus the exclusion count.
    """
    columns = observable_columns(observables)
    stochastic = traj.std_errors is not None

    header = ["t"]
    for column, _, _ in columns:
        header.append(column)
        if stochastic:
            header.append(f"{column}_se")
    header.extend(DIAGNOSTIC_COLUMNS)
    if stochastic:
        header.append("excluded")

    si = io.StringIO()
    cw = csv.writer(si, lineterminator="\n")
    cw.writerow(header)
    for k, t in enumerate(traj.times):
        row = [format_float(t)]
        for _, name, part in columns:
            value = traj.observable(name)[k]
            row.append(format_float(value.real if part == "re" else value.imag))
            if stochastic:
                se = traj.std_errors[name][k]
                row.append(format_float(se.real if part == "re" else se.imag))
        for name in DIAGNOSTIC_COLUMNS:
            row.append(format_float(traj.diagnostics[name][k]))
        if stochastic:
            row.append(str(traj.excluded))
        cw.writerow(row)
    return si.getvalue()


def build_inputs(spec: RunSpec) -> Tuple[SystemModel, SpectralDensity, BathDecomposition, np.ndarray]:
    """Model, spectrum, decomposition and initial state described by a RunSpec."""
    model = build_model(spec.model.kind, spec.model.params)
    J = make_spectral_density(spec.bath.kind, spec.bath.params)
    decomp = decompose(J, spec.bath.beta, spec.matsubara_terms, self_adjoint=model.self_adjoint)
    return model, J, decomp, initial_state(spec.model.initial_state)


def integration_config(spec: RunSpec) -> IntegrationConfig:
    return IntegrationConfig(
        t_final=spec.integrator.t_final,
        dt=spec.integrator.dt,
        record_stride=spec.integrator.record_stride,
        observables=[name for name in spec.output.observables if name not in DIAGNOSTIC_COLUMNS],
    )


class SimulationService:
    """Runs the solver workflows described by RunSpec documents."""

    def __init__(
        self,
        output: Optional[Path] = None,
        threads: int = 1,
        seed: Optional[int] = None,
    ):
        self.output = Path(output) if output is not None else None
        self.threads = max(1, int(threads))
        self.seed = seed

    def _output_path(self, spec: RunSpec, command: str) -> Path:
        if self.output is not None:
            return self.output
        if spec.output.path:
            return Path(spec.output.path)
        return Path(DEFAULT_OUTPUTS[command])

    def cmd_run(self, spec: RunSpec) -> Dict[str, Any]:
        """
        Propagate the hierarchy at the fixed depth of the spec and write CSV.

        Returns:
            Dict with 'success', 'message', 'path', 'rows'
        """
        if spec.hierarchy.depth is None:
            return {"success": False, "message": "run needs hierarchy.depth (use converge for a schedule)"}
        path = self._output_path(spec, "run")
        try:
            model, _, decomp, rho0 = build_inputs(spec)
            traj = evolve(model, decomp, spec.hierarchy.depth, integration_config(spec), rho0=rho0)
            write_atomic(path, trajectory_csv(traj, spec.output.observables))
        except (ValueError, RuntimeError, OSError) as e:
            logger.error(f"Run failed: {e}")
            return {"success": False, "message": str(e)}

        logger.info(f"Wrote {len(traj)} samples to {path}")
        return {
            "success": True,
            "message": f"wrote {len(traj)} samples",
            "path": str(path),
            "rows": len(traj),
            "max_diagnostic": traj.max_diagnostic(),
        }

    def cmd_converge(self, spec: RunSpec) -> Dict[str, Any]:
        """
        Depth convergence sweep. The JSON report is written whether or not
        the sweep converges.

        Returns:
            Dict with 'success', 'message', 'path', 'report'
        """
        if spec.hierarchy.depth_schedule is None:
            return {"success": False, "message": "converge needs hierarchy.depth_schedule"}
        path = self._output_path(spec, "converge")
        try:
            model, _, decomp, rho0 = build_inputs(spec)
            config = integration_config(spec)
            try:
                report = converge_depth(
                    model, decomp, config, spec.hierarchy.depth_schedule, spec.hierarchy.tol, rho0=rho0
                )
                message = f"converged at depth {report.chosen_depth}"
            except NotConverged as e:
                report = e.report
                message = str(e)
            document = report.to_dict()
            write_atomic(path, json.dumps(document, indent=2, sort_keys=True) + "\n")
        except (ValueError, RuntimeError, OSError) as e:
            logger.error(f"Convergence sweep failed: {e}")
            return {"success": False, "message": str(e)}

        if not report.converged:
            logger.error(f"Convergence sweep did not converge: {message}")
        return {"success": report.converged, "message": message, "path": str(path), "report": document}

    def cmd_bcf(self, spec: RunSpec) -> Dict[str, Any]:
        """
        Fit report of the bath decomposition: per-point kernel CSV plus a JSON
        report next to it, including the error for every Matsubara truncation
        from 0 to the configured one (Ohmic-Drude only).

        Returns:
            Dict with 'success', 'message', 'path', 'report_path', 'report'
        """
        path = self._output_path(spec, "bcf")
        report_path = path.with_suffix(".json")
        try:
            model, J, decomp, _ = build_inputs(spec)
            grid = self._bcf_grid(spec, J)
            report = fit_report(decomp, J, spec.bath.beta, grid)

            sweep = []
            if J.kind == "ohmic_drude":
                for terms in range(spec.matsubara_terms + 1):
                    trial = decompose(J, spec.bath.beta, terms, self_adjoint=model.self_adjoint)
                    sweep.append(
                        {
                            "matsubara_terms": terms,
                            "max_abs_error": fit_report(trial, J, spec.bath.beta, grid).max_abs_error,
                        }
                    )

            si = io.StringIO()
            cw = csv.writer(si, lineterminator="\n")
            cw.writerow(["t", "channel", "series_re", "series_im", "quadrature_re", "quadrature_im", "error"])
            for point in report.per_point:
                cw.writerow(
                    [
                        format_float(point.t),
                        point.channel,
                        format_float(point.series_value.real),
                        format_float(point.series_value.imag),
                        format_float(point.quadrature_value.real),
                        format_float(point.quadrature_value.imag),
                        format_float(point.error),
                    ]
                )
            document = {
                "spectral_density": J.to_dict(),
                "decomposition": decomp.to_dict(),
                "max_abs_error": report.max_abs_error,
                "matsubara_sweep": sweep,
            }
            write_atomic(path, si.getvalue())
            write_atomic(report_path, json.dumps(document, indent=2, sort_keys=True) + "\n")
        except (ValueError, RuntimeError, OSError) as e:
            logger.error(f"Bath fit report failed: {e}")
            return {"success": False, "message": str(e)}

        return {
            "success": True,
            "message": f"max fit error {report.max_abs_error:.3e}",
            "path": str(path),
            "report_path": str(report_path),
            "report": document,
        }

    @staticmethod
    def _bcf_grid(spec: RunSpec, J: SpectralDensity) -> List[float]:
        t_final = spec.integrator.t_final if spec.integrator.t_final > 0 else 1.0
        if J.full_axis:
            return list(np.linspace(0.0, t_final, BCF_GRID_POINTS))
        # kernels of the Drude spectrum diverge at t = 0
        return list(np.linspace(t_final / BCF_GRID_POINTS, t_final, BCF_GRID_POINTS))

    def cmd_stochastic(self, spec: RunSpec) -> Dict[str, Any]:
        """
        Stochastic ensemble over the integrator horizon; CSV with mean and
        standard-error columns plus the exclusion count.

        Returns:
            Dict with 'success', 'message', 'path', 'excluded'
        """
        if spec.stochastic is None:
            return {"success": False, "message": "stochastic section is missing"}
        path = self._output_path(spec, "stochastic")
        seed = self.seed if self.seed is not None else spec.stochastic.seed
        try:
            model, _, decomp, rho0 = build_inputs(spec)
            grid = TimeGrid.spanning(spec.integrator.t_final, spec.stochastic.dt)
            observables = [name for name in spec.output.observables if name not in DIAGNOSTIC_COLUMNS]
            traj = ensemble_mean(
                model,
                mean_field_kernels(decomp),
                spec.stochastic.n_traj,
                grid,
                seed,
                rho0,
                record_stride=spec.stochastic.record_stride,
                observables=observables,
                threads=self.threads,
                method=spec.stochastic.convolution,
            )
            write_atomic(path, trajectory_csv(traj, spec.output.observables))
        except (ValueError, RuntimeError, OSError) as e:
            logger.error(f"Stochastic ensemble failed: {e}")
            return {"success": False, "message": str(e)}

        logger.info(f"Wrote ensemble of {spec.stochastic.n_traj} trajectories to {path}")
        return {
            "success": True,
            "message": f"ensemble of {spec.stochastic.n_traj} trajectories, {traj.excluded} excluded",
            "path": str(path),
            "rows": len(traj),
            "excluded": traj.excluded,
        }
