from __future__ import annotations

import csv
import json

import numpy as np
import pytest

import heom
from config import parse_config
from integrator import IntegrationConfig, evolve
from services import SimulationService, build_inputs, format_float, trajectory_csv, write_atomic

DECAY_DOC = {
    "model": {"kind": "spontaneous_decay", "params": {"omega_0": 1.0}},
    "bath": {"kind": "lorentz", "params": {"gamma": 5.0, "lambda": 0.2, "omega_0": 1.0}, "beta": "inf"},
    "hierarchy": {"depth": 3},
    "integrator": {"dt": 0.01, "t_final": 0.5, "record_stride": 10},
    "stochastic": {"n_traj": 20, "seed": 4, "dt": 0.01, "record_stride": 10, "convolution": "recursive"},
    "output": {"observables": ["rho_ee", "rho_eg", "trace_defect", "herm_defect"]},
}


def _spec(**changes):
    doc = json.loads(json.dumps(DECAY_DOC))
    for section, value in changes.items():
        doc[section] = value
    return parse_config(json.dumps(doc))


def _read_csv(path):
    with path.open(newline="") as f:
        return list(csv.reader(f))


def test_format_float_is_round_trip_exact():
    value = 0.1 + 0.2
    assert float(format_float(value)) == value
    assert format_float(1.0) == "1.00000000000000000e+00"


def test_write_atomic_leaves_no_temporary(tmp_path):
    target = tmp_path / "nested" / "out.csv"
    write_atomic(target, "a,b\n")
    assert target.read_text() == "a,b\n"
    assert sorted(p.name for p in target.parent.iterdir()) == ["out.csv"]


def test_cmd_run_writes_csv(tmp_path):
    out = tmp_path / "run.csv"
    result = SimulationService(output=out).cmd_run(_spec())
    assert result["success"], result["message"]
    rows = _read_csv(out)
    assert rows[0] == ["t", "rho_ee_re", "rho_eg_re", "rho_eg_im", "trace_defect", "herm_defect"]
    assert len(rows) == 1 + 6
    assert float(rows[1][1]) == 1.0
    assert float(rows[-1][0]) == pytest.approx(0.5)
    assert b"\r\n" not in out.read_bytes()


def test_cmd_run_needs_fixed_depth(tmp_path):
    spec = _spec(hierarchy={"depth_schedule": [1, 2]})
    result = SimulationService(output=tmp_path / "x.csv").cmd_run(spec)
    assert not result["success"]
    assert not (tmp_path / "x.csv").exists()


def test_cmd_run_failure_leaves_no_file(tmp_path):
    # the Drude decomposition needs a Hermitian coupling operator
    spec = _spec(
        bath={"kind": "ohmic_drude", "params": {"chi": 0.1, "omega_c": 1.0}, "beta": 0.5},
    )
    out = tmp_path / "run.csv"
    result = SimulationService(output=out).cmd_run(spec)
    assert not result["success"]
    assert not out.exists()


def test_cmd_converge_writes_report_even_when_not_converged(tmp_path):
    out = tmp_path / "converge.json"
    spec = _spec(hierarchy={"depth_schedule": [0, 1], "tol": 1e-12})
    result = SimulationService(output=out).cmd_converge(spec)
    assert not result["success"]
    report = json.loads(out.read_text())
    assert report["converged"] is False
    assert report["chosen_depth"] is None
    assert report["pairwise_max_diffs"][0]["depth"] == 0


def test_cmd_converge_success(tmp_path):
    out = tmp_path / "converge.json"
    spec = _spec(hierarchy={"depth_schedule": [2, 4, 6], "tol": 1e-3})
    result = SimulationService(output=out).cmd_converge(spec)
    assert result["success"]
    assert json.loads(out.read_text())["chosen_depth"] in (2, 4)


def test_cmd_bcf_reports_fit(tmp_path):
    out = tmp_path / "bcf.csv"
    result = SimulationService(output=out).cmd_bcf(_spec())
    assert result["success"]
    assert result["report"]["max_abs_error"] < 1e-9
    rows = _read_csv(out)
    assert rows[0][:2] == ["t", "channel"]
    assert {row[1] for row in rows[1:]} == {"alpha", "alpha_tilde"}
    assert json.loads((tmp_path / "bcf.json").read_text())["matsubara_sweep"] == []


def test_cmd_bcf_drude_sweep(tmp_path):
    spec = _spec(
        model={"kind": "pure_dephasing", "params": {"omega_0": 1.0}},
        bath={"kind": "ohmic_drude", "params": {"chi": 0.1, "omega_c": 1.0}, "beta": 0.5},
        integrator={"dt": 0.01, "t_final": 2.0},
    )
    result = SimulationService(output=tmp_path / "bcf.csv").cmd_bcf(spec)
    assert result["success"], result["message"]
    sweep = result["report"]["matsubara_sweep"]
    assert [entry["matsubara_terms"] for entry in sweep] == [0, 1, 2]


@pytest.mark.parametrize("beta", [2.0, 5.0])
def test_cmd_bcf_low_temperature(tmp_path, beta):
    spec = _spec(
        model={"kind": "pure_dephasing", "params": {"omega_0": 1.0}},
        bath={"kind": "ohmic_drude", "params": {"chi": 0.1, "omega_c": 1.0}, "beta": beta},
        integrator={"dt": 0.01, "t_final": 2.0},
    )
    out = tmp_path / "bcf.csv"
    result = SimulationService(output=out).cmd_bcf(spec)
    assert result["success"], result["message"]
    assert np.isfinite(result["report"]["max_abs_error"])
    assert out.exists()


def test_cmd_stochastic_is_reproducible(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert SimulationService(output=first, threads=2).cmd_stochastic(_spec())["success"]
    assert SimulationService(output=second, threads=1).cmd_stochastic(_spec())["success"]
    assert first.read_bytes() == second.read_bytes()
    header = _read_csv(first)[0]
    assert header == [
        "t", "rho_ee_re", "rho_ee_re_se", "rho_eg_re", "rho_eg_re_se", "rho_eg_im", "rho_eg_im_se",
        "trace_defect", "herm_defect", "excluded",
    ]


def test_cmd_stochastic_seed_override(tmp_path):
    base, other = tmp_path / "a.csv", tmp_path / "b.csv"
    SimulationService(output=base).cmd_stochastic(_spec())
    SimulationService(output=other, seed=99).cmd_stochastic(_spec())
    assert base.read_bytes() != other.read_bytes()


def test_cmd_stochastic_needs_section(tmp_path):
    doc = json.loads(json.dumps(DECAY_DOC))
    del doc["stochastic"]
    result = SimulationService(output=tmp_path / "s.csv").cmd_stochastic(parse_config(json.dumps(doc)))
    assert not result["success"]


def test_trajectory_csv_values_match_trajectory():
    model, _, decomp, rho0 = build_inputs(_spec())
    traj = evolve(model, decomp, 2, IntegrationConfig(t_final=0.2, dt=0.1, record_stride=1, observables=["rho_ee"]), rho0)
    rows = list(csv.reader(trajectory_csv(traj, ["rho_ee"]).splitlines()))
    np.testing.assert_array_equal([float(r[1]) for r in rows[1:]], traj.observable("rho_ee").real)


# ----------------------------------------------------------------------------
# Command line
# ----------------------------------------------------------------------------


def _write_doc(tmp_path, doc):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_cli_run(tmp_path, capsys):
    config = _write_doc(tmp_path, DECAY_DOC)
    out = tmp_path / "cli.csv"
    assert heom.main(["run", str(config), "--output", str(out)]) == heom.EXIT_OK
    assert out.exists()
    assert "[DONE]" in capsys.readouterr().out


def test_cli_invalid_document(tmp_path, capsys):
    doc = json.loads(json.dumps(DECAY_DOC))
    del doc["model"]["kind"]
    config = _write_doc(tmp_path, doc)
    out = tmp_path / "cli.csv"
    assert heom.main(["run", str(config), "--output", str(out)]) == heom.EXIT_BAD_CONFIG
    assert "model.kind" in capsys.readouterr().out
    assert not out.exists()


def test_cli_malformed_document(tmp_path):
    config = tmp_path / "broken.json"
    config.write_text("{not json", encoding="utf-8")
    assert heom.main(["run", str(config)]) == heom.EXIT_BAD_CONFIG


def test_cli_converge_failure_exit_code(tmp_path):
    doc = json.loads(json.dumps(DECAY_DOC))
    doc["hierarchy"] = {"depth_schedule": [0, 1], "tol": 1e-12}
    config = _write_doc(tmp_path, doc)
    out = tmp_path / "sweep.json"
    assert heom.main(["converge", str(config), "--output", str(out)]) == heom.EXIT_FAILED
    assert out.exists()


def test_cli_log_level_from_environment(monkeypatch):
    monkeypatch.setenv("HEOM_LOG_LEVEL", "DEBUG")
    args = heom.parse_args(["validate"])
    assert args.log_level == "DEBUG"
    assert args.profile == "full"


def test_cli_threads_ignored_outside_stochastic(tmp_path, capsys):
    config = _write_doc(tmp_path, DECAY_DOC)
    out = tmp_path / "cli.csv"
    assert heom.main(["run", str(config), "--output", str(out), "--threads", "4"]) == heom.EXIT_OK
    assert "[WARN] --threads only applies to the stochastic command" in capsys.readouterr().out
    assert heom.main(["stochastic", str(config), "--output", str(tmp_path / "s.csv"), "--threads", "2"]) == heom.EXIT_OK
    assert "[WARN] --threads" not in capsys.readouterr().out
