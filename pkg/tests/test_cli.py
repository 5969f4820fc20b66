import json
import math
import os

import numpy as np
import pytest

from ghzbayes.cli import (ExperimentSpec, ResultRecord, main, mse_curve, run)
from ghzbayes.adaptive import bmse, new_plan
from ghzbayes.oqi import oqi_prior_for, solve_oqi
from ghzbayes.partitions import Partition
from ghzbayes.prior import gaussian_prior


def _body(path):
    with open(path, "rb") as handle:
        return [line for line in handle.read().splitlines()
                if not line.startswith(b"# generated")]


def test_partitions_command_lists_all(capsys):
    assert main(["partitions", "--n", "4"]) == 0
    out = capsys.readouterr().out
    assert "count = 4" in out


def test_partitions_csv_and_ranking(tmp_path, capsys):
    path = tmp_path / "parts.csv"
    assert main(["partitions", "--n", "6", "--delta-phi", "0.5",
                 "--out", str(path)]) == 0
    capsys.readouterr()
    rows = [line for line in path.read_text().splitlines()
            if not line.startswith("#")]
    assert rows[0] == "partition,bound"
    assert len(rows) == 1 + 6  # count_partitions(6)
    bounds = [float(r.split(",")[1]) for r in rows[1:]]
    assert bounds == sorted(bounds)


def test_csv_bodies_are_byte_identical(tmp_path, capsys):
    args = ["plateau", "--delta-phi", "0.5:1.2:lin4"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    capsys.readouterr()
    assert _body(a) == _body(b)


def test_clock_oqc_csv_columns(tmp_path, capsys):
    path = tmp_path / "clock.csv"
    assert main(["clock", "--protocol", "oqc", "--n-atoms", "100",
                 "--tau", "1,10", "--out", str(path)]) == 0
    capsys.readouterr()
    rows = [line for line in path.read_text().splitlines()
            if not line.startswith("#")]
    assert rows[0] == "tau,T_opt,sigma_y,protocol,N"
    tau, t_opt, sigma, name, n = rows[1].split(",")
    assert name == "oqc" and n == "100"
    assert float(sigma) == pytest.approx(math.pi / (100.0 * float(tau)),
                                         rel=1e-9)


def test_missing_required_parameter_is_exit_2(capsys):
    assert main(["optimize", "--n", "6"]) == 2
    err = capsys.readouterr().err
    assert "optimize.delta_phi" in err


def test_domain_error_is_exit_2(capsys):
    assert main(["oqi", "--n", "4", "--delta-phi", "-0.5"]) == 2
    assert "delta_phi" in capsys.readouterr().err


def test_budget_flag_is_exit_3(capsys):
    code = main(["partitions", "--n", "12", "--budget", "3"])
    assert code == 3
    assert "budget_ok = False" in capsys.readouterr().out


def test_config_file_merging(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[oqi]\ndelta_phi = 0.7\n[global]\nseed = 5\n")
    assert main(["oqi", "--n", "6", "--config", str(cfg)]) == 0
    capsys.readouterr()


def test_json_output_records_resolved_parameters(capsys):
    assert main(["oqi", "--n", "6", "--delta-phi", "0.7", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["spec"]["command"] == "oqi"
    params = payload["spec"]["parameters"]
    assert params["delta_phi"] == 0.7 and params["seed"] == 0
    assert payload["record"]["outputs"]["bmse"] > 0.0


def test_optimize_gain_db_invariant(capsys):
    assert main(["optimize", "--n", "5", "--delta-phi", "0.7",
                 "--restarts", "1", "--max-steps", "200", "--json"]) == 0
    record = json.loads(capsys.readouterr().out)["record"]
    outputs = record["outputs"]
    assert outputs["gain_db"] == pytest.approx(
        10.0 * math.log10(outputs["gain"]), abs=1e-9)
    assert outputs["bmse"] < outputs["css_bmse"] * 1.2


def test_optimize_fixed_partition_mismatch_is_exit_2(capsys):
    assert main(["optimize", "--n", "6", "--delta-phi", "0.7",
                 "--partition", "1x4"]) == 2
    capsys.readouterr()


def test_sweep_prior_manifest_resume(tmp_path, capsys):
    manifest = tmp_path / "sweep.json"
    args = ["sweep-prior", "--n", "5", "--delta-phi", "0.5,0.8",
            "--mode", "rank", "--restarts", "1", "--max-steps", "200",
            "--manifest", str(manifest)]
    assert main(args) == 0
    first = json.loads(manifest.read_text())
    assert len(first["points"]) == 2
    assert main(args) == 0
    capsys.readouterr()
    again = json.loads(manifest.read_text())
    assert again == first


def test_unknown_command_rejected():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_threads_guard(monkeypatch, capsys):
    monkeypatch.setenv("GHZBAYES_THREADS", "zero")
    assert main(["partitions", "--n", "4"]) == 2
    assert "GHZBAYES_THREADS" in capsys.readouterr().err
    monkeypatch.setenv("GHZBAYES_THREADS", "1")
    assert main(["partitions", "--n", "4"]) == 0
    capsys.readouterr()


def test_gnuplot_companion_script(tmp_path, capsys):
    path = tmp_path / "curve.csv"
    assert main(["plateau", "--delta-phi", "0.5,0.9", "--out", str(path),
                 "--gnuplot"]) == 0
    capsys.readouterr()
    script = (tmp_path / "curve.csv.gp").read_text()
    assert "set datafile separator ','" in script
    assert "plot" in script


def test_run_api_round_trip():
    spec = ExperimentSpec(command="plateau",
                          parameters={"delta_phi": "0.7", "which": "both"})
    record = run(spec)
    assert isinstance(record, ResultRecord)
    assert record.curves["plateau"]["plateau_sql"][0] > 0.0
    with pytest.raises(ValueError):
        ExperimentSpec(command="nope", parameters={})


def test_mse_curve_dispatch_consistency():
    prior = gaussian_prior(0.7, max_frequency=4.0)
    plan = new_plan(Partition.from_text("1x2+2x1"), prior)
    phi = prior.nodes
    plan_curve = mse_curve(plan, prior, phi)
    assert float(prior.pweights @ plan_curve) == pytest.approx(
        bmse(plan), rel=1e-9)
    css_curve = mse_curve(3, prior, phi)
    assert float(prior.pweights @ css_curve) > 0.0
    oqi = solve_oqi(3, oqi_prior_for(3, 0.7))
    oqi_curve = mse_curve(oqi, prior, phi)
    assert float(prior.pweights @ oqi_curve) == pytest.approx(oqi.bmse,
                                                              rel=0.05)
    with pytest.raises(ValueError):
        mse_curve("what", prior, phi)
