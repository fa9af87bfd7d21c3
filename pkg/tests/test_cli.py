import json
import subprocess
import sys

import pytest

from rmstborrow.cli import main
from rmstborrow.data import load_dataset
from rmstborrow.estimator import EstimatorOptions, estimate
from rmstborrow.simulation import SimulationConfig, simulate

SIM = ["--setting", "1", "--n-trial", "120", "--n-external", "100", "--n-treated", "60"]


def _run(*argv, stdin=None):
    return subprocess.run([sys.executable, "-m", "rmstborrow.cli", *argv], input=stdin,
                          capture_output=True, text=True, check=False)


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.csv"
    assert main(["simulate", *SIM, "--seed", "4", "--out", str(path)]) == 0
    return path


def test_simulate_matches_library(data_csv):
    ds = simulate(SimulationConfig(setting=1, n_trial=120, n_external=100, n_treated=60, seed=4))
    back = load_dataset(data_csv)
    assert back.records == ds.records


def test_estimate_happy_path(data_csv, tmp_path):
    out = tmp_path / "r.json"
    infl = tmp_path / "infl.csv"
    sel = tmp_path / "sel.csv"
    code = main(["estimate", "--input", str(data_csv), "--tau", "2", "--kind", "adapt", "--seed", "7",
                 "--n-boot", "3", "--out", str(out), "--influence", str(infl), "--selection-report", str(sel)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["kind"] == "adapt" and report["seed"] == 7 and report["tau"] == 2.0
    assert infl.read_text().startswith("id,phi1,phi0_full,phi0_rct,phi0_sel,psi\n")
    assert sel.read_text().startswith("id,xi,b_tilde,selected\n")
    assert len(sel.read_text().splitlines()) == 101


def test_unknown_kind_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--kind", "bogus"])
    assert exc.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_unknown_flag():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--frobnicate"])
    assert exc.value.code == 2


def test_runtime_error_exit_status(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,y,delta\ns1,1,1\n")
    assert main(["estimate", "--input", str(bad)]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_input(tmp_path):
    assert main(["estimate", "--input", str(tmp_path / "none.csv")]) == 1


def test_help():
    res = _run("--help")
    assert res.returncode == 0
    for cmd in ("simulate", "estimate", "benchmark", "prss"):
        assert cmd in res.stdout


def test_pipe_matches_library():
    sim = _run("simulate", *SIM, "--seed", "12")
    assert sim.returncode == 0
    est = _run("estimate", "--kind", "aipw", "--seed", "3", "--n-boot", "2", stdin=sim.stdout)
    assert est.returncode == 0, est.stderr
    ds = simulate(SimulationConfig(setting=1, n_trial=120, n_external=100, n_treated=60, seed=12))
    lib = estimate(ds, "aipw", EstimatorOptions(n_boot=2), seed=3)
    assert est.stdout == lib.to_json() + "\n"


def test_benchmark_command(tmp_path):
    out = tmp_path / "m.csv"
    code = main(["benchmark", "--setting", "1", "--n-external", "120", "--n-treated", "60", "--n0", "60",
                 "--replications", "2", "--n-boot", "2", "--estimators", "aipw,adapt", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "setting,estimator,n0,bias,se,rmse,coverage,type1,power,borrow_frac,rel_ci_width"
    assert [ln.split(",")[1] for ln in lines[1:]] == ["aipw", "adapt"]


def test_benchmark_bad_estimator():
    assert main(["benchmark", "--estimators", "psrwe", "--replications", "1"]) == 1


def test_prss_command(data_csv, tmp_path):
    out = tmp_path / "p.csv"
    code = main(["prss", "--input", str(data_csv), "--sizes", "30", "--repeats", "2", "--n-boot", "2",
                 "--thresholds", "0,-0.1", "--taus", "1.5,2", "--out", str(out)])
    assert code == 0
    assert len(out.read_text().splitlines()) == 1 + 2 * 2 * 2


def test_prss_oversize(data_csv):
    assert main(["prss", "--input", str(data_csv), "--sizes", "500", "--repeats", "1", "--n-boot", "2"]) == 1


def test_threads_flag_validated():
    with pytest.raises(SystemExit):
        main(["simulate", "--threads", "0"])
