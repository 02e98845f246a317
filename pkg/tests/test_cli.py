"""End-to-end command runs compared against direct library calls."""

import json

import numpy as np
import pytest

from bqproc import (
    CoefficientPath,
    CovariatePoint,
    OptimizerConfig,
    builtin_kernel,
    choice_prob,
    estimate_beta,
    estimate_process,
    load_dataset_csv,
    reference_dgp,
    simulate,
)
from bqproc.cli import main

GAUSS2 = builtin_kernel("gauss2")

DGP_INI = (
    "[dgp]\n"
    "name = ref\n"
    "gamma = 0.25, 1.0\n"
    "lambda = 0.5\n"
    "error = logistic\n"
    "z = -4, 4\n"
    "x1 = 0, 1\n"
)


@pytest.fixture()
def dgp_ini(tmp_path):
    path = tmp_path / "dgp.ini"
    path.write_text(DGP_INI)
    return str(path)


def test_version_and_help_exit_zero(capsys):
    assert main(["--version"]) == 0
    capsys.readouterr()
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "simulate" in out and "choiceprob" in out


def test_unknown_arguments_exit_nonzero(capsys):
    assert main(["simulate", "--bogus"]) == 1
    assert main([]) == 1


def test_simulate_matches_library(tmp_path, dgp_ini):
    out = str(tmp_path / "data.csv")
    rc = main(["simulate", "--dgp", dgp_ini, "--n", "120", "--seed", "3", "--out", out])
    assert rc == 0
    data = load_dataset_csv(out)
    want = simulate(reference_dgp(), 120, seed=3)
    assert np.array_equal(data.y, want.y)
    assert np.array_equal(data.z, want.z)
    assert np.array_equal(data.x, want.x)
    manifest = json.loads(open(out + ".manifest.json").read())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 3
    assert out in manifest["outputs"]
    assert "numpy" in manifest["versions"]


def test_seed_environment_fallback(tmp_path, dgp_ini, monkeypatch, capsys):
    out = str(tmp_path / "data.csv")
    monkeypatch.setenv("BQPROC_SEED", "37")
    assert main(["simulate", "--dgp", dgp_ini, "--n", "80", "--out", out]) == 0
    manifest = json.loads(open(out + ".manifest.json").read())
    assert manifest["seed"] == 37
    data = load_dataset_csv(out)
    want = simulate(reference_dgp(), 80, seed=37)
    assert np.array_equal(data.z, want.z)
    monkeypatch.setenv("BQPROC_SEED", "not-a-number")
    assert main(["simulate", "--dgp", dgp_ini, "--n", "80", "--out", out]) == 1
    assert "BQPROC_SEED" in capsys.readouterr().err


def test_fit_matches_library(tmp_path, dgp_ini):
    data_csv = str(tmp_path / "data.csv")
    main(["simulate", "--dgp", dgp_ini, "--n", "300", "--seed", "4", "--out", data_csv])
    out = str(tmp_path / "fit.csv")
    rc = main(
        ["fit", "--data", data_csv, "--tau", "0.5", "--h", "0.4", "--seed", "4", "--out", out]
    )
    assert rc == 0
    path = CoefficientPath.from_csv(out)
    data = load_dataset_csv(data_csv)
    s_hat, b_hat, obj, _ = estimate_beta(data, 0.5, 0.4, GAUSS2, OptimizerConfig(seed=4))
    assert path.s_hat[0] == s_hat
    assert np.array_equal(path.b_hat[0], b_hat)
    assert path.objective[0] == obj


def test_fit_rejects_bad_inputs(tmp_path, dgp_ini, capsys):
    data_csv = str(tmp_path / "data.csv")
    main(["simulate", "--dgp", dgp_ini, "--n", "100", "--seed", "1", "--out", data_csv])
    out = str(tmp_path / "fit.csv")
    rc = main(["fit", "--data", data_csv, "--tau", "1.5", "--h", "0.4", "--out", out])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("y,z,x1\n1,0.5,0.2\n0,0.1\n")
    rc = main(["fit", "--data", str(ragged), "--tau", "0.5", "--h", "0.4", "--out", out])
    assert rc == 1
    assert "line 3" in capsys.readouterr().err


def test_process_matches_library(tmp_path, dgp_ini):
    data_csv = str(tmp_path / "data.csv")
    main(["simulate", "--dgp", dgp_ini, "--n", "400", "--seed", "6", "--out", data_csv])
    out = str(tmp_path / "path.csv")
    rc = main(
        [
            "process",
            "--data",
            data_csv,
            "--taus",
            "0.4:0.6:5",
            "--h",
            "0.45",
            "--seed",
            "6",
            "--out",
            out,
        ]
    )
    assert rc == 0
    got = CoefficientPath.from_csv(out)
    data = load_dataset_csv(data_csv)
    want = estimate_process(data, np.linspace(0.4, 0.6, 5), 0.45, GAUSS2, OptimizerConfig(seed=6))
    assert np.array_equal(got.taus, want.taus)
    assert np.array_equal(got.s_hat, want.s_hat)
    assert np.array_equal(got.b_hat, want.b_hat)
    assert np.array_equal(got.objective, want.objective)


def test_choiceprob_outputs_estimates(tmp_path, dgp_ini):
    data_csv = str(tmp_path / "data.csv")
    main(["simulate", "--dgp", dgp_ini, "--n", "500", "--seed", "8", "--out", data_csv])
    path_csv = str(tmp_path / "path.csv")
    main(
        [
            "process",
            "--data",
            data_csv,
            "--taus",
            "0.25:0.75:21",
            "--h",
            "0.4",
            "--seed",
            "8",
            "--out",
            path_csv,
        ]
    )
    out = str(tmp_path / "probs.csv")
    rc = main(
        [
            "choiceprob",
            "--path",
            path_csv,
            "--w=-0.8,1.0,0.5",
            "--w=-1.0,1.0,0.25",
            "--a",
            "0.3",
            "--b",
            "0.7",
            "--out",
            out,
        ]
    )
    assert rc == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "z,x_1,x_2,p_hat,tau_w_hat,se_hat,n_sign_changes"
    assert len(lines) == 3
    path = CoefficientPath.from_csv(path_csv)
    est = choice_prob(path, CovariatePoint(z=-0.8, x=np.array([1.0, 0.5])), 0.3, 0.7)
    first = lines[1].split(",")
    assert float(first[3]) == est.p_hat
    assert float(first[4]) == est.tau_w_hat
    assert first[5] == ""
    assert int(first[6]) == est.n_sign_changes


def test_choiceprob_oracle_se(tmp_path, dgp_ini):
    data_csv = str(tmp_path / "data.csv")
    main(["simulate", "--dgp", dgp_ini, "--n", "2000", "--seed", "9", "--out", data_csv])
    path_csv = str(tmp_path / "path.csv")
    main(
        [
            "process",
            "--data",
            data_csv,
            "--taus",
            "0.25:0.75:21",
            "--h",
            "0.3",
            "--seed",
            "9",
            "--out",
            path_csv,
        ]
    )
    out = str(tmp_path / "probs.csv")
    rc = main(
        [
            "choiceprob",
            "--path",
            path_csv,
            "--w=-0.8,1.0,0.5",
            "--dgp",
            dgp_ini,
            "--n",
            "2000",
            "--h",
            "0.3",
            "--out",
            out,
        ]
    )
    assert rc == 0
    row = open(out).read().strip().splitlines()[1].split(",")
    assert float(row[3 + 2]) > 0.0


def test_mc_command_reproducible(tmp_path, dgp_ini):
    ini = tmp_path / "exp.ini"
    ini.write_text(
        DGP_INI
        + "[experiment]\n"
        + "n_values = 60\n"
        + "n_reps = 3\n"
        + "taus = 0.35:0.65:7\n"
        + "seed = 2\n"
        + "a = 0.4\n"
        + "b = 0.6\n"
        + "w_points = -0.8, 1.0, 0.5\n"
    )
    out = str(tmp_path / "raw.csv")
    summary = str(tmp_path / "summary.csv")
    rc = main(
        ["mc", "--config", str(ini), "--out", out, "--summary", summary, "--n-starts", "2"]
    )
    assert rc == 0
    first_raw = open(out, "rb").read()
    first_probs = open(out.replace("raw.csv", "raw_probs.csv"), "rb").read()
    first_summary = open(summary, "rb").read()
    coef_lines = first_raw.decode().strip().splitlines()
    assert len(coef_lines) == 1 + 3 * 7
    rc = main(
        ["mc", "--config", str(ini), "--out", out, "--summary", summary, "--n-starts", "2"]
    )
    assert rc == 0
    assert open(out, "rb").read() == first_raw
    assert open(out.replace("raw.csv", "raw_probs.csv"), "rb").read() == first_probs
    assert open(summary, "rb").read() == first_summary


def test_validate_kernel_report_and_exit_codes(tmp_path):
    out = str(tmp_path / "report.csv")
    assert main(["validate-kernel", "--kernel", "gauss4", "--out", out]) == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "statistic,value,target"
    # an absurd tolerance makes the quadrature residuals count as failures
    assert main(["validate-kernel", "--kernel", "gauss4", "--tol", "1e-30", "--out", out]) == 2
