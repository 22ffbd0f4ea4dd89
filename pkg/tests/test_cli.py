import json

import numpy as np
import pytest

from dmlboot.cli import main
from dmlboot.core import Dataset
from dmlboot.dgp import DgpSpec, generate


@pytest.fixture
def plr_csv(tmp_path):
    data, _ = generate(DgpSpec("plr_linear", dim_x=3), 200, seed=0)
    path = tmp_path / "plr.csv"
    data.to_csv(path)
    return path


def test_fit_writes_json(plr_csv, tmp_path, capsys):
    out = tmp_path / "fit"
    code = main(["fit", "--data", str(plr_csv), "--outcome", "y", "--treatment", "d",
                 "--learner", "ridge", "--K", "4", "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "fit.json").read_text())
    assert abs(payload["theta_hat"][0] - 1.5) < 0.5
    assert payload["wald"]["method"] == "wald"


def test_bootstrap_intervals(plr_csv, tmp_path):
    out = tmp_path / "boot"
    code = main(["bootstrap", "--data", str(plr_csv), "--outcome", "y", "--treatment", "d",
                 "--learner", "lasso", "--K", "2", "--scheme", "bayesian", "--B", "60", "--seed", "4",
                 "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "bootstrap.json").read_text())
    assert [ci["method"] for ci in payload["intervals"]] == ["wald", "percentile", "basic", "studentized"]
    assert payload["bootstrap"]["B"] == 60


def test_config_errors_exit_2(plr_csv, tmp_path):
    assert main(["fit", "--data", str(plr_csv), "--outcome", "nope"]) == 2
    assert main(["fit", "--data", str(plr_csv), "--outcome", "y", "--K", "7", "--score", "mean"]) == 2
    assert main(["bogus"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("study: coverage\nn_grid: [101]\nK: 4\n")
    assert main(["simulate", "coverage", "--config", str(bad)]) == 2
    assert main(["simulate", "coverage", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_numerical_failure_exit_3(tmp_path):
    # treatment identical to its own nuisance prediction: the PLR Jacobian vanishes
    rng = np.random.default_rng(0)
    path = tmp_path / "flat.csv"
    Dataset.from_arrays(rng.normal(size=20), np.full(20, 2.0)).to_csv(path)
    assert main(["fit", "--data", str(path), "--outcome", "y", "--treatment", "d",
                 "--covariates", "", "--learner", "ridge", "--K", "2"]) == 3


def test_simulate_worker_count_does_not_change_csv(tmp_path):
    cfg = tmp_path / "sim.yaml"
    cfg.write_text("dgp: {kind: mean_only, theta0: 0.0}\nn_grid: [80]\nB: 60\nM: 12\n")
    outs = []
    for workers in ("1", "2"):
        out = tmp_path / f"w{workers}"
        assert main(["simulate", "consistency", "--config", str(cfg), "--seed", "5",
                     "--workers", workers, "--out", str(out)]) == 0
        outs.append((out / "report.csv").read_bytes())
    assert outs[0] == outs[1]


def test_rates_subcommand(tmp_path):
    cfg = tmp_path / "rates.yaml"
    cfg.write_text("n_grid: [10, 100, 1000]\nschemes: [efron, 'delete_h:0.5']\nM: 50\n")
    assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    assert "an_sqrt_n" in (tmp_path / "r" / "report.csv").read_text()
