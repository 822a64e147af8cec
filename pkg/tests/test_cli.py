import json
import os
import re

import pandas as pd
import pytest

import cli

ATTACK_TOML = """
[aia]
n_iter = 1
size_raw_t = 120
size_syn_t = 120
n_synth = 2
bootstrap_size = 60
"""


@pytest.fixture(autouse=True)
def no_tracking(monkeypatch):
    for name in ("TVINE_TRACKING", "TVINE_JOBS", "TVINE_SEED", "TVINE_MLFLOW_URI"):
        monkeypatch.delenv(name, raising=False)


def run(*argv):
    return cli.main([str(a) for a in argv])


def pipeline(out_dir, config):
    assert run("simulate", "--n", 200, "--seed", 3, "--out-dir", out_dir) == 0
    train = os.path.join(out_dir, "train.csv")
    test = os.path.join(out_dir, "test.csv")
    order = os.path.join(out_dir, "order.json")
    assert run("order", train, "--sensitive", "x6", "--out-dir", out_dir) == 0
    assert run("fit", train, "--order", order, "--t-max", 2, "--seed", 3, "--out-dir", out_dir) == 0
    assert run(
        "sweep", train, test, "--order", order, "--truncations", "1,2", "--privacy", "mab",
        "--sensitive", "x6", "--targets", "random", "--n-targets", 1, "--n-rep", 2,
        "--config", config, "--seed", 3, "--out-dir", out_dir,
    ) == 0


@pytest.fixture(scope="module")
def attack_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "attack.toml"
    path.write_text(ATTACK_TOML)
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, attack_config):
    out = str(tmp_path_factory.mktemp("run_a"))
    pipeline(out, attack_config)
    return out


def test_pipeline_artifacts(run_dir):
    for name in ("train.csv", "test.csv", "order.json", "model.json", "sweep.csv",
                 "tau_t1.csv", "tau_t2.csv", "privacy_utility.svg", "run_manifest.json"):
        assert os.path.exists(os.path.join(run_dir, name)), name
    assert len(pd.read_csv(os.path.join(run_dir, "train.csv"))) == 200
    assert len(pd.read_csv(os.path.join(run_dir, "test.csv"))) == 50
    order = json.load(open(os.path.join(run_dir, "order.json")))
    assert order["order"][0] == 5
    manifest = json.load(open(os.path.join(run_dir, "run_manifest.json")))
    assert manifest["command"] == "sweep"
    assert manifest["base_seed"] == 3
    assert "sweep.csv" in manifest["outputs"]


def test_pipeline_is_bitwise_reproducible(run_dir, attack_config, tmp_path):
    again = str(tmp_path / "run_b")
    pipeline(again, attack_config)
    names = sorted(n for n in os.listdir(run_dir) if n != "run_manifest.json")
    assert names == sorted(n for n in os.listdir(again) if n != "run_manifest.json")
    for name in names:
        with open(os.path.join(run_dir, name), "rb") as a, open(os.path.join(again, name), "rb") as b:
            assert a.read() == b.read(), name


def test_sample_fidelity_and_summary(run_dir, tmp_path, capsys):
    model = os.path.join(run_dir, "model.json")
    out = str(tmp_path)
    assert run("sample", model, "--truncate", 1, "-n", 150, "--out-dir", out) == 0
    synthetic = os.path.join(out, "synthetic.csv")
    assert len(pd.read_csv(synthetic)) == 150
    assert run("fidelity", os.path.join(run_dir, "train.csv"), synthetic, "--out-dir", out) == 0
    report = json.load(open(os.path.join(out, "fidelity.json")))
    assert 0.0 <= report["integrated_precision"] <= 1.0
    assert run("summary", model) == 0
    assert "tree  1  root y" in capsys.readouterr().out
    assert run("summary", model, "--edges") == 0
    # the response edges of tree 1 carry no conditioning set
    assert re.search(r"^\s+x\d+,y\s+\w+", capsys.readouterr().out, re.MULTILINE)


def test_split_command(run_dir, tmp_path):
    assert run("split", os.path.join(run_dir, "train.csv"), "--test-fraction", 0.25, "--out-dir", tmp_path) == 0
    assert len(pd.read_csv(tmp_path / "train.csv")) == 150
    assert len(pd.read_csv(tmp_path / "test.csv")) == 50


def test_aia_attack_command(run_dir, attack_config, tmp_path):
    code = run(
        "attack", "aia", os.path.join(run_dir, "train.csv"), "--order", os.path.join(run_dir, "order.json"),
        "--sensitive", "x6", "--targets", "random", "--n-targets", 2, "--t-max", 1,
        "--config", attack_config, "--out-dir", tmp_path,
    )
    assert code == 0
    report = json.load(open(tmp_path / "aia_report.json"))
    assert report["sensitive_name"] == "x6"
    assert report["wcab"] >= report["mab"]
    assert len(pd.read_csv(tmp_path / "aia_iterations.csv")) == 2


def test_usage_errors_exit_2(run_dir, tmp_path):
    train = os.path.join(run_dir, "train.csv")
    assert run("frobnicate") == 2
    assert run("simulate", "--n", 0, "--out-dir", tmp_path) == 2
    assert run(
        "sweep", train, train, "--order", os.path.join(run_dir, "order.json"), "--truncations", "1,x",
        "--sensitive", "x6", "--out-dir", tmp_path,
    ) == 2
    assert run("sample", os.path.join(run_dir, "model.json"), "--truncate", 5, "--out-dir", tmp_path) == 2


def test_data_errors_exit_3(run_dir, tmp_path):
    assert run("order", tmp_path / "absent.csv", "--out-dir", tmp_path) == 3
    train = os.path.join(run_dir, "train.csv")
    assert run("order", train, "--sensitive", "x99", "--out-dir", tmp_path) == 3
    bad_order = tmp_path / "order.json"
    bad_order.write_text(json.dumps({"order": [0, 1]}))
    assert run("fit", train, "--order", bad_order, "--out-dir", tmp_path) == 3
    broken_model = tmp_path / "model.json"
    broken_model.write_text("{}")
    assert run("summary", broken_model) == 3
