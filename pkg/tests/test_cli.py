import json
from pathlib import Path

import pytest

from partsim.cli import main
from partsim.model import ModelConfig, config_to_json

SMALL_CFG = ModelConfig(partitions=2, fine_pairs=4, rounds=2, gin_dims=(8, 8), match_dim=8, mlp_hidden=4)


@pytest.fixture(scope="module")
def ds_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    rc = main(["gen", "--n", "10", "--basics", "2", "--trims", "6", "--seed", "7", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "model.json"
    p.write_bytes(config_to_json(SMALL_CFG))
    return p


def test_gen_layout(ds_dir):
    assert (ds_dir / "manifest.json").is_file()
    assert (ds_dir / "pairs.csv").is_file()
    assert (ds_dir / "splits.json").is_file()
    assert len(list((ds_dir / "graphs").glob("*.json"))) == 8


def test_gen_deterministic(ds_dir, tmp_path):
    out2 = tmp_path / "ds2"
    assert main(["gen", "--n", "10", "--basics", "2", "--trims", "6", "--seed", "7", "--out", str(out2)]) == 0
    for name in ("manifest.json", "pairs.csv", "splits.json"):
        assert (out2 / name).read_bytes() == (ds_dir / name).read_bytes()


def test_gen_rejects_uneven_trims(tmp_path, capsys):
    rc = main(["gen", "--n", "10", "--basics", "2", "--trims", "5", "--seed", "0", "--out", str(tmp_path / "x")])
    assert rc == 1


def test_partition_stdout(ds_dir, capsys):
    rc = main(["partition", "--graph", str(ds_dir / "graphs" / "g000.json"), "--k", "2", "--seed", "5"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["k"] == 2 and len(doc["communities"]) == 2


def test_partition_bad_k(ds_dir, capsys):
    # k larger than the graph: inner validation, a data error
    rc = main(["partition", "--graph", str(ds_dir / "graphs" / "g000.json"), "--k", "99", "--seed", "0"])
    assert rc == 2
    # k=0 is a flag error
    rc = main(["partition", "--graph", str(ds_dir / "graphs" / "g000.json"), "--k", "0", "--seed", "0"])
    assert rc == 1


def test_ged_identity_line(ds_dir, capsys):
    g = str(ds_dir / "graphs" / "g000.json")
    rc = main(["ged", "--g1", g, "--g2", g, "--method", "exact"])
    assert rc == 0
    assert capsys.readouterr().out.strip() == "ged 0, sim 1.0"


@pytest.mark.parametrize("method", ["hungarian", "vj", "beam"])
def test_ged_methods_run(ds_dir, method, capsys):
    g1 = str(ds_dir / "graphs" / "g000.json")
    g2 = str(ds_dir / "graphs" / "g001.json")
    assert main(["ged", "--g1", g1, "--g2", g2, "--method", method]) == 0
    assert capsys.readouterr().out.startswith("ged ")


def test_missing_file_is_data_error(capsys):
    assert main(["ged", "--g1", "absent.json", "--g2", "absent.json"]) == 2


def test_malformed_graph_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["partition", "--graph", str(bad), "--k", "2", "--seed", "0"]) == 2


def test_usage_errors(capsys):
    assert main(["nosuchcommand"]) == 1
    assert main(["ged"]) == 1  # missing required flags
    assert main([]) == 1
    assert main(["--help"]) == 0


@pytest.fixture(scope="module")
def run_dir(ds_dir, cfg_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    rc = main(
        [
            "train",
            "--dataset", str(ds_dir),
            "--model-config", str(cfg_path),
            "--batch-size", "8",
            "--iterations", "20",
            "--val-every", "10",
            "--seed", "1",
            "--out", str(out),
        ]
    )
    assert rc == 0
    return out


def test_train_artifacts(run_dir):
    assert (run_dir / "checkpoint.json").is_file()
    history = (run_dir / "history.csv").read_text().strip().splitlines()
    assert history[0] == "iteration,train_loss,val_loss"
    assert len(history) == 21
    cfg = json.loads((run_dir / "model_config.json").read_text())
    assert cfg["partitions"] == 2


def test_eval_report(ds_dir, run_dir, tmp_path, capsys):
    rep = tmp_path / "rep"
    rc = main(["eval", "--dataset", str(ds_dir), "--checkpoint", str(run_dir / "checkpoint.json"), "--report", str(rep)])
    assert rc == 0
    lines = (rep / "report.csv").read_text().strip().splitlines()
    assert lines[0] == "metric,value,units"
    doc = json.loads((rep / "report.json").read_text())
    assert doc["mse"] >= 0.0


def test_rank_report(ds_dir, run_dir, tmp_path, capsys):
    rep = tmp_path / "rank"
    rc = main(
        [
            "rank",
            "--dataset", str(ds_dir),
            "--checkpoint", str(run_dir / "checkpoint.json"),
            "--k", "2",
            "--report", str(rep),
        ]
    )
    assert rc == 0
    per = (rep / "per_query.csv").read_text().strip().splitlines()
    assert per[0] == "query,rho,tau,p@2"
    assert len(per) >= 2


def test_bench_csv(cfg_path, tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = main(
        [
            "bench",
            "--n", "20",
            "--pairs", "3",
            "--model-config", str(cfg_path),
            "--seed", "3",
            "--out", str(out),
        ]
    )
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "variant,fine_pairs,mean_ms,prop_steps"
    rows = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
    assert rows["coarse"][3] == "0"
    assert int(rows["full"][3]) == 3 * 4 * 2  # pairs * fine_pairs * rounds


def test_gradcheck_passes(cfg_path, capsys):
    rc = main(["gradcheck", "--nodes", "6", "--model-config", str(cfg_path), "--seed", "2"])
    assert rc == 0
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_tight_tolerance_fails(cfg_path, capsys):
    rc = main(["gradcheck", "--nodes", "5", "--model-config", str(cfg_path), "--tol", "1e-14"])
    assert rc == 3


def test_out_root_reroots_relative_outputs(ds_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PARTSIM_OUT_ROOT", str(tmp_path))
    monkeypatch.chdir(tmp_path)
    rc = main(["partition", "--graph", str(ds_dir / "graphs" / "g000.json"), "--k", "2", "--seed", "5", "--out", "sub/part.json"])
    assert rc == 0
    assert (tmp_path / "sub" / "part.json").is_file()


def test_out_root_leaves_absolute_paths(ds_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PARTSIM_OUT_ROOT", str(tmp_path / "elsewhere"))
    target = tmp_path / "abs.json"
    rc = main(["partition", "--graph", str(ds_dir / "graphs" / "g000.json"), "--k", "2", "--seed", "5", "--out", str(target)])
    assert rc == 0
    assert target.is_file()
    assert not (tmp_path / "elsewhere").exists()


def test_no_tmp_leftovers(run_dir):
    assert list(run_dir.glob("*.tmp")) == []
