import json
import subprocess
import sys

import pytest

from kea.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-synthetic", "--out", str(root / "data"), "--n-train", "40", "--n-dev", "12",
                 "--n-test", "12", "--classes", "3", "--seq-len", "5"]) == 0
    cfg = {"dataset": "synthetic", "data_path": str(root / "data"), "l_pad": 8, "max_epochs": 3,
           "patience": 2, "batch_size": 8, "lr": 0.005, "seeds": [1, 2],
           "encoder": {"l_c": 8, "layers": 1, "heads": 2, "max_len": 12, "min_freq": 1}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def test_train_eval_predict_report(workspace, capsys):
    out = workspace / "train"
    assert main(["train", "--config", str(workspace / "cfg.json"), "--seed", "3", "--out", str(out)]) == 0
    info = json.loads(capsys.readouterr().out)
    ckpt = info["checkpoint"]
    assert main(["eval", "--checkpoint", ckpt, "--split", "validation"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["metrics"]["top1"] == info["best_score"]
    assert main(["predict", "--checkpoint", ckpt, "--text", "hello there", "--top", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and lines[0].startswith("class")
    assert main(["report", "--checkpoint", ckpt, "--labels", "class0,class2", "--csv"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "gold\\pred,class0,class2"
    assert main(["export-embeddings", "--checkpoint", ckpt, "--split", "test", "--out",
                 str(workspace / "cache")]) == 0
    assert len((workspace / "cache" / "manifest.tsv").read_text().splitlines()) == 12


def test_run_with_overrides_and_report(workspace, capsys):
    out = workspace / "run"
    assert main(["run", "--config", str(workspace / "cfg.json"), "--set", "variant=k_concat",
                 "--seed", "4", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    report = json.loads((out / "report.json").read_text())
    assert report["seeds"] == [4] and report["config"]["variant"] == "k_concat"
    assert set(summary["test"]) == set(report["aggregate"]["test"])
    assert main(["report", "--report", str(out / "report.json"), "--labels", "class1,class0"]) == 0
    assert "class1" in capsys.readouterr().out


def test_errors_exit_nonzero(workspace, capsys):
    assert main(["eval", "--checkpoint", str(workspace / "missing.keac")]) == 2
    assert main(["run", "--config", str(workspace / "cfg.json"), "--set", "lr=-1"]) == 2
    assert "error:" in capsys.readouterr().err


def test_convert_eil(fixtures, tmp_path, capsys):
    assert main(["convert-eil", str(fixtures / "lexicons" / "eil_long.txt"), str(tmp_path / "w.tsv")]) == 0
    assert "words written" in capsys.readouterr().out
    assert (tmp_path / "w.tsv").read_text().splitlines()[0].split("\t")[1] == "anger"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "kea", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "eval", "run", "predict", "export-embeddings", "gen-synthetic", "report"):
        assert cmd in proc.stdout
