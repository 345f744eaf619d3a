import json

from srcis import memory as mem
from srcis.cli import main
from srcis.errors import ValidationError

SMALL = ["--n-classes", "4", "--n-tasks", "2", "--input-dim", "6", "--train-per-class", "20",
         "--test-per-class", "10", "--embed-dim", "12", "--lr", "0.05", "--m", "2",
         "--nm-max-evals", "20"]


def test_run_inspect_eval(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run", "--out-dir", str(out), "--oracle", "truth", *SMALL]) == 0
    assert "ACC_T=" in capsys.readouterr().out
    ck = out / "checkpoint.json"
    assert main(["inspect", str(ck)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["seen_classes"] == [0, 1, 2, 3]
    assert info["parameter_floats"] == mem.load(ck).parameter_float_count()
    assert main(["eval", str(ck), "--config", str(out / "run.json")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert len(res["accuracy"]) == 2 and 0 <= res["acc"] <= 1


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_classes": 4, "n_tasks": 2, "input_dim": 6, "train_per_class": 10,
                               "test_per_class": 5, "mode": "sequential"}))
    out = tmp_path / "r"
    assert main(["run", "--config", str(cfg), "--mode", "no-restructure", "--out-dir", str(out)]) == 0
    assert json.loads((out / "run.json").read_text())["config"]["mode"] == "no-restructure"


def test_gen(tmp_path, capsys):
    path = tmp_path / "d.csv"
    assert main(["gen", "-o", str(path), *SMALL]) == 0
    lines = path.read_text().splitlines()
    assert lines[0].startswith("label,f0") and len(lines) == 1 + 4 * 30


def test_errors_exit_codes(tmp_path, capsys, monkeypatch):
    assert main(["inspect", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["inspect", str(bad)]) == 1
    assert "line 1" in capsys.readouterr().err

    def boom(*a, **k):
        raise ValidationError("replay failed")

    monkeypatch.setattr("srcis.harness.restructure", boom)
    assert main(["run", "--out-dir", str(tmp_path / "o"), *SMALL]) == 2
