import csv
import json
import subprocess
import sys

import pytest

from uegr.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY, main
from uegr.config import RunConfig, parse_config

FAST = "epochs = 2\nsynth_n_examples = 120\nreport_eps = 0.1\nablate_seeds = 2\n"


@pytest.fixture
def work(tmp_path):
    (tmp_path / "fast.cfg").write_text(FAST)
    assert main(["gen-data", "--config", str(tmp_path / "fast.cfg"), str(tmp_path / "d.tsv")]) == EXIT_OK
    return tmp_path


def run(work, *args):
    return main([args[0], "--config", str(work / "fast.cfg"), *args[1:]])


def test_dump_defaults_round_trip(capsys):
    assert main(["--dump-defaults"]) == EXIT_OK
    assert parse_config(capsys.readouterr().out) == RunConfig()


def test_train_then_eval_at_zero_matches_report(work):
    assert run(work, "train", "--out", str(work / "run"), str(work / "d.tsv")) == EXIT_OK
    for name in ("checkpoint.json", "train_report.json", "run_meta.json", "steps.csv", "resolved_config.txt"):
        assert (work / "run" / name).exists()
    assert "seed = 0" in (work / "run" / "resolved_config.txt").read_text()
    rc = run(work, "eval", "--out", str(work / "ev"), "--eps", "0,0.1",
             "--reference", str(work / "run" / "checkpoint.json"),
             str(work / "run" / "checkpoint.json"), str(work / "d.tsv"))
    assert rc == EXIT_OK
    ev = json.loads((work / "ev" / "eval_report.json").read_text())
    rep = json.loads((work / "run" / "train_report.json").read_text())
    assert ev["adversarial_accuracy"]["0.0"] == ev["clean_accuracy"] == rep["epochs"][-1]["clean_accuracy"]
    assert set(ev["cka"]) == {"pooled", "fc1", "fc2"}
    rows = list(csv.DictReader((work / "ev" / "eval.csv").open()))
    assert [r["epsilon"] for r in rows] == ["0.0", "0.1"]


def test_seed_override_changes_run(work):
    run(work, "train", "--out", str(work / "a"), str(work / "d.tsv"))
    main(["train", "--config", str(work / "fast.cfg"), "--seed", "5", "--out", str(work / "b"), str(work / "d.tsv")])
    assert "seed = 5" in (work / "b" / "resolved_config.txt").read_text()
    assert (work / "a" / "train_report.json").read_bytes() != (work / "b" / "train_report.json").read_bytes()


def test_ablate_rows(work):
    assert run(work, "ablate", "--out", str(work / "ab"), "--eps", "0.4", str(work / "d.tsv")) == EXIT_OK
    rows = list(csv.DictReader((work / "ab" / "ablation.csv").open()))
    assert len(rows) == 6 * 2
    assert [r["method"] for r in rows[:6]] == ["baseline", "dropout", "AT", "R-AT", "R-AT-SU", "UEGR"]
    summary = list(csv.DictReader((work / "ab" / "ablation_summary.csv").open()))
    assert len(summary) == 6 and "adv_acc@0.4" in summary[0]


def test_verify_defaults_pass(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert rep["pass"] and rep["failed"] == []


def test_verify_failure_exit(tmp_path, monkeypatch, capsys):
    import uegr.cli as cli

    monkeypatch.setattr(cli, "run_all", lambda *a: {"failed": ["taylor.model_slope"], "pass": False})
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_VERIFY
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "VerificationFailed" and err["failed"] == ["taylor.model_slope"]


def test_error_json(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("learning_rate = 1\n")
    assert main(["train", "--config", str(bad), str(tmp_path / "x.tsv")]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err == {"error": "ConfigInvalid", "key": "learning_rate", "message": err["message"]}
    assert main(["train", "--out", str(tmp_path / "o"), str(tmp_path / "missing.tsv")]) == EXIT_IO
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "IoError" and err["path"].endswith("missing.tsv")
    assert main(["eval", "--eps", "a,b", "c.json", "d.tsv"]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "uegr", "--dump-defaults"], capture_output=True, text=True)
    assert out.returncode == 0 and "alpha = 0.8" in out.stdout
    out = subprocess.run([sys.executable, "-m", "uegr", "train", str(tmp_path / "none.tsv"), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode != 0 and json.loads(out.stderr)["error"] == "IoError"
