import csv
import subprocess
import sys

import pytest

from tripdrift.cli import main
from tripdrift.dataio import load_dataset, load_mask
from tripdrift.harness import parse_report_csv
from tripdrift.serialization import load_family_model, load_network


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synth.csv"
    assert main(["synth", "--families", "3", "--dim", "6", "--per-family", "40",
                 "--separation", "10", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_synth(synth_csv):
    ds = load_dataset(synth_csv)
    assert len(ds) == 120 and ds.n_features == 6


def test_prep(synth_csv, tmp_path):
    assert main(["prep", "--input", str(synth_csv), "--min-variance", "0.5", "--out-dir", str(tmp_path)]) == 0
    train, test = load_dataset(tmp_path / "train.csv"), load_dataset(tmp_path / "test.csv")
    assert (len(train), len(test)) == (96, 24)
    assert train.timestamps.max() <= test.timestamps.min()
    assert load_mask(tmp_path / "mask.txt").min_variance == 0.5


def test_train_cluster_detect(synth_csv, tmp_path, capsys):
    model, fam, out = tmp_path / "m.model", tmp_path / "m.family", tmp_path / "v.csv"
    assert main(["train", "--input", str(synth_csv), "--dims", "6,8,3", "--epochs", "3",
                 "--out", str(model)]) == 0
    loss = (tmp_path / "m.loss.csv").read_text().splitlines()
    assert loss[0] == "epoch,recon_loss,triplet_loss" and len(loss) == 4
    assert load_network(model).config.layer_dims == (6, 8, 3)

    assert main(["cluster", "--model", str(model), "--input", str(synth_csv), "--out", str(fam),
                 "--report"]) == 0
    assert "cluster=0" in capsys.readouterr().out
    load_family_model(fam, network=load_network(model))

    for mode in ("dbscan", "mad"):
        assert main(["detect", "--model", str(model), "--family-model", str(fam), "--input",
                     str(synth_csv), "--threshold-mode", mode, "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 120
        assert set(rows[0]) == {"sample_index", "verdict", "nearest_family", "nearest_cluster",
                                "distance", "threshold"}
        assert {r["verdict"] for r in rows} <= {"KNOWN", "DRIFT"}


def test_vanilla_mode(synth_csv, tmp_path):
    out = tmp_path / "v.model"
    assert main(["train", "--input", str(synth_csv), "--mode", "vanilla", "--dims", "6,2",
                 "--epochs", "1", "--out", str(out), "--loss-out", str(tmp_path / "l.csv")]) == 0
    assert load_network(out).mode == "vanilla"


def test_detect_with_wrong_network(synth_csv, tmp_path, capsys):
    a, b, fam = tmp_path / "a.model", tmp_path / "b.model", tmp_path / "a.family"
    main(["train", "--input", str(synth_csv), "--dims", "6,2", "--epochs", "1", "--seed", "1", "--out", str(a)])
    main(["train", "--input", str(synth_csv), "--dims", "6,2", "--epochs", "1", "--seed", "2", "--out", str(b)])
    main(["cluster", "--model", str(a), "--input", str(synth_csv), "--out", str(fam)])
    capsys.readouterr()
    code = main(["detect", "--model", str(b), "--family-model", str(fam), "--input", str(synth_csv),
                 "--out", str(tmp_path / "v.csv")])
    assert code != 0
    assert "error" in capsys.readouterr().err


def test_eval_writes_report(synth_csv, tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["eval", "--input", str(synth_csv), "--dims", "6,8,3", "--epochs", "2",
                 "--out", str(out), "--render", "table"]) == 0
    assert "Overall" in capsys.readouterr().out
    scenarios, overall = parse_report_csv(out.read_text())
    assert len(scenarios) == 3
    assert overall["n_unknown"] == sum(s["n_unknown"] for s in scenarios)


def test_missing_input_is_a_diagnostic(tmp_path, capsys):
    assert main(["prep", "--input", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)]) == 1
    assert "tripdrift prep: error" in capsys.readouterr().err


def test_bad_csv_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("family,timestamp,a\nx,1,2\ny,2,NaN\n")
    assert main(["prep", "--input", str(bad), "--out-dir", str(tmp_path)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_bad_dims_rejected(synth_csv):
    with pytest.raises(SystemExit):
        main(["train", "--input", str(synth_csv), "--dims", "6", "--out", "x"])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tripdrift", "eval", "--input", str(tmp_path / "none.csv"),
                           "--out", str(tmp_path / "r.csv")], capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr
