import csv
import json
import subprocess
import sys

import pytest
import yaml

from attx.cli import main
from attx.storage import read_dataset

TINY = {
    "train": {"epochs": 2, "batch_size": 8, "seed": 0},
    "model": {
        "ecg": {"widths": [4, 8, 8], "kernel_size": 5, "strides": [4, 2, 2], "stage4_width": 8},
        "eda": {"widths": [4, 8, 8], "kernel_size": 5, "strides": [4, 2, 2], "stage4_width": 8},
        "attx": {"type": "III", "stages": [1, 2]},
    },
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.yaml").write_text(yaml.safe_dump(
        {"n_subjects": 3, "duration_s": 60, "block_s": 15, "cross_modal_mode": "complementary", "seed": 3}))
    (root / "tiny.yaml").write_text(yaml.safe_dump(TINY))
    assert main(["synth", "--spec", str(root / "synth.yaml"), "--out", str(root / "raw")]) == 0
    assert main(["preprocess", "--manifest", str(root / "raw" / "manifest.json"), "--out", str(root / "d.attx")]) == 0
    return root


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_synth_and_preprocess_outputs(workspace):
    man = json.loads((workspace / "raw" / "manifest.json").read_text())
    assert man["dataset_name"] == "synthetic-complementary"
    assert [s["subject_id"] for s in man["subjects"]] == ["S01", "S02", "S03"]
    windows = read_dataset(workspace / "d.attx")
    assert len({w.subject_id for w in windows}) == 3
    assert {int(w.label) for w in windows} == {0, 1}


def test_preprocess_zero_phase_differs(workspace, capsys):
    code, out, _ = run(capsys, "preprocess", "--manifest", workspace / "raw" / "manifest.json",
                       "--out", workspace / "zp.attx", "--zero-phase")
    assert code == 0 and "windows" in out
    a, b = read_dataset(workspace / "d.attx"), read_dataset(workspace / "zp.attx")
    assert len(a) == len(b)
    assert any((x.ecg != y.ecg).any() for x, y in zip(a, b))


def test_train_then_evaluate_same_metrics(workspace, capsys):
    ck = workspace / "ck"
    code, out, _ = run(capsys, "train", "--dataset", workspace / "d.attx", "--config", workspace / "tiny.yaml",
                       "--out", ck)
    assert code == 0
    trained = json.loads(out)
    assert set(trained) == {"accuracy", "confusion", "macro_f1", "weighted_f1"}
    assert len(json.loads((ck / "manifest.json").read_text())["loss_history"]) == 2
    code, out, _ = run(capsys, "evaluate", "--dataset", workspace / "d.attx", "--checkpoint", ck)
    assert code == 0
    assert json.loads(out) == trained


def test_ablate_table3_csv(workspace, capsys):
    code, out, _ = run(capsys, "ablate", "--dataset", workspace / "d.attx", "--grid", "table3",
                       "--config", workspace / "tiny.yaml", "--out", workspace / "abl")
    assert code == 0
    assert out.splitlines()[0].split()[0] == "Method"
    with open(workspace / "abl" / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert all(r["n_folds"] == "3" for r in rows)
    assert all(0.0 <= float(r["accuracy"]) <= 1.0 for r in rows)
    assert len(list((workspace / "abl" / "row00").glob("fold_*.json"))) == 3


def test_ablate_custom_grid(workspace, capsys):
    grid = workspace / "grid.yaml"
    grid.write_text(yaml.safe_dump({"rows": [{"name": "ECG only", "modalities": "ecg"}]}))
    code, out, _ = run(capsys, "ablate", "--dataset", workspace / "d.attx", "--grid", grid,
                       "--config", workspace / "tiny.yaml", "--out", workspace / "abl_custom")
    assert code == 0 and "ECG only" in out


def test_gradcheck_single_op(capsys):
    code, out, _ = run(capsys, "gradcheck", "--op", "softmax")
    assert code == 0
    assert "ok" in out and "FAIL" not in out


def test_gradcheck_all_exit_zero(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    assert len(out.splitlines()) >= 10


def test_gradcheck_unknown_op(capsys):
    code, _, err = run(capsys, "gradcheck", "--op", "nope")
    assert code == 2 and "unknown op" in err


def test_gradcheck_impossible_tolerance_fails(capsys):
    code, out, _ = run(capsys, "gradcheck", "--op", "conv1d", "--tol", "0")
    assert code == 1 and "FAIL" in out


@pytest.mark.parametrize("argv", [
    ["train", "--bogus"],
    ["frobnicate"],
    [],
    ["evaluate", "--dataset", "missing.attx", "--checkpoint", "."],
    ["evaluate", "--dataset", __file__, "--checkpoint", "no_such_dir"],
    ["preprocess", "--manifest", "missing.json", "--out", "x.attx"],
    ["ablate", "--dataset", __file__, "--grid", "nosuchgrid.yaml", "--out", "o"],
])
def test_usage_errors_exit_nonzero(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert capsys.readouterr().err


def test_corrupt_dataset_reports_error(tmp_path, capsys):
    bad = tmp_path / "bad.attx"
    bad.write_bytes(b"nonsense-but-long-enough")
    code, _, err = run(capsys, "train", "--dataset", bad, "--out", tmp_path / "ck")
    assert code == 1 and "bad magic" in err


def test_module_entry_point_subprocess():
    r = subprocess.run([sys.executable, "-m", "attx", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("synth", "preprocess", "train", "evaluate", "ablate", "gradcheck"):
        assert cmd in r.stdout
    r = subprocess.run([sys.executable, "-m", "attx", "train", "--nope"], capture_output=True, text=True)
    assert r.returncode != 0


def test_gradcheck_model_only(capsys):
    code, out, _ = run(capsys, "gradcheck", "--op", "model")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 6 and all(ln.startswith("model[") for ln in lines)
