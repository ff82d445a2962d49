import csv
import json

import numpy as np
import pytest

from eckconv import cli
from eckconv.config import load_config
from eckconv.pointio import save_points
from eckconv.geom import PointCloud

SMOKE = ["--set", "preset=smoke"]


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_equiv_passes_and_embeds_hash(capsys):
    code, out, err = run(["check-equiv", *SMOKE], capsys)
    report = json.loads(out)
    assert code == 0 and report["passed"]
    assert report["config_hash"] == load_config(None, ["preset=smoke"]).digest()
    assert set(report["max_deviation"]) == {"coset", "layer", "network"}
    assert "PASS" in err


def test_check_equiv_negative_control_fails(capsys):
    code, out, _ = run(["check-equiv", "--set", "preset=broken-normals", "--set", "equiv_layer_transforms=3",
                        "--set", "equiv_network_transforms=3", "--set", "equiv_coset_transforms=20"], capsys)
    report = json.loads(out)
    assert code == 1 and not report["passed"]
    assert max(report["max_deviation"].values()) > 1e-2


def test_check_equiv_translation_only(capsys):
    code, out, _ = run(["check-equiv", "--set", "preset=translation-only", "--set", "equiv_layer_transforms=5",
                        "--set", "equiv_network_transforms=5", "--set", "equiv_coset_transforms=100"], capsys)
    report = json.loads(out)
    assert code == 0 and report["tolerance"] == 1e-12
    assert all(v <= 1e-12 for v in report["max_deviation"].values())


def test_gradcheck_report_and_empty_ops(tmp_path, capsys):
    out = tmp_path / "g.json"
    code, _, _ = run(["gradcheck", *SMOKE, "--set", "gradcheck_ops=linear,loss", "--out", str(out)], capsys)
    report = json.loads(out.read_text())
    assert code == 0 and set(report["max_relative_error"]) == {"linear", "loss"}
    code, stdout, _ = run(["gradcheck", "--set", "gradcheck_ops="], capsys)
    report = json.loads(stdout)
    assert code == 0 and report["max_relative_error"] == {} and report["passed"]


def test_gradcheck_failing_tolerance_exits_nonzero(capsys):
    code, _, _ = run(["gradcheck", *SMOKE, "--set", "gradcheck_ops=gelu", "--set", "tol_gradcheck=1e-30"], capsys)
    assert code == 1


def test_bench_writes_csv(tmp_path, capsys):
    out = tmp_path / "c.csv"
    code, _, err = run(["bench", *SMOKE, "--out", str(out), "--sweep", "A=1,2,K=3,cin=2,cout=2"], capsys)
    rows = list(csv.DictReader(out.open()))
    assert code == 0 and len(rows) == 4 and "counters_exact" in err
    assert {r["ordering"] for r in rows} == {"implicit", "explicit"}


def test_bench_single_ordering(tmp_path, capsys):
    out = tmp_path / "c.csv"
    run(["bench", *SMOKE, "--out", str(out), "--ordering", "explicit"], capsys)
    assert {r["ordering"] for r in csv.DictReader(out.open())} == {"explicit"}


def test_gen_layout(tmp_path, capsys):
    root = tmp_path / "ds"
    code, _, _ = run(["gen", *SMOKE, "--set", "per_class=1", "--set", "test_per_class=1", "--out", str(root)], capsys)
    assert code == 0
    for sub in ("train", "test", "test_rotated"):
        assert (root / sub / "labels.csv").exists()
    audit = list(csv.reader((root / "test_rotated" / "transforms.csv").open()))
    assert audit[0][0] == "index" and len(audit) == 5 and len(audit[1]) == 13


def test_encode_csv(tmp_path, capsys):
    pts = tmp_path / "p.txt"
    save_points(pts, PointCloud(np.array([[0, 0, 0], [0, 0, 0.5], [0.3, 0.4, 0.0]]),
                                np.array([[0, 0, 1.0], [0, 0, 1], [1, 0, 0]])))
    code, out, _ = run(["encode", "--input", str(pts), "--centroids", "0", "--radius", "1", "--k", "8"], capsys)
    rows = list(csv.DictReader(out.splitlines()))
    assert code == 0 and [r["neighbor"] for r in rows] == ["0", "1", "2"]
    assert float(rows[1]["zbar"]) == 0.5 and float(rows[2]["rbar"]) == 0.5


def test_encode_missing_input(capsys):
    code, _, err = run(["encode", "--input", "/nonexistent/p.txt", "--centroids", "0"], capsys)
    assert code == 2 and "does not exist" in err


def test_unknown_key_exit_code(capsys):
    code, _, err = run(["check-equiv", "--set", "bogus=1"], capsys)
    assert code == 2 and "unknown" in err


def test_train_then_eval_from_generated_data(tmp_path, capsys):
    root = tmp_path / "ds"
    run(["gen", *SMOKE, "--out", str(root)], capsys)
    ckpt = tmp_path / "m.eckc"
    args = [*SMOKE, "--set", f"data_dir={root}", "--set", "tol_min_accuracy=0", "--set", "tol_max_gap=1"]
    code, out, _ = run(["train", *args, "--checkpoint", str(ckpt)], capsys)
    trained = json.loads(out)
    assert code == 0 and ckpt.exists()
    evals = [json.loads(run(["eval", *args, "--checkpoint", str(ckpt)], capsys)[1]) for _ in range(2)]
    for key in ("accuracy_unrotated", "accuracy_rotated", "gap"):
        assert evals[0][key] == evals[1][key] == trained[key]


def test_eval_missing_checkpoint(tmp_path, capsys):
    code, _, _ = run(["eval", *SMOKE, "--checkpoint", str(tmp_path / "none.eckc")], capsys)
    assert code == 2


def test_train_below_accuracy_tolerance_exits_nonzero(tmp_path, capsys):
    code, out, _ = run(["train", *SMOKE, "--set", "epochs=0", "--checkpoint", str(tmp_path / "z.eckc")], capsys)
    assert code == 1 and not json.loads(out)["passed"]


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        cli.main([])
