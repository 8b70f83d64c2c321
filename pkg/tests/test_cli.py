import csv
import subprocess
import sys

import pytest

from rme.cli import main
from rme.ingest import Label
from rme.model import load_model
from rme.synthetic import planted_blocks


def _write_log(path, implicit=False):
    data = planted_blocks(n_users=60, n_items=30, seed=5, implicit=implicit)
    with open(path, "w") as fh:
        for u, p, label, ts in data.cells():
            if implicit:
                fh.write(f"{data.user_ids[u]}\t{data.item_ids[p]}\t{3}\n")
            else:
                value = 5 if label == Label.LIKED else 1
                fh.write(f"{data.user_ids[u]}::{data.item_ids[p]}::{value}::{ts}\n")
    return path


@pytest.fixture()
def explicit_cfg(tmp_path):
    log = _write_log(tmp_path / "ratings.dat")
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"""[data]
path = {log}
user_min = 2
item_min = 2

[model]
k = 4
lam = 5.0
max_sweeps = 6

[output]
dir = {tmp_path / "out"}
run_id = base
""")
    return cfg


def _files(path):
    return sorted(p.name for p in path.iterdir())


def test_prep_writes_splits_and_matrices(explicit_cfg, tmp_path):
    assert main(["prep", "-c", str(explicit_cfg)]) == 0
    split_dir = tmp_path / "out/splits/base/fold_0"
    assert _files(split_dir) == ["items.txt", "manifest.txt", "test.tsv", "train.tsv", "users.txt", "valid.tsv"]
    assert _files(tmp_path / "out/sppmi/base/fold_0") == ["X.sppmi", "Y.sppmi", "Z.sppmi"]


def test_prep_cofactor_builds_only_x(explicit_cfg, tmp_path):
    assert main(["prep", "-c", str(explicit_cfg), "--variant", "cofactor", "--run-id", "cf"]) == 0
    assert _files(tmp_path / "out/sppmi/cf/fold_0") == ["X.sppmi"]


def test_prep_implicit_defers_disliked_matrix(tmp_path):
    log = _write_log(tmp_path / "plays.tsv", implicit=True)
    rc = main(["prep", "--path", str(log), "--format", "tsv", "--feedback", "implicit",
               "--split-mode", "random", "--user-min", "2", "--item-min", "2",
               "--out-dir", str(tmp_path / "out"), "--run-id", "imp"])
    assert rc == 0
    assert _files(tmp_path / "out/sppmi/imp/fold_0") == ["X.sppmi", "Z.sppmi"]


def test_train_is_reproducible(explicit_cfg, tmp_path):
    assert main(["prep", "-c", str(explicit_cfg)]) == 0
    assert main(["train", "-c", str(explicit_cfg)]) == 0
    model_dir = tmp_path / "out/models/base/fold_0"
    first = (model_dir / "model.rme").read_bytes()
    with open(model_dir / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["sweep", "objective", "ndcg100"]
    assert [int(r["sweep"]) for r in rows] == list(range(1, len(rows) + 1))
    assert 1 <= len(rows) <= 6

    assert main(["train", "-c", str(explicit_cfg)]) == 0
    assert (model_dir / "model.rme").read_bytes() == first
    state, hp = load_model(model_dir / "model.rme")
    assert hp.k == 4 and state.alpha.shape[1] == 4


def test_eval_reports_and_significance(explicit_cfg, tmp_path, capsys):
    assert main(["prep", "-c", str(explicit_cfg), "--folds", "2"]) == 0
    for run, variant in (("base", "rme"), ("wmf", "wmf")):
        flags = ["-c", str(explicit_cfg), "--folds", "2", "--run-id", run, "--prep-id", "base", "--variant", variant]
        assert main(["train", *flags]) == 0
    args = ["eval", "-c", str(explicit_cfg), "--folds", "2", "--ns", "5,10"]
    assert main([*args, "--run-id", "wmf", "--prep-id", "base"]) == 0
    assert main([*args, "--against", "wmf"]) == 0
    report = tmp_path / "out/reports/base"
    lines = (report / "report.csv").read_text().splitlines()
    assert lines[0] == "fold,group,metric,N,value"
    assert {ln.split(",")[0] for ln in lines[1:]} == {"0", "1"}
    assert "fold 0" in (report / "summary.txt").read_text()
    with open(report / "significance.csv") as fh:
        sig = list(csv.DictReader(fh))
    assert list(sig[0]) == ["metric", "N", "mean", "mean_against", "t", "p", "significant"]
    assert len(sig) == 3 * 2


def test_missing_model_exit_code(explicit_cfg, capsys):
    assert main(["prep", "-c", str(explicit_cfg)]) == 0
    assert main(["eval", "-c", str(explicit_cfg), "--model", "/nonexistent/model.rme"]) == 1
    assert "error=MissingArtifact" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["[model]\nk = many\n", "[model]\nbogus = 1\n", "[nosuch]\nx = 1\n"])
def test_bad_config_exit_code(tmp_path, capsys, text):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    assert main(["prep", "-c", str(cfg)]) == 2
    assert "error=ConfigError" in capsys.readouterr().err


def test_flags_override_file(explicit_cfg, tmp_path):
    assert main(["prep", "-c", str(explicit_cfg), "--split-seed", "9"]) == 0
    written = (tmp_path / "out/splits/base/config.ini").read_text()
    assert "seed = 9" in written


def test_single_point_grid_matches_train(explicit_cfg, tmp_path):
    assert main(["prep", "-c", str(explicit_cfg)]) == 0
    assert main(["grid", "-c", str(explicit_cfg), "--lam-grid", "5.0"]) == 0
    with open(tmp_path / "out/reports/base/grid.csv") as fh:
        (row,) = list(csv.DictReader(fh))
    assert row["status"] == "ok" and row["seed"] == "0"
    assert main(["train", "-c", str(explicit_cfg)]) == 0
    with open(tmp_path / "out/models/base/fold_0/history.csv") as fh:
        history = list(csv.DictReader(fh))
    assert float(row["ndcg100"]) == pytest.approx(max(float(r["ndcg100"]) for r in history), abs=1e-12)


def test_grid_rows_sorted_best_first(explicit_cfg, tmp_path):
    assert main(["prep", "-c", str(explicit_cfg)]) == 0
    assert main(["grid", "-c", str(explicit_cfg), "--lam-grid", "1,10", "--k-grid", "2,4"]) == 0
    with open(tmp_path / "out/reports/base/grid.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert [r["rank"] for r in rows] == ["1", "2", "3", "4"]
    scores = [float(r["ndcg100"]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert sorted(int(r["index"]) for r in rows) == [0, 1, 2, 3]
    assert all(int(r["seed"]) == int(r["index"]) for r in rows)


def test_written_config_reproduces_run(explicit_cfg, tmp_path):
    assert main(["prep", "-c", str(explicit_cfg), "--scale-l", "2.0"]) == 0
    assert main(["train", "-c", str(explicit_cfg), "--scale-l", "2.0", "--model-seed", "3"]) == 0
    model = tmp_path / "out/models/base/fold_0/model.rme"
    first = model.read_bytes()
    saved = tmp_path / "saved.ini"
    saved.write_text((tmp_path / "out/models/base/config.ini").read_text())
    assert main(["train", "-c", str(saved)]) == 0
    assert model.read_bytes() == first


def test_negdump_writes_raw_ids(explicit_cfg, tmp_path):
    assert main(["prep", "-c", str(explicit_cfg)]) == 0
    assert main(["train", "-c", str(explicit_cfg)]) == 0
    out = tmp_path / "negs.tsv"
    assert main(["negdump", "-c", str(explicit_cfg), "--tau", "0.5", "--out", str(out)]) == 0
    users = set((tmp_path / "out/splits/base/fold_0/users.txt").read_text().split())
    items = set((tmp_path / "out/splits/base/fold_0/items.txt").read_text().split())
    lines = out.read_text().splitlines()
    assert lines
    for line in lines:
        u, p = line.split("\t")
        assert u in users and p in items


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rme", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "negdump" in proc.stdout
