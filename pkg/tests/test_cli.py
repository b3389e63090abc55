import csv
import json

import pytest

from sesrec.cli import EXIT_CONFIG, EXIT_DATA, main

TINY = """\
d_i = 8
d_q = 8
d = 8
item_attr_dim = 3
query_term_dim = 4
max_rec_len = 6
max_search_len = 6
max_clicks = 3
mlp_hidden = 16
batch_size = 32
max_epochs = 2
n_align_negatives = 16
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.ini").write_text("n_users = 40\n")
    (root / "train.ini").write_text(TINY)
    assert main(["generate-data", "--config", str(root / "synth.ini"), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(root / "train.ini"), "--data", str(root / "data"),
                 "--out", str(root / "m.pt")]) == 0
    (root / "noali.ini").write_text(TINY + "alpha = 0\n")
    assert main(["train", "--config", str(root / "noali.ini"), "--data", str(root / "data"),
                 "--out", str(root / "noali.pt")]) == 0
    return root


def test_generate_writes_events(workspace):
    lines = (workspace / "data" / "events.jsonl").read_text().splitlines()
    assert lines and {"user", "type", "ts"} <= set(json.loads(lines[0]))


def test_train_outputs(workspace):
    assert (workspace / "m.pt").exists() and (workspace / "m.pt.json").exists()
    rows = list(csv.DictReader(open(workspace / "m.pt.epochs.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2"]


def test_evaluate_json_and_csv(workspace, capsys):
    capsys.readouterr()
    assert main(["evaluate", "--ckpt", str(workspace / "m.pt"), "--data", str(workspace / "data")]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert set(metrics) == {"HIT@1", "HIT@5", "HIT@10", "NDCG@5", "NDCG@10", "MRR"}
    out = workspace / "users.csv"
    assert main(["evaluate", "--ckpt", str(workspace / "m.pt"), "--data", str(workspace / "data"),
                 "--format", "csv", "--out", str(out)]) == 0
    assert open(out).readline().strip() == "user,rank,HIT@1,HIT@5,HIT@10,NDCG@5,NDCG@10,MRR"


def test_analyze_js_cosine_plot(workspace, capsys):
    js = workspace / "js.csv"
    assert main(["analyze", "js", "--ckpt", str(workspace / "m.pt"), "--data", str(workspace / "data"),
                 "--format", "csv", "--out", str(js)]) == 0
    cos = workspace / "cos.csv"
    assert main(["analyze", "cosine", "--ckpt", str(workspace / "m.pt"), "--ckpt-no-ali",
                 str(workspace / "noali.pt"), "--data", str(workspace / "data"), "--format", "csv",
                 "--out", str(cos)]) == 0
    assert [r["model"] for r in csv.DictReader(open(cos))] == ["with_ali", "without_ali"]
    assert main(["analyze", "plot", "js", "--csv", str(js), "--out", str(workspace / "js.png")]) == 0
    assert main(["analyze", "plot", "cosine", "--csv", str(cos), "--out", str(workspace / "c.png")]) == 0


def test_sweep_thresholds(workspace):
    out = workspace / "sweep.csv"
    (workspace / "one.ini").write_text(TINY.replace("max_epochs = 2", "max_epochs = 1"))
    assert main(["analyze", "sweep", "threshold_strategy", "--config", str(workspace / "one.ini"),
                 "--data", str(workspace / "data"), "--format", "csv", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["threshold_strategy"] for r in rows] == ["1/16", "1/8", "median", "mean"]


def test_config_error_exit(workspace, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("learning_rate = -1\n")
    assert main(["train", "--config", str(bad), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "x.pt")]) == EXIT_CONFIG
    assert main(["generate-data", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_data_error_exit(workspace, tmp_path):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x.pt")]) == EXIT_DATA
    (tmp_path / "broken.pt").write_bytes(b"junk")
    assert main(["evaluate", "--ckpt", str(tmp_path / "broken.pt"), "--data", str(workspace / "data")]) == EXIT_DATA
