import csv
import json
import os

import pytest

from vclearn.cli import main

CONFIG = """\
seed = 0
iterations = 60
warmup_iters = 20
eval_interval = 20
lr = 0.1
label_ratio = 0.1
score_temp = 0.6
bg_sample_ratio = 0.5

[bench]
n_scenes = 40
n_test_scenes = 10
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.toml"
    cfg.write_text(CONFIG)
    data = root / "scenes.jsonl"
    assert main(["bench", "gen", "--config", str(cfg), "--out", str(data)]) == 0
    return root


def test_bench_gen_writes_dataset(workspace):
    lines = (workspace / "scenes.jsonl").read_text().strip().splitlines()
    assert len(lines) == 50
    rec = json.loads(lines[0])
    assert set(rec) == {"image_id", "canvas", "objects"}


def test_train_writes_records(workspace):
    out = workspace / "run"
    code = main(["train", "--config", str(workspace / "cfg.toml"),
                 "--data", str(workspace / "scenes.jsonl"),
                 "--out", str(out), "--quiet"])
    assert code == 0
    record = json.loads((out / "run_vc_seed0.json").read_text())
    assert record["strategy"] == "vc" and record["seed"] == 0
    assert len(record["trajectory"]) == 3
    with open(out / "ap_curves.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["strategy", "seed", "iteration", "ap"]
    assert len(rows) == 1 + 3
    assert (out / "params.npz").exists()


def test_train_determinism_across_invocations(workspace):
    args = ["train", "--config", str(workspace / "cfg.toml"),
            "--data", str(workspace / "scenes.jsonl"), "--quiet"]
    main(args + ["--out", str(workspace / "r1")])
    main(args + ["--out", str(workspace / "r2")])
    a = (workspace / "r1" / "run_vc_seed0.json").read_text()
    b = (workspace / "r2" / "run_vc_seed0.json").read_text()
    assert a == b


def test_eval_roundtrip(workspace, capsys):
    out = workspace / "run"
    if not (out / "params.npz").exists():
        main(["train", "--config", str(workspace / "cfg.toml"),
              "--data", str(workspace / "scenes.jsonl"),
              "--out", str(out), "--quiet"])
    code = main(["eval", "--params", str(out / "params.npz"),
                 "--data", str(workspace / "scenes.jsonl")])
    assert code == 0
    assert "AP@0.5:" in capsys.readouterr().out


def test_compare_over_seeds(workspace):
    out = workspace / "cmp"
    code = main(["compare", "--config", str(workspace / "cfg.toml"),
                 "--data", str(workspace / "scenes.jsonl"),
                 "--seeds", "2", "--out", str(out), "--quiet"])
    assert code == 0
    runs = sorted(os.listdir(out))
    assert "ap_curves.csv" in runs
    assert len([r for r in runs if r.startswith("run_")]) == 4 * 2
    with open(out / "ap_curves.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 4 * 2 * 3


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
