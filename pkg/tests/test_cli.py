"""End-to-end checks of the command line through in-process main()."""

import json

import pytest
import torch

from conftest import markov_rows, write_interactions
from simdiffrec import TrainConfig, cli

TINY_TRAIN = TrainConfig(
    epochs=2,
    batch_size=8,
    max_len=8,
    d=16,
    n_layers=1,
    n_heads=2,
    dropout=0.1,
    T=20,
    stride=5,
    k_noise=3,
    k_sample=2,
    patience=0,
).to_dict()


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Raw file, preprocessed bundle, and one finished training run."""
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw.tsv"
    write_interactions(raw, markov_rows(n_users=18, n_items=10, per_user=8, seed=3))
    bundle = root / "data.json"
    rc = cli.main(
        ["preprocess", str(raw), "--out", str(bundle), "--min-count", "2"]
    )
    assert rc == 0
    run = root / "run"
    config = root / "config.json"
    config.write_text(
        json.dumps({"dataset": str(bundle), "out": str(run), "train": TINY_TRAIN})
    )
    assert cli.main(["train", "--config", str(config)]) == 0
    return {
        "root": root,
        "raw": raw,
        "bundle": bundle,
        "run": run,
        "config": config,
        "checkpoint": run / "checkpoints" / "best",
    }


def test_preprocess_outputs_bundle_stats_and_report(ws, tmp_path, capsys):
    out = tmp_path / "again.json"
    rc = cli.main(["preprocess", str(ws["raw"]), "--out", str(out), "--min-count", "2"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_users"] == 18
    assert report["n_items"] == 10
    assert json.loads((tmp_path / "again.json.stats.json").read_text()) == report
    # same raw input must produce the same bundle bytes wherever it is written
    assert out.read_bytes() == ws["bundle"].read_bytes()


def test_preprocess_missing_input_exits_3(tmp_path, capsys):
    rc = cli.main(["preprocess", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "data error" in capsys.readouterr().err


def test_train_run_directory_layout(ws):
    config = json.loads((ws["run"] / "config.json").read_text())
    assert set(config) == {"version", "command", "dataset", "out", "threads", "train"}
    assert config["command"] == "train"
    assert config["train"] == TINY_TRAIN
    lines = (ws["run"] / "losses.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,l_sr,l_cl,l_d,l_total")
    assert len(lines) == 3
    metrics = json.loads((ws["run"] / "metrics.json").read_text())
    assert set(metrics) == {"ks", "hr", "ndcg", "n_users", "seed", "config_hash"}
    assert ws["checkpoint"].exists()


def test_train_flag_and_set_overrides(ws, tmp_path, capsys):
    out = tmp_path / "run2"
    rc = cli.main(
        [
            "train",
            "--config",
            str(ws["config"]),
            "--out",
            str(out),
            "--alpha",
            "0.0",
            "--set",
            "train.epochs=1",
        ]
    )
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["out"] == str(out)
    assert "hr" in summary["test"]
    config = json.loads((out / "config.json").read_text())
    assert config["train"]["alpha"] == 0.0
    assert config["train"]["epochs"] == 1
    assert len((out / "losses.csv").read_text().splitlines()) == 2


def test_train_rejects_bad_configs(ws, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dataset": str(ws["bundle"]), "output": "x"}))
    assert cli.main(["train", "--config", str(bad)]) == 2
    rc = cli.main(
        ["train", "--config", str(ws["config"]), "--set", "train.warp_speed=9"]
    )
    assert rc == 2
    assert "warp_speed" in capsys.readouterr().err
    # dataset is required from either the config file or --data
    assert cli.main(["train", "--out", str(tmp_path / "r")]) == 2


def test_thread_env_is_validated(ws, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SIMDIFFREC_THREADS", "zero")
    assert cli.main(["evaluate", "--checkpoint", "x", "--data", "y"]) == 2
    monkeypatch.setenv("SIMDIFFREC_THREADS", "0")
    assert cli.main(["evaluate", "--checkpoint", "x", "--data", "y"]) == 2
    monkeypatch.setenv("SIMDIFFREC_THREADS", "1")
    out = tmp_path / "b.json"
    assert cli.main(["preprocess", str(ws["raw"]), "--out", str(out), "--min-count", "2"]) == 0
    assert torch.get_num_threads() == 1


def test_evaluate_prints_and_writes_metrics(ws, tmp_path, capsys):
    out = tmp_path / "metrics.json"
    rc = cli.main(
        [
            "evaluate",
            "--checkpoint",
            str(ws["checkpoint"]),
            "--data",
            str(ws["bundle"]),
            "--ks",
            "5,10",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ks"] == [5, 10]
    assert report["n_users"] == 18
    assert set(report["hr"]) == {"5", "10"}
    assert json.loads(out.read_text()) == report
    run_metrics = json.loads((ws["run"] / "metrics.json").read_text())
    assert report == run_metrics  # test-split evaluation is the one fit() stored


def test_evaluate_valid_split_differs(ws, capsys):
    rc = cli.main(
        [
            "evaluate",
            "--checkpoint",
            str(ws["checkpoint"]),
            "--data",
            str(ws["bundle"]),
            "--split",
            "valid",
        ]
    )
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["n_users"] == 18


def test_evaluate_rejects_mismatched_bundle(ws, tmp_path, capsys):
    other_raw = tmp_path / "other.tsv"
    write_interactions(other_raw, markov_rows(n_users=12, n_items=6, per_user=8, seed=9))
    other = tmp_path / "other.json"
    assert cli.main(["preprocess", str(other_raw), "--out", str(other), "--min-count", "2"]) == 0
    rc = cli.main(
        ["evaluate", "--checkpoint", str(ws["checkpoint"]), "--data", str(other)]
    )
    assert rc == 3
    assert "catalog mismatch" in capsys.readouterr().err


def test_evaluate_bad_inputs(ws, tmp_path, capsys):
    rc = cli.main(
        [
            "evaluate",
            "--checkpoint",
            str(ws["checkpoint"]),
            "--data",
            str(ws["bundle"]),
            "--ks",
            "five",
        ]
    )
    assert rc == 2
    rc = cli.main(
        ["evaluate", "--checkpoint", str(tmp_path / "missing"), "--data", str(ws["bundle"])]
    )
    assert rc == 3


def test_ablate_writes_csv_and_summary(ws, tmp_path, capsys):
    out = tmp_path / "ab"
    rc = cli.main(
        [
            "ablate",
            "--config",
            str(ws["config"]),
            "--out",
            str(out),
            "--modes",
            "none,no_k_sample",
            "--seeds",
            "0",
            "--set",
            "train.epochs=1",
        ]
    )
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary["mean_hr@10"]) == {"none", "no_k_sample"}
    lines = (out / "ablate.csv").read_text().splitlines()
    assert lines[0] == "mode,seed,hr@5,ndcg@5,hr@10,ndcg@10"
    assert len(lines) == 3
    assert json.loads((out / "config.json").read_text())["command"] == "ablate"


def test_sweep_covers_grid_points(ws, tmp_path, capsys):
    out = tmp_path / "sw"
    rc = cli.main(
        [
            "sweep",
            "--config",
            str(ws["config"]),
            "--out",
            str(out),
            "--grid",
            "alpha=0.0,0.1",
            "--set",
            "train.epochs=1",
        ]
    )
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["points"] == 2
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("alpha,")
    assert len(lines) == 3
    assert cli.main(["sweep", "--config", str(ws["config"]), "--out", str(out)]) == 2


def test_augment_preview_format_and_rerun_identity(ws, tmp_path, capsys):
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    for out in (first, second):
        rc = cli.main(
            [
                "augment-preview",
                "--checkpoint",
                str(ws["checkpoint"]),
                "--data",
                str(ws["bundle"]),
                "--n",
                "3",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["rows"] == 3
    lines = first.read_text().splitlines()
    assert lines[0] == cli.PREVIEW_HEADER
    assert len(lines) == 4
    for line in lines[1:]:
        row = json.loads(line)
        assert set(row) == {
            "user_id",
            "original",
            "positions",
            "confidences",
            "positive_items",
            "hard_negative_items",
            "k_sample",
            "source_hash",
        }
        assert len(row["positions"]) == len(row["positive_items"])
        assert all(0.0 < c <= 1.0 for c in row["confidences"])
    assert first.read_bytes() == second.read_bytes()
    rc = cli.main(
        [
            "augment-preview",
            "--checkpoint",
            str(ws["checkpoint"]),
            "--data",
            str(ws["bundle"]),
            "--n",
            "-1",
            "--out",
            str(tmp_path / "c"),
        ]
    )
    assert rc == 2


def test_augment_preview_without_hard_negatives(ws, tmp_path, capsys):
    """k_sample=1 checkpoints must preview identical positive and negative views."""
    run = tmp_path / "run"
    train = dict(TINY_TRAIN, k_sample=1, epochs=0)
    config = tmp_path / "c.json"
    config.write_text(
        json.dumps({"dataset": str(ws["bundle"]), "out": str(run), "train": train})
    )
    assert cli.main(["train", "--config", str(config)]) == 0
    out = tmp_path / "p.jsonl"
    rc = cli.main(
        [
            "augment-preview",
            "--checkpoint",
            str(run / "checkpoints" / "best"),
            "--data",
            str(ws["bundle"]),
            "--n",
            "5",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    capsys.readouterr()
    for line in out.read_text().splitlines()[1:]:
        row = json.loads(line)
        assert row["k_sample"] == 1
        assert row["positive_items"] == row["hard_negative_items"]


def test_export_embeddings_csv(ws, tmp_path, capsys):
    out = tmp_path / "emb.csv"
    rc = cli.main(
        [
            "export-embeddings",
            "--checkpoint",
            str(ws["checkpoint"]),
            "--data",
            str(ws["bundle"]),
            "--tags",
            "original,positive",
            "--n",
            "2",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["rows"] == 4
    lines = out.read_text().splitlines()
    d = TINY_TRAIN["d"]
    assert lines[0] == "user_id," + ",".join(f"e_{i}" for i in range(d)) + ",tag"
    assert len(lines) == 5
    tags = [line.rsplit(",", 1)[1] for line in lines[1:]]
    assert tags.count("original") == 2 and tags.count("positive") == 2


def test_export_embeddings_rejects_unknown_tag(ws, tmp_path):
    rc = cli.main(
        [
            "export-embeddings",
            "--checkpoint",
            str(ws["checkpoint"]),
            "--data",
            str(ws["bundle"]),
            "--tags",
            "original,shuffled",
            "--out",
            str(tmp_path / "x.csv"),
        ]
    )
    assert rc == 2


def test_main_without_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2
