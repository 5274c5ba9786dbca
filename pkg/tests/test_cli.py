"""End-to-end tests of the command-line interface."""

import json

import numpy as np
import pytest

import signalign.cli as cli
from signalign.autodiff import Tensor
from signalign import autodiff as ad
from signalign.descriptions import KnowledgeBase, SignEntry, load_records, save_corpus
from signalign.reporting import read_metrics_csv, read_scores_csv
from signalign.training import load_model


TINY = {
    "num_classes": 3,
    "samples_per_class": 5,
    "frames": 6,
    "channels": [8],
    "feature_dim": 16,
    "batch_size": 6,
    "epochs": 2,
    "warmup_epochs": 1,
    "decay_epochs": [1],
    "synonym_count": 2,
    "seed": 0,
}


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return path


def test_train_writes_all_artifacts(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "run"
    rc = cli.main(
        ["train", "--config", str(tiny_config_file), "--out-dir", str(out), "--quiet"]
    )
    assert rc == 0
    for name in ("metrics.csv", "training_curves.png", "test_scores.csv", "model.npz", "config.json"):
        assert (out / name).exists(), name
    metrics = read_metrics_csv(out / "metrics.csv")
    assert len(metrics) == TINY["epochs"]
    stdout = capsys.readouterr().out
    assert "test top-1" in stdout


def test_train_flag_overrides_config(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    rc = cli.main(
        [
            "train",
            "--config",
            str(tiny_config_file),
            "--out-dir",
            str(out),
            "--seed",
            "7",
            "--epochs",
            "3",
            "--no-texts",
            "--quiet",
        ]
    )
    assert rc == 0
    written = json.loads((out / "config.json").read_text())
    assert written["seed"] == 7
    assert written["epochs"] == 3
    assert written["use_global_texts"] is False
    assert written["use_synonym_texts"] is False
    assert written["use_part_texts"] is False
    metrics = read_metrics_csv(out / "metrics.csv")
    assert len(metrics) == 3
    assert all(m.con_loss == 0.0 for m in metrics)


def test_evaluate_saved_model(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(tiny_config_file), "--out-dir", str(out), "--quiet"]) == 0
    capsys.readouterr()
    scores_path = tmp_path / "eval_scores.csv"
    rc = cli.main(["evaluate", "--model", str(out / "model.npz"), "--scores", str(scores_path)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "test top-1" in stdout
    scores, labels = read_scores_csv(scores_path)
    # the final-epoch scores from training equal a fresh evaluation
    train_scores, train_labels = read_scores_csv(out / "test_scores.csv")
    assert np.array_equal(scores, train_scores)
    assert np.array_equal(labels, train_labels)


def test_evaluate_consistent_with_saved_blob(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(tiny_config_file), "--out-dir", str(out), "--quiet"])
    model, config = load_model(out / "model.npz")
    assert config.num_classes == TINY["num_classes"]


def test_fuse_identical_streams_matches_single(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(tiny_config_file), "--out-dir", str(out), "--quiet"])
    capsys.readouterr()
    scores_csv = out / "test_scores.csv"
    fused_out = tmp_path / "fused.csv"
    rc = cli.main(
        ["fuse", "--scores", str(scores_csv), str(scores_csv), "--out", str(fused_out)]
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "fused 2 streams" in stdout
    single, labels = read_scores_csv(scores_csv)
    fused, fused_labels = read_scores_csv(fused_out)
    assert np.array_equal(fused, single * 2)
    assert np.array_equal(labels, fused_labels)


def test_fuse_rejects_mismatched_labels(tmp_path, capsys):
    from signalign.reporting import write_scores_csv

    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    scores = np.array([[0.7, 0.3], [0.2, 0.8]])
    write_scores_csv(scores, np.array([0, 1]), a)
    write_scores_csv(scores, np.array([1, 0]), b)
    rc = cli.main(["fuse", "--scores", str(a), str(b)])
    assert rc == 1
    assert "disagree" in capsys.readouterr().err


def test_ablate_writes_table_and_chart(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "ablation"
    rc = cli.main(
        ["ablate", "--config", str(tiny_config_file), "--out-dir", str(out), "--quiet"]
    )
    assert rc == 0
    table = (out / "ablation.csv").read_text().splitlines()
    assert len(table) == 6  # header + five variants
    assert (out / "ablation.png").exists()
    stdout = capsys.readouterr().out
    for name in ("baseline", "+synonym", "+prompt", "+multipart", "all"):
        assert name in stdout


def test_generate_data_exports(tmp_path, tiny_config_file, capsys):
    out = tmp_path / "data"
    rc = cli.main(
        ["generate-data", "--config", str(tiny_config_file), "--out-dir", str(out)]
    )
    assert rc == 0
    with np.load(out / "dataset.npz") as blob:
        assert blob["train_values"].shape == (12, 3, 87, 6)
        assert blob["test_values"].shape == (3, 3, 87, 6)
        assert blob["train_labels"].shape == (12,)
    assert (out / "corpus.jsonl").exists()
    assert (out / "kb.jsonl").exists()
    assert (out / "layout.json").exists()
    assert "12 train / 3 test" in capsys.readouterr().out


def test_generate_descriptions_default_corpus(tmp_path, tiny_config_file):
    out_path = tmp_path / "records.jsonl"
    rc = cli.main(
        [
            "generate-descriptions",
            "--config",
            str(tiny_config_file),
            "--out",
            str(out_path),
        ]
    )
    assert rc == 0
    records = load_records(out_path)
    assert {r.class_id for r in records} == set(range(TINY["num_classes"]))
    kinds = {r.kind for r in records}
    assert kinds == {"primary", "synonym", "refined", "part"}


def test_generate_descriptions_explicit_files(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    kb_path = tmp_path / "kb.jsonl"
    save_corpus([SignEntry(0, "wave"), SignEntry(1, "nod")], corpus_path)
    KnowledgeBase(
        [
            ("wave", "Raise the right hand and swing it side to side."),
            ("nod", "Tilt the head forward and back."),
        ]
    ).save(kb_path)
    out_path = tmp_path / "records.jsonl"
    rc = cli.main(
        [
            "generate-descriptions",
            "--corpus",
            str(corpus_path),
            "--kb",
            str(kb_path),
            "--backend",
            "mock",
            "--out",
            str(out_path),
        ]
    )
    assert rc == 0
    records = load_records(out_path)
    assert any("swing it side to side" in r.text for r in records)


def test_generate_descriptions_http_needs_url(tmp_path, capsys):
    rc = cli.main(
        [
            "generate-descriptions",
            "--backend",
            "http",
            "--out",
            str(tmp_path / "r.jsonl"),
        ]
    )
    assert rc == 1
    assert "--url" in capsys.readouterr().err


def test_generate_descriptions_requires_paired_corpus_kb(tmp_path, capsys):
    rc = cli.main(
        [
            "generate-descriptions",
            "--corpus",
            str(tmp_path / "c.jsonl"),
            "--out",
            str(tmp_path / "r.jsonl"),
        ]
    )
    assert rc == 1
    assert "together" in capsys.readouterr().err


def _fake_fixture(seed=1):
    params = [Tensor(np.array([0.4, -0.3])), Tensor(np.array([[1.2]]))]

    def objective(trial):
        return ad.mean(ad.exp(ad.scale(trial[0], 0.5)))

    return objective, params, ["alpha", "beta"]


def test_grad_check_pass(monkeypatch, capsys):
    monkeypatch.setattr(cli, "grad_check_fixture", _fake_fixture)
    rc = cli.main(["grad-check", "--tolerance", "1e-4"])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "PASS" in stdout
    assert "alpha" in stdout and "beta" in stdout


def test_grad_check_fail_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "grad_check_fixture", _fake_fixture)
    rc = cli.main(["grad-check", "--tolerance", "-1.0"])
    assert rc == 1
    assert "FAIL" in capsys.readouterr().out


def test_unknown_config_key_reported(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "mystery_knob": 3}))
    rc = cli.main(["train", "--config", str(bad), "--quiet"])
    assert rc == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_non_object_config_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2, 3]")
    rc = cli.main(["train", "--config", str(bad), "--quiet"])
    assert rc == 1
    assert "JSON object" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2
