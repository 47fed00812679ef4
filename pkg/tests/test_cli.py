import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from labelset_rerank import fileio
from labelset_rerank.cli import main


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """A small synthesized corpus shared by the pipeline tests."""
    out = tmp_path_factory.mktemp("corpus")
    runner = CliRunner()
    result = runner.invoke(main, [
        "synth", "--labels", "6", "--components", "2", "--sigma", "1.0",
        "--train-size", "120", "--val-size", "40", "--test-size", "40",
        "--seed", "7", "--out-dir", str(out),
    ])
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def made_ckpt(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    runner = CliRunner()
    result = runner.invoke(main, [
        "train", "made", "--gold", str(corpus / "train_gold.txt"),
        "--vocab", str(corpus / "vocab.txt"), "--epochs", "3",
        "--learning-rate", "0.005", "--hidden", "16", "--orderings", "3",
        "--seed", "1", "--out-dir", str(out),
    ])
    assert result.exit_code == 0, result.output
    return out / "made.ckpt"


def run_ok(args):
    result = CliRunner().invoke(main, args)
    assert result.exit_code == 0, result.output
    return result


def run_fail(args):
    result = CliRunner().invoke(main, args)
    assert result.exit_code != 0
    return result


def test_synth_outputs_and_manifest(corpus):
    for name in ["vocab.txt", "train_gold.txt", "val_gold.txt", "test_gold.txt",
                 "train_marginals.txt", "val_marginals.txt", "test_marginals.txt",
                 "joint.tsv", "manifest.json"]:
        assert (corpus / name).exists(), name
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 7
    assert set(manifest["outputs"]) >= {"vocab.txt", "joint.tsv"}


def test_synth_is_deterministic(tmp_path):
    args = ["synth", "--labels", "5", "--components", "2", "--seed", "3",
            "--train-size", "30", "--val-size", "10", "--test-size", "10"]
    run_ok(args + ["--out-dir", str(tmp_path / "a")])
    run_ok(args + ["--out-dir", str(tmp_path / "b")])
    for name in ["vocab.txt", "train_gold.txt", "train_marginals.txt", "joint.tsv"]:
        assert fileio.file_sha256(tmp_path / "a" / name) == fileio.file_sha256(tmp_path / "b" / name)


def test_synth_exact_joint_capability_error(tmp_path):
    result = run_fail(["synth", "--labels", "25", "--exact-joint",
                       "--out-dir", str(tmp_path / "x")])
    assert "20" in result.output


def test_train_made_and_loss_curve(made_ckpt):
    assert made_ckpt.exists()
    curve = [json.loads(line) for line in
             (made_ckpt.parent / "loss_curve.jsonl").read_text().splitlines()]
    assert [c["epoch"] for c in curve] == [1, 2, 3]


def test_train_fixed_seed_identical_checkpoints(corpus, tmp_path):
    args = ["train", "made", "--gold", str(corpus / "train_gold.txt"),
            "--vocab", str(corpus / "vocab.txt"), "--epochs", "1",
            "--learning-rate", "0.005", "--hidden", "8", "--orderings", "2",
            "--seed", "11"]
    run_ok(args + ["--out-dir", str(tmp_path / "a")])
    run_ok(args + ["--out-dir", str(tmp_path / "b")])
    assert fileio.file_sha256(tmp_path / "a" / "made.ckpt") == \
        fileio.file_sha256(tmp_path / "b" / "made.ckpt")


def test_train_masksa_smoke(corpus, tmp_path):
    run_ok(["train", "masksa", "--gold", str(corpus / "train_gold.txt"),
            "--vocab", str(corpus / "vocab.txt"), "--epochs", "1",
            "--width", "8", "--layers", "1", "--heads", "2",
            "--learning-rate", "0.001", "--seed", "2",
            "--out-dir", str(tmp_path / "m")])
    assert (tmp_path / "m" / "masksa.ckpt").exists()


def test_rerank_alpha_zero_reproduces_map(corpus, made_ckpt, tmp_path):
    out = tmp_path / "rr"
    run_ok(["rerank", "--marginals", str(corpus / "test_marginals.txt"),
            "--checkpoint", str(made_ckpt), "--vocab", str(corpus / "vocab.txt"),
            "--k", "4", "--alpha", "0", "--out-dir", str(out)])
    space = fileio.read_vocabulary(corpus / "vocab.txt")
    predictions = fileio.read_gold(out / "predictions.txt", space)
    marginals = fileio.read_marginals(corpus / "test_marginals.txt", space)
    assert len(predictions) == len(marginals)
    for m in marginals:
        assert predictions[m.instance_id] == m.map_set()
    rows = (out / "reranked_candidates.tsv").read_text().splitlines()
    assert len(rows) == len(marginals) * 4


def test_rerank_digest_mismatch_fails(corpus, made_ckpt, tmp_path):
    other_vocab = tmp_path / "other_vocab.txt"
    other_vocab.write_text("A\nB\nC\nD\nE\nF\n")
    result = run_fail(["rerank", "--marginals", str(corpus / "test_marginals.txt"),
                       "--checkpoint", str(made_ckpt), "--vocab", str(other_vocab),
                       "--out-dir", str(tmp_path / "rr2")])
    assert "digest" in result.output.lower()


def test_eval_gold_vs_gold_is_perfect(corpus, tmp_path):
    out = tmp_path / "ev"
    run_ok(["eval", "--gold", str(corpus / "test_gold.txt"),
            "--pred", str(corpus / "test_gold.txt"),
            "--vocab", str(corpus / "vocab.txt"), "--out-dir", str(out)])
    records = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
    by_metric = {r["metric"]: r["value"] for r in records}
    assert by_metric["micro_f1"] == 1.0
    assert by_metric["macro_f1"] == 1.0


def test_eval_bucketed(corpus, tmp_path):
    out = tmp_path / "evb"
    run_ok(["eval", "--gold", str(corpus / "test_gold.txt"),
            "--pred", str(corpus / "test_gold.txt"),
            "--vocab", str(corpus / "vocab.txt"),
            "--buckets", "3", "--train-gold", str(corpus / "train_gold.txt"),
            "--out-dir", str(out)])
    records = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
    buckets = [r for r in records if r["metric"] == "bucket_micro_f1"]
    assert len(buckets) == 3


def test_eval_avg_rank_from_candidates(corpus, made_ckpt, tmp_path):
    rr = tmp_path / "rr"
    run_ok(["rerank", "--marginals", str(corpus / "test_marginals.txt"),
            "--checkpoint", str(made_ckpt), "--vocab", str(corpus / "vocab.txt"),
            "--k", "8", "--alpha", "0.5", "--beta", "0.5", "--out-dir", str(rr)])
    out = tmp_path / "ev"
    run_ok(["eval", "--gold", str(corpus / "test_gold.txt"),
            "--candidates", str(rr / "reranked_candidates.tsv"),
            "--vocab", str(corpus / "vocab.txt"), "--out-dir", str(out)])
    records = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
    rank = [r for r in records if r["metric"] == "avg_best_rank"][0]["value"]
    assert 1.0 <= rank <= 8.0


def test_eval_key_mismatch_lists_ids(corpus, tmp_path):
    bad_pred = tmp_path / "pred.txt"
    bad_pred.write_text("nonexistent-id\t\n")
    result = run_fail(["eval", "--gold", str(corpus / "test_gold.txt"),
                       "--pred", str(bad_pred), "--vocab", str(corpus / "vocab.txt"),
                       "--out-dir", str(tmp_path / "ev")])
    assert "test-00000" in result.output  # missing gold ids are listed
    assert "1 extra" in result.output


def test_sweep_grid_and_k_curve(corpus, made_ckpt, tmp_path):
    out = tmp_path / "sw"
    run_ok(["sweep", "--marginals", str(corpus / "val_marginals.txt"),
            "--gold", str(corpus / "val_gold.txt"), "--checkpoint", str(made_ckpt),
            "--vocab", str(corpus / "vocab.txt"), "--k", "8",
            "--grid-alpha", "0,0.5,1", "--grid-beta", "0,1",
            "--k-curve", "1,2,4,8", "--out-dir", str(out)])
    grid = [json.loads(line) for line in (out / "grid.jsonl").read_text().splitlines()]
    assert len(grid) == 6
    curve = [json.loads(line) for line in (out / "k_curve.jsonl").read_text().splitlines()]
    assert [c["k"] for c in curve] == [1, 2, 4, 8]
    assert (out / "grid.txt").read_text().startswith("   alpha")


def test_sweep_failure_removes_partial_outputs(corpus, made_ckpt, tmp_path):
    out = tmp_path / "swfail"
    run_fail(["sweep", "--marginals", str(corpus / "val_marginals.txt"),
              "--gold", str(corpus / "val_gold.txt"), "--checkpoint", str(made_ckpt),
              "--vocab", str(corpus / "vocab.txt"), "--k", "4",
              "--grid-alpha", "0,1", "--grid-beta", "0",
              "--k-curve", "1..9", "--out-dir", str(out)])
    assert not (out / "grid.jsonl").exists()
    assert not (out / "grid.txt").exists()
    assert not (out / "manifest.json").exists()


def test_diff_command(corpus, made_ckpt, tmp_path):
    base = tmp_path / "base"
    reranked = tmp_path / "rr"
    run_ok(["rerank", "--marginals", str(corpus / "test_marginals.txt"),
            "--checkpoint", str(made_ckpt), "--vocab", str(corpus / "vocab.txt"),
            "--k", "8", "--alpha", "0", "--out-dir", str(base)])
    run_ok(["rerank", "--marginals", str(corpus / "test_marginals.txt"),
            "--checkpoint", str(made_ckpt), "--vocab", str(corpus / "vocab.txt"),
            "--k", "8", "--alpha", "2.0", "--beta", "0.5", "--out-dir", str(reranked)])
    out = tmp_path / "diff"
    run_ok(["diff", "--base", str(base / "predictions.txt"),
            "--reranked", str(reranked / "predictions.txt"),
            "--vocab", str(corpus / "vocab.txt"), "--out-dir", str(out)])
    rows = [json.loads(line) for line in (out / "diff.jsonl").read_text().splitlines()]
    assert len(rows) == 40
    assert all(set(r) == {"instance_id", "added", "removed"} for r in rows)


def test_rerank_is_deterministic(corpus, made_ckpt, tmp_path):
    args = ["rerank", "--marginals", str(corpus / "val_marginals.txt"),
            "--checkpoint", str(made_ckpt), "--vocab", str(corpus / "vocab.txt"),
            "--k", "6", "--alpha", "1.0", "--beta", "0.25"]
    run_ok(args + ["--out-dir", str(tmp_path / "a")])
    run_ok(args + ["--out-dir", str(tmp_path / "b")])
    for name in ["reranked_candidates.tsv", "predictions.txt"]:
        assert fileio.file_sha256(tmp_path / "a" / name) == fileio.file_sha256(tmp_path / "b" / name)


def test_train_defaults_match_reference_setup():
    from labelset_rerank.cli import train as train_cmd
    from labelset_rerank.masked_attention import MaskedAttentionScorer

    defaults = {p.name: p.default for p in train_cmd.params}
    assert defaults["epochs"] == 30
    assert defaults["batch_size"] == 64
    assert defaults["learning_rate"] == 2e-5
    assert defaults["hidden"] == 500
    assert defaults["orderings"] == 10
    assert defaults["width"] == 256
    assert defaults["layers"] == 6
    assert defaults["heads"] == 8
    msa = MaskedAttentionScorer()
    assert (msa.width, msa.n_layers, msa.n_heads) == (256, 6, 8)


def test_rerank_default_candidate_count():
    from labelset_rerank.cli import rerank as rerank_cmd

    defaults = {p.name: p.default for p in rerank_cmd.params}
    assert defaults["k"] == 50


def test_threads_flag_recorded(corpus, made_ckpt, tmp_path):
    out = tmp_path / "th"
    result = CliRunner().invoke(main, [
        "--threads", "2",
        "rerank", "--marginals", str(corpus / "val_marginals.txt"),
        "--checkpoint", str(made_ckpt), "--vocab", str(corpus / "vocab.txt"),
        "--k", "2", "--out-dir", str(out)])
    assert result.exit_code == 0, result.output
