"""Command-line pipeline: synthesize, train, rerank, evaluate, sweep, diff.

Every command is files-in/files-out with no hidden state, so marginals from
any external predictor plug in. Each command writes a ``manifest.json`` next
to its outputs recording the resolved configuration, input/output digests,
and wall-clock duration; reruns with identical inputs and flags produce
digest-identical outputs. On failure, partial outputs are removed and the
exit code is non-zero.
"""

from __future__ import annotations

import functools
import json
import time
from pathlib import Path

import click
import numpy as np

from . import fileio
from .core import InputError, LabelSpace, RerankConfig, sets_to_indicator
from .made import MadeDensityEstimator
from .masked_attention import MaskedAttentionScorer
from .metrics import (
    avg_best_rank,
    bucketed_f1,
    format_eval_table,
    label_frequencies,
    micro_macro_f1,
    sweep_candidate_counts,
)
from .rerank import DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID, diff_prediction, grid_search, rescore_many
from .synth import EXACT_JOINT_MAX_LABELS, SyntheticSpec, generate
from .topk import enumerate_top_sets

_DEFAULTS = RerankConfig()


class _Run:
    """Tracks a command's outputs so failures leave no partial files."""

    def __init__(self, command: str, out_dir: Path, config: dict) -> None:
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.inputs: dict[str, str] = {}
        self._outputs: list[Path] = []
        self._start = time.monotonic()
        out_dir.mkdir(parents=True, exist_ok=True)

    def add_input(self, name: str, path: str | Path) -> None:
        self.inputs[name] = f"sha256:{fileio.file_sha256(path)}"

    def output(self, name: str) -> Path:
        path = self.out_dir / name
        self._outputs.append(path)
        return path

    def cleanup(self) -> None:
        for path in self._outputs:
            path.unlink(missing_ok=True)

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.config.get("seed"),
            "inputs": self.inputs,
            "outputs": {
                p.name: f"sha256:{fileio.file_sha256(p)}" for p in self._outputs if p.exists()
            },
            "duration_seconds": round(time.monotonic() - self._start, 3),
        }
        with open(self.out_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _command(fn):
    """Convert domain errors to clean non-zero exits and manage the run."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        run: _Run | None = None

        def begin(command: str, out_dir: str, config: dict) -> _Run:
            nonlocal run
            run = _Run(command, Path(out_dir), config)
            return run

        try:
            fn(begin, *args, **kwargs)
        except InputError as exc:
            if run is not None:
                run.cleanup()
            raise click.ClickException(str(exc)) from exc
        except Exception:
            if run is not None:
                run.cleanup()
            raise
        run.finish()

    return wrapper


@click.group()
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker cap for instance-parallel stages (vectorized math is "
                   "single-process; the value is recorded in manifests).")
@click.pass_context
def main(ctx: click.Context, threads: int) -> None:
    """Rerank multi-label predictions with label-set density estimators."""
    if threads < 1:
        raise click.ClickException("--threads must be >= 1")
    ctx.obj = {"threads": threads}


@main.command()
@click.option("--labels", type=int, default=10, show_default=True, help="Label-space size.")
@click.option("--components", type=int, default=3, show_default=True, help="Mixture components.")
@click.option("--sigma", type=float, default=1.0, show_default=True,
              help="Logit-space noise on the emitted base-predictor marginals.")
@click.option("--train-size", type=int, default=2000, show_default=True)
@click.option("--val-size", type=int, default=500, show_default=True)
@click.option("--test-size", type=int, default=500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--exact-joint/--no-exact-joint", "exact_joint", default=None,
              help="Write the exact joint table (default: when feasible).")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_command
def synth(begin, labels, components, sigma, train_size, val_size, test_size, seed,
          exact_joint, out_dir) -> None:
    """Generate a correlated-label corpus with known ground truth."""
    config = {
        "labels": labels, "components": components, "sigma": sigma,
        "train_size": train_size, "val_size": val_size, "test_size": test_size,
        "seed": seed, "exact_joint": exact_joint,
    }
    run = begin("synth", out_dir, config)
    if exact_joint and labels > EXACT_JOINT_MAX_LABELS:
        raise InputError(
            f"--exact-joint supports at most {EXACT_JOINT_MAX_LABELS} labels, got {labels}"
        )
    if components < 1:
        raise InputError("--components must be >= 1")
    rng = np.random.default_rng(seed)
    weights = tuple(float(w) for w in rng.dirichlet(np.full(components, 2.0)))
    # Polarized per-label probabilities give each component a strong
    # co-occurrence / exclusion signature.
    comps = tuple(
        tuple(float(p) for p in rng.beta(0.25, 0.25, size=labels)) for _ in range(components)
    )
    spec = SyntheticSpec(
        n_labels=labels, weights=weights, components=comps, noise_sigma=sigma,
        seed=seed, n_train=train_size, n_val=val_size, n_test=test_size,
    )
    want_joint = exact_joint if exact_joint is not None else labels <= EXACT_JOINT_MAX_LABELS
    data = generate(spec, with_joint=want_joint)
    space = LabelSpace.from_codes(f"L{i:04d}" for i in range(labels))
    fileio.write_vocabulary(run.output("vocab.txt"), space)
    for name, split in (("train", data.train), ("val", data.val), ("test", data.test)):
        fileio.write_gold(run.output(f"{name}_gold.txt"),
                          list(zip(split.instance_ids, split.gold)), space)
        fileio.write_marginals(run.output(f"{name}_marginals.txt"), split.marginals, space)
    if want_joint and data.joint is not None:
        fileio.write_joint_table(run.output("joint.tsv"), data.joint)
    click.echo(f"synth: wrote {labels}-label corpus to {run.out_dir}")


@main.command()
@click.argument("kind", type=click.Choice(["made", "masksa"]))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--epochs", type=int, default=_DEFAULTS.epochs, show_default=True)
@click.option("--batch-size", type=int, default=_DEFAULTS.batch_size, show_default=True)
@click.option("--learning-rate", type=float, default=_DEFAULTS.learning_rate, show_default=True)
@click.option("--seed", type=int, default=_DEFAULTS.seed, show_default=True)
@click.option("--hidden", type=int, default=500, show_default=True, help="MADE hidden width.")
@click.option("--orderings", type=int, default=_DEFAULTS.n_orderings, show_default=True,
              help="MADE orderings.")
@click.option("--width", type=int, default=256, show_default=True, help="Attention model width.")
@click.option("--layers", type=int, default=6, show_default=True, help="Attention layers.")
@click.option("--heads", type=int, default=8, show_default=True, help="Attention heads.")
@click.option("--ff-width", type=int, default=None, help="Feed-forward width (default 4x width).")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_command
def train(begin, kind, gold_path, vocab_path, epochs, batch_size, learning_rate, seed,
          hidden, orderings, width, layers, heads, ff_width, out_dir) -> None:
    """Train a label-set scorer on a gold file and write a checkpoint."""
    config = {
        "kind": kind, "gold": gold_path, "vocab": vocab_path, "epochs": epochs,
        "batch_size": batch_size, "learning_rate": learning_rate, "seed": seed,
        "hidden": hidden, "orderings": orderings, "width": width, "layers": layers,
        "heads": heads, "ff_width": ff_width,
    }
    run = begin("train", out_dir, config)
    run.add_input("vocab", vocab_path)
    run.add_input("gold", gold_path)
    space = fileio.read_vocabulary(vocab_path)
    gold = fileio.read_gold(gold_path, space)
    if not gold:
        raise InputError(f"{gold_path}: training corpus is empty")
    Y = sets_to_indicator(list(gold.values()), len(space))
    if kind == "made":
        model = MadeDensityEstimator(
            hidden_units=hidden, n_orderings=orderings, epochs=epochs,
            batch_size=batch_size, learning_rate=learning_rate, seed=seed,
        )
    else:
        model = MaskedAttentionScorer(
            width=width, n_layers=layers, n_heads=heads, ff_width=ff_width,
            epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed,
        )
    model.fit(Y)
    fileio.save_checkpoint(model, run.output(f"{kind}.ckpt"), space.digest)
    fileio.write_records(
        run.output("loss_curve.jsonl"),
        [{"epoch": e + 1, "loss": loss} for e, loss in enumerate(model.loss_curve_)],
    )
    click.echo(f"train: {kind} final epoch loss {model.loss_curve_[-1]:.6f}")


@main.command()
@click.option("--marginals", "marginals_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=_DEFAULTS.k, show_default=True,
              help="Candidates per instance.")
@click.option("--alpha", type=float, default=0.0, show_default=True)
@click.option("--beta", type=float, default=0.0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_command
def rerank(begin, marginals_path, checkpoint_path, vocab_path, k, alpha, beta, out_dir) -> None:
    """Enumerate top-k candidates, rescore them, and write predictions."""
    config = {
        "marginals": marginals_path, "checkpoint": checkpoint_path, "vocab": vocab_path,
        "k": k, "alpha": alpha, "beta": beta, "seed": None,
    }
    run = begin("rerank", out_dir, config)
    run.add_input("vocab", vocab_path)
    run.add_input("marginals", marginals_path)
    run.add_input("checkpoint", checkpoint_path)
    space = fileio.read_vocabulary(vocab_path)
    model = fileio.load_checkpoint(checkpoint_path, expected_digest=space.digest)
    marginals = fileio.read_marginals(marginals_path, space)
    if not marginals:
        raise InputError(f"{marginals_path}: no instances")
    lists = [enumerate_top_sets(m, k) for m in marginals]
    reranked = rescore_many(lists, model, alpha, beta)
    fileio.write_candidates(run.output("reranked_candidates.tsv"), reranked, space)
    fileio.write_gold(
        run.output("predictions.txt"),
        [(r.instance_id, r.top().members) for r in reranked],
        space,
    )
    click.echo(f"rerank: {len(reranked)} instances x {k} candidates")


@main.command("eval")
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pred", "pred_path", type=click.Path(exists=True, dir_okay=False),
              help="Predictions file (gold format) for micro/macro F1.")
@click.option("--candidates", "candidates_path", type=click.Path(exists=True, dir_okay=False),
              help="Candidates file for the average best-candidate rank.")
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--buckets", type=int, default=None, help="Frequency buckets for per-bucket F1.")
@click.option("--train-gold", "train_gold_path", type=click.Path(exists=True, dir_okay=False),
              help="Training gold file supplying bucket frequencies.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_command
def eval_cmd(begin, gold_path, pred_path, candidates_path, vocab_path, buckets,
             train_gold_path, out_dir) -> None:
    """Score predictions (micro/macro F1, buckets) and candidate lists (avg rank)."""
    config = {
        "gold": gold_path, "pred": pred_path, "candidates": candidates_path,
        "vocab": vocab_path, "buckets": buckets, "train_gold": train_gold_path,
        "seed": None,
    }
    run = begin("eval", out_dir, config)
    if pred_path is None and candidates_path is None:
        raise InputError("nothing to evaluate: pass --pred and/or --candidates")
    if buckets is not None and train_gold_path is None:
        raise InputError("--buckets needs --train-gold for label frequencies")
    run.add_input("vocab", vocab_path)
    run.add_input("gold", gold_path)
    space = fileio.read_vocabulary(vocab_path)
    gold = fileio.read_gold(gold_path, space)
    records: list[dict] = []
    lines: list[str] = []
    if pred_path is not None:
        run.add_input("pred", pred_path)
        predictions = fileio.read_gold(pred_path, space)
        _check_same_keys(predictions, gold)
        report = micro_macro_f1(predictions, gold, len(space))
        records.append({"metric": "micro_f1", "value": report.micro_f1})
        records.append({"metric": "macro_f1", "value": report.macro_f1})
        lines.append(format_eval_table([("predictions", report.micro_f1, report.macro_f1)]))
        if buckets is not None:
            run.add_input("train_gold", train_gold_path)
            train_gold = fileio.read_gold(train_gold_path, space)
            freq = label_frequencies(list(train_gold.values()), len(space))
            per_bucket = bucketed_f1(predictions, gold, freq, buckets)
            report.bucket_f1 = per_bucket
            lines.append("")
            lines.append("bucket  micro_f1   (1 = most frequent labels)")
            for b, score in enumerate(per_bucket, start=1):
                records.append({"metric": "bucket_micro_f1", "bucket": b, "value": score})
                lines.append(f"{b:>6}  {score:>8.4f}")
    if candidates_path is not None:
        run.add_input("candidates", candidates_path)
        lists = fileio.read_candidates(candidates_path, space)
        missing = [c.instance_id for c in lists if c.instance_id not in gold]
        if missing:
            raise InputError(f"candidates reference instances without gold: {missing[:10]}")
        rank = avg_best_rank(lists, gold)
        records.append({"metric": "avg_best_rank", "value": rank})
        lines.append("")
        lines.append(f"average rank of best candidate: {rank:.4f}")
    fileio.write_records(run.output("report.jsonl"), records)
    report_text = "\n".join(lines).strip() + "\n"
    run.output("report.txt").write_text(report_text, encoding="utf-8")
    click.echo(report_text.rstrip())


@main.command()
@click.option("--marginals", "marginals_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=_DEFAULTS.k, show_default=True)
@click.option("--grid-alpha", default=None, help="Comma-separated alpha grid.")
@click.option("--grid-beta", default=None, help="Comma-separated beta grid.")
@click.option("--objective", type=click.Choice(["micro_f1", "macro_f1"]), default="micro_f1",
              show_default=True)
@click.option("--k-curve", "k_curve", default=None,
              help="Candidate-count sweep, e.g. '1..50' or '1,2,5,10,50'.")
@click.option("--alpha", type=float, default=None, help="Alpha for the k-curve sweep.")
@click.option("--beta", type=float, default=None, help="Beta for the k-curve sweep.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_command
def sweep(begin, marginals_path, gold_path, checkpoint_path, vocab_path, k,
          grid_alpha, grid_beta, objective, k_curve, alpha, beta, out_dir) -> None:
    """Grid-search alpha/beta on validation data and/or sweep candidate counts."""
    config = {
        "marginals": marginals_path, "gold": gold_path, "checkpoint": checkpoint_path,
        "vocab": vocab_path, "k": k, "grid_alpha": grid_alpha, "grid_beta": grid_beta,
        "objective": objective, "k_curve": k_curve, "alpha": alpha, "beta": beta,
        "seed": None,
    }
    run = begin("sweep", out_dir, config)
    do_grid = k_curve is None or grid_alpha is not None or grid_beta is not None
    run.add_input("vocab", vocab_path)
    run.add_input("gold", gold_path)
    run.add_input("marginals", marginals_path)
    run.add_input("checkpoint", checkpoint_path)
    space = fileio.read_vocabulary(vocab_path)
    model = fileio.load_checkpoint(checkpoint_path, expected_digest=space.digest)
    gold = fileio.read_gold(gold_path, space)
    marginals = fileio.read_marginals(marginals_path, space)
    missing = [m.instance_id for m in marginals if m.instance_id not in gold]
    if missing:
        raise InputError(f"marginals reference instances without gold: {missing[:10]}")
    lists = [enumerate_top_sets(m, k) for m in marginals]

    chosen_alpha, chosen_beta = alpha, beta
    if do_grid:
        alphas = _parse_grid(grid_alpha, DEFAULT_ALPHA_GRID, "--grid-alpha")
        betas = _parse_grid(grid_beta, DEFAULT_BETA_GRID, "--grid-beta")
        result = grid_search(lists, gold, model, len(space), alphas, betas, objective)
        fileio.write_records(run.output("grid.jsonl"), result.table)
        grid_lines = [f"{'alpha':>8} {'beta':>8} {'micro_f1':>9} {'macro_f1':>9}"]
        for cell in result.table:
            grid_lines.append(
                f"{cell['alpha']:>8.3g} {cell['beta']:>8.3g} "
                f"{cell['micro_f1']:>9.4f} {cell['macro_f1']:>9.4f}"
            )
        grid_lines.append(
            f"chosen: alpha={result.best_alpha:g} beta={result.best_beta:g} "
            f"{objective}={getattr(result, 'best_' + objective):.4f}"
        )
        run.output("grid.txt").write_text("\n".join(grid_lines) + "\n", encoding="utf-8")
        click.echo(grid_lines[-1])
        if chosen_alpha is None:
            chosen_alpha = result.best_alpha
        if chosen_beta is None:
            chosen_beta = result.best_beta

    if k_curve is not None:
        if chosen_alpha is None or chosen_beta is None:
            raise InputError("--k-curve needs --alpha/--beta or a grid search to choose them")
        k_values = _parse_k_curve(k_curve, k)
        curve = sweep_candidate_counts(lists, gold, model, chosen_alpha, chosen_beta,
                                       k_values, len(space))
        fileio.write_records(
            run.output("k_curve.jsonl"),
            [
                {"k": kv, "micro_f1": rep.micro_f1, "macro_f1": rep.macro_f1,
                 "alpha": chosen_alpha, "beta": chosen_beta}
                for kv, rep in curve
            ],
        )
        click.echo(f"k-curve: micro_f1 {curve[0][1].micro_f1:.4f} (k={curve[0][0]}) -> "
                   f"{curve[-1][1].micro_f1:.4f} (k={curve[-1][0]})")


@main.command()
@click.option("--base", "base_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Predictions before reranking (gold format).")
@click.option("--reranked", "reranked_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Predictions after reranking (gold format).")
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_command
def diff(begin, base_path, reranked_path, vocab_path, out_dir) -> None:
    """List the labels each instance gained and lost through reranking."""
    config = {"base": base_path, "reranked": reranked_path, "vocab": vocab_path, "seed": None}
    run = begin("diff", out_dir, config)
    run.add_input("vocab", vocab_path)
    run.add_input("base", base_path)
    run.add_input("reranked", reranked_path)
    space = fileio.read_vocabulary(vocab_path)
    base = fileio.read_gold(base_path, space)
    reranked = fileio.read_gold(reranked_path, space)
    _check_same_keys(reranked, base)
    rows = []
    for instance_id in base:
        added, removed = diff_prediction(base[instance_id], reranked[instance_id])
        rows.append({
            "instance_id": instance_id,
            "added": list(space.decode(added)),
            "removed": list(space.decode(removed)),
        })
    fileio.write_records(run.output("diff.jsonl"), rows)
    changed = sum(1 for r in rows if r["added"] or r["removed"])
    click.echo(f"diff: {changed} of {len(rows)} predictions changed")


def _check_same_keys(predictions, gold) -> None:
    missing = sorted(set(gold) - set(predictions))
    extra = sorted(set(predictions) - set(gold))
    if missing or extra:
        raise InputError(
            f"instance keys differ: {len(missing)} missing, {len(extra)} extra "
            f"(first few: {(missing + extra)[:10]})"
        )


def _parse_grid(text: str | None, default: tuple[float, ...], flag: str) -> tuple[float, ...]:
    if text is None:
        return default
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise InputError(f"{flag}: malformed grid {text!r}") from None
    if not values:
        raise InputError(f"{flag}: empty grid")
    return values


def _parse_k_curve(text: str, k_max: int) -> list[int]:
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise InputError(f"--k-curve: malformed spec {text!r}") from None
    if not values or min(values) < 1:
        raise InputError(f"--k-curve: values must be >= 1, got {text!r}")
    if max(values) > k_max:
        raise InputError(f"--k-curve: values exceed --k={k_max}")
    return values


if __name__ == "__main__":
    main()
