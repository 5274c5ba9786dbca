"""Command-line interface.

Subcommands mirror the library surface: train a model, evaluate or fuse
saved score matrices, run the supervision ablation, export the synthetic
dataset, run the description pipeline, and finite-difference-check the
gradients.  A JSON config file supplies any ``TrainConfig`` field;
explicit command-line flags override file values.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .autodiff import GradientCheckError, finite_diff_errors
from .descriptions import (
    BackendError,
    HttpBackend,
    KnowledgeBase,
    MockBackend,
    PipelineError,
    load_corpus,
    run_pipeline,
    save_corpus,
    save_records,
)
from .reporting import (
    plot_ablation,
    read_scores_csv,
    render_training_report,
    write_ablation_csv,
    write_scores_csv,
)
from .synthetic import build_sign_corpus, default_sign_specs, generate_dataset
from .training import (
    STREAMS,
    TrainConfig,
    TrainingDivergedError,
    accuracy_from_scores,
    evaluate,
    fuse_scores,
    grad_check_fixture,
    load_model,
    prepare_split,
    run_ablation,
    save_model,
    train,
)

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signalign",
        description="Skeleton sign recognition with text-aligned contrastive training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--config", type=str, default=None, help="JSON file of config fields")
        p.add_argument("--out-dir", type=str, default=None, help="directory for outputs")

    p_train = sub.add_parser("train", help="train a model and write metrics, figures, and the model blob")
    add_common(p_train)
    p_train.add_argument("--stream", choices=STREAMS, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--num-classes", type=int, default=None)
    p_train.add_argument("--alpha", type=float, default=None)
    p_train.add_argument("--no-texts", action="store_true", help="classifier-only training")
    p_train.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")

    p_eval = sub.add_parser("evaluate", help="evaluate a saved model on its test split")
    add_common(p_eval)
    p_eval.add_argument("--model", required=True, help="model blob written by train")
    p_eval.add_argument("--scores", type=str, default=None, help="write the score matrix CSV here")

    p_ablate = sub.add_parser("ablate", help="train every text-supervision variant")
    add_common(p_ablate)
    p_ablate.add_argument("--epochs", type=int, default=None)
    p_ablate.add_argument("--num-classes", type=int, default=None)
    p_ablate.add_argument("--quiet", action="store_true")

    p_fuse = sub.add_parser("fuse", help="sum per-stream score matrices and report accuracy")
    p_fuse.add_argument("--scores", nargs="+", required=True, help="score CSVs from evaluate/train")
    p_fuse.add_argument("--out", type=str, default=None, help="write the fused score CSV here")

    p_data = sub.add_parser("generate-data", help="export the synthetic dataset, corpus, and KB")
    add_common(p_data)
    p_data.add_argument("--num-classes", type=int, default=None)

    p_desc = sub.add_parser("generate-descriptions", help="run the description pipeline over a corpus")
    add_common(p_desc)
    p_desc.add_argument("--corpus", type=str, default=None, help="sign list JSONL; default: synthetic corpus")
    p_desc.add_argument("--kb", type=str, default=None, help="knowledge base JSONL; default: synthetic KB")
    p_desc.add_argument("--backend", choices=("mock", "http"), default="mock")
    p_desc.add_argument("--url", type=str, default=None, help="endpoint for the http backend")
    p_desc.add_argument("--timeout", type=float, default=10.0)
    p_desc.add_argument("--retries", type=int, default=2)
    p_desc.add_argument("--synonyms", type=int, default=None, help="variants per sign")
    p_desc.add_argument("--out", type=str, required=True, help="description records JSONL")

    p_grad = sub.add_parser("grad-check", help="finite-difference check of the full objective")
    p_grad.add_argument("--seed", type=int, default=1)
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)

    return parser


def _build_config(args) -> TrainConfig:
    doc = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a JSON object of TrainConfig fields")
    config = TrainConfig.from_dict(doc)
    overrides = {}
    for flag, field in (
        ("seed", "seed"),
        ("stream", "stream"),
        ("epochs", "epochs"),
        ("num_classes", "num_classes"),
        ("alpha", "alpha"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "no_texts", False):
        overrides.update(
            use_global_texts=False, use_synonym_texts=False, use_part_texts=False
        )
    return dataclasses.replace(config, **overrides) if overrides else config


def _out_dir(args, default: str) -> Path:
    out = Path(args.out_dir) if args.out_dir else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _epoch_line(m) -> str:
    return (
        f"epoch {m.epoch:3d}  lr {m.lr:.5f}  cls {m.cls_loss:.4f}  "
        f"con {m.con_loss:.4f}  total {m.total_loss:.4f}  "
        f"train@1 {m.train_top1:.3f}  test@1 {m.test_top1:.3f}  test@5 {m.test_top5:.3f}"
    )


def cmd_train(args) -> int:
    config = _build_config(args)
    out = _out_dir(args, "signalign-run")
    progress = None if args.quiet else lambda m: print(_epoch_line(m))
    started = time.time()
    result = train(config, progress=progress)
    elapsed = time.time() - started
    paths = render_training_report(result, out)
    model_path = out / "model.npz"
    save_model(result.model, config, model_path)
    (out / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    final = result.final
    print(
        f"finished {config.epochs} epochs in {elapsed:.1f}s: "
        f"test top-1 {final.test_top1:.4f}, top-5 {final.test_top5:.4f}"
    )
    for name, path in {**paths, "model": model_path}.items():
        print(f"  {name}: {path}")
    return 0


def cmd_evaluate(args) -> int:
    model, config = load_model(args.model)
    specs = default_sign_specs(config.num_classes, seed=config.seed, noise=config.noise)
    split = generate_dataset(
        specs,
        config.samples_per_class,
        config.frames,
        seed=config.seed,
        layout=model.layout,
    )
    values, labels = prepare_split(split.test, config.stream, model.layout)
    result = evaluate(model, values, labels)
    print(
        f"test top-1 {result.top1:.4f}, top-5 {result.top5:.4f} "
        f"({len(labels)} clips, stream {config.stream})"
    )
    if args.scores:
        write_scores_csv(result.scores, labels, args.scores)
        print(f"  scores: {args.scores}")
    return 0


def cmd_ablate(args) -> int:
    config = _build_config(args)
    out = _out_dir(args, "signalign-ablation")
    progress = None
    if not args.quiet:
        progress = lambda name, m: print(f"[{name}] {_epoch_line(m)}")
    rows = run_ablation(config, progress=progress)
    csv_path = out / "ablation.csv"
    png_path = out / "ablation.png"
    write_ablation_csv(rows, csv_path)
    plot_ablation(rows, png_path)
    for r in rows:
        print(
            f"{r.name:10s} total {r.total_loss:.4f}  "
            f"test@1 {r.test_top1:.4f}  test@5 {r.test_top5:.4f}"
        )
    print(f"  table: {csv_path}")
    print(f"  chart: {png_path}")
    return 0


def cmd_fuse(args) -> int:
    matrices, labels = [], None
    for path in args.scores:
        scores, file_labels = read_scores_csv(path)
        if labels is None:
            labels = file_labels
        elif not np.array_equal(labels, file_labels):
            raise ValueError(f"labels in {path} disagree with the first scores file")
        matrices.append(scores)
    fused = fuse_scores(matrices)
    top1 = accuracy_from_scores(fused, labels, k=1)
    top5 = accuracy_from_scores(fused, labels, k=min(5, fused.shape[1]))
    print(f"fused {len(matrices)} streams: top-1 {top1:.4f}, top-5 {top5:.4f}")
    if args.out:
        write_scores_csv(fused, labels, args.out)
        print(f"  fused scores: {args.out}")
    return 0


def cmd_generate_data(args) -> int:
    config = _build_config(args)
    out = _out_dir(args, "signalign-data")
    specs = default_sign_specs(config.num_classes, seed=config.seed, noise=config.noise)
    split = generate_dataset(
        specs, config.samples_per_class, config.frames, seed=config.seed
    )
    from .skeleton import default_layout
    from .synthetic import values_array

    layout = default_layout()
    data_path = out / "dataset.npz"
    with open(data_path, "wb") as fh:
        np.savez(
            fh,
            train_values=values_array(split.train),
            train_labels=np.array([s.label for s in split.train], dtype=np.int64),
            test_values=values_array(split.test),
            test_labels=np.array([s.label for s in split.test], dtype=np.int64),
        )
    entries, kb = build_sign_corpus(specs)
    corpus_path = out / "corpus.jsonl"
    kb_path = out / "kb.jsonl"
    layout_path = out / "layout.json"
    save_corpus(entries, corpus_path)
    kb.save(kb_path)
    layout.to_json(layout_path)
    print(
        f"wrote {len(split.train)} train / {len(split.test)} test clips "
        f"({config.num_classes} classes)"
    )
    for label, path in (
        ("dataset", data_path),
        ("corpus", corpus_path),
        ("kb", kb_path),
        ("layout", layout_path),
    ):
        print(f"  {label}: {path}")
    return 0


def cmd_generate_descriptions(args) -> int:
    config = _build_config(args)
    if (args.corpus is None) != (args.kb is None):
        raise ValueError("--corpus and --kb must be given together")
    if args.corpus is not None:
        entries = load_corpus(args.corpus)
        kb = KnowledgeBase.load(args.kb)
    else:
        specs = default_sign_specs(config.num_classes, seed=config.seed, noise=config.noise)
        entries, kb = build_sign_corpus(specs)
    if args.backend == "http":
        if not args.url:
            raise ValueError("--url is required with --backend http")
        backend = HttpBackend(args.url, timeout=args.timeout, retries=args.retries)
    else:
        backend = MockBackend(seed=config.seed)
    synonym_count = args.synonyms if args.synonyms is not None else config.synonym_count
    result = run_pipeline(entries, kb, backend, synonym_count=synonym_count)
    save_records(result.records, args.out)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {len(result.records)} records for {len(entries)} signs to {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    objective, params, names = grad_check_fixture(seed=args.seed)
    started = time.time()
    errors = finite_diff_errors(objective, params, eps=args.eps)
    elapsed = time.time() - started
    for name, err in zip(names, errors):
        print(f"{name:26s} max relative error {err:.3e}")
    worst = max(errors)
    ok = worst < args.tolerance
    verdict = "PASS" if ok else "FAIL"
    print(f"{verdict}: worst {worst:.3e} vs tolerance {args.tolerance:.1e} ({elapsed:.1f}s)")
    return 0 if ok else 1


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "fuse": cmd_fuse,
    "generate-data": cmd_generate_data,
    "generate-descriptions": cmd_generate_descriptions,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (
        ValueError,
        KeyError,
        OSError,
        PipelineError,
        BackendError,
        TrainingDivergedError,
        GradientCheckError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
