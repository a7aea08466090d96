"""Command-line entry points.

Subcommands: split, preprocess, encode, train, ablate, predict, report.
Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import corpus, evalreport
from .encoders import EmbeddingCache, encode_image, encode_text, toy_image_spec, toy_text_spec
from .ensemble import EnsembleError
from .fusion import ALL_CONFIG_IDS, FusionError, HybridHeadConfig, ModelConfigId, load_checkpoint, save_checkpoint
from .preprocess import HashTokenizer, PreprocessError, load_boxes, preprocess_image, remove_text_regions, tokenize_text
from .training import HeadPredictor, TrainConfig, TrainingDivergence, load_train_config, train_fold


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors -> exit code 1
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="memeclf", description="Multimodal fusion ablation harness")
    parser.add_argument("--config", help="training config file (JSON or YAML)")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--task", choices=["A", "B"], default="A")
    parser.add_argument("--toy-encoders", action="store_true", default=True,
                        help="use the deterministic toy encoders (default; pretrained adapters are optional)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="stratified k-fold split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", help="image preprocessing / text-removed variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root", default=".")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--remove-text", action="store_true")
    p.add_argument("--boxes", help="box file (required with --remove-text)")

    p = sub.add_parser("encode", help="fill the embedding cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root", default=".")
    p.add_argument("--cache-dir", required=True)

    p = sub.add_parser("train", help="train one configuration on one fold or all folds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root", default=".")
    p.add_argument("--folds", required=True, help="fold assignment file from `split`")
    p.add_argument("--model", required=True, choices=["M1", "M2", "M3", "M4", "M7", "M8"])
    p.add_argument("--fold", default="all", help="fold index or 'all'")
    p.add_argument("--text-removed-root", help="image root for the text-removed variant (M3/M8)")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("ablate", help="run the multi-configuration ablation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root", default=".")
    p.add_argument("--folds", required=True)
    p.add_argument("--configs", default=",".join(ALL_CONFIG_IDS), help="comma-separated configuration ids")
    p.add_argument("--text-removed-root", help="image root for the text-removed variant (M3/M8)")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("predict", help="emit a prediction file from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--image-root", default=".")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="re-emit a saved ablation table")
    p.add_argument("--table", required=True, help="ablation.json written by `ablate`")
    p.add_argument("--format", choices=["csv", "markdown", "figure"], default="markdown")
    p.add_argument("--out", required=True)
    return parser


def _train_config(args) -> TrainConfig:
    if args.config:
        cfg = load_train_config(args.config)
        if args.seed != 42:
            cfg = TrainConfig(**{**cfg.__dict__, "seed": args.seed})
        return cfg
    return TrainConfig(seed=args.seed)


def _embed(args, manifest, image_root):
    return evalreport.embed_manifest(
        manifest,
        text_spec=toy_text_spec(args.seed),
        image_spec=toy_image_spec(args.seed),
        image_root=image_root,
    )


def _cmd_split(args) -> int:
    manifest = corpus.load_manifest(args.manifest, args.task)
    folds = corpus.stratified_kfold(manifest, args.k, args.seed)
    corpus.save_fold_assignment(folds, args.out)
    print(f"wrote {args.out}: {len(folds.assignment)} samples into {args.k} folds")
    return 0


def _cmd_preprocess(args) -> int:
    manifest = corpus.load_manifest(args.manifest, args.task)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Path(args.image_root)
    if args.remove_text:
        if not args.boxes:
            print("error: --remove-text requires --boxes", file=sys.stderr)
            return 1
        boxes = load_boxes(args.boxes)
        for s in manifest.samples:
            img = np.asarray(Image.open(root / s.image_path).convert("RGB"))
            cleaned = remove_text_regions(img, boxes.get(s.id, []))
            Image.fromarray(cleaned).save(out_dir / Path(s.image_path).name)
        print(f"wrote {len(manifest)} text-removed images to {out_dir}")
    else:
        for s in manifest.samples:
            tensor = preprocess_image(root / s.image_path, source_id=s.id)
            np.save(out_dir / (Path(s.image_path).stem + ".npy"), tensor.values.astype(np.float32))
        print(f"wrote {len(manifest)} preprocessed tensors to {out_dir}")
    return 0


def _cmd_encode(args) -> int:
    manifest = corpus.load_manifest(args.manifest, args.task)
    cache = EmbeddingCache(args.cache_dir)
    tokenizer = HashTokenizer()
    text_spec, image_spec = toy_text_spec(args.seed), toy_image_spec(args.seed)
    digest = f"seed{args.seed}"
    root = Path(args.image_root)
    for s in manifest.samples:
        cache.put(text_spec.backend, s.id, digest, encode_text(tokenize_text(s.ocr_text, tokenizer), text_spec))
        tensor = preprocess_image(root / s.image_path, source_id=s.id)
        cache.put(image_spec.backend, s.id, digest, encode_image(tensor, image_spec))
    print(f"cached {len(manifest)} text and image embeddings in {args.cache_dir}")
    return 0


def _cmd_train(args) -> int:
    manifest = corpus.load_manifest(args.manifest, args.task)
    folds = corpus.load_fold_assignment(args.folds)
    cfg = _train_config(args)
    model_cfg = ModelConfigId.of(args.model)
    image_root = args.text_removed_root if args.model in ("M3", "M8") else args.image_root
    if image_root is None:
        print(f"error: {args.model} requires --text-removed-root", file=sys.stderr)
        return 2
    data = _embed(args, manifest, image_root)
    head_cfg = HybridHeadConfig(num_classes=corpus.LABELS_PER_TASK[args.task], dropout_rate=cfg.dropout_rate)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fold_list = range(folds.k) if args.fold == "all" else [int(args.fold)]
    for fold in fold_list:
        train, val = data.split_by_fold(folds, fold)
        record, model = train_fold(model_cfg, train, val, cfg, head_cfg)
        save_checkpoint(model, out_dir / f"{args.model}_fold{fold}.ckpt", seed=cfg.seed)
        record.to_csv(out_dir / f"{args.model}_fold{fold}_trace.csv")
        print(f"{args.model} fold {fold}: best epoch {record.best_epoch}, "
              f"val macro-F1 {max(record.val_macro_f1):.4f}")
    return 0


def _cmd_ablate(args) -> int:
    manifest = corpus.load_manifest(args.manifest, args.task)
    folds = corpus.load_fold_assignment(args.folds)
    cfg = _train_config(args)
    configs = [c.strip() for c in args.configs.split(",") if c.strip()]
    data = _embed(args, manifest, args.image_root)
    data_removed = None
    if any(c in ("M3", "M8") for c in configs):
        if not args.text_removed_root:
            print("error: M3/M8 require --text-removed-root", file=sys.stderr)
            return 2
        data_removed = _embed(args, manifest, args.text_removed_root)
    head_cfg = HybridHeadConfig(num_classes=corpus.LABELS_PER_TASK[args.task], dropout_rate=cfg.dropout_rate)
    table = evalreport.ablation_run(data, folds, configs, cfg, head_cfg, data_text_removed=data_removed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evalreport.emit_report(table, "csv", out_dir / "ablation.csv")
    evalreport.emit_report(table, "markdown", out_dir / "ablation.md")
    evalreport.emit_report(table, "figure", out_dir / "ablation.png")
    rows = [row.__dict__ for row in table.rows]
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    print(evalreport.ablation_table_markdown(table))
    return 0


def _cmd_predict(args) -> int:
    manifest = corpus.load_manifest(args.manifest, args.task)
    model, _seed = load_checkpoint(args.checkpoint)
    data = _embed(args, manifest, args.image_root)
    evalreport.emit_predictions(HeadPredictor(model), data, args.out)
    print(f"wrote predictions for {len(manifest)} samples to {args.out}")
    return 0


def _cmd_report(args) -> int:
    rows = json.loads(Path(args.table).read_text(encoding="utf-8"))
    table = evalreport.AblationTable(rows=[evalreport.AblationRow(**r) for r in rows])
    evalreport.emit_report(table, args.format, args.out)
    print(f"wrote {args.format} report to {args.out}")
    return 0


_COMMANDS = {
    "split": _cmd_split,
    "preprocess": _cmd_preprocess,
    "encode": _cmd_encode,
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "predict": _cmd_predict,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (corpus.DataError, PreprocessError, FusionError, EnsembleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
