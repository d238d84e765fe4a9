"""Command-line experiment runner.

Subcommands mirror the pipeline stages so each step is independently
scriptable through the documented file formats:

    synth      write a synthetic dataset directory
    split      assign train/validation/test splits
    train      train one model, write a checkpoint
    score      score one split with a checkpoint, write a score file
    fuse       average score files
    confusion  build the validation confusion matrix
    refine     apply a confusion matrix to a score file
    eval       evaluate a score file against dataset labels
    run        the whole pipeline end to end
    gradcheck  finite-difference validation of the analytic gradients
    sweep      grid-search the fusion regularizers on validation

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from .checkpoint import fusion_from_params, load_checkpoint, lstm_from_params, save_checkpoint
from .context import ConfusionMatrix, build_confusion_matrix, refine_scores
from .data import (class_hash, load_dataset, manifest_hash, split_dataset,
                   split_records, stream_sequences, synth_generate, write_dataset)
from .errors import ConfigError, DataError, NumericalError, VidfuseError
from .experiment import (ExperimentConfig, StageFailure, gradcheck,
                         parse_experiment_config, run_experiment, sweep)
from .fusion import fusion_forward_batch, pooled_batch, train_fusion, zero_row_count
from .lstm import score_sequences, train_lstm
from .metrics import evaluate
from .scorefusion import FusionWeights, fuse_scores
from .scores import ScoreMatrix, load_scores, save_scores


class _Parser(argparse.ArgumentParser):
    """argparse that raises ConfigError instead of exiting with code 2."""

    def error(self, message):
        raise ConfigError(message)


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config PATH is required for this subcommand")
    cfg = parse_experiment_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    return cfg


def _require_out(args, cfg=None) -> str:
    out = args.out or (cfg.out_dir if cfg else None)
    if not out:
        raise ConfigError("an output path is required (--out or [experiment] out)")
    return out


def _labels_for_scores(dataset_dir: str, split: str | None, sm: ScoreMatrix):
    manifest, records = load_dataset(dataset_dir)
    recs = split_records(manifest, records, split) if split else records
    by_id = {r.id: r for r in recs}
    missing = [rid for rid in sm.ids if rid not in by_id]
    if missing:
        raise DataError(f"score ids not in dataset split: {missing[:3]}")
    labels = np.array([by_id[rid].label for rid in sm.ids], dtype=np.int64)
    return manifest, labels


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    if cfg.synth is None:
        raise ConfigError("config has no [synth] section")
    out = _require_out(args, cfg)
    manifest, records = synth_generate(cfg.synth)
    write_dataset(manifest, records, out, packed=args.packed)
    if not args.quiet:
        print(f"wrote {len(records)} records, {manifest.num_classes} classes -> {out}")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args)
    out = _require_out(args, cfg)
    manifest, records = load_dataset(args.data)
    manifest = split_dataset(manifest, records, cfg.split_fractions,
                             cfg.resolved_seeds()["split"])
    write_dataset(manifest, records, out)
    if not args.quiet:
        counts = {s: sum(1 for v in manifest.splits.values() if v == s)
                  for s in ("train", "validation", "test")}
        print(f"split -> {counts}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _require_out(args, cfg)
    manifest, records = load_dataset(args.data)
    train_recs = split_records(manifest, records, "train")
    if not train_recs:
        raise DataError("train split is empty")
    seeds = cfg.resolved_seeds()
    mhash = manifest_hash(manifest)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    if args.model == "fusion":
        reg = replace(cfg.reg, seed=seeds["fusion"], num_classes=manifest.num_classes)
        result = train_fusion(reg, pooled_batch(train_recs))
        save_checkpoint(out, "fusion", result.params.named_parameters(),
                        {"model": "fusion", **asdict(reg)}, mhash)
        if not args.quiet:
            print(f"fusion trained: final loss {result.loss_trace[-1]:.6f}, "
                  f"zero fusion rows {zero_row_count(result.params.w_fuse)}")
    else:
        stream = "spatial" if args.model == "lstm-spatial" else "motion"
        ltc = replace(cfg.lstm, seed=seeds[args.model], num_classes=manifest.num_classes)
        result = train_lstm(ltc, stream_sequences(train_recs, stream))
        meta = {"model": args.model, "input_dim": result.stack.input_dim,
                **asdict(ltc)}
        meta["hidden_dims"] = list(result.stack.hidden_dims)
        meta["num_classes"] = result.stack.num_classes
        save_checkpoint(out, args.model, result.stack.named_parameters(), meta, mhash)
        if not args.quiet:
            print(f"{args.model} trained: final loss {result.loss_trace[-1]:.6f}")
    return 0


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest, records = load_dataset(args.data)
    recs = split_records(manifest, records, args.split)
    if not recs:
        raise DataError(f"split {args.split!r} is empty")
    if ckpt.manifest_hash != manifest_hash(manifest) and not args.quiet:
        print("note: dataset manifest differs from the one the model was trained on",
              file=sys.stderr)
    if ckpt.kind == "fusion":
        params = fusion_from_params(ckpt.params, hidden=ckpt.config.get("hidden", "relu"))
        scores = fusion_forward_batch(params, pooled_batch(recs))
    elif ckpt.kind in ("lstm-spatial", "lstm-motion"):
        stack = lstm_from_params(ckpt.params)
        stream = "spatial" if ckpt.kind == "lstm-spatial" else "motion"
        scores = score_sequences(stack, [seq for seq, _ in stream_sequences(recs, stream)])
    else:
        raise DataError(f"checkpoint has unknown model kind {ckpt.kind!r}")
    sm = ScoreMatrix(ids=[r.id for r in recs], scores=scores, kind="probabilities",
                     class_hash=class_hash(manifest.classes))
    save_scores(sm, args.out)
    if not args.quiet:
        print(f"scored {len(sm)} samples -> {args.out}")
    return 0


def cmd_fuse(args) -> int:
    sources = [load_scores(p) for p in args.scores]
    weights = (FusionWeights.normalized([float(w) for w in args.weights.split(",")])
               if args.weights else None)
    fused = fuse_scores(sources, weights)
    save_scores(fused, args.out)
    if not args.quiet:
        print(f"fused {len(sources)} sources -> {args.out}")
    return 0


def cmd_confusion(args) -> int:
    sm = load_scores(args.scores)
    manifest, labels = _labels_for_scores(args.data, args.split, sm)
    cm = build_confusion_matrix(sm, labels, manifest.num_classes,
                                smoothing=args.epsilon)
    with open(args.out, "w") as f:
        json.dump({"class_count": cm.class_count, "source": cm.source,
                   "rows": cm.table.tolist()}, f, sort_keys=True, indent=1)
        f.write("\n")
    if not args.quiet:
        print(f"confusion matrix ({cm.class_count} classes) -> {args.out}")
    return 0


def cmd_refine(args) -> int:
    sm = load_scores(args.scores)
    with open(args.matrix) as f:
        doc = json.load(f)
    cm = ConfusionMatrix(table=np.array(doc["rows"]), class_count=int(doc["class_count"]),
                         source=str(doc.get("source", "")))
    refined = refine_scores(cm, sm, transpose=args.transpose,
                            renormalize=args.renormalize)
    save_scores(refined, args.out)
    if not args.quiet:
        print(f"refined {len(sm)} rows -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    sm = load_scores(args.scores)
    manifest, labels = _labels_for_scores(args.data, args.split, sm)
    report = evaluate(sm, labels, manifest.num_classes)
    text = "\n".join(report.summary_lines(manifest.classes))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report.to_dict(), f, sort_keys=True, indent=1)
            f.write("\n")
    if not args.quiet:
        print(text)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if not cfg.out_dir:
        raise ConfigError("run needs an output directory (--out or [experiment] out)")
    run_experiment(cfg, quiet=args.quiet)
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck(args.model, args.seed if args.seed is not None else 0,
                       corrupt=args.corrupt)
    if not args.quiet:
        print("\n".join(report.lines()))
    return 0 if report.passed else 3


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    result = sweep(cfg, quiet=args.quiet)
    if not args.quiet:
        print("\n".join(result.lines()))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="vidfuse", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="experiment config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    common(p)
    p.add_argument("--packed", action="store_true", help="write packed binary records")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("split", help="assign stratified splits to a dataset")
    common(p)
    p.add_argument("--data", required=True, help="input dataset directory")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=["lstm-spatial", "lstm-motion", "fusion"])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("score", help="score a dataset split with a checkpoint")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("fuse", help="weighted average of score files")
    common(p, config=False)
    p.add_argument("scores", nargs="+", help="input score files")
    p.add_argument("--weights", help="comma-separated raw weights (normalized)")
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("confusion", help="build a confusion matrix from validation scores")
    common(p, config=False)
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="validation")
    p.add_argument("--epsilon", type=float, default=0.0, help="identity smoothing")
    p.set_defaults(fn=cmd_confusion)

    p = sub.add_parser("refine", help="apply a confusion matrix to scores")
    common(p, config=False)
    p.add_argument("--scores", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--transpose", action="store_true")
    p.add_argument("--renormalize", action="store_true")
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("eval", help="evaluate a score file against labels")
    common(p, config=False)
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="run the full pipeline")
    common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    common(p, config=False)
    p.add_argument("--model", default="lstm", choices=["lstm", "fusion"])
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep", help="grid-search fusion regularizers")
    common(p)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, NumericalError):
            return 3
        if isinstance(cause, (ConfigError,)):
            return 1
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DataError, VidfuseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
