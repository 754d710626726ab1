"""Command-line entry point.

Subcommands: gen-data, train, eval, merge, export-attn, ablate. Options
can come from a JSON config file (--config) with individual flags taking
precedence. Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .ablation import SUITES, run_ablation
from .data import (VAL_SEED_OFFSET, generate_dataset, load_dataset,
                   save_dataset)
from .detector import Detector, DetectorConfig
from .evaluate import evaluate_ap
from .qa import QaConfig, qa_apply
from .structures import PredictionSet
from .tensor import ConfigurationError, ContractError, Tensor, load_tensor
from .train import TrainConfig, train
from .viz import export_attention_heatmaps, plot_loss_curve


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _dataclass_from(cls, file_cfg: dict, overrides: dict):
    """File values first, explicit flags win; unknown keys are rejected."""
    merged = dict(file_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(merged) - valid
    if unknown:
        raise ConfigurationError(
            f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**merged)


def _configs_from_args(args):
    file_cfg = _load_json(args.config) if args.config else {}
    model_cfg = _dataclass_from(DetectorConfig, file_cfg.get("model", {}), {})
    train_over = {"steps": args.steps, "batch": args.batch,
                  "seed": args.seed, "lr_drop_step": args.lr_drop_step}
    train_cfg = _dataclass_from(TrainConfig, file_cfg.get("train", {}),
                                train_over)
    qa_over = {"t_b": getattr(args, "t_b", None),
               "t_c": getattr(args, "t_c", None)}
    qa_cfg = _dataclass_from(QaConfig, file_cfg.get("qa", {}), qa_over)
    return model_cfg, train_cfg, qa_cfg


def _cmd_gen_data(args) -> int:
    scenes = generate_dataset(args.n, seed=args.seed,
                              image_size=args.image_size, m=args.m)
    save_dataset(scenes, Path(args.out) / "train")
    val_scenes = generate_dataset(max(args.n // 4, 1),
                                  seed=args.seed + VAL_SEED_OFFSET,
                                  image_size=args.image_size, m=args.m)
    save_dataset(val_scenes, Path(args.out) / "val")
    print(f"wrote {args.n} train / {len(val_scenes)} val scenes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    model_cfg, train_cfg, qa_cfg = _configs_from_args(args)
    scenes = load_dataset(Path(args.data) / "train", dtype=np.float32)
    out_dir = Path(args.out)

    def log(rec):
        print(f"step {rec['step']:5d}  total {rec['total']:.4f}  "
              f"cls {rec['cls']:.4f}  l1 {rec['l1']:.4f}  "
              f"giou {rec['giou']:.4f}")

    _, _, records = train(model_cfg, train_cfg, qa_cfg, scenes,
                          out_dir=out_dir, resume=args.resume, log_fn=log)
    if records:
        plot_loss_curve(records, out_dir / "loss_curve.png")
    print(f"checkpoint written to {out_dir / 'checkpoint'}")
    return 0


def _cmd_eval(args) -> int:
    model, _, _ = Detector.load_checkpoint(args.checkpoint,
                                           dtype=np.float32)
    file_cfg = _load_json(args.config) if args.config else {}
    qa_cfg = _dataclass_from(QaConfig, file_cfg.get("qa", {}),
                             {"t_b": args.t_b, "t_c": args.t_c})
    scenes = load_dataset(Path(args.data) / args.split, dtype=np.float32)
    report = evaluate_ap(model, scenes, qa_cfg)
    text = json.dumps(report.as_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_merge(args) -> int:
    raw = _load_json(args.predictions)
    probs = np.asarray(raw["probs"], dtype=np.float64)
    boxes = np.asarray(raw["boxes"], dtype=np.float64)
    preds = PredictionSet(probs=Tensor(probs), boxes=Tensor(boxes))
    file_cfg = _load_json(args.config) if args.config else {}
    qa_cfg = _dataclass_from(QaConfig, file_cfg.get("qa", {}),
                             {"t_b": args.t_b, "t_c": args.t_c})
    plan = qa_apply(preds, qa_cfg)
    merged_probs, merged_boxes = plan.merged.as_arrays()
    out = {"groups": plan.groups,
           "num_merges": plan.num_merges,
           "probs": merged_probs.tolist(),
           "boxes": merged_boxes.tolist()}
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_export_attn(args) -> int:
    model, _, _ = Detector.load_checkpoint(args.checkpoint,
                                           dtype=np.float32)
    if args.image:
        image = load_tensor(args.image, dtype=np.float32)
    else:
        from .data import generate_scene
        scene = generate_scene(args.seed, m=model.config.m)
        image = Tensor(scene.image.data.astype(np.float32))
    files = export_attention_heatmaps(model, image, args.out)
    print(f"wrote {len(files)} files to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    model_cfg, train_cfg, qa_cfg = _configs_from_args(args)

    def log(row):
        print(f"{row['config']:>14s}  seed {row['seed']}  "
              f"ap {row['ap']:.3f}  ap50 {row['ap50']:.3f}")

    seeds = tuple(range(args.seed, args.seed + args.n_seeds))
    run_ablation(args.suite, args.out, model_cfg=model_cfg, qa_cfg=qa_cfg,
                 steps=train_cfg.steps, seeds=seeds, n_train=args.n_train,
                 n_val=args.n_val, log_fn=log)
    print(f"report written to {Path(args.out) / (args.suite + '.csv')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sacqdet",
        description="Toy set-prediction detector with pooled content "
                    "queries and duplicate-query aggregation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--config", help="JSON config file")

    p = sub.add_parser("gen-data", help="write synthetic train/val scenes")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--m", type=int, default=3)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a detector on a dataset dir")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr-drop-step", type=int, dest="lr_drop_step")
    p.add_argument("--t-b", type=float, dest="t_b")
    p.add_argument("--t-c", type=float, dest="t_c")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="COCO-style AP on a dataset split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out")
    p.add_argument("--t-b", type=float, dest="t_b")
    p.add_argument("--t-c", type=float, dest="t_c")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("merge", help="aggregate a saved prediction set")
    common(p)
    p.add_argument("--predictions", required=True,
                   help="JSON file with probs and boxes arrays")
    p.add_argument("--out")
    p.add_argument("--t-b", type=float, dest="t_b")
    p.add_argument("--t-c", type=float, dest="t_c")
    p.set_defaults(func=_cmd_merge)

    p = sub.add_parser("export-attn", help="write pooling heat maps")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", help="tensor file; omitted -> synthetic scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_attn)

    p = sub.add_parser("ablate", help="run a config sweep and report AP")
    common(p)
    p.add_argument("--suite", required=True, choices=sorted(SUITES))
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr-drop-step", type=int, dest="lr_drop_step")
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--n-train", type=int, default=256)
    p.add_argument("--n-val", type=int, default=64)
    p.set_defaults(func=_cmd_ablate)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigurationError, ContractError, KeyError, TypeError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
