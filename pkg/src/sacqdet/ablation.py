"""Ablation orchestration: trains the toy detector under small config
sweeps with fixed seeds and reports AP per configuration as CSV plus a
bar chart.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

from .data import generate_dataset, VAL_SEED_OFFSET
from .detector import DetectorConfig
from .evaluate import evaluate_ap
from .qa import QaConfig
from .tensor import ConfigurationError
from .train import TrainConfig, train
from .viz import plot_ablation_bars

CSV_HEADER = ("config", "ap", "ap50", "ap75", "seed")


def _sacq_suite(model_cfg, qa_cfg):
    """Toggle matrix: bare decoder, +global init, +local enhance, +QA."""
    def mc(**over):
        return dataclasses.replace(model_cfg, **over)

    def qc(**over):
        return dataclasses.replace(qa_cfg, **over)

    return [
        ("baseline", mc(sacq_global=False, sacq_local=False),
         qc(enabled=False)),
        ("global", mc(sacq_global=True, sacq_local=False),
         qc(enabled=False)),
        ("global_local", mc(sacq_global=True, sacq_local=True),
         qc(enabled=False)),
        ("full", mc(sacq_global=True, sacq_local=True), qc(enabled=True)),
    ]


def _cr_suite(model_cfg, qa_cfg):
    return [
        ("cr_on", dataclasses.replace(model_cfg, channel_reweighting=True),
         qa_cfg),
        ("cr_off", dataclasses.replace(model_cfg, channel_reweighting=False),
         qa_cfg),
    ]


def _tb_suite(model_cfg, qa_cfg):
    return [(f"tb_{tb:.1f}", model_cfg,
             dataclasses.replace(qa_cfg, t_b=tb, enabled=True))
            for tb in (0.9, 0.8, 0.7)]


def _amp_depth_suite(model_cfg, qa_cfg):
    return [(f"depth_{k}", dataclasses.replace(model_cfg, amp_depth=k),
             qa_cfg) for k in range(1, 6)]


def _normalization_suite(model_cfg, qa_cfg):
    return [(name, dataclasses.replace(model_cfg, normalization=name),
             qa_cfg) for name in ("softmax", "sigmoid")]


SUITES = {
    "sacq": _sacq_suite,
    "cr": _cr_suite,
    "tb": _tb_suite,
    "amp-depth": _amp_depth_suite,
    "normalization": _normalization_suite,
}


def run_ablation(suite: str, out_dir, model_cfg: DetectorConfig = None,
                 qa_cfg: QaConfig = None, steps: int = 600,
                 seeds=(0, 1, 2), n_train: int = 256, n_val: int = 64,
                 image_size: int = 64, train_cfg: TrainConfig = None,
                 log_fn=None) -> list[dict]:
    """Train/evaluate every (config, seed) cell; write CSV + chart.

    train_cfg carries the optimizer recipe; its steps, seed, and
    lr_drop_step fields are overridden per cell. Returned rows carry the
    CSV fields plus the validation merge count, which the CSV format
    deliberately omits.
    """
    if suite not in SUITES:
        raise ConfigurationError(
            f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    model_cfg = model_cfg or DetectorConfig()
    qa_cfg = qa_cfg or QaConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for seed in seeds:
        train_scenes = generate_dataset(n_train, seed=seed * n_train,
                                        image_size=image_size,
                                        m=model_cfg.m)
        val_scenes = generate_dataset(n_val,
                                      seed=VAL_SEED_OFFSET + seed * n_val,
                                      image_size=image_size, m=model_cfg.m)
        for name, m_cfg, q_cfg in SUITES[suite](model_cfg, qa_cfg):
            base = train_cfg or TrainConfig()
            t_cfg = dataclasses.replace(
                base, steps=steps, seed=seed,
                lr_drop_step=max(1, int(steps * 0.8)))
            model, _, _ = train(m_cfg, t_cfg, q_cfg, train_scenes)
            report = evaluate_ap(model, val_scenes, q_cfg)
            row = {"config": name, "ap": report.ap, "ap50": report.ap50,
                   "ap75": report.ap75, "seed": seed,
                   "merges": report.merges}
            rows.append(row)
            if log_fn is not None:
                log_fn(row)

    with open(out_dir / f"{suite}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r[k] for k in CSV_HEADER])
    plot_ablation_bars(rows, out_dir / f"{suite}.png")
    return rows
