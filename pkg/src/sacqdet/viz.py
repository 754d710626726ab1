"""File-rendering helpers: attention heat-map export, loss curves, and
ablation bar charts. All figures go to disk; nothing opens a window.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from . import tensor as T  # noqa: E402
from .detector import Detector  # noqa: E402
from .qa import boxes_cxcywh_to_xyxy  # noqa: E402
from .sapm import write_attention_maps  # noqa: E402
from .tensor import ConfigurationError, Tensor  # noqa: E402

# queries scoring below this are dropped from overlays
SCORE_THRESHOLD = 0.5


def export_attention_heatmaps(model: Detector, image: Tensor,
                              out_dir) -> list[Path]:
    """Write per-query pooling heat maps plus a prediction overlay figure.

    Emits attn_s{scale}_q{index}.pgm/.csv per global attention map, a
    predicted_boxes.json with scores and labels, and overview.png showing
    the image, boxes above the score threshold, and a few heat maps.
    """
    if model.global_sapm is None:
        raise ConfigurationError(
            "attention export needs the global pooling module enabled")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with T.no_grad():
        details = model.decode_with_details(image)
    written = write_attention_maps(details["attention_maps"], out_dir)

    preds = details["predictions"][-1]
    probs, boxes = preds.as_arrays()
    labels = probs.argmax(axis=1)
    scores = probs.max(axis=1)
    records = [{"query": int(i), "box": [float(v) for v in boxes[i]],
                "score": float(scores[i]), "label": int(labels[i]),
                "kept": bool(scores[i] >= SCORE_THRESHOLD)}
               for i in range(len(scores))]
    boxes_path = out_dir / "predicted_boxes.json"
    with open(boxes_path, "w") as fh:
        json.dump(records, fh, indent=1)
    written.append(boxes_path)

    img = np.transpose(np.clip(image.data, 0, 1), (1, 2, 0))
    h, w = img.shape[:2]
    maps = details["attention_maps"][0]
    maps = maps.data if isinstance(maps, Tensor) else np.asarray(maps)
    n_show = min(5, maps.shape[0])
    fig, axes = plt.subplots(1, n_show + 1, figsize=(3 * (n_show + 1), 3))
    axes[0].imshow(img)
    axes[0].set_title("predictions")
    for r in records:
        if not r["kept"]:
            continue
        x0, y0, x1, y1 = boxes_cxcywh_to_xyxy(
            np.array(r["box"]).reshape(1, 4))[0]
        axes[0].add_patch(plt.Rectangle((x0 * w, y0 * h), (x1 - x0) * w,
                                        (y1 - y0) * h, fill=False,
                                        edgecolor="lime"))
        axes[0].text(x0 * w, y0 * h, f"{r['label']}:{r['score']:.2f}",
                     color="lime", fontsize=7)
    order = np.argsort(-scores)[:n_show]
    for k, qi in enumerate(order):
        axes[k + 1].imshow(maps[qi], cmap="viridis")
        axes[k + 1].set_title(f"q{qi} attn")
    for ax in axes:
        ax.axis("off")
    fig_path = out_dir / "overview.png"
    fig.savefig(fig_path, bbox_inches="tight", dpi=110)
    plt.close(fig)
    written.append(fig_path)
    return written


def plot_loss_curve(metrics: list[dict], out_path) -> Path:
    """Total and per-term training losses over steps."""
    out_path = Path(out_path)
    steps = [m["step"] for m in metrics]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("total", "cls", "l1", "giou"):
        ax.plot(steps, [m[key] for m in metrics], label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.savefig(out_path, bbox_inches="tight", dpi=110)
    plt.close(fig)
    return out_path


def plot_ablation_bars(rows: list[dict], out_path) -> Path:
    """Mean AP50 per configuration with per-seed points."""
    out_path = Path(out_path)
    configs = []
    for r in rows:
        if r["config"] not in configs:
            configs.append(r["config"])
    means = [np.mean([r["ap50"] for r in rows if r["config"] == c])
             for c in configs]
    fig, ax = plt.subplots(figsize=(1.6 * max(len(configs), 3), 4))
    ax.bar(range(len(configs)), means, color="#4878a8")
    for i, c in enumerate(configs):
        pts = [r["ap50"] for r in rows if r["config"] == c]
        ax.plot([i] * len(pts), pts, "k.", markersize=8)
    ax.set_xticks(range(len(configs)))
    ax.set_xticklabels(configs, rotation=30, ha="right")
    ax.set_ylabel("AP50")
    fig.savefig(out_path, bbox_inches="tight", dpi=110)
    plt.close(fig)
    return out_path
