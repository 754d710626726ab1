"""Synthetic shape scenes for desk-scale detector training.

Each scene is a noisy colored background with 1 to 3 filled shapes drawn
on it: circle (class 0), square (class 1), triangle (class 2). Rendering
is fully determined by an integer seed, so a dataset is just a seed range
and splits stay disjoint by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .losses import Target
from .tensor import ConfigurationError, Tensor

SHAPE_NAMES = ("circle", "square", "triangle")

# offset added to the base seed for validation scenes so the two splits
# never share a per-scene seed
VAL_SEED_OFFSET = 10_000_019


@dataclass
class SyntheticScene:
    image: Tensor          # [3, h, w], values in [0, 1]
    targets: list[Target]  # cxcywh boxes normalized to the unit square


def _shape_mask(kind: int, h: int, w: int, cx: float, cy: float,
                half: float) -> np.ndarray:
    """Boolean inside-mask on the pixel grid; coordinates in pixels."""
    ys, xs = np.mgrid[0:h, 0:w]
    ys = ys + 0.5
    xs = xs + 0.5
    if kind == 0:  # circle
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= half ** 2
    if kind == 1:  # axis-aligned square
        return (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)
    # upward triangle inscribed in the box: apex top-center, base at bottom
    in_y = np.abs(ys - cy) <= half
    # width grows linearly from 0 at the apex to the full base
    spread = (ys - (cy - half)) / 2.0
    return in_y & (np.abs(xs - cx) <= spread)


def generate_scene(seed: int, image_size: int = 64, m: int = 3,
                   max_objects: int = 3) -> SyntheticScene:
    """One deterministic scene; classes uniform over the first m shapes."""
    if not 1 <= m <= len(SHAPE_NAMES):
        raise ConfigurationError(f"m must be in [1,{len(SHAPE_NAMES)}], got {m}")
    rng = np.random.default_rng(seed)
    h = w = image_size
    base = rng.uniform(0.1, 0.35, size=3)
    img = base[:, None, None] + rng.normal(0.0, 0.03, size=(3, h, w))

    n_obj = int(rng.integers(1, max_objects + 1))
    targets = []
    placed = []  # (cx, cy, half) of accepted shapes, in pixels
    for _ in range(n_obj):
        kind = int(rng.integers(0, m))
        # rejection-sample a placement clear of earlier shapes, so no
        # target is ever occluded; give up on this object after 40 tries
        for _attempt in range(40):
            half = rng.uniform(0.09, 0.22) * image_size
            cx = rng.uniform(half, w - half)
            cy = rng.uniform(half, h - half)
            ok = all(max(abs(cx - px), abs(cy - py)) > half + ph + 1.0
                     for px, py, ph in placed)
            if ok:
                break
        else:
            continue
        placed.append((cx, cy, half))
        # each class gets a dominant color channel (circle red, square
        # green, triangle blue) so class identity is carried by both
        # geometry and color, as in most toy detection benchmarks
        color = rng.uniform(0.15, 0.45, size=3)
        color[kind] = rng.uniform(0.75, 1.0)
        mask = _shape_mask(kind, h, w, cx, cy, half)
        img[:, mask] = color[:, None]
        box = np.array([cx / w, cy / h, 2 * half / w, 2 * half / h])
        targets.append(Target(kind, box))
    img = np.clip(img, 0.0, 1.0)
    return SyntheticScene(image=Tensor(img), targets=targets)


def generate_dataset(n: int, seed: int, image_size: int = 64, m: int = 3,
                     max_objects: int = 3) -> list[SyntheticScene]:
    """Scenes with per-scene seeds seed, seed+1, ..., seed+n-1."""
    if n < 0:
        raise ConfigurationError(f"n must be nonnegative, got {n}")
    return [generate_scene(seed + i, image_size, m, max_objects)
            for i in range(n)]


def dihedral(image: np.ndarray, targets: list[Target],
             code: int) -> tuple[np.ndarray, list[Target]]:
    """Apply one of the 8 axis-aligned flips/transposes to a scene.

    code bits: 1 = horizontal flip, 2 = vertical flip, 4 = transpose.
    Boxes (cxcywh, unit square) are remapped to match.
    """
    if not 0 <= code < 8:
        raise ConfigurationError(f"dihedral code must be in [0,8), got {code}")
    img = image
    out = []
    for t in targets:
        cx, cy, w, h = t.box
        if code & 1:
            cx = 1.0 - cx
        if code & 2:
            cy = 1.0 - cy
        if code & 4:
            cx, cy, w, h = cy, cx, h, w
        out.append(Target(t.class_id, np.array([cx, cy, w, h])))
    if code & 1:
        img = img[:, :, ::-1]
    if code & 2:
        img = img[:, ::-1, :]
    if code & 4:
        img = img.transpose(0, 2, 1)
    return np.ascontiguousarray(img), out


def save_dataset(scenes: list[SyntheticScene], out_dir) -> Path:
    """One tensor file per image plus a targets.jsonl manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "targets.jsonl", "w") as fh:
        for i, scene in enumerate(scenes):
            fname = f"scene_{i:05d}.sqt"
            T.save_tensor(out_dir / fname, scene.image)
            record = {"scene": i, "image": fname,
                      "targets": [{"class": t.class_id,
                                   "box": [float(v) for v in t.box]}
                                  for t in scene.targets]}
            fh.write(json.dumps(record) + "\n")
    return out_dir


def load_dataset(in_dir, dtype=np.float64) -> list[SyntheticScene]:
    in_dir = Path(in_dir)
    manifest = in_dir / "targets.jsonl"
    if not manifest.exists():
        raise IOError(f"{manifest}: no such dataset manifest")
    scenes = []
    with open(manifest) as fh:
        for line in fh:
            record = json.loads(line)
            image = T.load_tensor(in_dir / record["image"], dtype=dtype)
            targets = [Target(t["class"], np.array(t["box"], dtype=np.float64))
                       for t in record["targets"]]
            scenes.append(SyntheticScene(image=image, targets=targets))
    return scenes
