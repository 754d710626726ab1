"""Training loop: AdamW with decoupled weight decay, two learning-rate
groups (backbone vs everything else), global-norm gradient clipping, a
single step-count learning-rate drop, JSON-lines metrics, and resumable
checkpoints that carry the optimizer moments.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import SyntheticScene, dihedral
from .detector import Detector, DetectorConfig
from .losses import total_loss
from .qa import QaConfig
from .tensor import ConfigurationError, ContractError, Tensor


@dataclass
class TrainConfig:
    steps: int = 5000
    batch: int = 2
    lr: float = 1e-4
    lr_backbone: float = 1e-5
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lr_drop_step: int = 4000
    seed: int = 0
    clip_norm: float = 0.1
    log_every: int = 25
    augment: bool = True

    def __post_init__(self):
        positive = ("batch", "lr", "lr_backbone", "lr_drop_step",
                    "clip_norm", "log_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.steps < 0:
            raise ConfigurationError("steps must be nonnegative")
        for name in ("weight_decay", "beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must be in [0,1)")


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    sq = 0.0
    for t in params.values():
        if t.grad is not None:
            sq += float((t.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(sq))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


class AdamW:
    """Decoupled-weight-decay Adam over a flat name->Tensor parameter map.

    Parameters whose name starts with "backbone." use the reduced rate;
    both rates drop by 10x at lr_drop_step.
    """

    EPS = 1e-8

    def __init__(self, params: dict[str, Tensor], config: TrainConfig):
        self.params = params
        self.cfg = config
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def _rate(self, name: str, step: int) -> float:
        base = self.cfg.lr_backbone if name.startswith("backbone.") \
            else self.cfg.lr
        return base * (0.1 if step >= self.cfg.lr_drop_step else 1.0)

    def step(self, global_step: int):
        self.t += 1
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            lr = self._rate(name, global_step)
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            p.data = p.data * (1.0 - lr * self.cfg.weight_decay)
            update = (self.m[name] / bc1) / \
                (np.sqrt(self.v[name] / bc2) + self.EPS)
            p.data = p.data - lr * update.astype(p.data.dtype)

    def state_tensors(self) -> dict[str, Tensor]:
        out = {"opt.t": Tensor(np.array([float(self.t)]))}
        for name in self.params:
            out[f"opt.m.{name}"] = Tensor(self.m[name])
            out[f"opt.v.{name}"] = Tensor(self.v[name])
        return out

    def load_state(self, extras: dict[str, Tensor]):
        self.t = int(round(float(extras["opt.t"].data[0])))
        for name, p in self.params.items():
            self.m[name] = extras[f"opt.m.{name}"].data.astype(p.data.dtype)
            self.v[name] = extras[f"opt.v.{name}"].data.astype(p.data.dtype)


def _batch_indices(seed: int, step: int, n: int, batch: int,
                   augment: bool = False
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Step-indexed sampling so resumed runs revisit identical batches.

    Returns (scene indices, dihedral codes); codes are all zero when
    augmentation is off.
    """
    rng = np.random.default_rng([seed, step])
    idx = rng.integers(0, n, size=batch)
    codes = rng.integers(0, 8, size=batch) if augment \
        else np.zeros(batch, dtype=np.int64)
    return idx, codes


def train_model(model: Detector, scenes: list[SyntheticScene],
                train_cfg: TrainConfig, qa_config: QaConfig,
                out_dir=None, start_step: int = 0,
                optimizer: AdamW | None = None,
                log_fn=None) -> tuple[Detector, AdamW, list[dict]]:
    """Run steps [start_step, cfg.steps); returns metrics records.

    Metrics lines and the final checkpoint land under out_dir when given;
    metrics are appended so resumed runs extend the same log.
    """
    if not scenes:
        raise ConfigurationError("training needs at least one scene")
    optimizer = optimizer or AdamW(model.params, train_cfg)
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.jsonl",
                          "a" if start_step > 0 else "w")
    records = []
    raw = [s.image.data.astype(model.dtype) for s in scenes]
    t_start = time.monotonic()
    try:
        for step in range(start_step, train_cfg.steps):
            idx, codes = _batch_indices(train_cfg.seed, step, len(scenes),
                                        train_cfg.batch, train_cfg.augment)
            model.zero_grad()
            batch_loss = None
            agg = {"total": 0.0, "cls": 0.0, "l1": 0.0, "giou": 0.0,
                   "merges": 0, "qa_bypassed": 0}
            for i, code in zip(idx, codes):
                img, targets = dihedral(raw[i], scenes[i].targets, int(code))
                loss, report = total_loss(model.decode(Tensor(img)),
                                          targets, qa_config)
                batch_loss = loss if batch_loss is None \
                    else T.add(batch_loss, loss)
                agg["total"] += report.total
                agg["cls"] += report.cls
                agg["l1"] += report.l1
                agg["giou"] += report.giou
                agg["merges"] += report.merges
                agg["qa_bypassed"] += report.qa_bypassed
            batch_loss = T.scalar_mul(batch_loss, 1.0 / train_cfg.batch)
            if not np.isfinite(batch_loss.data):
                raise ContractError(f"non-finite loss at step {step}")
            T.backward(batch_loss)
            grad_norm = clip_global_norm(model.params, train_cfg.clip_norm)
            if not np.isfinite(grad_norm):
                raise ContractError(f"non-finite gradient at step {step}")
            optimizer.step(step)

            if step % train_cfg.log_every == 0 or step == train_cfg.steps - 1:
                record = {"step": step,
                          "total": agg["total"] / train_cfg.batch,
                          "cls": agg["cls"] / train_cfg.batch,
                          "l1": agg["l1"] / train_cfg.batch,
                          "giou": agg["giou"] / train_cfg.batch,
                          "merges": agg["merges"],
                          "qa_bypassed": agg["qa_bypassed"],
                          "grad_norm": grad_norm,
                          "lr": optimizer._rate("x", step)}
                records.append(record)
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(record) + "\n")
                    metrics_fh.flush()
                if log_fn is not None:
                    log_fn(record)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if out_dir is not None:
        meta = {"step": train_cfg.steps,
                "train_config": asdict(train_cfg),
                "qa_config": asdict(qa_config),
                "wall_seconds": time.monotonic() - t_start}
        model.save_checkpoint(out_dir / "checkpoint",
                              extra_tensors=optimizer.state_tensors(),
                              extra_meta=meta)
    return model, optimizer, records


def train(model_config: DetectorConfig, train_cfg: TrainConfig,
          qa_config: QaConfig, scenes: list[SyntheticScene],
          out_dir=None, resume=None, log_fn=None):
    """Fresh or resumed run; resume points at a prior checkpoint directory."""
    if resume is not None:
        model, extras, meta = Detector.load_checkpoint(Path(resume),
                                                       dtype=np.float32)
        optimizer = AdamW(model.params, train_cfg)
        optimizer.load_state(extras)
        start_step = int(meta["step"])
    else:
        model = Detector(model_config, seed=train_cfg.seed, dtype=np.float32)
        optimizer = None
        start_step = 0
    return train_model(model, scenes, train_cfg, qa_config, out_dir=out_dir,
                       start_step=start_step, optimizer=optimizer,
                       log_fn=log_fn)
