"""Self-attention pooling: attention map projection, weighted pooling,
channel reweighting, and multi-scale averaging.

A feature map [d,h,w] is projected by a conv stack into q attention maps,
normalized over space, used as pooling weights to produce one d-vector per
query, and finally rescaled per channel by a gated MLP.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .structures import FeatureMapSet
from .tensor import ConfigurationError, Tensor


def fan_in_uniform(rng, shape, fan_in, dtype=np.float64):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True)


@dataclass
class AmpParams:
    """Weights of the attention-map projection conv stack.

    conv_stack entries hold kernel/bias plus group-norm affine parameters;
    the final conv has no norm (its gn fields are None) and maps to q
    output channels. First kernel is 5x5, the rest 3x3.
    """

    conv_stack: list[dict]
    depth: int = 3
    gn_groups: int = 32
    tau: float = 1.2
    normalization: str = "softmax"

    def __post_init__(self):
        if not 1 <= self.depth <= 5:
            raise ConfigurationError(f"AMP depth must be in [1,5], got {self.depth}")
        if self.normalization not in ("softmax", "sigmoid"):
            raise ConfigurationError(
                f"normalization must be softmax or sigmoid, got {self.normalization}")
        if len(self.conv_stack) != self.depth:
            raise ConfigurationError("conv_stack length must equal depth")

    @classmethod
    def create(cls, rng, d, q, depth=3, gn_groups=32, tau=1.2,
               normalization="softmax", dtype=np.float64):
        """Build a stack of depth convs: d->d hidden, final d->q.

        The final conv is initialized near zero (std 1e-3) so the initial
        attention is near-uniform pooling.
        """
        stack = []
        for i in range(depth):
            last = i == depth - 1
            k = 5 if i == 0 else 3
            c_out = q if last else d
            fan_in = d * k * k
            layer = {
                "kernel": fan_in_uniform(rng, (c_out, d, k, k), fan_in, dtype),
                "bias": Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True),
                "gn_gamma": None if last else Tensor(np.ones(d, dtype=dtype),
                                                     requires_grad=True),
                "gn_beta": None if last else Tensor(np.zeros(d, dtype=dtype),
                                                    requires_grad=True),
            }
            if last:
                layer["kernel"] = Tensor(
                    (rng.standard_normal((c_out, d, k, k)) * 1e-3).astype(dtype),
                    requires_grad=True)
            stack.append(layer)
        return cls(conv_stack=stack, depth=depth, gn_groups=gn_groups,
                   tau=tau, normalization=normalization)

    def parameters(self, prefix=""):
        out = {}
        for i, layer in enumerate(self.conv_stack):
            for key, t in layer.items():
                if t is not None:
                    out[f"{prefix}conv{i}.{key}"] = t
        return out


@dataclass
class CrParams:
    """Two d->d linear layers gating the pooled features per channel."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __post_init__(self):
        if self.w1.shape != self.w2.shape or self.w1.shape[0] != self.w1.shape[1]:
            raise ConfigurationError("CR weights must both be square d x d")

    @classmethod
    def create(cls, rng, d, dtype=np.float64):
        return cls(
            w1=fan_in_uniform(rng, (d, d), d, dtype),
            b1=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
            w2=fan_in_uniform(rng, (d, d), d, dtype),
            b2=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        )

    def parameters(self, prefix=""):
        return {f"{prefix}w1": self.w1, f"{prefix}b1": self.b1,
                f"{prefix}w2": self.w2, f"{prefix}b2": self.b2}


@dataclass
class SapmParams:
    """One AMP per feature scale plus an optional shared CR module."""

    amps: list[AmpParams]
    cr: CrParams | None

    def parameters(self, prefix=""):
        out = {}
        for s, amp in enumerate(self.amps):
            out.update(amp.parameters(f"{prefix}amp{s}."))
        if self.cr is not None:
            out.update(self.cr.parameters(f"{prefix}cr."))
        return out


@dataclass
class PooledFeatures:
    values: Tensor  # [q, d]
    per_scale: list[Tensor] = field(default_factory=list)
    attention_maps: list[Tensor] = field(default_factory=list)


def project_attention_maps(features: Tensor, params: AmpParams) -> Tensor:
    """Conv stack -> normalized attention maps, [d,h,w] -> [q,h,w].

    Hidden convs are followed by group norm and ReLU; the final conv feeds
    the normalizer directly. Also accepts a batched [n,d,h,w] input.
    """
    d = features.shape[-3]
    expected = params.conv_stack[0]["kernel"].shape[1]
    if d != expected:
        raise ConfigurationError(
            f"AMP expects {expected} input channels, got {d}")
    x = features
    for i, layer in enumerate(params.conv_stack):
        k = layer["kernel"].shape[-1]
        x = T.conv2d(x, layer["kernel"], layer["bias"],
                     padding=(k - 1) // 2, stride=1)
        if i < params.depth - 1:
            x = T.group_norm(x, params.gn_groups, layer["gn_gamma"],
                             layer["gn_beta"])
            x = T.relu(x)
    if params.normalization == "softmax":
        return T.spatial_softmax(x, params.tau)
    return T.sigmoid(x)


def weighted_pool(features: Tensor, maps: Tensor) -> Tensor:
    """Attention-weighted spatial pooling, [d,h,w] x [q,h,w] -> [q,d].

    Row i is the map-i weighted sum of feature columns. Batched variants
    ([n,d,h,w] x [n,q,h,w] -> [n,q,d]) are supported for the local path.
    """
    if features.shape[-2:] != maps.shape[-2:]:
        raise T.DimensionError(
            f"weighted_pool: spatial axes mismatch "
            f"({features.shape[-2:]} vs {maps.shape[-2:]})")
    hw = features.shape[-2] * features.shape[-1]
    if features.data.ndim == 3:
        f2 = T.reshape(features, (features.shape[0], hw))
        m2 = T.reshape(maps, (maps.shape[0], hw))
        return T.matmul(m2, T.transpose(f2, (1, 0)))
    n = features.shape[0]
    f2 = T.reshape(features, (n, features.shape[1], hw))
    m2 = T.reshape(maps, (n, maps.shape[1], hw))
    return T.matmul(m2, T.transpose(f2, (0, 2, 1)))


def channel_reweight(pooled: Tensor, params: CrParams) -> Tensor:
    """Gated per-channel rescale: pooled * sigmoid(MLP(pooled))."""
    hidden = T.relu(T.linear(pooled, params.w1, params.b1))
    gate = T.sigmoid(T.linear(hidden, params.w2, params.b2))
    return T.mul(pooled, gate)


def pool_multiscale(features: FeatureMapSet, amps: list[AmpParams],
                    cr: CrParams | None) -> PooledFeatures:
    """Project+pool each scale independently, average, then reweight once."""
    if len(features.scales) != len(amps):
        raise ConfigurationError(
            f"{len(features.scales)} scales but {len(amps)} AMP parameter sets")
    per_scale, attn = [], []
    for scale, amp in zip(features.scales, amps):
        maps = project_attention_maps(scale.tensor, amp)
        attn.append(maps)
        per_scale.append(weighted_pool(scale.tensor, maps))
    avg = per_scale[0]
    for extra in per_scale[1:]:
        avg = T.add(avg, extra)
    if len(per_scale) > 1:
        avg = T.scalar_mul(avg, 1.0 / len(per_scale))
    values = channel_reweight(avg, cr) if cr is not None else avg
    return PooledFeatures(values=values, per_scale=per_scale, attention_maps=attn)


def sapm_forward(features: FeatureMapSet, params: SapmParams) -> PooledFeatures:
    """Full pooling pipeline; attention maps are retained for export."""
    return pool_multiscale(features, params.amps, params.cr)


def write_attention_maps(attention_maps, out_dir) -> list[Path]:
    """Export maps as grayscale PGM (max weight -> 255) plus raw-weight CSV.

    attention_maps: one [q,h,w] Tensor (or array) per scale. Files are named
    attn_s{scale}_q{index}.pgm / .csv.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for s, maps in enumerate(attention_maps):
        arr = maps.data if isinstance(maps, Tensor) else np.asarray(maps)
        for qi in range(arr.shape[0]):
            weights = arr[qi]
            peak = weights.max()
            gray = np.zeros_like(weights, dtype=np.uint8) if peak <= 0 else \
                np.round(weights / peak * 255.0).astype(np.uint8)
            h, w = gray.shape
            pgm = out_dir / f"attn_s{s}_q{qi}.pgm"
            with open(pgm, "wb") as fh:
                fh.write(f"P5\n{w} {h}\n255\n".encode())
                fh.write(gray.tobytes())
            written.append(pgm)
            csv_path = out_dir / f"attn_s{s}_q{qi}.csv"
            with open(csv_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                for row in weights:
                    writer.writerow([f"{v:.10g}" for v in row])
            written.append(csv_path)
    return written
