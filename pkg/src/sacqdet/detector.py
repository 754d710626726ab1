"""Toy set-prediction detector: small conv backbone, transformer encoder,
and a decoder whose content queries are initialized by a global pooling
module and enhanced per layer from RoI-aligned local patches.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .sapm import (AmpParams, CrParams, SapmParams, channel_reweight,
                   fan_in_uniform, project_attention_maps, sapm_forward,
                   weighted_pool)
from .structures import FeatureMapSet, FeatureScale, PredictionSet, QueryState
from .tensor import ConfigurationError, Tensor


@dataclass
class DetectorConfig:
    d: int = 64
    q: int = 20
    m: int = 3
    encoder_layers: int = 2
    decoder_layers: int = 3
    heads: int = 8
    scales: int = 1
    roi_size: int = 7
    sacq_global: bool = True
    sacq_local: bool = True
    channel_reweighting: bool = True
    normalization: str = "softmax"
    amp_depth: int = 3
    tau: float = 1.2

    def __post_init__(self):
        if self.roi_size < 1:
            raise ConfigurationError("roi_size must be >= 1")
        if self.decoder_layers < 1:
            raise ConfigurationError("decoder_layers must be >= 1")
        if self.d % self.heads != 0:
            raise ConfigurationError(
                f"d={self.d} not divisible by heads={self.heads}")


# ---------------------------------------------------------------------------
# positional encodings

def _sine_embed_1d(values: np.ndarray, dims: int) -> np.ndarray:
    """Sine/cosine features of values in [0,1], interleaved over dims."""
    dim_t = 10000.0 ** (2 * (np.arange(dims) // 2) / dims)
    angles = values[..., None] * (2 * np.pi) / dim_t
    out = np.empty(angles.shape)
    out[..., 0::2] = np.sin(angles[..., 0::2])
    out[..., 1::2] = np.cos(angles[..., 1::2])
    return out


def positional_queries(reference_boxes, d: int) -> Tensor:
    """Sine embedding of box centers to dimension d (d/2 per coordinate).

    Boxes are treated as constants; no gradient flows through the embedding.
    """
    boxes = reference_boxes.data if isinstance(reference_boxes, Tensor) \
        else np.asarray(reference_boxes)
    half = d // 2
    emb = np.concatenate([_sine_embed_1d(boxes[:, 0], half),
                          _sine_embed_1d(boxes[:, 1], d - half)], axis=1)
    return Tensor(emb)


def grid_positional_encoding(h: int, w: int, d: int) -> np.ndarray:
    """2-d sine encoding for an h*w token grid -> [h*w, d]."""
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    half = d // 2
    emb = np.concatenate([
        _sine_embed_1d((xs.ravel() + 0.5) / w, half),
        _sine_embed_1d((ys.ravel() + 0.5) / h, d - half),
    ], axis=1)
    return emb


# ---------------------------------------------------------------------------
# RoI-Align

def roi_align(features: FeatureMapSet, boxes: np.ndarray, out_size: int = 7,
              sampling: int = 2) -> Tensor:
    """Average of sampling^2 bilinear samples per bin from the finest scale.

    boxes are cxcywh normalized; widths/heights below 1e-4 are inflated;
    box coordinates are non-differentiable sampling locations.
    """
    feat = features.finest.tensor
    d, fh, fw = feat.shape
    boxes = np.asarray(boxes, dtype=np.float64)
    q = boxes.shape[0]
    bw = np.maximum(boxes[:, 2], 1e-4)
    bh = np.maximum(boxes[:, 3], 1e-4)
    x0 = boxes[:, 0] - bw / 2
    y0 = boxes[:, 1] - bh / 2

    sub = (np.arange(sampling) + 0.5) / sampling
    bins = np.arange(out_size)
    # normalized sample offsets within the box: [out_size, sampling]
    off = (bins[:, None] + sub[None, :]) / out_size
    xs = x0[:, None, None] + off[None] * bw[:, None, None]  # [q,7,2]
    ys = y0[:, None, None] + off[None] * bh[:, None, None]
    # broadcast into the full [q, by, bx, sy, sx] sample grid, pixel coords
    px = np.broadcast_to(xs[:, None, :, None, :] * fw - 0.5,
                         (q, out_size, out_size, sampling, sampling))
    py = np.broadcast_to(ys[:, :, None, :, None] * fh - 0.5,
                         (q, out_size, out_size, sampling, sampling))
    samples = T.bilinear_sample_many(feat, px.ravel(), py.ravel())
    samples = T.reshape(samples, (d, q, out_size, out_size, sampling * sampling))
    pooled = T.mean_over_axis(samples, axis=4)
    return T.transpose(pooled, (1, 0, 2, 3))


# ---------------------------------------------------------------------------
# parameter helpers

def _inverse_sigmoid(x: Tensor) -> Tensor:
    one_minus = T.scalar_add(T.scalar_mul(x, -1.0), 1.0)
    return T.sub(T.log(x), T.log(one_minus))


class Detector:
    """Full detector; all learnable tensors live in a flat name->Tensor map.

    Parameter name prefixes: backbone., encoder., decoder., heads.,
    global_sapm., local_sapm., plus ref_logits for the learnable reference
    boxes. The backbone prefix drives the reduced-lr optimizer group.
    """

    def __init__(self, config: DetectorConfig, seed: int = 0,
                 dtype=np.float64):
        self.config = config
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        c = config

        # backbone: three stride-2 conv blocks, then extra convs per scale
        widths = [3, max(c.d // 2, 8), c.d, c.d]
        for i in range(3):
            self._conv(rng, f"backbone.block{i}", widths[i + 1], widths[i], 3)
            self._gn_affine(f"backbone.block{i}", widths[i + 1])
        for s in range(1, c.scales):
            self._conv(rng, f"backbone.extra{s}", c.d, c.d, 3)
            self._gn_affine(f"backbone.extra{s}", c.d)

        for li in range(c.encoder_layers):
            self._attention(rng, f"encoder.layer{li}.self")
            self._ffn(rng, f"encoder.layer{li}")
        self._ln_affine("encoder.final_norm")

        for li in range(c.decoder_layers):
            self._attention(rng, f"decoder.layer{li}.self")
            self._attention(rng, f"decoder.layer{li}.cross")
            self._ffn(rng, f"decoder.layer{li}")
            self._ln_affine(f"decoder.layer{li}.out_norm")

        # shared prediction heads
        self._linear(rng, "heads.cls", c.m, c.d)
        # start near the focal-loss prior: rare positives, so a strongly
        # negative bias keeps early false-positive gradients small
        self.params["heads.cls.bias"].data[:] = -4.0
        for i, (dout, din) in enumerate([(c.d, c.d), (c.d, c.d), (4, c.d)]):
            self._linear(rng, f"heads.box{i}", dout, din)

        init_ref = rng.uniform(0.05, 0.95, size=(c.q, 4))
        self.params["ref_logits"] = Tensor(
            np.log(init_ref / (1.0 - init_ref)).astype(dtype),
            requires_grad=True)

        gn_groups = min(32, c.d)

        def make_cr():
            return CrParams.create(rng, c.d, dtype=dtype) \
                if c.channel_reweighting else None

        self.global_sapm = None
        if c.sacq_global:
            self.global_sapm = SapmParams(
                amps=[AmpParams.create(rng, c.d, c.q, depth=c.amp_depth,
                                       gn_groups=gn_groups, tau=c.tau,
                                       normalization=c.normalization,
                                       dtype=dtype)
                      for _ in range(c.scales)],
                cr=make_cr())
            self.params.update(self.global_sapm.parameters("global_sapm."))

        self.local_sapm = None
        if c.sacq_local:
            # one attention map per RoI patch, parameters shared across layers
            self.local_sapm = SapmParams(
                amps=[AmpParams.create(rng, c.d, 1, depth=c.amp_depth,
                                       gn_groups=gn_groups, tau=c.tau,
                                       normalization=c.normalization,
                                       dtype=dtype)],
                cr=make_cr())
            self.params.update(self.local_sapm.parameters("local_sapm."))

    # -- parameter constructors ------------------------------------------

    def _register(self, name, t):
        self.params[name] = t
        return t

    def _linear(self, rng, name, dout, din):
        self._register(f"{name}.weight",
                       fan_in_uniform(rng, (dout, din), din, self.dtype))
        self._register(f"{name}.bias",
                       Tensor(np.zeros(dout, dtype=self.dtype),
                              requires_grad=True))

    def _conv(self, rng, name, co, ci, k):
        self._register(f"{name}.kernel",
                       fan_in_uniform(rng, (co, ci, k, k), ci * k * k, self.dtype))
        self._register(f"{name}.bias",
                       Tensor(np.zeros(co, dtype=self.dtype), requires_grad=True))

    def _gn_affine(self, name, ch):
        self._register(f"{name}.gn_gamma",
                       Tensor(np.ones(ch, dtype=self.dtype), requires_grad=True))
        self._register(f"{name}.gn_beta",
                       Tensor(np.zeros(ch, dtype=self.dtype), requires_grad=True))

    def _ln_affine(self, name):
        self._register(f"{name}.gamma",
                       Tensor(np.ones(self.config.d, dtype=self.dtype),
                              requires_grad=True))
        self._register(f"{name}.beta",
                       Tensor(np.zeros(self.config.d, dtype=self.dtype),
                              requires_grad=True))

    def _attention(self, rng, name):
        d = self.config.d
        for proj in ("wq", "wk", "wv", "wo"):
            self._linear(rng, f"{name}.{proj}", d, d)
        self._ln_affine(f"{name}.norm")

    def _ffn(self, rng, name):
        d = self.config.d
        self._linear(rng, f"{name}.ffn1", 2 * d, d)
        self._linear(rng, f"{name}.ffn2", d, 2 * d)
        self._ln_affine(f"{name}.ffn_norm")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    # -- building blocks ---------------------------------------------------

    def _p(self, name):
        return self.params[name]

    def _mha(self, name, query, key, value):
        """Multi-head attention over token rows; query [nq,d], key/value [nk,d]."""
        d, h = self.config.d, self.config.heads
        dh = d // h
        nq, nk = query.shape[0], key.shape[0]

        def split(t, n):
            return T.transpose(T.reshape(t, (n, h, dh)), (1, 0, 2))

        qh = split(T.linear(query, self._p(f"{name}.wq.weight"),
                            self._p(f"{name}.wq.bias")), nq)
        kh = split(T.linear(key, self._p(f"{name}.wk.weight"),
                            self._p(f"{name}.wk.bias")), nk)
        vh = split(T.linear(value, self._p(f"{name}.wv.weight"),
                            self._p(f"{name}.wv.bias")), nk)
        scores = T.scalar_mul(T.matmul(qh, T.transpose(kh, (0, 2, 1))),
                              1.0 / np.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        ctx = T.reshape(T.transpose(T.matmul(attn, vh), (1, 0, 2)), (nq, d))
        return T.linear(ctx, self._p(f"{name}.wo.weight"),
                        self._p(f"{name}.wo.bias"))

    def _ln(self, name, x):
        return T.layer_norm(x, self._p(f"{name}.gamma"), self._p(f"{name}.beta"))

    def _ffn_block(self, name, x):
        # pre-norm residual: normalize the branch input, keep the trunk raw
        h = self._ln(f"{name}.ffn_norm", x)
        hidden = T.relu(T.linear(h, self._p(f"{name}.ffn1.weight"),
                                 self._p(f"{name}.ffn1.bias")))
        out = T.linear(hidden, self._p(f"{name}.ffn2.weight"),
                       self._p(f"{name}.ffn2.bias"))
        return T.add(x, out)

    # -- pipeline stages ----------------------------------------------------

    def backbone_encode(self, image: Tensor) -> FeatureMapSet:
        """Strided conv stack then per-scale encoder self-attention."""
        c = self.config
        x = image
        for i in range(3):
            x = T.conv2d(x, self._p(f"backbone.block{i}.kernel"),
                         self._p(f"backbone.block{i}.bias"),
                         padding=1, stride=2)
            groups = min(8, x.shape[0])
            x = T.relu(T.group_norm(x, groups,
                                    self._p(f"backbone.block{i}.gn_gamma"),
                                    self._p(f"backbone.block{i}.gn_beta")))
        raw_scales = [(x, 8)]
        for s in range(1, c.scales):
            x = T.conv2d(x, self._p(f"backbone.extra{s}.kernel"),
                         self._p(f"backbone.extra{s}.bias"),
                         padding=1, stride=2)
            x = T.relu(T.group_norm(x, min(8, c.d),
                                    self._p(f"backbone.extra{s}.gn_gamma"),
                                    self._p(f"backbone.extra{s}.gn_beta")))
            raw_scales.append((x, 8 * 2 ** s))

        scales = []
        for feat, stride in raw_scales:
            d, h, w = feat.shape
            tokens = T.transpose(T.reshape(feat, (d, h * w)), (1, 0))
            pos = Tensor(grid_positional_encoding(h, w, d).astype(self.dtype))
            for li in range(c.encoder_layers):
                name = f"encoder.layer{li}"
                normed = self._ln(f"{name}.self.norm", tokens)
                qk = T.add(normed, pos)
                attn = self._mha(f"{name}.self", qk, qk, normed)
                tokens = T.add(tokens, attn)
                tokens = self._ffn_block(name, tokens)
            tokens = self._ln("encoder.final_norm", tokens)
            back = T.reshape(T.transpose(tokens, (1, 0)), (d, h, w))
            scales.append(FeatureScale(back, stride))
        h_img, w_img = image.shape[-2], image.shape[-1]
        return FeatureMapSet(scales=scales, image_size=(h_img, w_img))

    def init_content_queries(self, features: FeatureMapSet):
        """Global pooled features, or zeros when the global path is off.

        Returns (content [q,d], attention maps per scale or None).
        """
        c = self.config
        if not c.sacq_global:
            return Tensor(np.zeros((c.q, c.d), dtype=self.dtype)), None
        pooled = sapm_forward(features, self.global_sapm)
        return pooled.values, pooled.attention_maps

    def decoder_layer(self, state: QueryState, features: FeatureMapSet,
                      layer_idx: int):
        """Self-attention, cross-attention into encoder tokens, FFN, heads."""
        c = self.config
        name = f"decoder.layer{layer_idx}"
        content, pos = state.content, state.positional

        normed = self._ln(f"{name}.self.norm", content)
        qk = T.add(normed, pos)
        sa = self._mha(f"{name}.self", qk, qk, normed)
        content = T.add(content, sa)

        token_list, pos_list = [], []
        for scale in features.scales:
            d, h, w = scale.tensor.shape
            token_list.append(T.transpose(T.reshape(scale.tensor, (d, h * w)),
                                          (1, 0)))
            pos_list.append(Tensor(
                grid_positional_encoding(h, w, d).astype(self.dtype)))
        tokens = token_list[0] if len(token_list) == 1 else T.concat(token_list, 0)
        token_pos = pos_list[0] if len(pos_list) == 1 else T.concat(pos_list, 0)
        normed = self._ln(f"{name}.cross.norm", content)
        ca = self._mha(f"{name}.cross", T.add(normed, pos),
                       T.add(tokens, token_pos), tokens)
        content = T.add(content, ca)
        content = self._ffn_block(name, content)

        # pre-norm trunk is unnormalized; heads read a normalized view
        head_in = self._ln(f"{name}.out_norm", content)
        logits = T.linear(head_in, self._p("heads.cls.weight"),
                          self._p("heads.cls.bias"))
        x = head_in
        for i in range(3):
            x = T.linear(x, self._p(f"heads.box{i}.weight"),
                         self._p(f"heads.box{i}.bias"))
            if i < 2:
                x = T.relu(x)
        boxes = T.sigmoid(T.add(x, _inverse_sigmoid(state.reference_boxes)))

        new_state = QueryState(content=content, positional=pos,
                               reference_boxes=state.reference_boxes)
        preds = PredictionSet(probs=T.sigmoid(logits), boxes=boxes, logits=logits)
        return new_state, preds

    def enhance_content_queries(self, q_c1: Tensor, boxes: np.ndarray,
                                features: FeatureMapSet) -> Tensor:
        """Add locally pooled RoI features to the layer output queries."""
        c = self.config
        if not c.sacq_local:
            return q_c1
        patches = roi_align(features, boxes, out_size=c.roi_size)
        maps = project_attention_maps(patches, self.local_sapm.amps[0])
        pooled = weighted_pool(patches, maps)  # [q,1,d]
        pooled = T.reshape(pooled, (c.q, c.d))
        if self.local_sapm.cr is not None:
            pooled = channel_reweight(pooled, self.local_sapm.cr)
        return T.add(q_c1, pooled)

    def decode(self, image: Tensor) -> list[PredictionSet]:
        return self.decode_with_details(image)["predictions"]

    def decode_with_details(self, image: Tensor, frozen_refs=None) -> dict:
        """Full stack; returns predictions per layer plus inspection hooks.

        frozen_refs pins the detached reference boxes (one array per layer)
        to values captured on an earlier pass, which makes the forward map
        differentiable end to end for numerical gradient verification.
        """
        c = self.config
        features = self.backbone_encode(image)
        content, attn_maps = self.init_content_queries(features)
        reference = T.sigmoid(self._p("ref_logits"))
        per_layer = []
        detached_refs = [reference.data.copy()]
        pos_base = detached_refs[0] if frozen_refs is None else frozen_refs[0]
        state = QueryState(content=content,
                           positional=positional_queries(pos_base, c.d),
                           reference_boxes=reference)
        for li in range(c.decoder_layers):
            state, preds = self.decoder_layer(state, features, li)
            per_layer.append(preds)
            if li < c.decoder_layers - 1:
                detached_refs.append(preds.boxes.data.copy())
                ref_data = (detached_refs[-1] if frozen_refs is None
                            else frozen_refs[li + 1])
                content = self.enhance_content_queries(
                    state.content, ref_data, features)
                ref = Tensor(ref_data.copy())  # detached refinement
                state = QueryState(content=content,
                                   positional=positional_queries(ref, c.d),
                                   reference_boxes=ref)
        return {"predictions": per_layer, "features": features,
                "attention_maps": attn_maps, "detached_refs": detached_refs}

    # -- checkpointing -------------------------------------------------------

    def save_checkpoint(self, out_dir, extra_tensors=None, extra_meta=None):
        """Directory of SQT1 tensors plus a JSON manifest."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {"config": asdict(self.config), "tensors": {},
                    "meta": extra_meta or {}}
        for name, t in self.params.items():
            fname = name.replace("/", "_") + ".sqt"
            T.save_tensor(out_dir / fname, t)
            manifest["tensors"][name] = fname
        for name, t in (extra_tensors or {}).items():
            fname = "extra__" + name.replace("/", "_") + ".sqt"
            T.save_tensor(out_dir / fname, t)
            manifest["tensors"][name] = fname
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)

    @classmethod
    def load_checkpoint(cls, ckpt_dir, dtype=np.float32):
        ckpt_dir = Path(ckpt_dir)
        with open(ckpt_dir / "manifest.json") as fh:
            manifest = json.load(fh)
        config = DetectorConfig(**manifest["config"])
        model = cls(config, seed=0, dtype=dtype)
        extras = {}
        for name, fname in manifest["tensors"].items():
            t = T.load_tensor(ckpt_dir / fname, dtype=dtype)
            if name in model.params:
                model.params[name].data = t.data
            else:
                extras[name] = t
        return model, extras, manifest.get("meta", {})
