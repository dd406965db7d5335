"""Gait baseline networks.

Three models share one pipeline: a four-stage residual backbone over frame
sequences, max pooling over time, horizontal strip pooling, and per-part
fully connected embeddings with batch-norm necks and bias-free classifiers.

* ``deepgaitv2``       - single branch on 1-channel silhouette clips
* ``skeletongait``     - the same network on 2-channel skeleton-map clips
* ``skeletongait_pp``  - both branches, fused frame-by-frame (add / cat /
  attention) either before Stage 2 (low) or before Stage 4 (high)

Stage 1 always uses 2D blocks applied per frame; Stages 2-4 use 3x3x3
residual blocks (``full3d``) or their factorized variant (``pseudo3d``)
where each 3x3x3 convolution becomes a 1x3x3 spatial convolution followed
by a 3x1x1 temporal one.  Only Stages 2 and 3 downsample, spatially, by 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError
from .optim import ParamSet
from .tensorio import read_tensor, write_tensor

MODES = ("deepgaitv2", "skeletongait", "skeletongait_pp")
BLOCK_KINDS = ("full3d", "pseudo3d")
FUSION_KINDS = ("add", "cat", "attention")
FUSION_LEVELS = ("low", "high")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ModelConfig:
    mode: str = "deepgaitv2"
    depths: tuple = (1, 1, 1, 1)
    base_channels: int = 64
    block: str = "pseudo3d"
    in_channels: int | None = None
    parts: int = 16
    embed_dim: int = 256
    num_classes: int = 1
    fusion_kind: str = "attention"
    fusion_level: str = "low"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.block not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.block!r}")
        if self.fusion_kind not in FUSION_KINDS or self.fusion_level not in FUSION_LEVELS:
            raise ConfigError(f"unknown fusion {self.fusion_kind!r}/{self.fusion_level!r}")
        self.depths = tuple(int(d) for d in self.depths)
        if len(self.depths) != 4 or any(d < 1 for d in self.depths):
            raise ConfigError(f"depths must be four positive block counts, got {self.depths}")
        if self.in_channels is None:
            self.in_channels = 2 if self.mode == "skeletongait" else 1
        if 16 % self.parts != 0:
            raise ConfigError(f"parts must divide the final feature height 16, got {self.parts}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")

    @property
    def depth(self):
        """Layer-count convention: two convs per block plus the stem and head."""
        return 2 * sum(self.depths) + 2

    def to_dict(self):
        return {
            "mode": self.mode, "depths": list(self.depths),
            "base_channels": self.base_channels, "block": self.block,
            "in_channels": self.in_channels, "parts": self.parts,
            "embed_dim": self.embed_dim, "num_classes": self.num_classes,
            "fusion_kind": self.fusion_kind, "fusion_level": self.fusion_level,
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {
            "mode", "depths", "base_channels", "block", "in_channels",
            "parts", "embed_dim", "num_classes", "fusion_kind", "fusion_level",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Embeddings:
    """Per-clip outputs: pre-neck features, post-neck embeddings, class logits."""

    features: Tensor    # [N, parts, d], drives the triplet loss
    embeddings: Tensor  # [N, parts, d], post batch-norm, used for retrieval
    logits: Tensor      # [N, parts, Y]


# -- layers -------------------------------------------------------------------

def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2dLayer:
    def __init__(self, cin, cout, k, stride, pad, rng, dtype):
        kh, kw = (k, k) if isinstance(k, int) else k
        self.stride, self.pad = stride, pad
        self.w = Tensor(_he(rng, (cout, cin, kh, kw), cin * kh * kw, dtype), requires_grad=True)

    def __call__(self, x):
        return ad.conv2d(x, self.w, None, stride=self.stride, pad=self.pad)

    def named_params(self, prefix):
        yield f"{prefix}.w", self.w

    def named_buffers(self, prefix):
        return iter(())


class Conv3dLayer:
    def __init__(self, cin, cout, k, stride, pad, rng, dtype):
        kt, kh, kw = k
        self.stride, self.pad = stride, pad
        self.w = Tensor(_he(rng, (cout, cin, kt, kh, kw), cin * kt * kh * kw, dtype), requires_grad=True)

    def __call__(self, x):
        return ad.conv3d(x, self.w, None, stride=self.stride, pad=self.pad)

    def named_params(self, prefix):
        yield f"{prefix}.w", self.w

    def named_buffers(self, prefix):
        return iter(())


class BatchNormLayer:
    def __init__(self, c, dtype, shift=True):
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True) if shift else None
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def __call__(self, x, training):
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training, eps=BN_EPS, momentum=BN_MOMENTUM)

    def named_params(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        if self.beta is not None:
            yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix):
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var


class LinearLayer:
    def __init__(self, cin, cout, rng, dtype):
        self.w = Tensor(_he(rng, (cout, cin), cin, dtype), requires_grad=True)

    def __call__(self, x):
        return ad.linear(x, self.w)

    def named_params(self, prefix):
        yield f"{prefix}.w", self.w

    def named_buffers(self, prefix):
        return iter(())


def _collect(children, prefix, what):
    for name, child in children:
        yield from getattr(child, what)(f"{prefix}.{name}" if prefix else name)


class _Composite:
    """Base for layers made of named children."""

    def children(self):
        raise NotImplementedError

    def named_params(self, prefix=""):
        yield from _collect(self.children(), prefix, "named_params")

    def named_buffers(self, prefix=""):
        yield from _collect(self.children(), prefix, "named_buffers")


# -- residual blocks ------------------------------------------------------------

class Block2d(_Composite):
    """conv3x3 -> BN -> ReLU -> conv3x3 -> BN, residual add, ReLU; per frame."""

    def __init__(self, cin, cout, stride, rng, dtype):
        self.conv1 = Conv2dLayer(cin, cout, 3, (stride, stride), (1, 1), rng, dtype)
        self.bn1 = BatchNormLayer(cout, dtype)
        self.conv2 = Conv2dLayer(cout, cout, 3, (1, 1), (1, 1), rng, dtype)
        self.bn2 = BatchNormLayer(cout, dtype)
        if cin != cout or stride != 1:
            self.sc_conv = Conv2dLayer(cin, cout, 1, (stride, stride), (0, 0), rng, dtype)
            self.sc_bn = BatchNormLayer(cout, dtype)
        else:
            self.sc_conv = self.sc_bn = None

    def children(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.sc_conv is not None:
            out += [("sc_conv", self.sc_conv), ("sc_bn", self.sc_bn)]
        return out

    def __call__(self, x, training):
        h = ad.relu(self.bn1(self.conv1(x), training))
        h = self.bn2(self.conv2(h), training)
        s = x if self.sc_conv is None else self.sc_bn(self.sc_conv(x), training)
        return ad.relu(ad.add(h, s))


class Block3d(_Composite):
    """The 2D block with 3x3x3 convolutions; stride applies spatially only."""

    def __init__(self, cin, cout, stride, rng, dtype):
        self.conv1 = Conv3dLayer(cin, cout, (3, 3, 3), (1, stride, stride), (1, 1, 1), rng, dtype)
        self.bn1 = BatchNormLayer(cout, dtype)
        self.conv2 = Conv3dLayer(cout, cout, (3, 3, 3), (1, 1, 1), (1, 1, 1), rng, dtype)
        self.bn2 = BatchNormLayer(cout, dtype)
        if cin != cout or stride != 1:
            self.sc_conv = Conv3dLayer(cin, cout, (1, 1, 1), (1, stride, stride), (0, 0, 0), rng, dtype)
            self.sc_bn = BatchNormLayer(cout, dtype)
        else:
            self.sc_conv = self.sc_bn = None

    def children(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.sc_conv is not None:
            out += [("sc_conv", self.sc_conv), ("sc_bn", self.sc_bn)]
        return out

    def __call__(self, x, training):
        h = ad.relu(self.bn1(self.conv1(x), training))
        h = self.bn2(self.conv2(h), training)
        s = x if self.sc_conv is None else self.sc_bn(self.sc_conv(x), training)
        return ad.relu(ad.add(h, s))


class P3dConv(_Composite):
    """A 3x3x3 convolution factorized into spatial 1x3x3 then temporal 3x1x1."""

    def __init__(self, cin, cout, stride, rng, dtype):
        self.spatial = Conv3dLayer(cin, cout, (1, 3, 3), (1, stride, stride), (0, 1, 1), rng, dtype)
        self.temporal = Conv3dLayer(cout, cout, (3, 1, 1), (1, 1, 1), (1, 0, 0), rng, dtype)

    def children(self):
        return [("spatial", self.spatial), ("temporal", self.temporal)]

    def __call__(self, x):
        return self.temporal(self.spatial(x))


class BlockP3d(_Composite):
    """Block3d with both 3x3x3 convolutions replaced by the serial factorization."""

    def __init__(self, cin, cout, stride, rng, dtype):
        self.conv1 = P3dConv(cin, cout, stride, rng, dtype)
        self.bn1 = BatchNormLayer(cout, dtype)
        self.conv2 = P3dConv(cout, cout, 1, rng, dtype)
        self.bn2 = BatchNormLayer(cout, dtype)
        if cin != cout or stride != 1:
            self.sc_conv = Conv3dLayer(cin, cout, (1, 1, 1), (1, stride, stride), (0, 0, 0), rng, dtype)
            self.sc_bn = BatchNormLayer(cout, dtype)
        else:
            self.sc_conv = self.sc_bn = None

    def children(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.sc_conv is not None:
            out += [("sc_conv", self.sc_conv), ("sc_bn", self.sc_bn)]
        return out

    def __call__(self, x, training):
        h = ad.relu(self.bn1(self.conv1(x), training))
        h = self.bn2(self.conv2(h), training)
        s = x if self.sc_conv is None else self.sc_bn(self.sc_conv(x), training)
        return ad.relu(ad.add(h, s))


class Stage(_Composite):
    def __init__(self, blocks):
        self.blocks = blocks

    def children(self):
        return [(str(i), b) for i, b in enumerate(self.blocks)]

    def __call__(self, x, training):
        for b in self.blocks:
            x = b(x, training)
        return x


def _make_stage(kind, count, cin, cout, stride, rng, dtype):
    cls = Block3d if kind == "full3d" else BlockP3d
    blocks = [cls(cin, cout, stride, rng, dtype)]
    blocks += [cls(cout, cout, 1, rng, dtype) for _ in range(count - 1)]
    return Stage(blocks)


# -- frame folding ----------------------------------------------------------------

def _fold_frames(x):
    """[N, C, T, H, W] -> [N*T, C, H, W] for per-frame 2D layers."""
    n, c, t, h, w = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3, 4)), (n * t, c, h, w)), (n, t)


def _unfold_frames(x, nt):
    n, t = nt
    _, c, h, w = x.shape
    return ad.transpose(ad.reshape(x, (n, t, c, h, w)), (0, 2, 1, 3, 4))


# -- backbone ----------------------------------------------------------------------

class Stem(_Composite):
    """Conv 0 (3x3, per frame) followed by the Stage-1 2D residual blocks."""

    def __init__(self, in_channels, c, n_blocks, rng, dtype):
        self.conv0 = Conv2dLayer(in_channels, c, 3, (1, 1), (1, 1), rng, dtype)
        self.bn0 = BatchNormLayer(c, dtype)
        self.stage1 = Stage([Block2d(c, c, 1, rng, dtype) for _ in range(n_blocks)])

    def children(self):
        return [("conv0", self.conv0), ("bn0", self.bn0), ("stage1", self.stage1)]

    def __call__(self, x, training):
        frames, nt = _fold_frames(x)
        h = ad.relu(self.bn0(self.conv0(frames), training))
        h = self.stage1(h, training)
        return _unfold_frames(h, nt)


class Backbone(_Composite):
    """The full four-stage trunk for a single input branch."""

    def __init__(self, cfg: ModelConfig, rng, dtype, in_channels=None):
        c = cfg.base_channels
        d1, d2, d3, d4 = cfg.depths
        in_ch = cfg.in_channels if in_channels is None else in_channels
        self.stem = Stem(in_ch, c, d1, rng, dtype)
        self.stage2 = _make_stage(cfg.block, d2, c, 2 * c, 2, rng, dtype)
        self.stage3 = _make_stage(cfg.block, d3, 2 * c, 4 * c, 2, rng, dtype)
        self.stage4 = _make_stage(cfg.block, d4, 4 * c, 8 * c, 1, rng, dtype)

    def children(self):
        return [("stem", self.stem), ("stage2", self.stage2),
                ("stage3", self.stage3), ("stage4", self.stage4)]

    def __call__(self, x, training):
        x = self.stem(x, training)
        x = self.stage2(x, training)
        x = self.stage3(x, training)
        return self.stage4(x, training)

    def param_count(self):
        return sum(p.data.size for _, p in self.named_params("backbone"))


# -- pooling -------------------------------------------------------------------------

def temporal_pool(x):
    """Element-wise max over the frame axis: [N, C, T, H, W] -> [N, C, H, W]."""
    return ad.reduce_max(x, axis=2)


def horizontal_pool(x, parts=16):
    """Split the feature height into strips; each part pools to max + mean.

    [N, C, H, W] -> [N, parts, C]
    """
    n, c, h, w = x.shape
    if h % parts != 0:
        raise ShapeError(f"feature height {h} not divisible into {parts} parts")
    strips = ad.reshape(x, (n, c, parts, (h // parts) * w))
    pooled = ad.add(ad.reduce_max(strips, axis=3), ad.reduce_mean(strips, axis=3))
    return ad.transpose(pooled, (0, 2, 1))


# -- head ----------------------------------------------------------------------------

class Head(_Composite):
    """Per-part FC into the metric space, batch-norm neck, bias-free classifier."""

    def __init__(self, parts, cin, embed_dim, num_classes, rng, dtype):
        self.parts = parts
        self.fcs = [LinearLayer(cin, embed_dim, rng, dtype) for _ in range(parts)]
        self.necks = [BatchNormLayer(embed_dim, dtype, shift=False) for _ in range(parts)]
        self.classifiers = [LinearLayer(embed_dim, num_classes, rng, dtype) for _ in range(parts)]

    def children(self):
        out = []
        for i in range(self.parts):
            out += [(f"fc{i}", self.fcs[i]), (f"neck{i}", self.necks[i]),
                    (f"cls{i}", self.classifiers[i])]
        return out

    def __call__(self, x, training):
        n, parts, _ = x.shape
        if parts != self.parts:
            raise ShapeError(f"expected {self.parts} parts, got {parts}")
        feats, necked, logits = [], [], []
        for p in range(self.parts):
            xp = ad.reshape(ad.slice_axis(x, 1, p, p + 1), (n, x.shape[2]))
            f = self.fcs[p](xp)
            z = self.necks[p](f, training)
            y = self.classifiers[p](z)
            feats.append(ad.reshape(f, (n, 1, f.shape[1])))
            necked.append(ad.reshape(z, (n, 1, z.shape[1])))
            logits.append(ad.reshape(y, (n, 1, y.shape[1])))
        return Embeddings(
            features=ad.concat(feats, axis=1),
            embeddings=ad.concat(necked, axis=1),
            logits=ad.concat(logits, axis=1),
        )


# -- fusion ----------------------------------------------------------------------------

def _check_fusable(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"fusion branches must share a shape, got {a.shape} vs {b.shape}")


class AddFusion(_Composite):
    def __init__(self, channels, rng, dtype):
        del channels, rng, dtype

    def children(self):
        return []

    def __call__(self, a, b, training):
        _check_fusable(a, b)
        return ad.add(a, b)


class CatFusion(_Composite):
    """Channel concatenation followed by a plain 1x1 convolution back to width C."""

    def __init__(self, channels, rng, dtype):
        self.proj = Conv2dLayer(2 * channels, channels, 1, (1, 1), (0, 0), rng, dtype)

    def children(self):
        return [("proj", self.proj)]

    def __call__(self, a, b, training):
        _check_fusable(a, b)
        cat = ad.concat([a, b], axis=1)
        frames, nt = _fold_frames(cat)
        return _unfold_frames(self.proj(frames), nt)


class AttentionFusion(_Composite):
    """Element-wise convex combination with weights from a small conv net.

    squeeze 1x1 -> ReLU -> 3x3 -> ReLU -> expand 1x1 to two score groups,
    softmax over the branch axis per element, then weighted sum.
    """

    def __init__(self, channels, rng, dtype):
        mid = max(4, channels // 2)
        self.squeeze = Conv2dLayer(2 * channels, mid, 1, (1, 1), (0, 0), rng, dtype)
        self.mix = Conv2dLayer(mid, mid, 3, (1, 1), (1, 1), rng, dtype)
        self.expand = Conv2dLayer(mid, 2 * channels, 1, (1, 1), (0, 0), rng, dtype)
        self.channels = channels

    def children(self):
        return [("squeeze", self.squeeze), ("mix", self.mix), ("expand", self.expand)]

    def weights(self, a, b):
        """Per-element branch weights (w_a, w_b), each [N, C, T, H, W], summing to 1."""
        _check_fusable(a, b)
        n, c, t, h, w = a.shape
        frames, nt = _fold_frames(ad.concat([a, b], axis=1))
        s = self.expand(ad.relu(self.mix(ad.relu(self.squeeze(frames)))))
        s = ad.reshape(s, (n * t, 2, c, h, w))
        s = ad.softmax(s, axis=1)
        wa = ad.reshape(ad.slice_axis(s, 1, 0, 1), (n * t, c, h, w))
        wb = ad.reshape(ad.slice_axis(s, 1, 1, 2), (n * t, c, h, w))
        return _unfold_frames(wa, nt), _unfold_frames(wb, nt)

    def __call__(self, a, b, training):
        wa, wb = self.weights(a, b)
        return ad.add(ad.mul(wa, a), ad.mul(wb, b))


_FUSIONS = {"add": AddFusion, "cat": CatFusion, "attention": AttentionFusion}


def make_fusion(kind, channels, rng, dtype):
    if kind not in _FUSIONS:
        raise ConfigError(f"unknown fusion kind {kind!r}")
    return _FUSIONS[kind](channels, rng, dtype)


# -- full models -----------------------------------------------------------------------

class SingleBranchModel(_Composite):
    """deepgaitv2 / skeletongait: backbone -> TP -> HP -> head."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.cfg = cfg
        self.backbone = Backbone(cfg, rng, dtype)
        self.head = Head(cfg.parts, 8 * cfg.base_channels, cfg.embed_dim, cfg.num_classes, rng, dtype)

    def children(self):
        return [("backbone", self.backbone), ("head", self.head)]

    def forward(self, clips, training=False):
        x = _to_nchw(clips, self.cfg.in_channels)
        x = self.backbone(x, training)
        pooled = horizontal_pool(temporal_pool(x), self.cfg.parts)
        return self.head(pooled, training)


class TwoBranchModel(_Composite):
    """skeletongait_pp: silhouette + skeleton branches with a fusion module."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.cfg = cfg
        c = cfg.base_channels
        d1, d2, d3, d4 = cfg.depths
        self.sil_stem = Stem(1, c, d1, rng, dtype)
        self.ske_stem = Stem(2, c, d1, rng, dtype)
        if cfg.fusion_level == "low":
            self.fusion = make_fusion(cfg.fusion_kind, c, rng, dtype)
            self.stage2 = _make_stage(cfg.block, d2, c, 2 * c, 2, rng, dtype)
            self.stage3 = _make_stage(cfg.block, d3, 2 * c, 4 * c, 2, rng, dtype)
            self.sil_stage2 = self.sil_stage3 = self.ske_stage2 = self.ske_stage3 = None
        else:
            self.sil_stage2 = _make_stage(cfg.block, d2, c, 2 * c, 2, rng, dtype)
            self.sil_stage3 = _make_stage(cfg.block, d3, 2 * c, 4 * c, 2, rng, dtype)
            self.ske_stage2 = _make_stage(cfg.block, d2, c, 2 * c, 2, rng, dtype)
            self.ske_stage3 = _make_stage(cfg.block, d3, 2 * c, 4 * c, 2, rng, dtype)
            self.fusion = make_fusion(cfg.fusion_kind, 4 * c, rng, dtype)
            self.stage2 = self.stage3 = None
        self.stage4 = _make_stage(cfg.block, d4, 4 * c, 8 * c, 1, rng, dtype)
        self.head = Head(cfg.parts, 8 * c, cfg.embed_dim, cfg.num_classes, rng, dtype)

    def children(self):
        out = [("sil_stem", self.sil_stem), ("ske_stem", self.ske_stem), ("fusion", self.fusion)]
        if self.cfg.fusion_level == "low":
            out += [("stage2", self.stage2), ("stage3", self.stage3)]
        else:
            out += [("sil_stage2", self.sil_stage2), ("sil_stage3", self.sil_stage3),
                    ("ske_stage2", self.ske_stage2), ("ske_stage3", self.ske_stage3)]
        return out + [("stage4", self.stage4), ("head", self.head)]

    def forward(self, clips, training=False):
        if not isinstance(clips, (tuple, list)) or len(clips) != 2:
            raise ContractError("skeletongait_pp expects a (silhouette, skeleton) clip pair")
        sil = _to_nchw(clips[0], 1)
        ske = _to_nchw(clips[1], 2)
        if sil.shape[2] != ske.shape[2]:
            raise ContractError(
                f"branches are not frame-aligned: {sil.shape[2]} vs {ske.shape[2]} frames")
        a = self.sil_stem(sil, training)
        b = self.ske_stem(ske, training)
        if self.cfg.fusion_level == "low":
            x = self.fusion(a, b, training)
            x = self.stage2(x, training)
            x = self.stage3(x, training)
        else:
            a = self.sil_stage3(self.sil_stage2(a, training), training)
            b = self.ske_stage3(self.ske_stage2(b, training), training)
            x = self.fusion(a, b, training)
        x = self.stage4(x, training)
        pooled = horizontal_pool(temporal_pool(x), self.cfg.parts)
        return self.head(pooled, training)


def _to_nchw(clips, channels):
    """Accept [N, T, C, H, W] clips (Tensor or ndarray); move channels first."""
    t = clips if isinstance(clips, Tensor) else Tensor(clips)
    if t.data.ndim != 5 or t.shape[2] != channels:
        raise ShapeError(f"expected clips [N, T, {channels}, H, W], got {tuple(t.shape)}")
    return ad.transpose(t, (0, 2, 1, 3, 4))


def build_model(cfg: ModelConfig, seed=0, dtype=np.float32):
    """Construct a baseline network with deterministic parameter initialization."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    if cfg.mode == "skeletongait_pp":
        return TwoBranchModel(cfg, rng, dtype)
    return SingleBranchModel(cfg, rng, dtype)


def param_set(model):
    ps = ParamSet(dict(model.named_params("")))
    ps.check()
    return ps


def param_count(model):
    return sum(p.data.size for _, p in model.named_params(""))


def stage_output_shapes(cfg: ModelConfig, t):
    """Expected per-stage output sizes in (T, C, H, W) convention for 64x44 inputs."""
    c = cfg.base_channels
    return {
        "conv0": (t, c, 64, 44),
        "stage1": (t, c, 64, 44),
        "stage2": (t, 2 * c, 32, 22),
        "stage3": (t, 4 * c, 16, 11),
        "stage4": (t, 8 * c, 16, 11),
        "tp": (1, 8 * c, 16, 11),
        "hp": (1, 8 * c, cfg.parts, 1),
    }


# -- checkpoints ------------------------------------------------------------------------

def save_checkpoint(model, path, extra=None):
    """Write a manifest plus one GT01 tensor per parameter/buffer."""
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    (path / "buffers").mkdir(parents=True, exist_ok=True)
    params = dict(model.named_params(""))
    buffers = dict(model.named_buffers(""))
    manifest = {
        "format": "gaitkit-checkpoint",
        "version": 1,
        "model": model.cfg.to_dict(),
        "dtype": str(np.dtype(next(iter(params.values())).data.dtype).name) if params else "float32",
        "params": {k: list(v.data.shape) for k, v in params.items()},
        "buffers": {k: list(v.shape) for k, v in buffers.items()},
    }
    if extra:
        manifest["extra"] = extra
    for name, p in params.items():
        write_tensor(path / "params" / f"{name}.gt01", p.data)
    for name, b in buffers.items():
        write_tensor(path / "buffers" / f"{name}.gt01", b)
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild the model from a checkpoint directory; returns (model, manifest)."""
    path = Path(path)
    with open(path / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "gaitkit-checkpoint":
        raise ConfigError(f"{path}: not a checkpoint directory")
    cfg = ModelConfig.from_dict(manifest["model"])
    dtype = np.dtype(manifest.get("dtype", "float32"))
    model = build_model(cfg, seed=0, dtype=dtype)
    params = dict(model.named_params(""))
    if set(params) != set(manifest["params"]):
        raise ConfigError(f"{path}: parameter names do not match the config")
    for name, p in params.items():
        arr = read_tensor(path / "params" / f"{name}.gt01")
        if list(arr.shape) != manifest["params"][name] or arr.shape != p.data.shape:
            raise ConfigError(f"{path}: shape mismatch for parameter {name!r}")
        p.data = arr.astype(dtype, copy=False)
    buffers = dict(model.named_buffers(""))
    for name in manifest["buffers"]:
        arr = read_tensor(path / "buffers" / f"{name}.gt01")
        if name not in buffers or arr.shape != buffers[name].shape:
            raise ConfigError(f"{path}: unexpected buffer {name!r}")
        buffers[name][...] = arr.astype(buffers[name].dtype, copy=False)
    return model, manifest
