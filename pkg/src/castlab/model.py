"""Two-tower model assembly, ablation variants, and checkpoint I/O.

Freezing policy: every expert-tower weight (tokenizers, attention, FFN,
block layer norms) is frozen; adapters, the exchange module, the final
layer norms, and the classification heads are learnable. All parameter
initialization is keyed by (seed, name), so two variants sharing a seed
share bit-identical frozen towers.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .attention import AttentionParams, mhsa
from .bcast import Adapter, make_exchange, EXCHANGE_KINDS
from .module import Module, ParamFactory
from .tensor import Parameter, Tensor
from .tokens import (ConfigError, TokenGrid, VideoClip, spatial_tokenize,
                     temporal_tokenize)

__all__ = [
    "CastConfig",
    "CastModel",
    "build_variant",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "VARIANTS",
]

VARIANTS = (
    "cast", "independent", "ensemble", "late_add", "late_concat", "lateral",
    "spatial_only", "temporal_only", "s2t_only", "t2s_only", "role_swap",
)

CKPT_MAGIC = b"CASTCKPT\x01"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class CastConfig:
    """Complete architecture description; single source of truth for the
    model builder, the profiler, and the CLI."""

    depth: int = 4
    dim: int = 64
    heads: int = 4
    patch: int = 8
    frames: int = 16          # 2T raw frames
    height: int = 32
    width: int = 32
    mlp_ratio: float = 4.0
    adapter_ratio: float = 0.25
    bcast_ratio: float = 0.5
    t2s_window: str = "time"
    s2t_window: str = "space"
    variant: str = "cast"
    exchange_kind: str = "bcast"
    exchange_layers: tuple = ()   # empty = all layers (1-indexed otherwise)
    head_kind: str = "dual"
    appearance_classes: int = 4
    motion_classes: int = 4
    temporal_attention: str = "joint"   # or "divided"
    mhca_out_proj: bool = True
    seed: int = 0

    @property
    def t(self):
        return self.frames // 2

    @property
    def n(self):
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def bdim(self):
        return max(1, int(self.dim * self.bcast_ratio))

    def active_exchange_layers(self):
        """1-indexed block numbers that carry an exchange module."""
        if self.variant in ("independent", "ensemble", "spatial_only",
                            "temporal_only", "late_add", "late_concat", "lateral"):
            return frozenset()
        if not self.exchange_layers:
            return frozenset(range(1, self.depth + 1))
        return frozenset(self.exchange_layers)

    def validate(self):
        if self.frames % 2:
            raise ConfigError(f"frame count must be even, got {self.frames}")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(
                f"resolution {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {VARIANTS}")
        if self.exchange_kind not in EXCHANGE_KINDS:
            raise ConfigError(
                f"unknown exchange kind {self.exchange_kind!r}; valid: {EXCHANGE_KINDS}")
        if self.head_kind not in ("single", "dual"):
            raise ConfigError(f"head kind must be single or dual, got {self.head_kind!r}")
        if self.head_kind == "single" and self.variant == "ensemble":
            raise ConfigError("ensemble variant requires dual heads")
        for layer in self.exchange_layers:
            if not 1 <= layer <= self.depth:
                raise ConfigError(f"exchange layer {layer} out of range 1..{self.depth}")
        if self.temporal_attention not in ("joint", "divided"):
            raise ConfigError(
                f"temporal_attention must be joint or divided, got {self.temporal_attention!r}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["exchange_layers"] = list(self.exchange_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["exchange_layers"] = tuple(d.get("exchange_layers", ()))
        return cls(**d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def single_classes(self):
        return self.appearance_classes * self.motion_classes


def _window_pair(config):
    """Self-attention windows for (spatial tower, temporal tower)."""
    if config.variant == "role_swap":
        return "space_time", "space"
    return "space", "space_time"


class TowerBlock(Module):
    """One transformer block of an expert tower (frozen) plus its adapters."""

    def __init__(self, factory, prefix, dim, heads, window, mlp_ratio,
                 adapter_ratio, divided_time=False):
        hidden = int(dim * mlp_ratio)
        self.window = window
        self.divided_time = divided_time
        if divided_time:
            self.ln_div_gamma = factory.ones(f"{prefix}.ln_div.gamma", (dim,), frozen=True)
            self.ln_div_beta = factory.zeros(f"{prefix}.ln_div.beta", (dim,), frozen=True)
            self.attn_time = AttentionParams(
                factory, f"{prefix}.attn_time", dim, heads, "time", frozen=True)
        self.ln1_gamma = factory.ones(f"{prefix}.ln1.gamma", (dim,), frozen=True)
        self.ln1_beta = factory.zeros(f"{prefix}.ln1.beta", (dim,), frozen=True)
        self.attn = AttentionParams(factory, f"{prefix}.attn", dim, heads, window,
                                    frozen=True)
        self.adap_attn = Adapter(factory, f"{prefix}.adap_attn", dim, adapter_ratio)
        self.ln2_gamma = factory.ones(f"{prefix}.ln2.gamma", (dim,), frozen=True)
        self.ln2_beta = factory.zeros(f"{prefix}.ln2.beta", (dim,), frozen=True)
        self.w1 = factory.trunc_normal(f"{prefix}.ffn.w1", (dim, hidden), frozen=True)
        self.b1 = factory.zeros(f"{prefix}.ffn.b1", (hidden,), frozen=True)
        self.w2 = factory.trunc_normal(f"{prefix}.ffn.w2", (hidden, dim), frozen=True)
        self.b2 = factory.zeros(f"{prefix}.ffn.b2", (dim,), frozen=True)
        self.adap_ffn = Adapter(factory, f"{prefix}.adap_ffn", dim, adapter_ratio)

    def attend(self, grid):
        """Y = X + MHSA(LN(X)) + ADAP(MHSA(LN(X)))."""
        x = grid
        if self.divided_time:
            ln = T.layer_norm(x.data, self.ln_div_gamma, self.ln_div_beta)
            m = mhsa(x.with_data(ln), self.attn_time)
            x = x.with_data(x.data + m.data)
        ln = T.layer_norm(x.data, self.ln1_gamma, self.ln1_beta)
        m = mhsa(x.with_data(ln), self.attn)
        return x.with_data(x.data + m.data + self.adap_attn(m.data))

    def feed_forward(self, grid):
        """X' = B + FFN(LN(B)) + ADAP(LN(B))."""
        ln = T.layer_norm(grid.data, self.ln2_gamma, self.ln2_beta)
        ffn = T.matmul(T.gelu(T.matmul(ln, self.w1) + self.b1), self.w2) + self.b2
        return grid.with_data(grid.data + ffn + self.adap_ffn(ln))


class LateralExchange(Module):
    """Per-block bidirectional element-wise addition with linear projection.

    Projections are zero-initialized so the untrained model equals the
    independent towers.
    """

    def __init__(self, factory, prefix, dim):
        self.w_ts = factory.zeros(f"{prefix}.lateral.w_ts", (dim, dim))
        self.b_ts = factory.zeros(f"{prefix}.lateral.b_ts", (dim,))
        self.w_st = factory.zeros(f"{prefix}.lateral.w_st", (dim, dim))
        self.b_st = factory.zeros(f"{prefix}.lateral.b_st", (dim,))

    def __call__(self, y_s, y_t):
        cls, s_patches = y_s.detach_cls()
        add_s = T.matmul(y_t.data, self.w_ts) + self.b_ts
        add_t = T.matmul(s_patches.data, self.w_st) + self.b_st
        new_s_patches = s_patches.data + add_s
        new_t = y_t.with_data(y_t.data + add_t)
        new_s = TokenGrid(T.concat([cls, new_s_patches], axis=2), has_cls=True)
        return new_s, new_t


def _time_mean_sym(x):
    """Mean over the time axis of a (B, T, D) tensor, computed so that
    reversing the time axis gives a bitwise-identical result: symmetric
    positions are paired first (addition is commutative), then the pair
    sums are reduced in a fixed order."""
    t = x.shape[1]
    if t == 1:
        return T.reduce_mean(x, axis=1)
    parts = [T.slice_axis(x, 1, i, i + 1) + T.slice_axis(x, 1, t - 1 - i, t - i)
             for i in range(t // 2)]
    total = T.reduce_sum(T.concat(parts, axis=1), axis=1)
    if t % 2:
        mid = T.reduce_sum(T.slice_axis(x, 1, t // 2, t // 2 + 1), axis=1)
        total = total + mid
    return T.mul_scalar(total, 1.0 / t)


class CastModel(Module):
    """The assembled two-tower model for a given config and variant."""

    def __init__(self, config, dtype=np.float32):
        config.validate()
        self.config = config
        factory = ParamFactory(config.seed, dtype=dtype)
        c = config
        d = c.dim
        s_window, t_window = _window_pair(c)
        self.has_spatial = c.variant != "temporal_only"
        self.has_temporal = c.variant != "spatial_only"

        if self.has_spatial:
            self.s_proj = factory.trunc_normal(
                "spatial.patch_proj.weight", (c.patch * c.patch * 3, d), frozen=True)
            self.s_pos = factory.trunc_normal("spatial.pos", (c.n + 1, d), std=0.2,
                                              frozen=True)
            self.s_cls = factory.zeros("spatial.cls", (1, d), frozen=True)
        if self.has_temporal:
            self.t_proj = factory.trunc_normal(
                "temporal.tube_proj.weight", (2 * c.patch * c.patch * 3, d), frozen=True)
            self.t_pos = factory.trunc_normal("temporal.pos", (c.t * c.n, d), std=0.2,
                                              frozen=True)

        self.s_blocks = []
        self.t_blocks = []
        self.exchanges = []
        active = c.active_exchange_layers()
        for i in range(c.depth):
            if self.has_spatial:
                self.s_blocks.append(TowerBlock(
                    factory, f"block{i + 1}.spatial", d, c.heads, s_window,
                    c.mlp_ratio, c.adapter_ratio))
            if self.has_temporal:
                self.t_blocks.append(TowerBlock(
                    factory, f"block{i + 1}.temporal", d, c.heads, t_window,
                    c.mlp_ratio, c.adapter_ratio,
                    divided_time=(c.temporal_attention == "divided")))
            if c.variant == "lateral":
                self.exchanges.append(LateralExchange(factory, f"block{i + 1}", d))
            elif (i + 1) in active:
                kind = c.exchange_kind
                t2s = c.variant in ("cast", "t2s_only", "role_swap")
                s2t = c.variant in ("cast", "s2t_only", "role_swap")
                self.exchanges.append(make_exchange(
                    kind, factory, f"block{i + 1}.exchange", d, c.t, c.n, c.heads,
                    ratio=c.bcast_ratio, t2s_window=c.t2s_window,
                    s2t_window=c.s2t_window, t2s=t2s, s2t=s2t,
                    out_proj=c.mhca_out_proj, adapter_ratio=c.adapter_ratio))
            else:
                self.exchanges.append(None)

        if self.has_spatial:
            self.fln_s_gamma = factory.ones("final_ln.spatial.gamma", (d,))
            self.fln_s_beta = factory.zeros("final_ln.spatial.beta", (d,))
        if self.has_temporal:
            self.fln_t_gamma = factory.ones("final_ln.temporal.gamma", (d,))
            self.fln_t_beta = factory.zeros("final_ln.temporal.beta", (d,))

        self._build_heads(factory)
        self._check_unique_names()

    # ------------------------------------------------------------------

    def _build_heads(self, factory):
        c = self.config
        d = c.dim
        self.heads = {}

        def linear(prefix, classes):
            w = factory.trunc_normal(f"{prefix}.weight", (d, classes))
            b = factory.zeros(f"{prefix}.bias", (classes,))
            return w, b

        if c.head_kind == "single":
            self.adap_cls = Adapter(factory, "head.adap_cls", d, c.adapter_ratio)
            self.adap_gap = Adapter(factory, "head.adap_gap", d, c.adapter_ratio)
            self.heads["action"] = linear("head.action", c.single_classes())
        elif c.variant == "ensemble":
            self.heads["s.appearance"] = linear("head.s.appearance", c.appearance_classes)
            self.heads["s.motion"] = linear("head.s.motion", c.motion_classes)
            self.heads["t.appearance"] = linear("head.t.appearance", c.appearance_classes)
            self.heads["t.motion"] = linear("head.t.motion", c.motion_classes)
        elif c.variant in ("late_add", "late_concat"):
            if c.variant == "late_concat":
                self.fuse_w = factory.trunc_normal("head.fuse.weight", (2 * d, d))
                self.fuse_b = factory.zeros("head.fuse.bias", (d,))
            self.heads["appearance"] = linear("head.appearance", c.appearance_classes)
            self.heads["motion"] = linear("head.motion", c.motion_classes)
        else:
            self.heads["appearance"] = linear("head.appearance", c.appearance_classes)
            self.heads["motion"] = linear("head.motion", c.motion_classes)
        for key, (w, b) in self.heads.items():
            setattr(self, f"_head_{key.replace('.', '_')}_w", w)
            setattr(self, f"_head_{key.replace('.', '_')}_b", b)

    def _check_unique_names(self):
        names = [n for n, _ in self.named_parameters()]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError(f"duplicate parameter names: {dupes}")

    # ------------------------------------------------------------------
    # forward

    def tokenize(self, clip):
        c = self.config
        x_s = x_t = None
        if self.has_spatial:
            x_s = spatial_tokenize(clip, c.patch, self.s_proj, self.s_pos, self.s_cls)
        if self.has_temporal:
            pos = T.reshape(self.t_pos, (c.t, c.n, c.dim))
            x_t = temporal_tokenize(clip, c.patch, self.t_proj, pos)
        return x_s, x_t

    def block_forward(self, x_s, x_t, index):
        """One full block: Eq-style MHSA+adapter, exchange, FFN+adapter."""
        y_s = self.s_blocks[index].attend(x_s) if self.has_spatial else None
        y_t = self.t_blocks[index].attend(x_t) if self.has_temporal else None
        exch = self.exchanges[index]
        if exch is not None:
            if self.config.variant == "lateral":
                y_s, y_t = exch(y_s, y_t)
            else:
                delta_s, delta_t = exch(y_s, y_t)
                if delta_s is not None:
                    y_s = y_s.with_data(y_s.data + delta_s.data)
                if delta_t is not None:
                    y_t = y_t.with_data(y_t.data + delta_t.data)
        if y_s is not None:
            y_s = self.s_blocks[index].feed_forward(y_s)
        if y_t is not None:
            y_t = self.t_blocks[index].feed_forward(y_t)
        return y_s, y_t

    def _features(self, clip):
        x_s, x_t = self.tokenize(clip)
        for i in range(self.config.depth):
            x_s, x_t = self.block_forward(x_s, x_t, i)
        cls_feat = gap_feat = None
        if x_s is not None:
            ln = T.layer_norm(x_s.data, self.fln_s_gamma, self.fln_s_beta)
            if x_s.has_cls:
                frames = T.reduce_mean(T.slice_axis(ln, 2, 0, 1), axis=2)
            else:
                frames = T.reduce_mean(ln, axis=2)
            cls_feat = _time_mean_sym(frames)
        if x_t is not None:
            ln = T.layer_norm(x_t.data, self.fln_t_gamma, self.fln_t_beta)
            gap_feat = _time_mean_sym(T.reduce_mean(ln, axis=2))
        return cls_feat, gap_feat

    def _apply_head(self, key, feat):
        w, b = self.heads[key]
        return T.matmul(feat, w) + b

    def forward(self, clip):
        """Per-head logits, one dict per prediction stream.

        Non-ensemble variants return a single dict mapping task name to
        a (B, classes) logits Tensor; the ensemble returns one dict per
        expert stream, to be probability-averaged at prediction time.
        """
        c = self.config
        cls_feat, gap_feat = self._features(clip)
        if c.head_kind == "single":
            z = self.adap_cls(cls_feat) + self.adap_gap(gap_feat)
            return [{"action": self._apply_head("action", z)}]
        if c.variant == "ensemble":
            return [
                {"appearance": self._apply_head("s.appearance", cls_feat),
                 "motion": self._apply_head("s.motion", cls_feat)},
                {"appearance": self._apply_head("t.appearance", gap_feat),
                 "motion": self._apply_head("t.motion", gap_feat)},
            ]
        if c.variant in ("late_add", "late_concat"):
            if c.variant == "late_add":
                fused = cls_feat + gap_feat
            else:
                fused = T.matmul(T.concat([cls_feat, gap_feat], axis=1),
                                 self.fuse_w) + self.fuse_b
            return [{"appearance": self._apply_head("appearance", fused),
                     "motion": self._apply_head("motion", fused)}]
        if c.variant == "spatial_only":
            return [{"appearance": self._apply_head("appearance", cls_feat),
                     "motion": self._apply_head("motion", cls_feat)}]
        if c.variant == "temporal_only":
            return [{"appearance": self._apply_head("appearance", gap_feat),
                     "motion": self._apply_head("motion", gap_feat)}]
        return [{"appearance": self._apply_head("appearance", cls_feat),
                 "motion": self._apply_head("motion", gap_feat)}]

    def predict_proba(self, clip):
        """Softmax probabilities per task, averaged over prediction streams."""
        streams = self.forward(clip)
        out = {}
        for task in streams[0]:
            probs = [T.softmax_lastdim(s[task]).data for s in streams]
            out[task] = np.mean(probs, axis=0)
        return out


def build_variant(config, dtype=np.float32):
    """Construct the model for any ablation variant of the config."""
    return CastModel(config, dtype=dtype)


# ----------------------------------------------------------------------
# checkpoint format: magic, records (name, shape, frozen, f32 LE), CRC32


def save_checkpoint(model, path):
    buf = bytearray()
    buf += CKPT_MAGIC
    params = sorted(model.named_parameters())
    buf += struct.pack("<I", len(params))
    for name, p in params:
        nb = name.encode()
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", p.data.ndim)
        for extent in p.data.shape:
            buf += struct.pack("<I", extent)
        buf += struct.pack("<B", 1 if p.frozen else 0)
        buf += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(bytes(buf))


def load_checkpoint(model, path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(CKPT_MAGIC) + 8 or blob[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic at offset 0 in {path}")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"checkpoint CRC mismatch at offset {len(blob) - 4}")
    off = len(CKPT_MAGIC)
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    params = dict(model.named_parameters())
    seen = set()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        (frozen,) = struct.unpack_from("<B", body, off)
        off += 1
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        if name not in params:
            raise CheckpointError(f"checkpoint parameter {name!r} not present in model")
        p = params[name]
        if tuple(shape) != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {tuple(shape)} vs model {p.data.shape}")
        p.data[...] = data.astype(p.data.dtype)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
