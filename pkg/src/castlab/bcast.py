"""Bottleneck adapters and the cross-attention exchange between experts.

The exchange choreography per block: each expert down-projects its
tokens once (shared between its own query path and the partner's
key/value path), CLS tokens are detached, direction-specific positional
embeddings are added along the window axis, windowed cross-attention
runs in the bottleneck dimension, and the result is up-projected back.
Up-projections start at zero, so a freshly built model is exactly the
pair of independent frozen towers.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import AttentionParams, mhca
from .module import Module
from .tokens import TokenGrid

__all__ = [
    "Adapter",
    "adapter",
    "BcastExchange",
    "IdentityExchange",
    "PlainMhcaExchange",
    "make_exchange",
    "EXCHANGE_KINDS",
]

EXCHANGE_KINDS = ("identity", "no_adapter", "xattn_then_adapter", "bcast")


class Adapter(Module):
    """Down-GELU-up bottleneck; output is exactly zero at initialization."""

    def __init__(self, factory, prefix, dim, ratio):
        if not 0 < ratio <= 1:
            raise ValueError(f"adapter ratio must be in (0, 1], got {ratio}")
        hidden = max(1, int(dim * ratio))
        self.ratio = ratio
        self.w_down = factory.trunc_normal(f"{prefix}.w_down", (dim, hidden))
        self.b_down = factory.zeros(f"{prefix}.b_down", (hidden,))
        self.w_up = factory.zeros(f"{prefix}.w_up", (hidden, dim))
        self.b_up = factory.zeros(f"{prefix}.b_up", (dim,))

    def __call__(self, x):
        h = T.gelu(T.matmul(x, self.w_down) + self.b_down)
        return T.matmul(h, self.w_up) + self.b_up


def adapter(x, params):
    """Apply a bottleneck adapter to a Tensor or TokenGrid."""
    if isinstance(x, TokenGrid):
        return x.with_data(params(x.data))
    return params(x)


class _ExchangeBase(Module):
    """Common forward contract: (y_s, y_t) -> (delta_s | None, delta_t | None)."""

    def __init__(self, t2s=True, s2t=True):
        self.t2s_enabled = t2s
        self.s2t_enabled = s2t


class IdentityExchange(_ExchangeBase):
    """No information exchange; zero parameters, zero cost."""

    def __init__(self):
        super().__init__(t2s=False, s2t=False)

    def __call__(self, y_s, y_t):
        return None, None


def _add_axis_embedding(grid, emb, axis):
    # axis: 1 = time, 2 = space
    shape = [1, 1, 1, emb.data.shape[-1]]
    shape[axis] = emb.data.shape[0]
    return grid.with_data(grid.data + T.reshape(emb, tuple(shape)))


def _embedding_extent(window, t, n):
    """Length of the positional embedding for a window ('space_time' has none)."""
    if window == "time":
        return t
    if window == "space":
        return n
    return None


class BcastExchange(_ExchangeBase):
    """Bottleneck cross-attention with direction-specific embeddings."""

    def __init__(self, factory, prefix, dim, t, n, heads, ratio=0.5,
                 t2s_window="time", s2t_window="space", t2s=True, s2t=True,
                 out_proj=True):
        super().__init__(t2s=t2s, s2t=s2t)
        bdim = max(1, int(dim * ratio))
        self.dim = dim
        self.bdim = bdim
        self.w_down_s = factory.trunc_normal(f"{prefix}.down_s.weight", (dim, bdim))
        self.b_down_s = factory.zeros(f"{prefix}.down_s.bias", (bdim,))
        self.w_down_t = factory.trunc_normal(f"{prefix}.down_t.weight", (dim, bdim))
        self.b_down_t = factory.zeros(f"{prefix}.down_t.bias", (bdim,))
        self.ln_s_gamma = factory.ones(f"{prefix}.ln_s.gamma", (bdim,))
        self.ln_s_beta = factory.zeros(f"{prefix}.ln_s.beta", (bdim,))
        self.ln_t_gamma = factory.ones(f"{prefix}.ln_t.gamma", (bdim,))
        self.ln_t_beta = factory.zeros(f"{prefix}.ln_t.beta", (bdim,))
        if t2s:
            self.mhca_t2s = AttentionParams(
                factory, f"{prefix}.t2s", bdim, heads, t2s_window, frozen=False,
                out_proj=out_proj)
            ext = _embedding_extent(t2s_window, t, n)
            if ext is not None:
                self.e_t = factory.trunc_normal(f"{prefix}.e_t", (ext, bdim))
            self.w_up_s = factory.zeros(f"{prefix}.up_s.weight", (bdim, dim))
            self.b_up_s = factory.zeros(f"{prefix}.up_s.bias", (dim,))
        if s2t:
            self.mhca_s2t = AttentionParams(
                factory, f"{prefix}.s2t", bdim, heads, s2t_window, frozen=False,
                out_proj=out_proj)
            ext = _embedding_extent(s2t_window, t, n)
            if ext is not None:
                self.e_s = factory.trunc_normal(f"{prefix}.e_s", (ext, bdim))
            self.w_up_t = factory.zeros(f"{prefix}.up_t.weight", (bdim, dim))
            self.b_up_t = factory.zeros(f"{prefix}.up_t.bias", (dim,))

    def _down(self, grid, w, b, gamma, beta):
        return grid.with_data(T.layer_norm(T.matmul(grid.data, w) + b, gamma, beta))

    def __call__(self, y_s, y_t):
        if not y_s.has_cls:
            raise ValueError("spatial grid must carry CLS tokens for B-CAST")
        down_s = self._down(y_s, self.w_down_s, self.b_down_s,
                            self.ln_s_gamma, self.ln_s_beta)
        down_t = self._down(y_t, self.w_down_t, self.b_down_t,
                            self.ln_t_gamma, self.ln_t_beta)
        cls_down, down_s_patches = down_s.detach_cls()

        delta_s = delta_t = None
        if self.t2s_enabled:
            win_axis = {"time": 1, "space": 2, "space_time": None}[self.mhca_t2s.window]
            q = down_s_patches
            kv = down_t
            if win_axis is not None:
                q = _add_axis_embedding(q, self.e_t, win_axis)
                kv = _add_axis_embedding(kv, self.e_t, win_axis)
            out = mhca(q, kv, self.mhca_t2s)
            patches = T.matmul(T.gelu(out.data), self.w_up_s) + self.b_up_s
            cls_delta = T.matmul(T.gelu(cls_down), self.w_up_s) + self.b_up_s
            delta_s = TokenGrid(T.concat([cls_delta, patches], axis=2), has_cls=True)
        if self.s2t_enabled:
            win_axis = {"time": 1, "space": 2, "space_time": None}[self.mhca_s2t.window]
            q = down_t
            kv = down_s_patches
            if win_axis is not None:
                q = _add_axis_embedding(q, self.e_s, win_axis)
                kv = _add_axis_embedding(kv, self.e_s, win_axis)
            out = mhca(q, kv, self.mhca_s2t)
            delta_t = TokenGrid(T.matmul(T.gelu(out.data), self.w_up_t) + self.b_up_t,
                                has_cls=False)
        return delta_s, delta_t


class PlainMhcaExchange(_ExchangeBase):
    """Cross-attention at the full channel dim, without the bottleneck.

    ``adapter_after`` appends a zero-initialized bottleneck adapter to the
    output of each direction (the "cross-attention then adapter" ablation).
    """

    def __init__(self, factory, prefix, dim, t, n, heads,
                 t2s_window="time", s2t_window="space", adapter_after=False,
                 adapter_ratio=0.25, t2s=True, s2t=True, out_proj=True):
        super().__init__(t2s=t2s, s2t=s2t)
        self.dim = dim
        self.adapter_after = adapter_after
        self.ln_s_gamma = factory.ones(f"{prefix}.ln_s.gamma", (dim,))
        self.ln_s_beta = factory.zeros(f"{prefix}.ln_s.beta", (dim,))
        self.ln_t_gamma = factory.ones(f"{prefix}.ln_t.gamma", (dim,))
        self.ln_t_beta = factory.zeros(f"{prefix}.ln_t.beta", (dim,))
        if t2s:
            self.mhca_t2s = AttentionParams(
                factory, f"{prefix}.t2s", dim, heads, t2s_window, frozen=False,
                out_proj=out_proj)
            ext = _embedding_extent(t2s_window, t, n)
            if ext is not None:
                self.e_t = factory.trunc_normal(f"{prefix}.e_t", (ext, dim))
            if adapter_after:
                self.adap_s = Adapter(factory, f"{prefix}.adap_s", dim, adapter_ratio)
        if s2t:
            self.mhca_s2t = AttentionParams(
                factory, f"{prefix}.s2t", dim, heads, s2t_window, frozen=False,
                out_proj=out_proj)
            ext = _embedding_extent(s2t_window, t, n)
            if ext is not None:
                self.e_s = factory.trunc_normal(f"{prefix}.e_s", (ext, dim))
            if adapter_after:
                self.adap_t = Adapter(factory, f"{prefix}.adap_t", dim, adapter_ratio)

    def __call__(self, y_s, y_t):
        if not y_s.has_cls:
            raise ValueError("spatial grid must carry CLS tokens for exchange")
        ln_s = y_s.with_data(T.layer_norm(y_s.data, self.ln_s_gamma, self.ln_s_beta))
        ln_t = y_t.with_data(T.layer_norm(y_t.data, self.ln_t_gamma, self.ln_t_beta))
        cls_ln, s_patches = ln_s.detach_cls()

        delta_s = delta_t = None
        if self.t2s_enabled:
            win_axis = {"time": 1, "space": 2, "space_time": None}[self.mhca_t2s.window]
            q, kv = s_patches, ln_t
            if win_axis is not None:
                q = _add_axis_embedding(q, self.e_t, win_axis)
                kv = _add_axis_embedding(kv, self.e_t, win_axis)
            out = mhca(q, kv, self.mhca_t2s).data
            if self.adapter_after:
                out = self.adap_s(out)
                cls_delta = self.adap_s(cls_ln)
            else:
                cls_delta = T.mul_scalar(cls_ln, 0.0)
            delta_s = TokenGrid(T.concat([cls_delta, out], axis=2), has_cls=True)
        if self.s2t_enabled:
            win_axis = {"time": 1, "space": 2, "space_time": None}[self.mhca_s2t.window]
            q, kv = ln_t, s_patches
            if win_axis is not None:
                q = _add_axis_embedding(q, self.e_s, win_axis)
                kv = _add_axis_embedding(kv, self.e_s, win_axis)
            out = mhca(q, kv, self.mhca_s2t).data
            if self.adapter_after:
                out = self.adap_t(out)
            delta_t = TokenGrid(out, has_cls=False)
        return delta_s, delta_t


def make_exchange(kind, factory, prefix, dim, t, n, heads, ratio=0.5,
                  t2s_window="time", s2t_window="space", t2s=True, s2t=True,
                  out_proj=True, adapter_ratio=0.25):
    """Build one block's exchange module by ablation kind."""
    if kind == "identity":
        return IdentityExchange()
    if kind == "bcast":
        return BcastExchange(factory, prefix, dim, t, n, heads, ratio,
                             t2s_window, s2t_window, t2s, s2t, out_proj)
    if kind == "no_adapter":
        return PlainMhcaExchange(factory, prefix, dim, t, n, heads,
                                 t2s_window, s2t_window, adapter_after=False,
                                 t2s=t2s, s2t=s2t, out_proj=out_proj)
    if kind == "xattn_then_adapter":
        return PlainMhcaExchange(factory, prefix, dim, t, n, heads,
                                 t2s_window, s2t_window, adapter_after=True,
                                 adapter_ratio=adapter_ratio,
                                 t2s=t2s, s2t=s2t, out_proj=out_proj)
    raise ValueError(f"unknown exchange kind {kind!r}; expected one of {EXCHANGE_KINDS}")
