"""Windowed multi-head self- and cross-attention over token grids.

Windows restrict each query's key set: ``space`` keeps attention inside
one frame, ``time`` inside one spatial location across frames, and
``space_time`` spans the whole clip. Windowing is realized by reshaping
the grid so the window axis becomes the attention axis; the mask-based
formulation exists only as a test oracle (attention_support).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .module import Module
from .tokens import TokenGrid, reshape_views

__all__ = ["AttentionParams", "mhsa", "mhca", "attention_support", "WINDOWS"]

WINDOWS = ("space", "time", "space_time")

_WINDOW_ORDER = {"space": "bt_n", "time": "bn_t", "space_time": "b_tn"}


class AttentionParams(Module):
    """Projection weights for one attention operation."""

    def __init__(self, factory, prefix, dim, heads, window, frozen, out_proj=True):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        if window not in WINDOWS:
            raise ValueError(f"unknown window {window!r}")
        self.dim = dim
        self.heads = heads
        self.window = window
        self.out_proj = out_proj
        self.w_q = factory.trunc_normal(f"{prefix}.w_q", (dim, dim), frozen=frozen)
        self.w_k = factory.trunc_normal(f"{prefix}.w_k", (dim, dim), frozen=frozen)
        self.w_v = factory.trunc_normal(f"{prefix}.w_v", (dim, dim), frozen=frozen)
        self.b_q = factory.zeros(f"{prefix}.b_q", (dim,), frozen=frozen)
        self.b_k = factory.zeros(f"{prefix}.b_k", (dim,), frozen=frozen)
        self.b_v = factory.zeros(f"{prefix}.b_v", (dim,), frozen=frozen)
        if out_proj:
            self.w_o = factory.trunc_normal(f"{prefix}.w_o", (dim, dim), frozen=frozen)
            self.b_o = factory.zeros(f"{prefix}.b_o", (dim,), frozen=frozen)


def _split_heads(x, heads):
    # (G, S, D) -> (G, h, S, Dh)
    g, s, d = x.shape
    return T.transpose(T.reshape(x, (g, s, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    g, h, s, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (g, s, h * dh))


def _attend(q_flat, kv_flat, params):
    """Scaled dot-product attention over the middle axis of 3D tensors."""
    q = _split_heads(T.matmul(q_flat, params.w_q) + params.b_q, params.heads)
    k = _split_heads(T.matmul(kv_flat, params.w_k) + params.b_k, params.heads)
    v = _split_heads(T.matmul(kv_flat, params.w_v) + params.b_v, params.heads)
    scale = 1.0 / np.sqrt(params.dim // params.heads)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * scale
    attn = T.softmax_lastdim(scores)
    out = _merge_heads(T.matmul(attn, v))
    if params.out_proj:
        out = T.matmul(out, params.w_o) + params.b_o
    return out


def mhsa(grid, params):
    """Windowed multi-head self-attention; shape preserving."""
    if grid.dim != params.dim:
        raise ValueError(f"channel dim {grid.dim} does not match params dim {params.dim}")
    if params.window == "time" and grid.has_cls:
        raise ValueError("CLS tokens must be detached before time-window attention")
    flat, restore = reshape_views(grid, _WINDOW_ORDER[params.window])
    return restore(_attend(flat, flat, params))


def mhca(query_grid, kv_grid, params):
    """Windowed cross-attention: queries from one grid, keys/values from the other."""
    if query_grid.dim != params.dim or kv_grid.dim != params.dim:
        raise ValueError(
            f"channel dims ({query_grid.dim}, {kv_grid.dim}) must both equal {params.dim}"
        )
    if query_grid.time != kv_grid.time or query_grid.space != kv_grid.space:
        raise ValueError(
            f"grid extents differ: ({query_grid.time},{query_grid.space}) vs "
            f"({kv_grid.time},{kv_grid.space})"
        )
    if params.window == "time" and (query_grid.has_cls or kv_grid.has_cls):
        raise ValueError("CLS tokens must be detached before time-window attention")
    order = _WINDOW_ORDER[params.window]
    q_flat, restore = reshape_views(query_grid, order)
    kv_flat, _ = reshape_views(kv_grid, order)
    return restore(_attend(q_flat, kv_flat, params))


def attention_support(window, t, n):
    """Explicit key-index sets per query; the oracle for window masking.

    Tokens are indexed (time, space); returns a dict mapping each query
    index pair to the frozenset of key index pairs it may attend to.
    """
    if window not in WINDOWS:
        raise ValueError(f"unknown window {window!r}")
    support = {}
    for ti in range(t):
        for ni in range(n):
            if window == "space":
                keys = {(ti, nj) for nj in range(n)}
            elif window == "time":
                keys = {(tj, ni) for tj in range(t)}
            else:
                keys = {(tj, nj) for tj in range(t) for nj in range(n)}
            support[(ti, ni)] = frozenset(keys)
    return support
