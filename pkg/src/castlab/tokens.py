"""Video-to-token conversion for the two expert towers.

The spatial tower reads only the even-indexed frames and produces
per-frame patch tokens plus one CLS token per frame. The temporal tower
reads depth-2 tubes spanning each consecutive frame pair. Token grids
are kept in a canonical (batch, time, space, channel) layout; the
space axis of the spatial grid has the CLS token at index 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "VideoClip",
    "TokenGrid",
    "spatial_tokenize",
    "temporal_tokenize",
    "reshape_views",
    "ConfigError",
]


class ConfigError(ValueError):
    pass


@dataclass
class VideoClip:
    """Pixel data shaped (B, 2T, H, W, C) with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 5:
            raise ConfigError(f"clip must be 5-dimensional, got shape {self.data.shape}")
        if self.data.shape[1] % 2 != 0:
            raise ConfigError(f"frame count must be even, got {self.data.shape[1]}")

    @property
    def frames(self):
        return self.data.shape[1]


class TokenGrid:
    """Token tensor with explicit (batch, time, space, channel) axes.

    ``data`` is always shaped (B, T, S, D). When ``has_cls`` is set, S
    equals N+1 and space index 0 is the per-frame CLS token.
    """

    __slots__ = ("data", "has_cls")

    def __init__(self, data, has_cls=False):
        if data.ndim != 4:
            raise ValueError(f"TokenGrid expects 4 axes (B,T,S,D), got {data.shape}")
        self.data = data
        self.has_cls = has_cls

    @property
    def batch(self):
        return self.data.shape[0]

    @property
    def time(self):
        return self.data.shape[1]

    @property
    def space(self):
        return self.data.shape[2]

    @property
    def dim(self):
        return self.data.shape[3]

    @property
    def patches(self):
        return self.space - 1 if self.has_cls else self.space

    def with_data(self, data, has_cls=None):
        return TokenGrid(data, self.has_cls if has_cls is None else has_cls)

    def detach_cls(self):
        """Split into (cls_tokens (B,T,1,D), patch grid) — requires has_cls."""
        if not self.has_cls:
            raise ValueError("grid has no CLS token to detach")
        cls = T.slice_axis(self.data, 2, 0, 1)
        rest = T.slice_axis(self.data, 2, 1, self.space)
        return cls, TokenGrid(rest, has_cls=False)

    def attach_cls(self, cls):
        if self.has_cls:
            raise ValueError("grid already carries a CLS token")
        return TokenGrid(T.concat([cls, self.data], axis=2), has_cls=True)


def _extract_patches(frames, p):
    """(B, F, H, W, C) -> (B, F, N, p*p*C), row-major patch order."""
    b, f, h, w, c = frames.shape
    gh, gw = h // p, w // p
    x = frames.reshape(b, f, gh, p, gw, p, c)
    x = x.transpose(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(b, f, gh * gw, p * p * c)


def spatial_tokenize(clip, p, proj, pos, cls):
    """Even frames -> per-frame patch tokens + CLS, positional embedding added.

    ``proj``: frozen Parameter (p*p*C + 1 rows: weight then nothing — weight
    only, shape (p*p*C, D)); ``pos``: frozen Parameter (N+1, D) shared across
    frames; ``cls``: frozen Parameter (1, D).
    """
    b, frames, h, w, c = clip.data.shape
    if h % p or w % p:
        raise ConfigError(f"resolution {h}x{w} not divisible by patch size {p}")
    even = np.ascontiguousarray(clip.data[:, 0::2])
    t = even.shape[1]
    n = (h // p) * (w // p)
    patches = _extract_patches(even, p).astype(proj.dtype)
    x = Tensor(patches.reshape(b * t * n, p * p * c))
    tok = T.matmul(x, proj).reshape(b, t, n, proj.data.shape[1])
    d = proj.data.shape[1]
    cls_tok = T.reshape(cls, (1, 1, 1, d)) + Tensor(np.zeros((b, t, 1, d), dtype=proj.dtype))
    grid = T.concat([cls_tok, tok], axis=2)
    grid = grid + T.reshape(pos, (1, 1, n + 1, d))
    return TokenGrid(grid, has_cls=True)


def temporal_tokenize(clip, p, proj, pos):
    """Depth-2 tubes -> (B, T, N, D) grid, per-(time, space) embedding added.

    Tube t stacks the sampled frames 2t and (2t + 2) mod F, so each tube
    spans two adjacent sampling steps (the last wraps to the first) and
    local motion is visible inside a single token.
    """
    b, frames, h, w, c = clip.data.shape
    if frames % 2:
        raise ConfigError(f"frame count must be even, got {frames}")
    if h % p or w % p:
        raise ConfigError(f"resolution {h}x{w} not divisible by patch size {p}")
    t = frames // 2
    n = (h // p) * (w // p)
    steps = clip.data[:, 0::2]
    nxt = np.roll(steps, -1, axis=1)
    first = _extract_patches(steps, p)
    second = _extract_patches(nxt, p)
    tubes = np.concatenate([first, second], axis=-1).astype(proj.dtype)
    x = Tensor(tubes.reshape(b * t * n, 2 * p * p * c))
    d = proj.data.shape[1]
    tok = T.matmul(x, proj).reshape(b, t, n, d)
    tok = tok + T.reshape(pos, (1, t, n, d))
    return TokenGrid(tok, has_cls=False)


_VIEW_ORDERS = {
    "bt_n": (0, 1, 2, 3),   # (B*T, S, D): per-frame space windows
    "bn_t": (0, 2, 1, 3),   # (B*S, T, D): per-location time windows
    "b_tn": (0, 1, 2, 3),   # (B, T*S, D): joint space-time
}


def reshape_views(grid, order):
    """Flatten a TokenGrid for windowed attention; returns (Tensor3D, restore).

    ``order``: one of 'bt_n', 'bn_t', 'b_tn'. ``restore`` maps an
    identically shaped 3D tensor back into a TokenGrid with the source
    axis layout; a round trip is exact.
    """
    if order not in _VIEW_ORDERS:
        raise ValueError(f"unknown view order {order!r}; expected one of {sorted(_VIEW_ORDERS)}")
    b, t, s, d = grid.data.shape
    perm = _VIEW_ORDERS[order]
    x = T.transpose(grid.data, perm) if perm != (0, 1, 2, 3) else grid.data
    if order == "bt_n":
        flat = T.reshape(x, (b * t, s, d))
    elif order == "bn_t":
        flat = T.reshape(x, (b * s, t, d))
    else:
        flat = T.reshape(x, (b, t * s, d))

    def restore(y):
        if order == "bt_n":
            back = T.reshape(y, (b, t, s, d))
        elif order == "bn_t":
            back = T.transpose(T.reshape(y, (b, s, t, d)), (0, 2, 1, 3))
        else:
            back = T.reshape(y, (b, t, s, d))
        return grid.with_data(back)

    return flat, restore
