"""Synthetic compositional video benchmark.

Each clip shows one anti-aliased glyph (the appearance class) translating
at constant velocity over a textured background (the motion class), with
wrap-around borders so frame statistics are independent of the motion.
Motion classes come in reversal pairs: move_left clips are the exact
frame reversal of move_right clips generated from the same trajectory
seed, and likewise move_down / move_up.

Clips hold each rendered step for two consecutive frames. Reversing the
frame order therefore maps the even-frame multiset onto itself, which
makes any frame-permutation-invariant model provably blind to the
direction within a reversal pair.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, asdict

import numpy as np
from scipy.ndimage import gaussian_filter

from .tokens import ConfigError, VideoClip

__all__ = [
    "SyntheticSpec",
    "SyntheticDataset",
    "generate",
    "write_dataset",
    "read_dataset",
    "FormatError",
    "APPEARANCE_NAMES",
    "MOTION_NAMES",
]

APPEARANCE_NAMES = ("disk", "square", "triangle", "cross")
MOTION_NAMES = ("move_right", "move_left", "move_up", "move_down")

DATA_MAGIC = b"CASTDATA\x01"


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    height: int = 32
    width: int = 32
    frames: int = 16              # 2T; each rendered step spans 2 frames
    appearance_classes: int = 4
    motion_classes: int = 4       # reversal-paired: (right,left), (up,down)
    train_per_pair: int = 250     # samples per (appearance, motion) pair
    val_per_pair: int = 63
    noise: float = 0.02
    seed: int = 0

    def validate(self):
        if self.frames % 2:
            raise ConfigError(f"frame count must be even, got {self.frames}")
        if self.appearance_classes > len(APPEARANCE_NAMES):
            raise ConfigError(
                f"at most {len(APPEARANCE_NAMES)} appearance classes supported")
        if self.motion_classes > len(MOTION_NAMES) or self.motion_classes % 2:
            raise ConfigError("motion classes must be an even count of reversal pairs")
        if min(self.height, self.width) < 12:
            raise ConfigError(
                f"resolution {self.height}x{self.width} too small for glyph rendering")
        return self

    def to_dict(self):
        return asdict(self)


class SyntheticDataset:
    """Clips stored as uint8 with (appearance, motion) label pairs."""

    def __init__(self, pixels, appearance, motion, appearance_classes, motion_classes):
        self.pixels = pixels            # (count, 2T, H, W, 3) uint8
        self.appearance = appearance    # (count,) uint16
        self.motion = motion            # (count,) uint16
        self.appearance_classes = appearance_classes
        self.motion_classes = motion_classes

    def __len__(self):
        return self.pixels.shape[0]

    def clip(self, index, dtype=np.float32):
        """Single-sample VideoClip with values in [0, 1]."""
        return VideoClip(self.pixels[index:index + 1].astype(dtype) / 255.0)

    def batch(self, indices, dtype=np.float32):
        return VideoClip(self.pixels[indices].astype(dtype) / 255.0)

    def labels(self, indices=None):
        if indices is None:
            return self.appearance, self.motion
        return self.appearance[indices], self.motion[indices]


def _sample_seed(root_seed, appearance, pair, instance):
    digest = hashlib.sha256(
        f"{root_seed}:{appearance}:{pair}:{instance}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _glyph_mask(kind, h, w, cx, cy, size):
    """Anti-aliased glyph alpha on a torus (wrap-around coordinates)."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = (xs - cx + w / 2) % w - w / 2
    dy = (ys - cy + h / 2) % h - h / 2
    if kind == "disk":
        sdf = size - np.hypot(dx, dy)
    elif kind == "square":
        sdf = size - np.maximum(np.abs(dx), np.abs(dy))
    elif kind == "triangle":
        # upward triangle: below apex line, above base
        sdf = np.minimum(size * 0.9 + dy, size * 0.75 - dy - 1.6 * np.abs(dx))
    elif kind == "cross":
        arm = size * 0.45
        bar_h = np.minimum(size - np.abs(dx), arm - np.abs(dy))
        bar_v = np.minimum(arm - np.abs(dx), size - np.abs(dy))
        sdf = np.maximum(bar_h, bar_v)
    else:
        raise ConfigError(f"unknown glyph {kind!r}")
    return np.clip(sdf + 0.5, 0.0, 1.0)


def _render_sample(spec, appearance, motion, rng):
    """Render one clip; returns float array (2T, H, W, 3) in [0, 1]."""
    h, w = spec.height, spec.width
    steps = spec.frames // 2
    background = gaussian_filter(rng.random((h, w)), sigma=2.0, mode="wrap")
    lo, hi = background.min(), background.max()
    background = 0.18 + 0.14 * (background - lo) / max(hi - lo, 1e-9)
    background = np.repeat(background[:, :, None], 3, axis=2)

    size = min(h, w) * (0.26 + 0.06 * rng.random())
    speed = min(h, w) / steps * (0.35 + 0.15 * rng.random())
    cx, cy = rng.random() * w, rng.random() * h
    pair = motion // 2
    # forward direction of the pair; odd class index = exact reversal
    velocity = (speed, 0.0) if pair == 0 else (0.0, speed)

    glyph = APPEARANCE_NAMES[appearance]
    frames = np.empty((steps, h, w, 3), dtype=np.float64)
    for s in range(steps):
        alpha = _glyph_mask(glyph, h, w, cx + velocity[0] * s, cy + velocity[1] * s,
                            size)[:, :, None]
        img = background * (1 - alpha) + 0.92 * alpha
        # per-step exposure gain: harmless to per-frame readers, but it
        # decorrelates the two steps stacked inside each temporal tube
        gain = 0.9 + 0.2 * rng.random()
        img = img * gain + rng.normal(0.0, spec.noise, size=img.shape)
        frames[s] = np.clip(img, 0.0, 1.0)
    if motion % 2 == 1:
        frames = frames[::-1]
    return np.repeat(frames, 2, axis=0)


def generate(spec):
    """Deterministic (train, val) datasets, stratified by label pair."""
    spec.validate()
    pairs = [(a, m) for a in range(spec.appearance_classes)
             for m in range(spec.motion_classes)]

    def build(split):
        offset = 0 if split == "train" else spec.train_per_pair
        count_per = spec.train_per_pair if split == "train" else spec.val_per_pair
        total = count_per * len(pairs)
        pixels = np.empty((total, spec.frames, spec.height, spec.width, 3),
                          dtype=np.uint8)
        app = np.empty(total, dtype=np.uint16)
        mot = np.empty(total, dtype=np.uint16)
        i = 0
        for a, m in pairs:
            for inst in range(offset, offset + count_per):
                # reversal partners share the trajectory seed (m // 2)
                seed = _sample_seed(spec.seed, a, m // 2, inst)
                rng = np.random.Generator(np.random.Philox(seed))
                clip = _render_sample(spec, a, m, rng)
                pixels[i] = np.round(clip * 255.0).astype(np.uint8)
                app[i] = a
                mot[i] = m
                i += 1
        return SyntheticDataset(pixels, app, mot,
                                spec.appearance_classes, spec.motion_classes)

    return build("train"), build("val")


# ----------------------------------------------------------------------
# file format


def write_dataset(ds, path):
    header = struct.pack(
        "<7I", len(ds), ds.pixels.shape[1], ds.pixels.shape[2], ds.pixels.shape[3],
        ds.pixels.shape[4], ds.appearance_classes, ds.motion_classes)
    buf = bytearray()
    buf += DATA_MAGIC
    buf += header
    for i in range(len(ds)):
        buf += struct.pack("<HH", int(ds.appearance[i]), int(ds.motion[i]))
        buf += ds.pixels[i].tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(bytes(buf))


def read_dataset(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(DATA_MAGIC) + 32 or blob[:len(DATA_MAGIC)] != DATA_MAGIC:
        raise FormatError(f"bad dataset magic at offset 0 in {path}")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError(f"dataset CRC mismatch at offset {len(blob) - 4}")
    off = len(DATA_MAGIC)
    count, frames, h, w, c, n_app, n_mot = struct.unpack_from("<7I", body, off)
    off += 28
    sample_bytes = 4 + frames * h * w * c
    expected = off + count * sample_bytes
    if len(body) != expected:
        raise FormatError(
            f"dataset truncated: expected {expected + 4} bytes, got {len(blob)} "
            f"(error near offset {min(len(body), expected)})")
    pixels = np.empty((count, frames, h, w, c), dtype=np.uint8)
    app = np.empty(count, dtype=np.uint16)
    mot = np.empty(count, dtype=np.uint16)
    for i in range(count):
        app[i], mot[i] = struct.unpack_from("<HH", body, off)
        off += 4
        pixels[i] = np.frombuffer(body, dtype=np.uint8, count=sample_bytes - 4,
                                  offset=off).reshape(frames, h, w, c)
        off += sample_bytes - 4
    return SyntheticDataset(pixels, app, mot, n_app, n_mot)
