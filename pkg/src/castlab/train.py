"""Fine-tuning loop over the learnable parameters.

Decoupled-weight-decay adaptive optimizer with betas (0.9, 0.999),
linear warmup followed by half-cosine decay to zero, and layer-wise
learning-rate decay by block depth. Weight decay is skipped on biases,
norm affines, and positional embeddings. Only non-frozen parameters are
ever touched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .metrics import MetricsReport
from .tokens import ConfigError, VideoClip

__all__ = ["TrainConfig", "train", "evaluate", "lr_at", "infer_multiview", "AdamW"]


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_epochs: int = 5
    epochs: int = 50
    layer_decay: float = 0.75
    batch_size: int = 16
    label_smoothing: float = 0.0
    seed: int = 0

    def validate(self):
        if self.warmup_epochs > self.epochs:
            raise ConfigError("warmup epochs exceed total epochs")
        if self.base_lr <= 0 or self.batch_size <= 0:
            raise ConfigError("rates and batch size must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label smoothing must be in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)


def lr_at(step, base_lr, warmup_steps, total_steps):
    """Linear warmup 0 -> base, then half-cosine base -> 0 at the last step."""
    if step < warmup_steps:
        return base_lr * step / max(warmup_steps, 1)
    span = max(total_steps - warmup_steps, 1)
    frac = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * min(frac, 1.0)))


_NO_DECAY = re.compile(r"(\.bias$|\.b_\w+$|\.b\d$|gamma$|beta$|\.pos$|\.cls$|\.e_[st]$)")

_BLOCK = re.compile(r"^block(\d+)\.")


def layer_index(name, depth):
    """Parameter-group layer for layer-wise lr decay (0=input, depth+1=head)."""
    m = _BLOCK.match(name)
    if m:
        return int(m.group(1))
    if name.startswith(("head", "final_ln")):
        return depth + 1
    return 0


class AdamW:
    """Decoupled-weight-decay Adam over a model's learnable parameters."""

    def __init__(self, model, cfg):
        depth = model.config.depth
        self.cfg = cfg
        self.step_count = 0
        self.slots = []
        for name, p in model.learnable_parameters():
            mult = cfg.layer_decay ** (depth + 1 - layer_index(name, depth))
            decay = 0.0 if _NO_DECAY.search(name) else cfg.weight_decay
            self.slots.append({
                "param": p, "name": name, "mult": mult, "decay": decay,
                "m": np.zeros_like(p.data), "v": np.zeros_like(p.data),
            })
        if not self.slots:
            raise ConfigError("model has no learnable parameters to train")

    def step(self, lr):
        self.step_count += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for slot in self.slots:
            p = slot["param"]
            if p.grad is None:
                continue
            g = p.grad
            slot["m"] = b1 * slot["m"] + (1 - b1) * g
            slot["v"] = b2 * slot["v"] + (1 - b2) * g * g
            m_hat = slot["m"] / c1
            v_hat = slot["v"] / c2
            rate = lr * slot["mult"]
            p.data -= (rate * (m_hat / (np.sqrt(v_hat) + eps))
                       + rate * slot["decay"] * p.data).astype(p.data.dtype)

    def zero_grad(self):
        for slot in self.slots:
            slot["param"].grad = None


def batch_loss(model, clip, labels, smoothing=0.0):
    """Cross-entropy summed over tasks, averaged over prediction streams."""
    streams = model.forward(clip)
    total = None
    for logits in streams:
        for task, z in logits.items():
            key = task.split(".")[-1]
            loss = T.cross_entropy(z, labels[key], smoothing=smoothing)
            total = loss if total is None else total + loss
    return total * (1.0 / len(streams))


def train(model, dataset, cfg, log=None):
    """Fine-tune in place; returns the loss curve (one row per epoch)."""
    cfg.validate()
    opt = AdamW(model, cfg)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    n = len(dataset)
    steps_per_epoch = max(1, n // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = steps_per_epoch * cfg.warmup_epochs
    curve = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        lr = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            clip = dataset.batch(idx)
            app, mot = dataset.labels(idx)
            labels = {"appearance": app.astype(np.int64),
                      "motion": mot.astype(np.int64),
                      "action": (app.astype(np.int64) * dataset.motion_classes
                                 + mot.astype(np.int64))}
            loss = batch_loss(model, clip, labels, cfg.label_smoothing)
            opt.zero_grad()
            loss.backward()
            lr = lr_at(step, cfg.base_lr, warmup_steps, total_steps)
            opt.step(lr)
            losses.append(loss.item())
            step += 1
        row = {"epoch": epoch, "lr": float(lr), "train_loss": float(np.mean(losses))}
        curve.append(row)
        if log:
            log(f"epoch {epoch}: lr={lr:.2e} loss={row['train_loss']:.4f}")
    return curve


def predict(model, dataset, batch_size=32):
    """Argmax predictions per task over a dataset, deterministic order."""
    preds = {}
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        probs = model.predict_proba(dataset.batch(idx))
        for task, p in probs.items():
            preds.setdefault(task, []).append(np.argmax(p, axis=-1))
    return {task: np.concatenate(chunks) for task, chunks in preds.items()}


def evaluate(model, dataset, batch_size=32, config_hash="", seed=0):
    preds = predict(model, dataset, batch_size=batch_size)
    app, mot = dataset.labels()
    if "action" in preds:
        labels = {"action": app.astype(np.int64) * dataset.motion_classes
                  + mot.astype(np.int64)}
    else:
        labels = {"appearance": app.astype(np.int64), "motion": mot.astype(np.int64)}
    return MetricsReport.from_predictions(preds, labels,
                                          config_hash=config_hash, seed=seed)


def _view_offsets(extent, size, count):
    if size > extent:
        raise ConfigError(f"view size {size} exceeds clip extent {extent}")
    if count == 1 or extent == size:
        return [max(0, (extent - size) // 2)] * count
    return [round(i * (extent - size) / (count - 1)) for i in range(count)]


def infer_multiview(model, clip, temporal_views, spatial_crops):
    """Mean of per-view softmax probabilities over (temporal x spatial) views.

    Temporal views are evenly spaced frame windows; spatial crops are
    evenly spaced along both axes (corner-to-corner diagonal when the
    clip is larger than the model resolution).
    """
    if temporal_views < 1 or spatial_crops < 1:
        raise ConfigError("view counts must be >= 1")
    c = model.config
    b, frames, h, w, _ = clip.data.shape
    t_offsets = _view_offsets(frames, c.frames, temporal_views)
    h_offsets = _view_offsets(h, c.height, spatial_crops)
    w_offsets = _view_offsets(w, c.width, spatial_crops)
    acc = None
    views = 0
    for to in t_offsets:
        # frame windows must start on an even frame to preserve tube phase
        to -= to % 2
        for ho, wo in zip(h_offsets, w_offsets):
            sub = VideoClip(clip.data[:, to:to + c.frames,
                                      ho:ho + c.height, wo:wo + c.width])
            probs = model.predict_proba(sub)
            if acc is None:
                acc = {k: v.copy() for k, v in probs.items()}
            else:
                for k in acc:
                    acc[k] += probs[k]
            views += 1
    return {k: v / views for k, v in acc.items()}
