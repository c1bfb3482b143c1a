"""Execution-free parameter and FLOP accounting for any config/variant.

Counting conventions (echoed in every report):
  * FLOPs count matmul work only; a multiply-add is 1 FLOP by default,
    matching the per-view figures most video-recognition papers publish.
    Set ``flops_per_mac=2`` for the strict multiply+add convention.
  * Softmax, layer norm, and other elementwise work are excluded.
  * Linear layers include biases in parameter counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

__all__ = ["CostReport", "count_params", "count_flops", "tower_flops"]


@dataclass
class Row:
    name: str
    learnable: int = 0
    frozen: int = 0
    flops: int = 0


@dataclass
class CostReport:
    rows: list = field(default_factory=list)
    assumptions: dict = field(default_factory=dict)

    @property
    def learnable_total(self):
        return sum(r.learnable for r in self.rows)

    @property
    def frozen_total(self):
        return sum(r.frozen for r in self.rows)

    @property
    def flops_total(self):
        return sum(r.flops for r in self.rows)

    def add(self, name, learnable=0, frozen=0, flops=0):
        self.rows.append(Row(name, learnable, frozen, flops))

    def to_text(self):
        width = max([len(r.name) for r in self.rows] + [10])
        lines = [f"{'layer':<{width}}  {'learnable':>12}  {'frozen':>12}  {'flops':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.learnable:>12,}  {r.frozen:>12,}  {r.flops:>16,}")
        lines.append("-" * (width + 48))
        lines.append(f"{'total':<{width}}  {self.learnable_total:>12,}  "
                     f"{self.frozen_total:>12,}  {self.flops_total:>16,}")
        for k, v in sorted(self.assumptions.items()):
            lines.append(f"# {k} = {v}")
        return "\n".join(lines)

    def to_json(self):
        return json.dumps({
            "rows": [{"name": r.name, "learnable": r.learnable,
                      "frozen": r.frozen, "flops": r.flops} for r in self.rows],
            "totals": {"learnable": self.learnable_total,
                       "frozen": self.frozen_total,
                       "flops": self.flops_total},
            "assumptions": self.assumptions,
        }, indent=2)


# ----------------------------------------------------------------------
# parameter formulas (mirror the model builder exactly)


def _linear(din, dout):
    return din * dout + dout


def _ln(dim):
    return 2 * dim


def _attn_params(dim, out_proj):
    return 3 * _linear(dim, dim) + (_linear(dim, dim) if out_proj else 0)


def _adapter_params(dim, ratio):
    hidden = max(1, int(dim * ratio))
    return _linear(dim, hidden) + _linear(hidden, dim)


def _emb_extent(window, t, n):
    if window == "time":
        return t
    if window == "space":
        return n
    return 0


def _tower_block_params(c, divided):
    d = c.dim
    hidden = int(d * c.mlp_ratio)
    frozen = 2 * _ln(d) + _attn_params(d, True) + _linear(d, hidden) + _linear(hidden, d)
    if divided:
        frozen += _ln(d) + _attn_params(d, True)
    learnable = 2 * _adapter_params(d, c.adapter_ratio)
    return learnable, frozen


def _exchange_params(c):
    d, bd, t, n = c.dim, c.bdim, c.t, c.n
    t2s = c.variant in ("cast", "t2s_only", "role_swap")
    s2t = c.variant in ("cast", "s2t_only", "role_swap")
    kind = c.exchange_kind
    if c.variant == "lateral":
        return 2 * _linear(d, d)
    if kind == "identity":
        return 0
    if kind == "bcast":
        total = 2 * _linear(d, bd) + 2 * _ln(bd)
        if t2s:
            total += (_attn_params(bd, c.mhca_out_proj)
                      + _emb_extent(c.t2s_window, t, n) * bd + _linear(bd, d))
        if s2t:
            total += (_attn_params(bd, c.mhca_out_proj)
                      + _emb_extent(c.s2t_window, t, n) * bd + _linear(bd, d))
        return total
    # plain MHCA at full dim, optionally with trailing adapters
    total = 2 * _ln(d)
    for enabled, window in ((t2s, c.t2s_window), (s2t, c.s2t_window)):
        if enabled:
            total += _attn_params(d, c.mhca_out_proj) + _emb_extent(window, t, n) * d
            if kind == "xattn_then_adapter":
                total += _adapter_params(d, c.adapter_ratio)
    return total


def _head_params(c):
    d = c.dim
    if c.head_kind == "single":
        return 2 * _adapter_params(d, c.adapter_ratio) + _linear(d, c.single_classes())
    if c.variant == "ensemble":
        return 2 * (_linear(d, c.appearance_classes) + _linear(d, c.motion_classes))
    total = _linear(d, c.appearance_classes) + _linear(d, c.motion_classes)
    if c.variant == "late_concat":
        total += _linear(2 * d, d)
    return total


def count_params(config, flops_per_mac=1):
    """Per-layer parameter rows; exact integer match with the model registry."""
    c = config.validate()
    report = CostReport(assumptions=_assumptions(c, flops_per_mac))
    has_s = c.variant != "temporal_only"
    has_t = c.variant != "spatial_only"
    d = c.dim
    if has_s:
        report.add("spatial.tokenizer",
                   frozen=c.patch * c.patch * 3 * d + (c.n + 1) * d + d)
    if has_t:
        report.add("temporal.tokenizer",
                   frozen=2 * c.patch * c.patch * 3 * d + c.t * c.n * d)
    active = c.active_exchange_layers()
    divided = c.temporal_attention == "divided"
    for i in range(1, c.depth + 1):
        if has_s:
            learn, froz = _tower_block_params(c, divided=False)
            report.add(f"block{i}.spatial", learnable=learn, frozen=froz)
        if has_t:
            learn, froz = _tower_block_params(c, divided=divided)
            report.add(f"block{i}.temporal", learnable=learn, frozen=froz)
        if c.variant == "lateral" or i in active:
            report.add(f"block{i}.exchange", learnable=_exchange_params(c))
    if has_s:
        report.add("final_ln.spatial", learnable=_ln(d))
    if has_t:
        report.add("final_ln.temporal", learnable=_ln(d))
    report.add("head", learnable=_head_params(c))
    return report


# ----------------------------------------------------------------------
# FLOPs (per view, batch of one clip)


def _attn_flops(groups, seq, dim, out_proj):
    proj = groups * seq * dim * dim * (4 if out_proj else 3)
    scores = 2 * groups * seq * seq * dim
    return proj + scores


def _adapter_flops(tokens, dim, ratio):
    hidden = max(1, int(dim * ratio))
    return 2 * tokens * dim * hidden


def _tower_block_flops(c, tower, with_adapters=True):
    d = c.dim
    hidden = int(d * c.mlp_ratio)
    if tower == "spatial":
        window = "space_time" if c.variant == "role_swap" else "space"
        seq_tokens = c.n + 1
        groups = c.t
    else:
        window = "space" if c.variant == "role_swap" else "space_time"
        seq_tokens = c.n
        groups = c.t
    tokens = c.t * seq_tokens
    if window == "space":
        attn = _attn_flops(groups, seq_tokens, d, True)
    else:
        attn = _attn_flops(1, tokens, d, True)
    total = attn + 2 * tokens * d * hidden
    if tower == "temporal" and c.temporal_attention == "divided":
        total += _attn_flops(c.n, c.t, d, True)
    if with_adapters:
        total += 2 * _adapter_flops(tokens, d, c.adapter_ratio)
    return total


def _exchange_flops(c):
    d, bd, t, n = c.dim, c.bdim, c.t, c.n
    t2s = c.variant in ("cast", "t2s_only", "role_swap")
    s2t = c.variant in ("cast", "s2t_only", "role_swap")
    s_tokens = t * (n + 1)
    t_tokens = t * n
    if c.variant == "lateral":
        return (s_tokens - t) * d * d + t_tokens * d * d
    kind = c.exchange_kind
    if kind == "identity":
        return 0

    def mhca_cost(window, dim):
        # queries and keys/values are both patch-token grids of t*n tokens
        proj = t_tokens * dim * dim * (4 if c.mhca_out_proj else 3)
        if window == "time":
            scores = 2 * n * t * t * dim
        elif window == "space":
            scores = 2 * t * n * n * dim
        else:
            scores = 2 * t_tokens * t_tokens * dim
        return proj + scores

    if kind == "bcast":
        total = (s_tokens + t_tokens) * d * bd            # shared down projections
        if t2s:
            total += mhca_cost(c.t2s_window, bd)
            total += s_tokens * bd * d                    # up incl. CLS path
        if s2t:
            total += mhca_cost(c.s2t_window, bd)
            total += t_tokens * bd * d
        return total
    total = 0
    for enabled, window in ((t2s, c.t2s_window), (s2t, c.s2t_window)):
        if enabled:
            total += mhca_cost(window, d)
            if kind == "xattn_then_adapter":
                total += _adapter_flops(t_tokens, d, c.adapter_ratio)
    return total


def _head_flops(c):
    d = c.dim
    if c.head_kind == "single":
        return 2 * _adapter_flops(1, d, c.adapter_ratio) + d * c.single_classes()
    per = d * (c.appearance_classes + c.motion_classes)
    if c.variant == "ensemble":
        return 2 * per
    if c.variant == "late_concat":
        return per + 2 * d * d
    return per


def count_flops(config, views=1, flops_per_mac=1):
    """Full-model cost report; ``flops`` column is per view times ``views``."""
    c = config.validate()
    report = CostReport(assumptions=_assumptions(c, flops_per_mac, views=views))
    has_s = c.variant != "temporal_only"
    has_t = c.variant != "spatial_only"
    f = flops_per_mac * views
    d = c.dim
    if has_s:
        report.add("spatial.tokenizer", flops=f * c.t * c.n * c.patch ** 2 * 3 * d)
    if has_t:
        report.add("temporal.tokenizer", flops=f * c.t * c.n * 2 * c.patch ** 2 * 3 * d)
    active = c.active_exchange_layers()
    for i in range(1, c.depth + 1):
        if has_s:
            report.add(f"block{i}.spatial", flops=f * _tower_block_flops(c, "spatial"))
        if has_t:
            report.add(f"block{i}.temporal", flops=f * _tower_block_flops(c, "temporal"))
        if c.variant == "lateral" or i in active:
            report.add(f"block{i}.exchange", flops=f * _exchange_flops(c))
    report.add("head", flops=f * _head_flops(c))
    return report


def tower_flops(config, tower, flops_per_mac=1):
    """Cost of one frozen expert tower alone (no adapters, no exchange).

    This is the baseline accounting that matches published single-expert
    per-view figures.
    """
    c = config.validate()
    report = CostReport(assumptions=_assumptions(c, flops_per_mac, tower=tower))
    d = c.dim
    if tower == "spatial":
        report.add("spatial.tokenizer", flops=flops_per_mac * c.t * c.n * c.patch ** 2 * 3 * d)
    elif tower == "temporal":
        report.add("temporal.tokenizer",
                   flops=flops_per_mac * c.t * c.n * 2 * c.patch ** 2 * 3 * d)
    else:
        raise ValueError(f"tower must be spatial or temporal, got {tower!r}")
    for i in range(1, c.depth + 1):
        report.add(f"block{i}.{tower}",
                   flops=flops_per_mac * _tower_block_flops(c, tower, with_adapters=False))
    return report


def _assumptions(c, flops_per_mac, views=None, tower=None):
    out = {
        "flops_per_mac": flops_per_mac,
        "adapter_ratio": c.adapter_ratio,
        "bcast_ratio": c.bcast_ratio,
        "mhca_out_proj": c.mhca_out_proj,
        "biases_counted": True,
        "elementwise_ops": "excluded",
    }
    if views is not None:
        out["views"] = views
    if tower is not None:
        out["tower"] = tower
    return out
