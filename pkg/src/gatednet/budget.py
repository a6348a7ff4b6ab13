"""Gate-usage penalties, activation ratios and MAC-weighted compute proxies.

Each :class:`LayerUsage` describes one weight layer; its activation ratio is
that of the gate on the layer's *input* vector, so closing an input unit
discounts the MACs of the layer that would have consumed it.

FLOPs follow the 2 x MACs convention with biases excluded; with that
convention a 784-256-10 MLP has 406,528 FLOPs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LayerUsage:
    alpha_p: float
    alpha_g: float
    rho: float
    fanin_fanout_product: int
    gated: bool = True

    def alpha(self, kind: str) -> float:
        if kind == "p":
            return self.alpha_p
        if kind == "g":
            return self.alpha_g
        raise ValueError(f"kind must be 'p' or 'g', got {kind!r}")


def _batch_means(p_batch) -> list[np.ndarray]:
    means = []
    for p in p_batch:
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] == 0:
            raise ValueError("each gate-probability matrix needs at least one sample")
        means.append(p.mean(axis=0))
    return means


def usage_penalty(p_batch) -> float:
    """Sum over gated layers of the mean (over units) batch-average gate probability."""
    return float(sum(m.mean() for m in _batch_means(p_batch)))


def cost_weighted_penalty(p_batch, costs) -> float:
    """Sum over layers of ``sum_i c_i pbar_i / sum_i c_i``."""
    total = 0.0
    for m, c in zip(_batch_means(p_batch), costs, strict=True):
        c = np.asarray(c, dtype=np.float64)
        if c.shape != m.shape:
            raise ValueError(f"cost vector {c.shape} does not match layer width {m.shape}")
        if (c <= 0).any():
            raise ValueError("unit costs must be positive")
        total += float((c * m).sum() / c.sum())
    return total


def activation_ratios(trace, theta: float | None = None, dims: list[int] | None = None,
                      masks=None) -> list[LayerUsage]:
    """Per-layer ``alpha_p = mean(p)`` and ``alpha_g = mean(1[p > theta])`` from a trace.

    ``theta`` overrides the threshold recorded in the trace's multipliers;
    without it ``alpha_g`` is the mean of the multiplier actually applied
    (which includes Top-k selections and activity floors).  Ungated layers
    report 1.
    """
    if dims is None:
        dims = [trace.raw[0].shape[1]] + [a.shape[1] for a in trace.pre]
    masks = masks or [None] * len(trace.pre)
    out = []
    for k, p in enumerate(trace.p):
        rho = 1.0 if masks[k] is None else masks[k].count() / masks[k].bits.size
        macs = dims[k] * dims[k + 1]
        if p is None:
            out.append(LayerUsage(1.0, 1.0, rho, macs, gated=False))
            continue
        if theta is not None:
            alpha_g = float((p > theta).mean())
        else:
            alpha_g = float(np.asarray(trace.g[k]).mean())
        out.append(LayerUsage(float(p.mean()), alpha_g, rho, macs))
    return out


def compute_proxy(usages: list[LayerUsage], kind: str = "g") -> float:
    """Unweighted mean activation over gated layers (all layers if none are gated)."""
    if not usages:
        raise ValueError("no layers given")
    pool = [u for u in usages if u.gated] or usages
    return float(sum(u.alpha(kind) for u in pool) / len(pool))


def relmac(usages: list[LayerUsage], kind: str = "g") -> float:
    """MAC-weighted mean activation."""
    num = sum(u.alpha(kind) * u.fanin_fanout_product for u in usages)
    den = sum(u.fanin_fanout_product for u in usages)
    if den <= 0:
        raise ValueError("layers must have positive MAC counts")
    return float(num / den)


def relmac_fuse(usages: list[LayerUsage], kind: str = "g") -> float:
    """MAC-weighted mean of connection density times activation."""
    num = sum(u.fanin_fanout_product * u.rho * u.alpha(kind) for u in usages)
    den = sum(u.fanin_fanout_product for u in usages)
    if den <= 0:
        raise ValueError("layers must have positive MAC counts")
    return float(num / den)


def structural_density(usages: list[LayerUsage]) -> float:
    """MAC-weighted mean connection density (gates ignored)."""
    num = sum(u.fanin_fanout_product * u.rho for u in usages)
    return float(num / sum(u.fanin_fanout_product for u in usages))


def count_params_flops(dims, gated_widths=()) -> tuple[int, int, int]:
    """``(params, flops, gate_params)`` for an affine stack with static gates.

    ``params`` includes the gate logits; FLOPs are 2 x MACs, biases excluded.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError("need at least two layer widths")
    macs = sum(a * b for a, b in zip(dims[:-1], dims[1:]))
    backbone = macs + sum(dims[1:])
    gate_params = sum(int(w) for w in gated_widths)
    return backbone + gate_params, 2 * macs, gate_params


def flops_reduction_pct(relmac_g: float) -> float:
    return 100.0 * (1.0 - relmac_g)
