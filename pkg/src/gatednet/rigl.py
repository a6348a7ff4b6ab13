"""Fixed-budget sparse connection masks and RigL prune/grow updates."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import DimensionError


@dataclass
class SparseMask:
    """Binary connection mask with a fixed population count."""

    bits: np.ndarray  # float64 {0, 1}, shape (n_out, n_in)
    budget: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())

    def copy(self) -> "SparseMask":
        return SparseMask(self.bits.copy(), self.budget)


@dataclass
class RiglConfig:
    sparsity: float = 0.5
    update_period: int = 100
    rewire_fraction: float = 0.1
    cosine_decay: bool = False
    total_steps: int | None = None
    mask_output: bool = False

    def __post_init__(self):
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError(f"sparsity must be in [0, 1), got {self.sparsity}")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if not 0.0 <= self.rewire_fraction <= 1.0:
            raise ValueError("rewire_fraction must be in [0, 1]")


def mask_budget(shape: tuple[int, int], sparsity: float) -> int:
    n_out, n_in = shape
    return int(round((1.0 - sparsity) * n_out * n_in))


def init_sparse_mask(shape, sparsity: float, rng: np.random.Generator) -> SparseMask:
    """Random mask with exactly ``round((1-s) * size)`` ones, drawn without replacement."""
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    shape = tuple(int(d) for d in shape)
    budget = mask_budget(shape, sparsity)
    if budget == 0:
        raise ValueError(f"sparsity {sparsity} leaves no connections in a {shape} layer")
    size = shape[0] * shape[1]
    bits = np.zeros(size)
    if budget == size:
        bits[:] = 1.0
    else:
        bits[rng.choice(size, size=budget, replace=False)] = 1.0
    return SparseMask(bits.reshape(shape), budget)


def dense_mask(shape) -> SparseMask:
    shape = tuple(int(d) for d in shape)
    return SparseMask(np.ones(shape), shape[0] * shape[1])


def apply_mask(W: np.ndarray, m: SparseMask) -> np.ndarray:
    if W.shape != m.shape:
        raise DimensionError(f"weight shape {W.shape} does not match mask shape {m.shape}")
    return W * m.bits


def mask_density(m: SparseMask) -> float:
    return m.count() / m.bits.size


def rewire_count(cfg: RiglConfig, budget: int, step: int) -> int:
    """Connections to swap at ``step``: a fraction of the budget, optionally cosine-decayed."""
    frac = cfg.rewire_fraction
    if cfg.cosine_decay and cfg.total_steps:
        frac *= 0.5 * (1.0 + math.cos(math.pi * min(step, cfg.total_steps) / cfg.total_steps))
    return int(round(frac * budget))


def select_prune_grow(
    W: np.ndarray, grad: np.ndarray, bits: np.ndarray, K: int
) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices to prune (K smallest |W| among active) and grow
    (K largest |grad| among inactive).  Ties go to the lowest flat index."""
    flat = bits.reshape(-1)
    active = np.flatnonzero(flat == 1.0)
    inactive = np.flatnonzero(flat == 0.0)
    if K == 0:
        return active[:0], inactive[:0]
    w_abs = np.abs(W.reshape(-1)[active])
    g_abs = np.abs(grad.reshape(-1)[inactive])
    prune = active[np.argsort(w_abs, kind="stable")[:K]]
    grow = inactive[np.argsort(-g_abs, kind="stable")[:K]]
    return prune, grow


def rigl_update(
    W: np.ndarray, grad: np.ndarray, m: SparseMask, K: int
) -> SparseMask:
    """One RigL rewire: drop the K weakest active weights, grow the K inactive
    coordinates with the largest dense gradient.  Population count is preserved."""
    if W.shape != m.shape or grad.shape != m.shape:
        raise DimensionError(
            f"rigl_update shapes differ: W {W.shape}, grad {grad.shape}, mask {m.shape}"
        )
    active = m.count()
    feasible = min(active, m.bits.size - active)
    if K > feasible:
        warnings.warn(
            f"rewire count {K} exceeds feasible maximum {feasible}; clamped",
            RuntimeWarning,
            stacklevel=2,
        )
        K = feasible
    K = max(int(K), 0)
    prune, grow = select_prune_grow(W, grad, m.bits, K)
    bits = m.bits.copy().reshape(-1)
    bits[prune] = 0.0
    bits[grow] = 1.0
    return SparseMask(bits.reshape(m.shape), m.budget)


def changed_coords(old: SparseMask, new: SparseMask) -> tuple[np.ndarray, np.ndarray]:
    """(pruned, grown) flat indices between two masks."""
    a = old.bits.reshape(-1)
    b = new.bits.reshape(-1)
    return np.flatnonzero((a == 1.0) & (b == 0.0)), np.flatnonzero((a == 0.0) & (b == 1.0))
