"""Dense linear algebra, activations, loss, RNG and a finite-difference oracle.

Matrices are plain C-contiguous ``float64`` ndarrays; vectors are 1-D.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes do not conform."""


def make_rng(seed: int | list[int]) -> np.random.Generator:
    """Deterministic generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def affine_forward(W: np.ndarray, b: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``out[s, i] = sum_j W[i, j] * h[s, j] + b[i]``."""
    W = as_matrix(W, "W")
    h = as_matrix(h, "h")
    b = np.ascontiguousarray(b, dtype=np.float64)
    if W.shape[1] != h.shape[1] or b.shape != (W.shape[0],):
        raise DimensionError(
            f"affine shapes do not conform: W {W.shape}, b {b.shape}, h {h.shape}"
        )
    out = kernels.affine(h, W, b)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite values in affine output")
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    The gradient already carries the ``1/batch`` factor.
    """
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {batch}")
    if batch == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sums = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sums)
    rows = np.arange(batch)
    loss = float(-log_probs[rows, labels].mean())
    grad = exp / sums
    grad[rows, labels] -= 1.0
    grad /= batch
    return loss, grad


def he_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / n_in)
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64).reshape(-1)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        up = f(x.copy())
        x[i] = orig - eps
        down = f(x.copy())
        x[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite objective at coordinate {i}")
        grad[i] = (up - down) / (2.0 * eps)
    return grad
