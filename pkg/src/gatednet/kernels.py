"""Hot numeric kernels with two interchangeable backends.

The numba backend uses explicit loops with a fixed accumulation order and
skips zero operands, so closed gates and dead ReLUs really do save work.
The numpy backend is the vectorized fallback (BLAS matmul).  Pick one with
``GATEDNET_BACKEND=numba|numpy``; the default is numba when importable.

Both backends are deterministic run to run, but they are not bitwise
identical to each other (BLAS reorders sums).
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

BACKENDS = ("numba", "numpy")


def _initial_backend() -> str:
    requested = os.environ.get("GATEDNET_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested not in ("", "numba"):
        raise ValueError(f"GATEDNET_BACKEND must be one of {BACKENDS}, got {requested!r}")
    return "numba" if HAS_NUMBA else "numpy"


_backend = _initial_backend()


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Switch backend at runtime; returns the previous one."""
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    prev, _backend = _backend, name
    return prev


# ---------------------------------------------------------------- numpy path


def _affine_np(h, W, b):
    return h @ W.T + b


def _grad_weight_np(da, u):
    return da.T @ u


def _grad_input_np(da, W):
    return da @ W


def _adamw_np(param, grad, m, v, lr, beta1, beta2, eps, wd, step, mask):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    upd = lr * (mhat / (np.sqrt(vhat) + eps) + wd * param)
    if mask is not None:
        upd *= mask
    param -= upd


def _topk_rows_np(p, k):
    # stable sort on -p: largest first, equal values keep ascending index
    order = np.argsort(-p, axis=1, kind="stable")[:, :k]
    out = np.zeros_like(p)
    np.put_along_axis(out, order, 1.0, axis=1)
    return out


def _min_open_np(g, p, need):
    out = g.copy()
    forced = np.zeros_like(g)
    counts = g.sum(axis=1)
    for s in np.nonzero(counts < need)[0]:
        deficit = int(need - counts[s])
        closed = np.nonzero(g[s] == 0.0)[0]
        pick = closed[np.argsort(-p[s, closed], kind="stable")[:deficit]]
        out[s, pick] = 1.0
        forced[s, pick] = 1.0
    return out, forced


# ---------------------------------------------------------------- numba path

if HAS_NUMBA:

    @njit(cache=True)
    def _affine_nb(h, WT, b):
        batch, n_in = h.shape
        n_out = WT.shape[1]
        out = np.zeros((batch, n_out))
        for s in range(batch):
            row = out[s]
            for j in range(n_in):
                hv = h[s, j]
                if hv != 0.0:
                    w = WT[j]
                    for i in range(n_out):
                        row[i] += hv * w[i]
            for i in range(n_out):
                row[i] += b[i]
        return out

    @njit(cache=True)
    def _grad_weight_nb(da, u):
        batch, n_out = da.shape
        n_in = u.shape[1]
        dW = np.zeros((n_out, n_in))
        for s in range(batch):
            us = u[s]
            for i in range(n_out):
                d = da[s, i]
                if d != 0.0:
                    row = dW[i]
                    for j in range(n_in):
                        row[j] += d * us[j]
        return dW

    @njit(cache=True)
    def _grad_input_nb(da, W):
        batch, n_out = da.shape
        n_in = W.shape[1]
        du = np.zeros((batch, n_in))
        for s in range(batch):
            row = du[s]
            for i in range(n_out):
                d = da[s, i]
                if d != 0.0:
                    w = W[i]
                    for j in range(n_in):
                        row[j] += d * w[j]
        return du

    @njit(cache=True)
    def _adamw_flat_nb(param, grad, m, v, lr, beta1, beta2, eps, wd, step, mask, use_mask):
        c1 = 1.0 - beta1**step
        c2 = 1.0 - beta2**step
        for i in range(param.size):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            if use_mask and mask[i] == 0.0:
                continue
            upd = lr * ((m[i] / c1) / (np.sqrt(v[i] / c2) + eps) + wd * param[i])
            param[i] -= upd

    @njit(cache=True)
    def _topk_rows_nb(p, k):
        batch, n = p.shape
        out = np.zeros((batch, n))
        for s in range(batch):
            order = np.argsort(-p[s], kind="mergesort")
            for r in range(k):
                out[s, order[r]] = 1.0
        return out

    @njit(cache=True)
    def _min_open_nb(g, p, need):
        batch, n = g.shape
        out = g.copy()
        forced = np.zeros((batch, n))
        for s in range(batch):
            count = 0
            for i in range(n):
                if g[s, i] != 0.0:
                    count += 1
            while count < need:
                best = -1
                for i in range(n):
                    if out[s, i] == 0.0 and (best < 0 or p[s, i] > p[s, best]):
                        best = i
                out[s, best] = 1.0
                forced[s, best] = 1.0
                count += 1
        return out, forced


# ---------------------------------------------------------------- dispatch


def affine(h: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _backend == "numba":
        return _affine_nb(h, np.ascontiguousarray(W.T), b)
    return _affine_np(h, W, b)


def grad_weight(da: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``da.T @ u``: weight gradient summed over the batch."""
    if _backend == "numba":
        return _grad_weight_nb(np.ascontiguousarray(da), np.ascontiguousarray(u))
    return _grad_weight_np(da, u)


def grad_input(da: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``da @ W``: gradient with respect to the layer input."""
    if _backend == "numba":
        return _grad_input_nb(np.ascontiguousarray(da), np.ascontiguousarray(W))
    return _grad_input_np(da, W)


def adamw_update(param, grad, m, v, *, lr, beta1, beta2, eps, wd, step, mask=None):
    """In-place AdamW step.  Coordinates where ``mask == 0`` keep their value
    (moments still advance, so a regrown coordinate starts from fresh stats
    only if the caller resets them)."""
    if _backend == "numba":
        use_mask = mask is not None
        flat_mask = mask.reshape(-1) if use_mask else np.empty(0)
        _adamw_flat_nb(
            param.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
            lr, beta1, beta2, eps, wd, float(step), flat_mask, use_mask,
        )
        return
    _adamw_np(param, grad, m, v, lr, beta1, beta2, eps, wd, step, mask)


def topk_rows(p: np.ndarray, k: int) -> np.ndarray:
    if _backend == "numba":
        return _topk_rows_nb(np.ascontiguousarray(p), k)
    return _topk_rows_np(p, k)


def min_open_rows(g: np.ndarray, p: np.ndarray, need: int):
    """Force on the highest-p closed units until each row has ``need`` ones.

    Returns ``(g_out, forced)`` where ``forced`` flags the units switched on.
    """
    if _backend == "numba":
        return _min_open_nb(np.ascontiguousarray(g), np.ascontiguousarray(p), int(need))
    return _min_open_np(g, p, need)
