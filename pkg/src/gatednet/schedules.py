"""Epoch-indexed training controls: penalty ramp, temperature anneal,
three-phase threshold/keep-target schedule, activity floors and collapse flags.

Epochs are 1-based throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

# Midpoints of the recommended ranges; phase 3 sits at the buffered ~0.30 keep.
DEFAULT_PHASE_THETAS = (0.55, 0.72, 0.80)
DEFAULT_PHASE_KEEPS = (0.90, 0.55, 0.30)
MAX_THETA = 0.90

# Collapse-flag thresholds (artifact-level choices).
COLLAPSE_G_LOW = 0.01
COLLAPSE_P_MARGIN = 0.05
COLLAPSE_P_LOW = 0.01


class ScheduleError(ValueError):
    """Invalid schedule configuration."""


@dataclass
class ScheduleConfig:
    total_epochs: int = 10
    warmup_epochs: int | None = None  # defaults to the end of phase 1
    lambda_max: float = 1.0
    lambda_ramp: str = "linear"  # linear | cosine
    tau_start: float = 1.5
    tau_end: float = 1.0
    tau_anneal: str = "linear"  # linear | cosine
    phase_ends: list[int] | None = None  # last epoch of each phase
    phase_thetas: list[float] = field(default_factory=lambda: list(DEFAULT_PHASE_THETAS))
    phase_keeps: list[float] = field(default_factory=lambda: list(DEFAULT_PHASE_KEEPS))
    max_theta_step: float = 0.2
    r_min: float = 0.0
    topk_floor: int | None = None
    p0: float = 0.8

    def __post_init__(self):
        self.validate()

    def resolved_phase_ends(self) -> list[int]:
        if self.phase_ends is not None:
            return list(self.phase_ends)
        n = len(self.phase_thetas)
        T = self.total_epochs
        if n == 1:
            return [T]
        # phase 1 ~30%, remaining phases split the rest evenly
        first = max(1, round(0.3 * T))
        rest = T - first
        ends = [first]
        for i in range(1, n):
            ends.append(first + round(rest * i / (n - 1)))
        ends[-1] = T
        return ends

    def resolved_warmup(self) -> int:
        if self.warmup_epochs is not None:
            return self.warmup_epochs
        return self.resolved_phase_ends()[0] if len(self.phase_thetas) > 1 else 0

    def validate(self) -> None:
        T = self.total_epochs
        if T < 1:
            raise ScheduleError("total_epochs must be >= 1")
        if not self.resolved_warmup() < T:
            raise ScheduleError(f"warmup_epochs ({self.resolved_warmup()}) must be < total_epochs ({T})")
        if self.lambda_max < 0:
            raise ScheduleError("lambda_max must be >= 0")
        if self.lambda_ramp not in ("linear", "cosine") or self.tau_anneal not in ("linear", "cosine"):
            raise ScheduleError("ramp/anneal kind must be 'linear' or 'cosine'")
        if not self.tau_start >= self.tau_end > 0:
            raise ScheduleError("need tau_start >= tau_end > 0")
        if not 0.0 <= self.r_min <= 1.0:
            raise ScheduleError("r_min must be in [0, 1]")
        if self.topk_floor is not None and self.topk_floor < 0:
            raise ScheduleError("topk_floor must be >= 0")
        if not 0.0 < self.p0 < 1.0:
            raise ScheduleError("p0 must be in (0, 1)")
        n = len(self.phase_thetas)
        if n == 0 or len(self.phase_keeps) != n:
            raise ScheduleError("phase_thetas and phase_keeps must be non-empty and equal length")
        ends = self.resolved_phase_ends()
        if len(ends) != n:
            raise ScheduleError("phase_ends must have one entry per phase")
        if any(b <= a for a, b in zip(ends, ends[1:])) or ends[0] < 1:
            raise ScheduleError(f"phase_ends must be strictly increasing and >= 1, got {ends}")
        if ends[-1] != T:
            raise ScheduleError(f"phases cover epochs 1..{ends[-1]} but total_epochs is {T}")
        if any(b > a for a, b in zip(self.phase_keeps, self.phase_keeps[1:])):
            raise ScheduleError("phase keep targets must be non-increasing")
        for th in self.phase_thetas:
            if not 0.0 <= th < 1.0:
                raise ScheduleError(f"theta {th} outside [0, 1)")
        for a, b in zip(self.phase_thetas, self.phase_thetas[1:]):
            if abs(b - a) > self.max_theta_step + 1e-12:
                raise ScheduleError(
                    f"theta jumps {a} -> {b}, more than max_theta_step={self.max_theta_step}")


def _ramp(frac: float, kind: str) -> float:
    frac = min(1.0, max(0.0, frac))
    if kind == "cosine":
        return 0.5 * (1.0 - math.cos(math.pi * frac))
    return frac


def lambda_at(t: int, cfg: ScheduleConfig) -> float:
    """Zero through warmup, then a ramp reaching ``lambda_max`` at the last epoch."""
    Ew = cfg.resolved_warmup()
    if t <= Ew:
        return 0.0
    return cfg.lambda_max * _ramp((t - Ew) / max(1, cfg.total_epochs - Ew), cfg.lambda_ramp)


def tau_at(t: int, cfg: ScheduleConfig) -> float:
    """Non-increasing interpolation from ``tau_start`` (epoch 1) to ``tau_end`` (epoch T)."""
    T = cfg.total_epochs
    frac = (t - 1) / (T - 1) if T > 1 else 1.0
    frac = _ramp(frac, cfg.tau_anneal)
    tau = cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac
    return max(tau, cfg.tau_end)


def phase_at(t: int, cfg: ScheduleConfig) -> tuple[int, float, float]:
    """``(phase_index, theta, keep_target)`` for epoch ``t``; phases are 1-based."""
    ends = cfg.resolved_phase_ends()
    if t < 1 or t > ends[-1]:
        raise ScheduleError(f"epoch {t} is outside the schedule 1..{ends[-1]}")
    for i, end in enumerate(ends):
        if t <= end:
            return i + 1, cfg.phase_thetas[i], cfg.phase_keeps[i]
    raise AssertionError("unreachable")


def enforce_min_open(
    g: np.ndarray,
    p: np.ndarray,
    r_min: float,
    topk_floor: int | None = None,
    *,
    return_forced: bool = False,
):
    """Turn on the highest-p closed units of any row below the activity floor.

    The floor per row is ``max(ceil(r_min * n), topk_floor)`` (capped at n).
    Units are never switched off.
    """
    g = np.ascontiguousarray(g, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    if g.shape != p.shape:
        raise ValueError(f"g {g.shape} and p {p.shape} differ")
    n = g.shape[1]
    need = math.ceil(r_min * n - 1e-12) if r_min > 0 else 0
    if topk_floor:
        need = max(need, int(topk_floor))
    need = min(need, n)
    if need == 0:
        out, forced = g.copy(), np.zeros_like(g)
    else:
        out, forced = kernels.min_open_rows(g, p, need)
    return (out, forced) if return_forced else out


@dataclass
class CollapseDiag:
    epoch: int
    mean_p: list[float]
    mean_g: list[float]
    flag_a: bool  # p stays high while g goes to 0 (threshold too aggressive)
    flag_b: bool  # p itself collapses

    def as_dict(self) -> dict:
        return {"collapse_a": self.flag_a, "collapse_b": self.flag_b}


def collapse_flags(epoch: int, mean_p: list[float], mean_g: list[float], theta: float) -> CollapseDiag:
    flag_a = any(g < COLLAPSE_G_LOW and p > theta - COLLAPSE_P_MARGIN
                 for p, g in zip(mean_p, mean_g))
    flag_b = any(p < COLLAPSE_P_LOW for p in mean_p)
    return CollapseDiag(epoch, list(mean_p), list(mean_g), flag_a, flag_b)
