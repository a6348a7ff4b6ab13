"""Training loops for the six model variants and hard-gate evaluation.

All variants share one :class:`Trainer`; the variant only decides whether the
model carries gates, connection masks, dropout, or a one-shot magnitude
prune.  Random streams are split per purpose (init, masks, dropout) and
batch order depends only on ``(seed, epoch)``, so a run is a pure function of
its config.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .budget import (
    LayerUsage,
    compute_proxy,
    cost_weighted_penalty,
    relmac,
    relmac_fuse,
    structural_density,
    usage_penalty,
)
from .config import RunConfig
from .core import softmax_cross_entropy
from .data import Dataset, batches
from .gates import GatedMLP, backward, build_model, floor_count, gated_forward
from .rigl import SparseMask, init_sparse_mask, mask_density, rewire_count, rigl_update
from .schedules import collapse_flags, lambda_at, phase_at, tau_at


class CollapseAbort(RuntimeError):
    """Gate probabilities collapsed for too many consecutive epochs."""

    def __init__(self, message: str, records: list):
        super().__init__(message)
        self.records = records


@dataclass
class StepStats:
    task_loss: float
    penalty: float
    objective: float
    correct: int
    size: int
    rewired: bool = False


@dataclass
class RunRecord:
    epoch: int
    phase: int | None
    lambda_g: float
    tau: float | None
    theta: float | None
    keep_target: float | None
    task_loss: float
    gate_penalty: float
    objective: float
    alpha_p: list[float]
    alpha_g: list[float]
    rho: list[float]
    relmac_p: float
    relmac_g: float
    relmac_fuse_p: float
    relmac_fuse_g: float
    compute_proxy_p: float
    compute_proxy_g: float
    train_acc: float
    val_acc: float
    rewires: int
    steps: int
    collapse_a: bool
    collapse_b: bool

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalResult:
    accuracy: float
    usages: list[LayerUsage]
    mean_p: list[float | None] = field(default_factory=list)
    mean_g: list[float | None] = field(default_factory=list)


# ------------------------------------------------------------------ evaluation


def evaluate(
    model: GatedMLP,
    data: Dataset,
    theta: float | None = None,
    *,
    r_min: float = 0.0,
    topk_floor: int | None = None,
    mode: str = "hard",
    topk: list[int | None] | None = None,
    batch_size: int = 2048,
) -> EvalResult:
    """Hard-gate inference: accuracy plus per-layer deployment activation ratios.

    ``theta`` (if given) temporarily replaces every gate's threshold.
    """
    gates = [g for g in model.gates() if g is not None]
    saved = [g.theta for g in gates]
    if theta is not None:
        for g in gates:
            g.theta = float(theta)
    try:
        L = len(model.layers)
        p_sum = [0.0] * L
        g_sum = [0.0] * L
        correct = 0
        for start in range(0, len(data), batch_size):
            xb = data.features[start:start + batch_size]
            yb = data.labels[start:start + batch_size]
            logits, tr = gated_forward(model, xb, mode, topk=topk, r_min=r_min,
                                       topk_floor=topk_floor)
            correct += int((logits.argmax(axis=1) == yb).sum())
            for k in range(L):
                if tr.p[k] is not None:
                    p_sum[k] += float(tr.p[k].mean(axis=1).sum())
                    g_sum[k] += float(tr.g[k].mean(axis=1).sum())
    finally:
        for g, th in zip(gates, saved):
            g.theta = th
    n = len(data)
    dims = model.dims
    usages, mean_p, mean_g = [], [], []
    for k, gate in enumerate(model.gates()):
        m = model.masks[k]
        rho = 1.0 if m is None else mask_density(m)
        macs = dims[k] * dims[k + 1]
        if gate is None:
            usages.append(LayerUsage(1.0, 1.0, rho, macs, gated=False))
            mean_p.append(None)
            mean_g.append(None)
        else:
            ap, ag = p_sum[k] / n, g_sum[k] / n
            usages.append(LayerUsage(ap, ag, rho, macs))
            mean_p.append(ap)
            mean_g.append(ag)
    return EvalResult(correct / n, usages, mean_p, mean_g)


# ------------------------------------------------------------------ pruning


def magnitude_prune(model: GatedMLP, fraction: float) -> GatedMLP:
    """One-shot global magnitude pruning into static masks (weights zeroed).

    The ``round(fraction * total)`` smallest-|W| weights across all layers are
    masked; ties go to the lowest (layer, flat index).  ``fraction == 0``
    leaves the model untouched.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"prune fraction must be in [0, 1), got {fraction}")
    if fraction == 0.0:
        return model
    eff = model.effective_weights()
    flat = np.concatenate([np.abs(W).reshape(-1) for W in eff])
    already = np.concatenate([
        (np.zeros(l.W.size) if m is None else 1.0 - m.bits.reshape(-1))
        for l, m in zip(model.layers, model.masks)])
    n_prune = int(round(fraction * flat.size))
    # already-masked weights count as pruned first
    order = np.lexsort((np.arange(flat.size), flat, -already))
    drop = np.zeros(flat.size, dtype=bool)
    drop[order[:n_prune]] = True
    masks = []
    pos = 0
    for layer in model.layers:
        size = layer.W.size
        bits = (~drop[pos:pos + size]).astype(np.float64).reshape(layer.W.shape)
        layer.W *= bits
        masks.append(SparseMask(bits, int(bits.sum())))
        pos += size
    model.masks = masks
    return model


# ------------------------------------------------------------------ trainer


class Trainer:
    def __init__(self, cfg: RunConfig, n_features: int | None = None,
                 n_classes: int | None = None):
        self.cfg = cfg
        dims = list(cfg.model.dims)
        if n_features is not None and dims[0] != n_features:
            raise ValueError(f"model.dims[0]={dims[0]} but data has {n_features} features")
        if n_classes is not None and dims[-1] != n_classes:
            raise ValueError(f"model.dims[-1]={dims[-1]} but data has {n_classes} classes")
        init_ss, mask_ss, drop_ss = np.random.SeedSequence(cfg.train.seed).spawn(3)
        init_rng = np.random.Generator(np.random.PCG64(init_ss))
        self.drop_rng = np.random.Generator(np.random.PCG64(drop_ss))
        sched = cfg.schedule
        _, theta0, _ = phase_at(1, sched)
        self.model = build_model(
            dims, init_rng,
            gate_mode=cfg.model.gate_mode if cfg.gated else None,
            gate_input=cfg.model.gate_input,
            gate_hidden=cfg.model.gate_hidden,
            tau=tau_at(1, sched), theta=theta0, p0=sched.p0,
        )
        if cfg.masked:
            mask_rng = np.random.Generator(np.random.PCG64(mask_ss))
            masks = []
            for k, layer in enumerate(self.model.layers):
                last = k == len(self.model.layers) - 1
                if last and not cfg.rigl.mask_output:
                    masks.append(None)
                else:
                    m = init_sparse_mask(layer.W.shape, cfg.rigl.sparsity, mask_rng)
                    layer.W *= m.bits
                    masks.append(m)
            self.model.masks = masks
        self.costs = None
        if cfg.model.cost_weights is not None:
            self.costs = [None if c is None else np.asarray(c, dtype=np.float64)
                          for c in cfg.model.cost_weights]
        self.opt_m = {name: np.zeros_like(a) for name, a in self.model.named_arrays()}
        self.opt_v = {name: np.zeros_like(a) for name, a in self.model.named_arrays()}
        self.step_count = 0
        self.lam = 0.0
        self.rewire_events = 0

    # -- schedule

    @property
    def forward_mode(self) -> str:
        if not self.model.is_gated():
            return "hard"
        if self.cfg.train.gate_forward == "soft":
            return "soft"
        return "topk" if self.cfg.model.gate_policy == "topk" else "hard"

    def begin_epoch(self, epoch: int) -> dict:
        sched = self.cfg.schedule
        phase, theta, keep = phase_at(epoch, sched)
        tau = tau_at(epoch, sched)
        self.lam = lambda_at(epoch, sched) if self.model.is_gated() else 0.0
        self.model.set_schedule(tau=tau, theta=theta)
        return {"phase": phase, "theta": theta, "keep_target": keep, "tau": tau}

    # -- one optimisation step

    def step(self, xb: np.ndarray, yb: np.ndarray) -> StepStats:
        cfg = self.cfg
        model = self.model
        dropout = cfg.train.dropout if cfg.variant == "dropout" else 0.0
        logits, tr = gated_forward(
            model, xb, self.forward_mode,
            topk=cfg.model.topk_k,
            r_min=cfg.schedule.r_min, topk_floor=cfg.schedule.topk_floor,
            dropout=dropout, rng=self.drop_rng if dropout else None,
        )
        loss, dlogits = softmax_cross_entropy(logits, yb)
        ps = [p for p in tr.p if p is not None]
        if not ps:
            pen = 0.0
        elif self.costs is None:
            pen = usage_penalty(ps)
        else:
            pen = cost_weighted_penalty(
                ps, [c if c is not None else np.ones(p.shape[1])
                     for c, p in zip(self.costs, tr.p) if p is not None])
        lam = self.lam
        grads = backward(model, tr, dlogits, lam, self.costs)

        self.step_count += 1
        t = self.step_count
        t_cfg = cfg.train
        grad_arrays = grads.arrays(model)
        masks = model.masks
        for (name, param), grad in zip(model.named_arrays(), grad_arrays):
            is_gate = name.startswith("gates.")
            mask = None
            if name.endswith(".W") and name.startswith("layers."):
                m = masks[int(name.split(".")[1])]
                mask = None if m is None else m.bits
            decay = t_cfg.weight_decay if (name.endswith("W") and not name.endswith(".b")) else 0.0
            lr = t_cfg.gate_lr if (is_gate and t_cfg.gate_lr is not None) else t_cfg.lr
            kernels.adamw_update(
                param, grad, self.opt_m[name], self.opt_v[name],
                lr=lr, beta1=t_cfg.beta1, beta2=t_cfg.beta2, eps=t_cfg.eps,
                wd=decay, step=t, mask=mask,
            )

        rewired = False
        if cfg.masked and t % cfg.rigl.update_period == 0:
            task_dW = grads.dW
            if lam and any(g is not None and g.mode == "dynamic" for g in model.gates()):
                task_dW = backward(model, tr, dlogits, 0.0).dW
            self._rewire(task_dW)
            rewired = True
        correct = int((logits.argmax(axis=1) == yb).sum())
        return StepStats(loss, pen, loss + lam * pen, correct, len(yb), rewired)

    def _rewire(self, dW: list[np.ndarray]) -> None:
        cfg = self.cfg.rigl
        for k, (layer, m) in enumerate(zip(self.model.layers, self.model.masks)):
            if m is None:
                continue
            K = rewire_count(cfg, m.budget, self.step_count)
            K = min(K, m.count(), m.bits.size - m.count())
            if K == 0:
                continue
            new = rigl_update(layer.W, dW[k], m, K)
            changed = (new.bits != m.bits)
            # pruned and grown coordinates restart from zero weight and fresh moments
            layer.W[changed] = 0.0
            name = f"layers.{k}.W"
            self.opt_m[name][changed] = 0.0
            self.opt_v[name][changed] = 0.0
            self.model.masks[k] = new
        self.rewire_events += 1

    # -- epochs

    def run_epoch(self, train: Dataset, epoch: int) -> dict:
        ctx = self.begin_epoch(epoch)
        tot = {"loss": 0.0, "pen": 0.0, "obj": 0.0, "correct": 0, "n": 0, "steps": 0, "rew": 0}
        for idx in batches(train, self.cfg.train.batch_size, self.cfg.train.seed, epoch):
            st = self.step(train.features[idx], train.labels[idx])
            w = st.size
            tot["loss"] += st.task_loss * w
            tot["pen"] += st.penalty * w
            tot["obj"] += st.objective * w
            tot["correct"] += st.correct
            tot["n"] += w
            tot["steps"] += 1
            tot["rew"] += int(st.rewired)
        if not math.isfinite(tot["loss"]):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        ctx.update(tot)
        return ctx

    def make_record(self, epoch: int, ctx: dict, val: Dataset) -> RunRecord:
        cfg = self.cfg
        gated = self.model.is_gated()
        ev = evaluate(self.model, val, r_min=cfg.schedule.r_min,
                      topk_floor=cfg.schedule.topk_floor,
                      mode="topk" if (gated and cfg.model.gate_policy == "topk") else "hard",
                      topk=cfg.model.topk_k)
        us = ev.usages
        n = ctx["n"]
        mp = [v for v in ev.mean_p if v is not None]
        mg = [v for v in ev.mean_g if v is not None]
        diag = collapse_flags(epoch, mp, mg, ctx["theta"]) if gated else None
        return RunRecord(
            epoch=epoch,
            phase=ctx["phase"] if gated else None,
            lambda_g=self.lam,
            tau=ctx["tau"] if gated else None,
            theta=ctx["theta"] if gated else None,
            keep_target=ctx["keep_target"] if gated else None,
            task_loss=ctx["loss"] / n,
            gate_penalty=ctx["pen"] / n,
            objective=ctx["obj"] / n,
            alpha_p=[u.alpha_p for u in us],
            alpha_g=[u.alpha_g for u in us],
            rho=[u.rho for u in us],
            relmac_p=relmac(us, "p"),
            relmac_g=relmac(us, "g"),
            relmac_fuse_p=relmac_fuse(us, "p"),
            relmac_fuse_g=relmac_fuse(us, "g"),
            compute_proxy_p=compute_proxy(us, "p"),
            compute_proxy_g=compute_proxy(us, "g"),
            train_acc=ctx["correct"] / n,
            val_acc=ev.accuracy,
            rewires=ctx["rew"],
            steps=ctx["steps"],
            collapse_a=bool(diag and diag.flag_a),
            collapse_b=bool(diag and diag.flag_b),
        )

    def fit(self, train: Dataset, val: Dataset, on_record=None) -> tuple[GatedMLP, list[RunRecord]]:
        cfg = self.cfg
        records: list[RunRecord] = []
        streak = 0
        prune_at = None
        if cfg.variant == "pruned":
            prune_at = cfg.train.prune_epoch
            if prune_at is None:
                prune_at = cfg.train.epochs // 2
            if prune_at == 0:
                self._prune()
        for epoch in range(1, cfg.train.epochs + 1):
            ctx = self.run_epoch(train, epoch)
            if prune_at is not None and epoch == prune_at:
                self._prune()
            rec = self.make_record(epoch, ctx, val)
            records.append(rec)
            if on_record is not None:
                on_record(rec)
            streak = streak + 1 if rec.collapse_b else 0
            limit = cfg.train.collapse_abort_epochs
            if limit and streak >= limit:
                raise CollapseAbort(
                    f"gate probabilities collapsed (mean p < 0.01) for {streak} consecutive "
                    f"epochs ending at epoch {epoch}; alpha_p={rec.alpha_p}", records)
        return self.model, records

    def _prune(self) -> None:
        magnitude_prune(self.model, self.cfg.train.prune_fraction)
        for k, m in enumerate(self.model.masks):
            if m is not None:
                name = f"layers.{k}.W"
                self.opt_m[name] *= m.bits
                self.opt_v[name] *= m.bits


# ------------------------------------------------------------------ entry points


def _train_variant(expected: tuple[str, ...], cfg: RunConfig, data, on_record=None):
    if cfg.variant not in expected:
        raise ValueError(f"config variant is {cfg.variant!r}, expected one of {expected}")
    train, val = data
    trainer = Trainer(cfg, train.dim, train.n_classes)
    return trainer.fit(train, val, on_record)


def train_baseline(cfg: RunConfig, data, on_record=None):
    return _train_variant(("baseline",), cfg, data, on_record)


def train_dropout(cfg: RunConfig, data, on_record=None):
    return _train_variant(("dropout",), cfg, data, on_record)


def train_pruned(cfg: RunConfig, data, on_record=None):
    return _train_variant(("pruned",), cfg, data, on_record)


def train_dynamicgate(cfg: RunConfig, data, on_record=None):
    return _train_variant(("dynamic",), cfg, data, on_record)


def train_rigl(cfg: RunConfig, data, on_record=None):
    return _train_variant(("rigl",), cfg, data, on_record)


def train_fused(cfg: RunConfig, data, on_record=None):
    return _train_variant(("fused",), cfg, data, on_record)


TRAINERS = {
    "baseline": train_baseline,
    "dropout": train_dropout,
    "pruned": train_pruned,
    "dynamic": train_dynamicgate,
    "rigl": train_rigl,
    "fused": train_fused,
}


def train(cfg: RunConfig, data, on_record=None):
    return TRAINERS[cfg.variant](cfg, data, on_record)
