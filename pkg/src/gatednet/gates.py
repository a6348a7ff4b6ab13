"""Gated MLP: gate logits, soft/hard/Top-k gating, forward pass and STE backward.

Gate slots are aligned with the weight layer that *consumes* the gated
vector: slot 0 gates the network input, slot ``k >= 1`` gates the ReLU output
of layer ``k - 1`` (i.e. the output of hidden layer ``k``).  The classifier
logits are never gated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import DimensionError, affine_forward, he_uniform, relu
from .rigl import SparseMask, apply_mask
from .schedules import enforce_min_open

GATE_MODES = ("static", "dynamic")
FORWARD_MODES = ("soft", "hard", "topk")


class ContractError(RuntimeError):
    """A call violated an operation's preconditions on model state."""


@dataclass
class GateParams:
    mode: str
    tau: float
    theta: float
    static_logits: np.ndarray | None = None
    gate_W: np.ndarray | None = None
    gate_b: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in GATE_MODES:
            raise ValueError(f"gate mode must be one of {GATE_MODES}, got {self.mode!r}")
        check_tau(self.tau)
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta must be in [0, 1), got {self.theta}")
        if self.mode == "static":
            if self.static_logits is None or self.gate_W is not None or self.gate_b is not None:
                raise ValueError("static gate needs static_logits only")
        else:
            if self.static_logits is not None or self.gate_W is None or self.gate_b is None:
                raise ValueError("dynamic gate needs gate_W and gate_b only")
            if self.gate_W.shape[0] != self.gate_b.shape[0]:
                raise DimensionError(
                    f"gate_W {self.gate_W.shape} and gate_b {self.gate_b.shape} disagree")

    @property
    def width(self) -> int:
        if self.mode == "static":
            return self.static_logits.shape[0]
        return self.gate_b.shape[0]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        if self.mode == "static":
            return [("static_logits", self.static_logits)]
        return [("gate_W", self.gate_W), ("gate_b", self.gate_b)]

    def param_count(self) -> int:
        return sum(a.size for _, a in self.arrays())


@dataclass
class GatedLayer:
    W: np.ndarray
    b: np.ndarray
    gate: GateParams | None = None  # gates this layer's (ReLU) output

    def __post_init__(self):
        if self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"bias {self.b.shape} does not match W {self.W.shape}")
        if self.gate is not None:
            if self.gate.width != self.W.shape[0]:
                raise DimensionError(
                    f"gate width {self.gate.width} does not match layer width {self.W.shape[0]}")
            if self.gate.mode == "dynamic" and self.gate.gate_W.shape[1] != self.W.shape[1]:
                raise DimensionError(
                    f"gate_W {self.gate.gate_W.shape} does not take the layer input "
                    f"of width {self.W.shape[1]}")


@dataclass
class GatedMLP:
    layers: list[GatedLayer]
    input_gate: GateParams | None = None
    masks: list[SparseMask | None] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[0] != b.W.shape[1]:
                raise DimensionError(f"layer chain broken: {a.W.shape} -> {b.W.shape}")
        if self.layers[-1].gate is not None:
            raise ValueError("the output layer cannot be gated")
        if self.input_gate is not None:
            g = self.input_gate
            if g.width != self.dims[0]:
                raise DimensionError(f"input gate width {g.width} != input width {self.dims[0]}")
            if g.mode == "dynamic" and g.gate_W.shape[1] != self.dims[0]:
                raise DimensionError("dynamic input gate must read the input vector")
        if not self.masks:
            self.masks = [None] * len(self.layers)
        if len(self.masks) != len(self.layers):
            raise ValueError("need one mask entry (or None) per layer")
        for layer, m in zip(self.layers, self.masks):
            if m is not None and m.shape != layer.W.shape:
                raise DimensionError(f"mask {m.shape} does not match weights {layer.W.shape}")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].W.shape[1]] + [l.W.shape[0] for l in self.layers]

    def gates(self) -> list[GateParams | None]:
        """Gate per slot, aligned with the consuming weight layer."""
        return [self.input_gate] + [l.gate for l in self.layers[:-1]]

    def is_gated(self) -> bool:
        return any(g is not None for g in self.gates())

    def set_schedule(self, tau: float | None = None, theta: float | None = None) -> None:
        for g in self.gates():
            if g is None:
                continue
            if tau is not None:
                check_tau(tau)
                g.tau = float(tau)
            if theta is not None:
                g.theta = float(theta)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Trainable arrays in a fixed order (weights, biases, then gate params)."""
        out = []
        for k, layer in enumerate(self.layers):
            out.append((f"layers.{k}.W", layer.W))
            out.append((f"layers.{k}.b", layer.b))
        for k, g in enumerate(self.gates()):
            if g is not None:
                out.extend((f"gates.{k}.{name}", a) for name, a in g.arrays())
        return out

    def backbone_param_count(self) -> int:
        return sum(l.W.size + l.b.size for l in self.layers)

    def gate_param_count(self) -> int:
        return sum(g.param_count() for g in self.gates() if g is not None)

    def param_count(self) -> int:
        return self.backbone_param_count() + self.gate_param_count()

    def effective_weights(self, masks=None) -> list[np.ndarray]:
        masks = self.masks if masks is None else masks
        return [l.W if m is None else apply_mask(l.W, m) for l, m in zip(self.layers, masks)]


# ------------------------------------------------------------------ gate ops


def check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def gate_logits(gate: GateParams | None, h_prev: np.ndarray) -> np.ndarray:
    """Static logits broadcast over the batch, or ``gate_W @ h + gate_b`` per sample."""
    if gate is None:
        raise ContractError("gate_logits called on an ungated slot")
    if gate.mode == "static":
        return np.broadcast_to(gate.static_logits, (h_prev.shape[0], gate.width)).copy()
    return affine_forward(gate.gate_W, gate.gate_b, h_prev)


def gate_probs(z: np.ndarray, tau: float) -> np.ndarray:
    check_tau(tau)
    x = np.asarray(z, dtype=np.float64) / tau
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def hard_gate(p: np.ndarray, theta: float) -> np.ndarray:
    return (np.asarray(p) > theta).astype(np.float64)


def topk_gate(p: np.ndarray, k: int) -> np.ndarray:
    """Exactly ``k`` ones per row at the largest probabilities (ties: lowest index)."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    n = p.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    return kernels.topk_rows(p, int(k))


def init_gate_bias(p0: float, tau: float) -> float:
    """Bias that makes a zero-input gate open with probability ``p0``."""
    if not 0.0 < p0 < 1.0:
        raise ValueError(f"p0 must be in (0, 1), got {p0}")
    check_tau(tau)
    return tau * math.log(p0 / (1.0 - p0))


def make_gate(mode: str, width: int, in_width: int, *, tau: float, theta: float,
              p0: float) -> GateParams:
    bias = init_gate_bias(p0, tau)
    if mode == "static":
        return GateParams("static", tau, theta, static_logits=np.full(width, bias))
    return GateParams("dynamic", tau, theta, gate_W=np.zeros((width, in_width)),
                      gate_b=np.full(width, bias))


def build_model(
    dims: list[int],
    rng: np.random.Generator,
    *,
    gate_mode: str | None = None,
    gate_input: bool = True,
    gate_hidden: bool = True,
    tau: float = 1.0,
    theta: float = 0.5,
    p0: float = 0.8,
) -> GatedMLP:
    """He-uniform weights, zero biases, gates (if any) initialised open at ``p0``."""
    if len(dims) < 2:
        raise ValueError("need at least input and output widths")
    layers = []
    for k, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = he_uniform(rng, n_out, n_in)
        gate = None
        last = k == len(dims) - 2
        if gate_mode is not None and gate_hidden and not last:
            gate = make_gate(gate_mode, n_out, n_in, tau=tau, theta=theta, p0=p0)
        layers.append(GatedLayer(W, np.zeros(n_out), gate))
    input_gate = None
    if gate_mode is not None and gate_input:
        input_gate = make_gate(gate_mode, dims[0], dims[0], tau=tau, theta=theta, p0=p0)
    return GatedMLP(layers, input_gate)


# ------------------------------------------------------------------ forward


@dataclass
class GateTrace:
    """Everything the backward pass needs, per slot / per layer."""

    mode: str
    raw: list[np.ndarray]  # vector entering slot k before gating
    used: list[np.ndarray]  # vector actually fed to layer k
    source: list[np.ndarray | None]  # GateNet input for slot k
    pre: list[np.ndarray]  # pre-activation of layer k
    z: list[np.ndarray | None]
    p: list[np.ndarray | None]
    g: list[np.ndarray | None]  # multiplier applied in forward (p in soft mode)
    forced: list[np.ndarray | None]  # units switched on by an activity floor
    drop: list[np.ndarray | None]  # inverted-dropout multipliers
    weights: list[np.ndarray]  # effective (masked) weights
    logits: np.ndarray | None = None

    def floor_applied(self) -> bool:
        return any(f is not None and f.any() for f in self.forced)


def floor_count(width: int, r_min: float, topk_floor: int | None) -> int:
    need = math.ceil(r_min * width - 1e-12) if r_min > 0 else 0
    if topk_floor:
        need = max(need, int(topk_floor))
    return min(need, width)


def gated_forward(
    model: GatedMLP,
    x: np.ndarray,
    mode: str = "hard",
    masks: list[SparseMask | None] | None = None,
    *,
    topk: list[int | None] | None = None,
    r_min: float = 0.0,
    topk_floor: int | None = None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, GateTrace]:
    """Forward pass through masked weights, ReLU and gates.

    ``mode`` picks the gate multiplier: ``soft`` uses p, ``hard`` uses
    ``1[p > theta]`` (plus the optional activity floor), ``topk`` keeps exactly
    ``topk[k]`` units in slot k.  ``dropout`` applies inverted dropout to
    hidden activations (training only; pass 0 for evaluation).
    """
    if mode not in FORWARD_MODES:
        raise ValueError(f"mode must be one of {FORWARD_MODES}, got {mode!r}")
    if masks is None:
        masks = model.masks
    if len(masks) != len(model.layers):
        raise DimensionError("need one mask entry (or None) per layer")
    if x.ndim != 2 or x.shape[1] != model.dims[0]:
        raise DimensionError(f"input shape {x.shape} does not match width {model.dims[0]}")
    if dropout and rng is None:
        raise ValueError("dropout needs an rng")
    weights = model.effective_weights(masks)
    gates = model.gates()
    L = len(model.layers)
    tr = GateTrace(mode, [], [], [], [], [], [], [], [], [], weights)

    vec = np.ascontiguousarray(x, dtype=np.float64)
    src = vec
    for k in range(L):
        gate = gates[k]
        tr.raw.append(vec)
        drop = None
        if k > 0 and dropout > 0.0:
            keep = rng.random(vec.shape) >= dropout
            drop = keep / (1.0 - dropout)
        tr.drop.append(drop)
        if gate is None:
            tr.source.append(None)
            tr.z.append(None)
            tr.p.append(None)
            tr.g.append(None)
            tr.forced.append(None)
            used = vec
        else:
            z = gate_logits(gate, src)
            p = gate_probs(z, gate.tau)
            forced = None
            if mode == "soft":
                g = p
            elif mode == "topk":
                if topk is None or topk[k] is None:
                    raise ValueError(f"topk mode needs k for gate slot {k}")
                g = topk_gate(p, topk[k])
            else:
                g = hard_gate(p, gate.theta)
                need = floor_count(gate.width, r_min, topk_floor)
                if need:
                    g, forced = enforce_min_open(g, p, r_min, topk_floor, return_forced=True)
            tr.source.append(src)
            tr.z.append(z)
            tr.p.append(p)
            tr.g.append(g)
            tr.forced.append(forced)
            used = g * vec
        if drop is not None:
            used = used * drop
        tr.used.append(used)
        a = affine_forward(weights[k], model.layers[k].b, used)
        tr.pre.append(a)
        if k == L - 1:
            tr.logits = a
            return a, tr
        src = used
        vec = relu(a)
    raise AssertionError("unreachable")


# ------------------------------------------------------------------ backward


@dataclass
class ModelGrads:
    dW: list[np.ndarray]
    db: list[np.ndarray]
    gates: list[dict[str, np.ndarray] | None]
    dz: list[np.ndarray | None]  # per-sample gradient w.r.t. gate logits
    dJ_dg: list[np.ndarray | None]  # per-sample dJ/d(gate multiplier), task part

    def arrays(self, model: GatedMLP) -> list[np.ndarray]:
        """Aligned with ``model.named_arrays()``."""
        out = []
        for dW, db in zip(self.dW, self.db):
            out.extend([dW, db])
        for g, d in zip(model.gates(), self.gates):
            if g is not None:
                out.extend(d[name] for name, _ in g.arrays())
        return out


def penalty_grad_p(width: int, batch: int, lam: float, costs: np.ndarray | None) -> np.ndarray:
    """d(lam * usage term)/dp for one slot, per sample and unit."""
    if costs is None:
        return np.full(width, lam / (width * batch))
    costs = np.asarray(costs, dtype=np.float64)
    return lam * costs / (costs.sum() * batch)


def backward(
    model: GatedMLP,
    trace: GateTrace,
    dlogits: np.ndarray,
    lam: float = 0.0,
    costs: list[np.ndarray | None] | None = None,
) -> ModelGrads:
    """Backprop through a traced forward.

    In hard and top-k modes the gate is treated with the straight-through
    rule ``dJ/dz = dJ/dg * p (1 - p) / tau``; in soft mode the same expression
    is the exact derivative.  ``lam`` adds the gradient of the expected-usage
    penalty (exact, since the penalty is a smooth function of p).  Weight
    gradients are dense: masked coordinates receive the gradient the
    connection would have if it existed.
    """
    gates = model.gates()
    L = len(model.layers)
    batch = dlogits.shape[0]
    dW = [None] * L
    db = [None] * L
    g_grads: list[dict | None] = [None] * L
    dz_all: list[np.ndarray | None] = [None] * L
    dg_all: list[np.ndarray | None] = [None] * L
    extra = [None] * L  # GateNet contributions to d(used[k])

    da = dlogits
    for k in range(L - 1, -1, -1):
        u = trace.used[k]
        dW[k] = kernels.grad_weight(da, u)
        db[k] = da.sum(axis=0)
        gate = gates[k]
        if k == 0 and gate is None:
            break
        du = kernels.grad_input(da, trace.weights[k])
        if extra[k] is not None:
            du = du + extra[k]
        if trace.drop[k] is not None:
            du = du * trace.drop[k]
        if gate is not None:
            raw = trace.raw[k]
            p = trace.p[k]
            dg = du * raw
            dg_all[k] = dg
            dp = dg
            if lam:
                c = None if costs is None else costs[k]
                dp = dg + penalty_grad_p(gate.width, batch, lam, c)
            dz = dp * (p * (1.0 - p) / gate.tau)
            dz_all[k] = dz
            if gate.mode == "static":
                g_grads[k] = {"static_logits": dz.sum(axis=0)}
            else:
                src = trace.source[k]
                g_grads[k] = {"gate_W": kernels.grad_weight(dz, src), "gate_b": dz.sum(axis=0)}
                if k > 0:
                    extra[k - 1] = kernels.grad_input(dz, gate.gate_W)
            du = du * trace.g[k]
        if k == 0:
            break
        da = du * (trace.pre[k - 1] > 0.0)
    return ModelGrads(dW, db, g_grads, dz_all, dg_all)


def ste_backward(model, trace, dlogits, lam=0.0, costs=None) -> ModelGrads:
    """Straight-through backward; only valid for hard or top-k forwards."""
    if trace.mode not in ("hard", "topk"):
        raise ContractError(f"ste_backward needs a hard/topk trace, got {trace.mode!r}")
    return backward(model, trace, dlogits, lam, costs)
