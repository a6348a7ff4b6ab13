"""Gated MLPs with straight-through hard gates, RigL rewiring and MAC proxies."""
from .budget import (
    LayerUsage,
    activation_ratios,
    compute_proxy,
    cost_weighted_penalty,
    count_params_flops,
    relmac,
    relmac_fuse,
    usage_penalty,
)
from .config import RunConfig, load_config
from .core import affine_forward, finite_difference_gradient, relu, softmax_cross_entropy
from .gates import (
    GatedLayer,
    GatedMLP,
    GateParams,
    build_model,
    gate_logits,
    gate_probs,
    gated_forward,
    hard_gate,
    init_gate_bias,
    ste_backward,
    topk_gate,
)
from .kernels import get_backend, set_backend
from .rigl import SparseMask, apply_mask, init_sparse_mask, mask_density, rigl_update
from .train import evaluate, magnitude_prune, train

__version__ = "0.1.0"
