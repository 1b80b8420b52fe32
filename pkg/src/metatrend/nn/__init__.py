"""Minimal differentiable layer stack and the three convolutional classifiers."""

from metatrend.nn.network import (
    ARCHS,
    Batch,
    ModelParams,
    ScaleConfig,
    assign,
    build_model,
    build_network,
    clone_params,
    load_params,
    param_count,
    params_fingerprint,
    save_params,
    tcn_receptive_field,
)
from metatrend.nn.optim import AdamState, adam_step, cosine_lr

__all__ = [
    "ARCHS", "Batch", "ModelParams", "ScaleConfig", "assign", "build_model",
    "build_network", "clone_params", "load_params", "param_count",
    "params_fingerprint", "save_params", "tcn_receptive_field",
    "AdamState", "adam_step", "cosine_lr",
]
