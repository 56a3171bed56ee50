"""
Multi-branch network: shared stage, gated branches, heads, fusion and cascade.
"""

from colabel.network.cascade import (
    CascadeHeads,
    CascadePrediction,
    cascade_predict,
    cascade_scores,
    fused_features,
    train_cascade_heads,
)
from colabel.network.colabel_net import (
    ColabelNet,
    attention_masks,
    build_model,
    forward,
    parameter_census,
)
from colabel.network.layers import AttentionGate, Backbone, Branch, ConvStage, IdentityGate
from colabel.network.models import MODEL_HEAD, ForwardOutputs, ModelConfig, Variant

__all__ = [
    "MODEL_HEAD",
    "AttentionGate",
    "Backbone",
    "Branch",
    "CascadeHeads",
    "CascadePrediction",
    "ColabelNet",
    "ConvStage",
    "ForwardOutputs",
    "IdentityGate",
    "ModelConfig",
    "Variant",
    "attention_masks",
    "build_model",
    "cascade_predict",
    "cascade_scores",
    "forward",
    "fused_features",
    "parameter_census",
    "train_cascade_heads",
]
