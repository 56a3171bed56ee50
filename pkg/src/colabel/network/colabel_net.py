"""
The multi-branch interpretable network and its variants.

Dataflow (all variants except SMBL and MultiInput)::

    image → shared stage → branch_k (2 gated stages, GAP, projection) → x_k
    x_k → y_k (branch head) and y_k_fused (tentative fused head)
    x_F = concat(x_k in branch order) → y_F (fusion head)

MultiInput gives every branch its own input stage instead of the shared
one. SMBL runs one backbone and puts the branch heads and the model head
side by side on its single feature. NoAtt swaps every gate for identity.
FusionOnly and TwoStageCascade share the CoLabel topology; they differ in
training.

Gate parameters draw from their own generator, so two variants built from
the same seed hold identical non-gate weights.
"""

from __future__ import annotations

from typing import Dict, Union

import numpy as np

from colabel.ndgrad import Linear, Module, Tensor, concat
from colabel.network.layers import Branch, ConvStage
from colabel.network.models import ForwardOutputs, ModelConfig, Variant
from colabel.utils.exceptions import ModelError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)

GATE_STREAM = 1
KEYED_GROUPS = {"stems", "branches", "heads", "fused_heads"}


class ColabelNet(Module):
    """Multi-branch network; build it with ``build_model``."""

    def __init__(self, config: ModelConfig, seed: int) -> None:
        self._config = config
        rng = np.random.default_rng(seed)
        gate_rng = np.random.default_rng([seed, GATE_STREAM])
        attention = config.has_attention
        width = config.shared_channels
        feature_dim = config.feature_dim

        def stage() -> ConvStage:
            return ConvStage(3, width, rng, attention, config.reduction, gate_rng)

        def branch() -> Branch:
            return Branch(width, config.stage_widths, feature_dim, rng, attention, config.reduction, gate_rng)

        if config.variant == Variant.MULTI_INPUT:
            self.stems = {kind: stage() for kind in config.branches}
        else:
            self.shared = stage()

        if config.variant == Variant.SMBL:
            self.backbone = branch()
            self.heads = {kind: Linear(feature_dim, config.class_counts[kind], rng) for kind in config.branches}
        else:
            self.branches = {kind: branch() for kind in config.branches}
            self.heads = {kind: Linear(feature_dim, config.class_counts[kind], rng) for kind in config.branches}
            self.fused_heads = {kind: Linear(feature_dim, config.n_models, rng) for kind in config.branches}
        self.fusion = Linear(config.fusion_dim, config.n_models, rng)

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def variant(self) -> Variant:
        return self._config.variant

    def forward(self, images: Union[np.ndarray, Tensor]) -> ForwardOutputs:
        return forward(self, images)


def build_model(config: ModelConfig, seed: int) -> ColabelNet:
    """
    Construct a network for ``config`` with deterministic initialization.

    Raises:
        ModelError: If the class counts do not cover every head
    """
    missing = [kind for kind in config.heads() if kind not in config.class_counts]
    if missing:
        raise ModelError("Inconsistent class counts", context={"missing": missing})
    model = ColabelNet(config, seed)
    logger.debug(
        "Built model",
        variant=config.variant.value,
        parameters=model.parameter_count(),
        seed=seed,
    )
    return model


def _as_input(model: ColabelNet, images: Union[np.ndarray, Tensor]) -> Tensor:
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
    size = model.config.image_size
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (size, size):
        raise ModelError(
            "Input does not match the model's image size",
            context={"shape": x.shape, "expected": (None, 3, size, size)},
        )
    return x


def forward(model: ColabelNet, images: Union[np.ndarray, Tensor]) -> ForwardOutputs:
    """
    Run ``model`` on an N×3×H×W batch.

    Raises:
        ModelError: If the batch does not match the configured image size
    """
    config = model.config
    x = _as_input(model, images)
    masks: Dict[str, list[np.ndarray]] = {}

    x_shared = None
    if config.variant != Variant.MULTI_INPUT:
        x_shared, shared_mask = model.shared.forward_with_mask(x)
        if shared_mask is not None:
            masks["shared"] = [shared_mask]

    if config.variant == Variant.SMBL:
        feature, backbone_masks = model.backbone.forward_with_masks(x_shared)
        if config.has_attention:
            masks["backbone"] = backbone_masks
        return ForwardOutputs(
            branches=list(config.branches),
            x_shared=x_shared,
            x_branch={},
            y_branch={kind: model.heads[kind](feature) for kind in config.branches},
            y_branch_fused={},
            x_fused=feature,
            y_fused=model.fusion(feature),
            masks=masks,
            image_size=config.image_size,
        )

    x_branch: Dict[str, Tensor] = {}
    y_branch: Dict[str, Tensor] = {}
    y_branch_fused: Dict[str, Tensor] = {}
    for kind in config.branches:
        if config.variant == Variant.MULTI_INPUT:
            branch_input, stem_mask = model.stems[kind].forward_with_mask(x)
            stem_masks = [stem_mask] if stem_mask is not None else []
        else:
            branch_input = x_shared
            stem_masks = []
        x_k, branch_masks = model.branches[kind].forward_with_masks(branch_input)
        x_branch[kind] = x_k
        y_branch[kind] = model.heads[kind](x_k)
        y_branch_fused[kind] = model.fused_heads[kind](x_k)
        if config.has_attention:
            masks[kind] = stem_masks + branch_masks

    x_fused = concat([x_branch[kind] for kind in config.branches], axis=1)
    return ForwardOutputs(
        branches=list(config.branches),
        x_shared=x_shared,
        x_branch=x_branch,
        y_branch=y_branch,
        y_branch_fused=y_branch_fused,
        x_fused=x_fused,
        y_fused=model.fusion(x_fused),
        masks=masks,
        image_size=config.image_size,
    )


def _upsample(mask: np.ndarray, size: int) -> np.ndarray:
    factor = size // mask.shape[-1]
    return np.repeat(np.repeat(mask, factor, axis=-2), factor, axis=-1)


def attention_masks(outputs: ForwardOutputs) -> Dict[str, np.ndarray]:
    """
    Per-branch spatial attention at input resolution.

    Each branch's gate masks are upsampled (nearest neighbour) to the image
    size and averaged, giving an N×H×W map with values in (0, 1). The
    shared stage's mask is reported under ``shared``.

    Raises:
        ModelError: If the outputs come from a model without attention
    """
    if not outputs.masks:
        raise ModelError("Model has no attention gates")
    maps = {}
    for owner, masks in outputs.masks.items():
        stacked = np.stack([_upsample(mask, outputs.image_size) for mask in masks])
        maps[owner] = stacked.mean(axis=0)
    return maps


def parameter_census(model: ColabelNet) -> Dict[str, int]:
    """Parameter counts: total, attention gates, and per top-level component."""
    census: Dict[str, int] = {"total": 0, "attention": 0}
    for name, param in model.named_parameters():
        census["total"] += param.size
        if ".gate." in name:
            census["attention"] += param.size
        parts = name.split(".")
        group = ".".join(parts[:2]) if parts[0] in KEYED_GROUPS else parts[0]
        census[group] = census.get(group, 0) + param.size
    return census
