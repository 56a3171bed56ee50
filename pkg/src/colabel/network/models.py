"""
Configuration and output models for the multi-branch network.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from colabel.ndgrad import Tensor
from colabel.synth.models import AnnotationKind, Schema


class Variant(str, Enum):
    """Network topologies and training regimes."""

    COLABEL = "CoLabel"
    FUSION_ONLY = "FusionOnly"
    MULTI_INPUT = "MultiInput"
    NO_ATT = "NoAtt"
    SMBL = "SMBL"
    TWO_STAGE_CASCADE = "TwoStageCascade"


MODEL_HEAD = AnnotationKind.MODEL.value


class ModelConfig(BaseModel):
    """
    Network configuration.

    Attributes:
        branches: Branch kinds in fusion order
        shared_channels: Width of the shared input block
        stage_widths: Widths of the two conv stages in each branch
        feature_dim: Branch feature dimension F
        class_counts: Classes per head, including ``model``
        variant: Topology / training regime
        reduction: Channel reduction of the attention gate
        image_size: Input side in pixels
    """

    branches: List[str] = Field(
        default_factory=lambda: [AnnotationKind.COLOR.value, AnnotationKind.TYPE.value, AnnotationKind.MAKE.value]
    )
    shared_channels: int = Field(default=16, ge=1)
    stage_widths: List[int] = Field(default_factory=lambda: [32, 64], min_length=1)
    feature_dim: int = Field(default=64, ge=1)
    class_counts: Dict[str, int] = Field(
        default_factory=lambda: {"color": 6, "type": 4, "make": 8, "model": 96}
    )
    variant: Variant = Variant.COLABEL
    reduction: int = Field(default=4, ge=1)
    image_size: int = Field(default=32, ge=8)

    @model_validator(mode="after")
    def validate_heads(self) -> "ModelConfig":
        missing = [kind for kind in [*self.branches, MODEL_HEAD] if kind not in self.class_counts]
        if missing:
            raise ValueError(f"class_counts lacks heads: {missing}")
        if any(count < 2 for count in self.class_counts.values()):
            raise ValueError("every head needs at least two classes")
        if len(set(self.branches)) != len(self.branches) or MODEL_HEAD in self.branches:
            raise ValueError("branches must be distinct annotation kinds other than 'model'")
        if self.image_size % 2 ** (len(self.stage_widths) + 1):
            raise ValueError("image_size must survive one halving per pooling stage")
        return self

    @classmethod
    def from_schema(cls, schema: Schema, variant: Variant = Variant.COLABEL, **overrides: object) -> "ModelConfig":
        counts = {kind.value: schema.cardinality(kind.value) for kind in AnnotationKind}
        return cls(class_counts=counts, variant=variant, image_size=schema.image_size, **overrides)

    @property
    def n_models(self) -> int:
        return self.class_counts[MODEL_HEAD]

    @property
    def has_attention(self) -> bool:
        return self.variant != Variant.NO_ATT

    @property
    def fusion_dim(self) -> int:
        if self.variant == Variant.SMBL:
            return self.feature_dim
        return len(self.branches) * self.feature_dim

    def heads(self) -> List[str]:
        """Heads a model of this variant can be evaluated on."""
        return [MODEL_HEAD, *self.branches]


@dataclass
class ForwardOutputs:
    """
    Everything a forward pass produces.

    ``x_fused`` is the concatenation of ``x_branch`` in ``branches`` order.
    For SMBL there is one shared feature: ``x_branch`` is empty,
    ``x_fused`` is that feature and ``y_branch_fused`` is empty.
    ``masks`` maps a gate owner (``shared`` or a branch kind) to the
    spatial masks of its gates, outermost first, as N×h×w arrays.
    """

    branches: List[str]
    x_shared: Optional[Tensor]
    x_branch: Dict[str, Tensor]
    y_branch: Dict[str, Tensor]
    y_branch_fused: Dict[str, Tensor]
    x_fused: Tensor
    y_fused: Tensor
    masks: Dict[str, List[np.ndarray]] = field(default_factory=dict)
    image_size: int = 32

    def logits(self, head: str) -> Tensor:
        if head == MODEL_HEAD:
            return self.y_fused
        return self.y_branch[head]

    def predictions(self, head: str) -> np.ndarray:
        return np.argmax(self.logits(head).data, axis=1)
