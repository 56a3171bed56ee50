"""
Data models for corroborative integration.

A labeling team for one annotation kind has one member per source dataset
that carries the annotation. Members vote on every missing label of the
other datasets; their votes are weighted by how much the unlabeled data
overlaps what they were trained on.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from colabel.synth.models import KINDS, AnnotationKind

Metric = Literal["cosine", "euclidean"]

# Kinds labeled by nearest-centroid retrieval instead of a classifier head.
EMBEDDER_KINDS = (AnnotationKind.MAKE.value,)


class MemberKind(str, Enum):
    CLASSIFIER = "classifier"
    EMBEDDER = "embedder"


def member_kind_for(annotation: str) -> MemberKind:
    return MemberKind.EMBEDDER if annotation in EMBEDDER_KINDS else MemberKind.CLASSIFIER


@dataclass
class ClusterModel:
    """
    k-means partition of a set of feature vectors.

    ``points`` and ``ids`` are the data the model was fit on; ``labels[i]``
    is the cluster of ``points[i]``. ``objective`` holds the objective after
    every Lloyd iteration.
    """

    l: int
    centroids: np.ndarray
    labels: np.ndarray
    points: np.ndarray
    ids: List[str]
    metric: Metric = "cosine"
    objective: List[float] = field(default_factory=list)

    @property
    def assignments(self) -> Dict[str, int]:
        return {record_id: int(label) for record_id, label in zip(self.ids, self.labels)}

    def members(self, cluster: int) -> np.ndarray:
        return self.points[self.labels == cluster]

    def sizes(self) -> List[int]:
        return [int(np.sum(self.labels == cluster)) for cluster in range(self.l)]


@dataclass
class OverlapReport:
    """Per-point O-metric ratios of an unlabeled cluster against a training cluster."""

    ratios: np.ndarray
    p_u: float

    @property
    def n_points(self) -> int:
        return int(self.ratios.size)


@dataclass
class Vote:
    """A member's surviving ensemble decision on one image."""

    label: int
    confidence: float


class MemberConfig(BaseModel):
    """
    How a team member is trained.

    Attributes:
        annotation: Annotation kind the member labels
        epochs: Maximum training epochs
        patience: Epochs without validation improvement before stopping
        early_stopping: Monitor cross-dataset validation and restore the best weights
        bootstrap: Resample the training set with replacement
        augment: Apply crop and random erasing (and flips where label-preserving)
        flip_kinds: Annotation kinds for which horizontal flips keep the label
    """

    annotation: str = AnnotationKind.COLOR.value
    epochs: int = Field(default=15, ge=1, le=200)
    batch_size: int = Field(default=32, ge=2)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    patience: int = Field(default=5, ge=1)
    early_stopping: bool = True
    bootstrap: bool = False
    augment: bool = True
    flip_kinds: List[str] = Field(
        default_factory=lambda: [AnnotationKind.COLOR.value, AnnotationKind.TYPE.value]
    )
    stem_channels: int = Field(default=8, ge=1)
    stage_widths: List[int] = Field(default_factory=lambda: [16, 32], min_length=1)
    feature_dim: int = Field(default=32, ge=2)
    triplet_margin: float = Field(default=0.3, gt=0.0)
    classes_per_batch: int = Field(default=8, ge=2)
    samples_per_class: int = Field(default=4, ge=2)
    temperature: float = Field(default=0.1, gt=0.0, description="Softmax temperature over centroid distances")
    seed: int = 0

    @field_validator("annotation")
    @classmethod
    def validate_annotation(cls, v: str) -> str:
        if v not in KINDS or v == AnnotationKind.MODEL.value:
            raise ValueError(f"members label color, type or make, not {v!r}")
        return v

    @property
    def kind(self) -> MemberKind:
        return member_kind_for(self.annotation)


class EnsembleConfig(BaseModel):
    """
    JPEG-ensemble and team voting rules.

    A member keeps its label only if more than ``ensemble_threshold`` of the
    copies (the original plus one JPEG round-trip per quality factor) agree.
    The team emits a label only if the surviving members carry more than
    ``agreement_threshold`` of the team's weight.
    """

    quality_factors: List[int] = Field(default_factory=lambda: [90, 70, 50])
    ensemble_threshold: float = Field(default=0.5, gt=0.0, le=1.0)
    agreement_threshold: float = Field(default=0.5, gt=0.0, le=1.0)

    @field_validator("quality_factors")
    @classmethod
    def validate_quality_factors(cls, v: List[int]) -> List[int]:
        if any(q < 1 or q > 100 for q in v):
            raise ValueError("quality factors must lie in [1, 100]")
        return v

    @property
    def n_copies(self) -> int:
        return 1 + len(self.quality_factors)


class FeatureConfig(BaseModel):
    """The frozen random convolutional embedder that feeds clustering."""

    stem_channels: int = Field(default=8, ge=1)
    stage_widths: List[int] = Field(default_factory=lambda: [16], min_length=1)
    feature_dim: int = Field(default=32, ge=2)
    seed: int = 1234


class KindPlan(BaseModel):
    """Source and target datasets of one annotation kind (by dataset name)."""

    sources: List[str] = Field(default_factory=list)
    targets: List[str] = Field(default_factory=list)


class IntegrationPlan(BaseModel):
    """
    ``integration_plan.json``: what to complete and how.

    Datasets are directories written by ``generate``. When ``kinds`` is
    empty, every kind missing somewhere is completed, with every dataset
    that carries it as a source.
    """

    datasets: List[str] = Field(min_length=1)
    kinds: Dict[str, KindPlan] = Field(default_factory=dict)
    clusters: int = Field(default=8, ge=1, description="k-means clusters per dataset (l)")
    metric: Metric = "cosine"
    member: MemberConfig = Field(default_factory=MemberConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    use_ensemble: bool = True
    dynamic_weights: bool = True
    agreement: bool = True
    single_best_member: bool = False
    validation_fraction: float = Field(default=0.2, gt=0.0, lt=1.0,
                                       description="Own-split validation share when a kind has a single source")
    seed: int = 0

    @model_validator(mode="after")
    def validate_kinds(self) -> "IntegrationPlan":
        unknown = [kind for kind in self.kinds if kind not in KINDS or kind == AnnotationKind.MODEL.value]
        if unknown:
            raise ValueError(f"cannot integrate kinds {unknown}")
        return self


class KindCoverage(BaseModel):
    """Outcome of completing one annotation kind."""

    labeled_fraction: float = Field(ge=0.0, le=1.0)
    filled: int = 0
    blank: int = 0
    missing_before: int = 0
    accepted_precision: Optional[float] = None
    per_dataset: Dict[str, float] = Field(default_factory=dict)


class CoverageReport(BaseModel):
    """``coverage_report.json``: per-kind coverage after integration."""

    kinds: Dict[str, KindCoverage] = Field(default_factory=dict)
    seed: int = 0

    def labeled_fraction(self, kind: str) -> float:
        return self.kinds[kind].labeled_fraction


class LadderRow(BaseModel):
    precision: Optional[float] = None
    coverage: float = 0.0
    holdouts: int = 0


class AblationConfig(BaseModel):
    """Held-out corroboration ablation: which kinds, over which seeds."""

    plan: IntegrationPlan
    kinds: List[str] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=lambda: [0])


class MemberStageConfig(BaseModel):
    """The ``train-member`` stage: one member, one source, cross-dataset validation."""

    dataset: str = Field(min_length=1, description="Source dataset directory")
    validation_datasets: List[str] = Field(default_factory=list)
    member: MemberConfig = Field(default_factory=MemberConfig)
    validation_fraction: float = Field(default=0.2, gt=0.0, lt=1.0,
                                       description="Own-split share when no validation dataset is given")
