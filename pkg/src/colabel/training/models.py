"""
Data models for training and evaluation.

``Batch`` carries the partial-annotation masks that decide which samples
feed each branch loss; ``LossReport`` is the per-step bookkeeping;
``RunHistory`` is what a training run persists. Configuration models are
read from JSON by the CLI.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from colabel.network.models import ModelConfig, Variant
from colabel.synth.models import KINDS, DataRecord, stack_images

MISSING = -1


@dataclass
class Batch:
    """
    Images with per-kind labels and presence masks.

    Absent labels are stored as -1 and masked out; ``n_c(kind)`` is the
    size of the annotated subset of the batch for that kind.
    """

    images: np.ndarray
    labels: Dict[str, np.ndarray]
    masks: Dict[str, np.ndarray]
    ids: List[str] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Sequence[DataRecord], kinds: Sequence[str] = KINDS) -> "Batch":
        labels = {}
        masks = {}
        for kind in kinds:
            values = [record.labels.get(kind) for record in records]
            masks[kind] = np.array([value is not None for value in values], dtype=bool)
            labels[kind] = np.array([MISSING if value is None else value for value in values], dtype=np.int64)
        return cls(
            images=stack_images([record.image for record in records]),
            labels=labels,
            masks=masks,
            ids=[record.id for record in records],
        )

    @property
    def n_b(self) -> int:
        return int(self.images.shape[0])

    def n_c(self, kind: str) -> int:
        return int(self.masks[kind].sum())


@dataclass
class LossReport:
    """Loss values of one step: L_F, and L_B^k, L_H^k per branch."""

    fused: float
    branch: Dict[str, float] = field(default_factory=dict)
    harmonization: Dict[str, float] = field(default_factory=dict)
    n_b: int = 0
    n_c: Dict[str, int] = field(default_factory=dict)

    def branch_total(self, kind: str) -> float:
        """L_k = L_B^k + L_H^k."""
        return self.branch.get(kind, 0.0) + self.harmonization.get(kind, 0.0)

    @property
    def total(self) -> float:
        kinds = set(self.branch) | set(self.harmonization)
        return self.fused + sum(self.branch_total(kind) for kind in kinds)

    def as_row(self) -> Dict[str, float]:
        row = {"fused": self.fused, "total": self.total}
        for kind, value in self.branch.items():
            row[f"branch.{kind}"] = value
        for kind, value in self.harmonization.items():
            row[f"harmonization.{kind}"] = value
        return row


class LossWeights(BaseModel):
    """Multipliers of the loss terms (all 1.0 unless configured)."""

    fused: float = Field(default=1.0, ge=0.0)
    branch: float = Field(default=1.0, ge=0.0)
    harmonization: float = Field(default=1.0, ge=0.0)


class FullScaleReference(BaseModel):
    """Full-scale hyperparameters recorded next to the desk-scale ones."""

    image_size: int = 224
    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 64


class TrainConfig(BaseModel):
    """
    Training hyperparameters.

    Attributes:
        epochs: Passes over the training split
        batch_size: Mini-batch size
        learning_rate: Optimizer step size
        optimizer: "adam" or "sgd"
        validation_fraction: Share of records held out for validation
        loss_weights: Multipliers of L_F, L_B and L_H
        detach_harmonization: Treat y_F as a constant soft target in L_H
        harmonization_warmup_epochs: Epochs trained before L_H is switched on
        match_tau: Confidence ratio required to accept a retroactive correction
        cascade_epochs: Epochs for the per-make cascade heads
    """

    epochs: int = Field(default=10, ge=1, le=200)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"
    validation_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    detach_harmonization: bool = True
    harmonization_warmup_epochs: int = Field(default=0, ge=0)
    match_tau: float = Field(default=0.5, gt=0.0, le=1.0)
    cascade_epochs: int = Field(default=30, ge=1)
    full_scale: FullScaleReference = Field(default_factory=FullScaleReference)


class TrainStageConfig(BaseModel):
    """The ``train`` stage: which datasets, which network, how to train."""

    datasets: List[str] = Field(min_length=1, description="Dataset directories to train on")
    test_datasets: List[str] = Field(default_factory=list, description="Held-out dataset directories")
    knowledgebase: Optional[str] = Field(default=None, description="Path of knowledgebase.json")
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)


class EpochRecord(BaseModel):
    """Metrics of one epoch."""

    epoch: int = Field(ge=0)
    train_loss: Dict[str, float] = Field(default_factory=dict)
    val_loss: Dict[str, float] = Field(default_factory=dict)
    val_accuracy: Dict[str, float] = Field(default_factory=dict)

    def flat(self) -> Dict[str, float]:
        """Single-level mapping such as ``val_accuracy.model``."""
        row: Dict[str, float] = {"epoch": float(self.epoch)}
        for prefix, values in (
            ("train_loss", self.train_loss),
            ("val_loss", self.val_loss),
            ("val_accuracy", self.val_accuracy),
        ):
            for key, value in values.items():
                row[f"{prefix}.{key}"] = value
        return row


class RunHistory(BaseModel):
    """
    Per-epoch history of one training run.

    ``wall_clock`` is reported in the run manifest, not in the persisted
    history, so equal seeds give byte-identical history files.
    """

    variant: str
    seed: int
    epochs: List[EpochRecord] = Field(default_factory=list)
    wall_clock: float = 0.0

    def series(self, metric: str) -> List[Optional[float]]:
        """Values of a flat metric key per epoch (None where absent)."""
        return [record.flat().get(metric) for record in self.epochs]

    def final(self, metric: str) -> Optional[float]:
        values = self.series(metric)
        return values[-1] if values else None

    def columns(self) -> List[str]:
        names: List[str] = []
        for record in self.epochs:
            for key in record.flat():
                if key not in names:
                    names.append(key)
        return names


class NetworkAblationConfig(BaseModel):
    """Variants × seeds of one training stage, each trained and evaluated independently."""

    stage: TrainStageConfig
    variants: List[Variant] = Field(
        default_factory=lambda: [Variant.COLABEL, Variant.FUSION_ONLY], min_length=1
    )
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
