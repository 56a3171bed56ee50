"""
Data models for the synthetic vehicle domain.

The schema fixes the annotation cardinalities and the model catalog: a
model id is the injective code (make·n_types + type)·n_variants + variant.
Records carry an RGB image and one optional label per annotation kind;
an absent label is an unannotated image. Generation plans are pydantic
models so they can be read from JSON configuration files.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class AnnotationKind(str, Enum):
    """Annotation kinds carried by every record."""

    COLOR = "color"
    TYPE = "type"
    MAKE = "make"
    MODEL = "model"


KINDS: Tuple[str, ...] = tuple(kind.value for kind in AnnotationKind)


class Schema(BaseModel):
    """
    Cardinalities of the annotation kinds and the image size.

    Attributes:
        n_colors: Number of color classes
        n_types: Number of body types
        n_makes: Number of makes
        n_variants: Number of variants per (make, type) pair
        image_size: Side of the square RGB images
    """

    n_colors: int = Field(default=6, ge=2, le=12, description="Number of color classes")
    n_types: int = Field(default=4, ge=2, le=4, description="Number of body types")
    n_makes: int = Field(default=8, ge=2, le=511, description="Number of makes")
    n_variants: int = Field(default=3, ge=1, le=7, description="Variants per (make, type)")
    image_size: int = Field(default=32, ge=32, le=128, description="Image side in pixels")

    @field_validator("image_size")
    @classmethod
    def validate_image_size(cls, v: int) -> int:
        """Rendering works on a 32-pixel grid."""
        if v % 32:
            raise ValueError("image_size must be a multiple of 32")
        return v

    @property
    def n_models(self) -> int:
        return self.n_makes * self.n_types * self.n_variants

    def cardinality(self, kind: str) -> int:
        """Number of classes of an annotation kind."""
        sizes = {
            AnnotationKind.COLOR.value: self.n_colors,
            AnnotationKind.TYPE.value: self.n_types,
            AnnotationKind.MAKE.value: self.n_makes,
            AnnotationKind.MODEL.value: self.n_models,
        }
        return sizes[AnnotationKind(kind).value]

    def model_id(self, make_id: int, type_id: int, variant_id: int) -> int:
        return (make_id * self.n_types + type_id) * self.n_variants + variant_id

    def decompose(self, model_id: int) -> Tuple[int, int, int]:
        """Inverse of ``model_id``: (make_id, type_id, variant_id)."""
        rest, variant_id = divmod(model_id, self.n_variants)
        make_id, type_id = divmod(rest, self.n_types)
        return make_id, type_id, variant_id


class VehicleSpec(BaseModel):
    """
    Everything needed to render one vehicle.

    Attributes:
        color_id: Fill color class
        type_id: Body silhouette family
        make_id: Emblem glyph
        variant_id: Trim motif
        model_id: (make, type, variant) code under the schema
        dx: Horizontal translation in pixels
        dy: Vertical translation in pixels
        scale: Body scale factor
        noise_seed: Seed for color jitter and background noise
    """

    color_id: int = Field(ge=0)
    type_id: int = Field(ge=0)
    make_id: int = Field(ge=0)
    variant_id: int = Field(ge=0)
    model_id: int = Field(ge=0)
    dx: int = Field(default=0, ge=-2, le=2)
    dy: int = Field(default=0, ge=-2, le=2)
    scale: float = Field(default=1.0, ge=0.85, le=1.15)
    noise_seed: int = Field(default=0, ge=0)

    @classmethod
    def from_ids(
        cls,
        schema: Schema,
        color_id: int,
        type_id: int,
        make_id: int,
        variant_id: int,
        **pose: float,
    ) -> "VehicleSpec":
        return cls(
            color_id=color_id,
            type_id=type_id,
            make_id=make_id,
            variant_id=variant_id,
            model_id=schema.model_id(make_id, type_id, variant_id),
            **pose,
        )

    def out_of_range(self, schema: Schema) -> List[str]:
        """Names of ids that fall outside the schema (empty when valid)."""
        bad = []
        if self.color_id >= schema.n_colors:
            bad.append("color_id")
        if self.type_id >= schema.n_types:
            bad.append("type_id")
        if self.make_id >= schema.n_makes:
            bad.append("make_id")
        if self.variant_id >= schema.n_variants:
            bad.append("variant_id")
        if self.model_id != schema.model_id(self.make_id, self.type_id, self.variant_id):
            bad.append("model_id")
        return bad

    def labels(self) -> Dict[str, int]:
        return {
            AnnotationKind.COLOR.value: self.color_id,
            AnnotationKind.TYPE.value: self.type_id,
            AnnotationKind.MAKE.value: self.make_id,
            AnnotationKind.MODEL.value: self.model_id,
        }


@dataclass
class DataRecord:
    """
    One image with its optional annotations.

    ``truth`` holds the generator's full label map when known; it is used
    only to report precision and never reaches training.
    """

    id: str
    image: np.ndarray
    labels: Dict[str, Optional[int]]
    truth: Optional[Dict[str, int]] = None

    def label(self, kind: str) -> Optional[int]:
        return self.labels.get(kind)

    def has(self, kind: str) -> bool:
        return self.labels.get(kind) is not None


@dataclass
class Dataset:
    """A named list of records sharing one schema and image size."""

    name: str
    records: List[DataRecord]
    schema: Schema = field(default_factory=Schema)

    def __len__(self) -> int:
        return len(self.records)

    def coverage(self) -> Dict[str, float]:
        """Fraction of records annotated, per kind."""
        if not self.records:
            return {kind: 0.0 for kind in KINDS}
        return {
            kind: sum(record.has(kind) for record in self.records) / len(self.records)
            for kind in KINDS
        }

    def labeled(self, kind: str) -> List[DataRecord]:
        return [record for record in self.records if record.has(kind)]

    def unlabeled(self, kind: str) -> List[DataRecord]:
        return [record for record in self.records if not record.has(kind)]

    def images(self, records: Optional[List[DataRecord]] = None) -> np.ndarray:
        """Images as an N×3×H×W float array in [0, 1]."""
        chosen = self.records if records is None else records
        return stack_images([record.image for record in chosen])


def stack_images(images: List[np.ndarray]) -> np.ndarray:
    """Convert H×W×3 uint8 images into an N×3×H×W float64 batch in [0, 1]."""
    if not images:
        return np.zeros((0, 3, 0, 0))
    return np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2), dtype=np.float64) / 255.0


class KnowledgeBase(BaseModel):
    """Lookup table model_id → (make_id, type_id)."""

    entries: Dict[int, Tuple[int, int]] = Field(description="model_id → (make_id, type_id)")

    def lookup(self, model_id: int) -> Tuple[int, int]:
        return self.entries[model_id]

    def models_for(self, make_id: int, type_id: Optional[int] = None) -> List[int]:
        """Model ids of a make (optionally restricted to one type), ascending."""
        return sorted(
            model_id
            for model_id, (make, kind) in self.entries.items()
            if make == make_id and (type_id is None or kind == type_id)
        )


class DomainShift(BaseModel):
    """Per-dataset rendering conditions."""

    background: int = Field(default=40, ge=0, le=255, description="Background gray level")
    noise: float = Field(default=4.0, ge=0.0, le=32.0, description="Gaussian noise std in gray levels")
    scale_min: float = Field(default=0.85, ge=0.85, le=1.15)
    scale_max: float = Field(default=1.15, ge=0.85, le=1.15)

    @model_validator(mode="after")
    def validate_scale_range(self) -> "DomainShift":
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must not exceed scale_max")
        return self


class DatasetPlan(BaseModel):
    """
    One dataset to generate.

    Attributes:
        name: Dataset name (also its directory name)
        count: Number of records
        visibility: Which annotation kinds are kept; missing kinds default to visible
        domain: Rendering conditions for this dataset
        strict_balance: Require an exactly balanced model distribution
    """

    name: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    count: int = Field(ge=1)
    visibility: Dict[str, bool] = Field(default_factory=dict)
    domain: DomainShift = Field(default_factory=DomainShift)
    strict_balance: bool = False

    @field_validator("visibility")
    @classmethod
    def validate_visibility(cls, v: Dict[str, bool]) -> Dict[str, bool]:
        unknown = sorted(set(v) - set(KINDS))
        if unknown:
            raise ValueError(f"Unknown annotation kinds: {unknown}")
        return v

    def visible(self, kind: str) -> bool:
        return self.visibility.get(kind, True)


class GenerationConfig(BaseModel):
    """Generation configuration: schema, datasets and seed."""

    schema_: Schema = Field(default_factory=Schema, alias="schema")
    datasets: List[DatasetPlan] = Field(min_length=1)
    seed: int = 0

    model_config = ConfigDict(populate_by_name=True)

    @field_validator("datasets")
    @classmethod
    def validate_unique_names(cls, v: List[DatasetPlan]) -> List[DatasetPlan]:
        names = [plan.name for plan in v]
        if len(names) != len(set(names)):
            raise ValueError("Dataset names must be unique")
        return v


class ManifestEntry(BaseModel):
    """One line of ``manifest.jsonl``."""

    id: str = Field(min_length=1)
    image_path: str
    labels: Dict[str, Optional[int]]
    truth: Optional[Dict[str, int]] = None
