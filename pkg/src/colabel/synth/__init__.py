"""
Synthetic vehicle domain: schema, rendering, generation, JPEG and persistence.
"""

from colabel.synth.generator import generate_all, generate_dataset, knowledgebase_from_catalog
from colabel.synth.jpeg import jpeg_roundtrip, psnr
from colabel.synth.models import (
    KINDS,
    AnnotationKind,
    DataRecord,
    Dataset,
    DatasetPlan,
    DomainShift,
    GenerationConfig,
    KnowledgeBase,
    ManifestEntry,
    Schema,
    VehicleSpec,
    stack_images,
)
from colabel.synth.render import render_vehicle, vehicle_layout
from colabel.synth.storage import load_dataset, load_knowledgebase, save_dataset, save_knowledgebase

__all__ = [
    "KINDS",
    "AnnotationKind",
    "DataRecord",
    "Dataset",
    "DatasetPlan",
    "DomainShift",
    "GenerationConfig",
    "KnowledgeBase",
    "ManifestEntry",
    "Schema",
    "VehicleSpec",
    "generate_all",
    "generate_dataset",
    "jpeg_roundtrip",
    "knowledgebase_from_catalog",
    "load_dataset",
    "load_knowledgebase",
    "psnr",
    "render_vehicle",
    "save_dataset",
    "save_knowledgebase",
    "stack_images",
    "vehicle_layout",
]
