"""
Dataset generation.

Specs are sampled class-balanced from the model catalog and the color
set, rendered under the dataset's own domain shift, and then each
annotation kind the plan hides is blanked. Visibility masking only
touches labels; the full label map stays on the record as ``truth``.
"""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from colabel.synth.models import (
    DataRecord,
    Dataset,
    DatasetPlan,
    GenerationConfig,
    KnowledgeBase,
    Schema,
    VehicleSpec,
)
from colabel.synth.render import render_vehicle
from colabel.utils.exceptions import DatasetError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)


def knowledgebase_from_catalog(schema: Schema) -> KnowledgeBase:
    """The model → (make, type) table induced by the schema's model code."""
    entries = {}
    for model_id in range(schema.n_models):
        make_id, type_id, _ = schema.decompose(model_id)
        entries[model_id] = (make_id, type_id)
    return KnowledgeBase(entries=entries)


def _balanced(count: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` labels with every class appearing ⌊count/classes⌋ or one more times."""
    head = np.tile(np.arange(classes), count // classes)
    # remainder classes drawn without replacement
    tail = rng.permutation(classes)[: count - head.size]
    return rng.permutation(np.concatenate([head, tail]))


def sample_specs(plan: DatasetPlan, schema: Schema, rng: np.random.Generator) -> List[VehicleSpec]:
    """Draw class-balanced specs with pose jitter for one dataset plan."""
    if plan.strict_balance and plan.count % schema.n_models:
        raise DatasetError(
            "Infeasible balance: count is not a multiple of the model catalog",
            context={"dataset": plan.name, "count": plan.count, "models": schema.n_models},
        )
    model_ids = _balanced(plan.count, schema.n_models, rng)
    color_ids = _balanced(plan.count, schema.n_colors, rng)
    shifts = rng.integers(-2, 3, size=(plan.count, 2))
    scales = rng.uniform(plan.domain.scale_min, plan.domain.scale_max, size=plan.count)
    noise_seeds = rng.integers(0, 2**31 - 1, size=plan.count)

    specs = []
    for index in range(plan.count):
        make_id, type_id, variant_id = schema.decompose(int(model_ids[index]))
        specs.append(
            VehicleSpec(
                color_id=int(color_ids[index]),
                type_id=type_id,
                make_id=make_id,
                variant_id=variant_id,
                model_id=int(model_ids[index]),
                dx=int(shifts[index, 0]),
                dy=int(shifts[index, 1]),
                scale=float(scales[index]),
                noise_seed=int(noise_seeds[index]),
            )
        )
    return specs


def generate_dataset(plan: DatasetPlan, schema: Schema, seed: int) -> Dataset:
    """
    Generate one partially annotated dataset.

    Args:
        plan: Name, count, visibility map and domain shift
        schema: Annotation cardinalities and image size
        seed: Generator seed; identical (plan, schema, seed) give identical datasets

    Returns:
        The dataset, with hidden kinds stored as absent labels

    Raises:
        DatasetError: If strict balance is requested but infeasible
    """
    rng = np.random.default_rng(seed)
    specs = sample_specs(plan, schema, rng)
    records = []
    for index, spec in enumerate(specs):
        image = render_vehicle(spec, seed, schema=schema, domain=plan.domain)
        truth = spec.labels()
        labels: Dict[str, Optional[int]] = {
            kind: (value if plan.visible(kind) else None) for kind, value in truth.items()
        }
        records.append(DataRecord(id=f"{plan.name}-{index:05d}", image=image, labels=labels, truth=truth))

    dataset = Dataset(name=plan.name, records=records, schema=schema)
    logger.info(
        "Generated dataset",
        dataset=plan.name,
        count=len(records),
        coverage=dataset.coverage(),
    )
    return dataset


def generate_all(config: GenerationConfig) -> Dict[str, Dataset]:
    """Generate every dataset of a configuration; each gets a seed derived from the config seed."""
    datasets = {}
    for offset, plan in enumerate(config.datasets):
        datasets[plan.name] = generate_dataset(plan, config.schema_, config.seed * 1000 + offset)
    return datasets
