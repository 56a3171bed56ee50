"""
Dataset and knowledge-base persistence.

A dataset directory holds ``manifest.jsonl`` (one ``ManifestEntry`` per
line, absent annotations written as ``null``), the images as
``images/<id>.png`` and the schema as ``schema.json``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from pydantic import ValidationError

from colabel.synth.models import KINDS, DataRecord, Dataset, KnowledgeBase, ManifestEntry, Schema
from colabel.utils.exceptions import DatasetError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)

MANIFEST = "manifest.jsonl"
SCHEMA = "schema.json"
IMAGES = "images"
KNOWLEDGEBASE = "knowledgebase.json"


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write ``dataset`` under directory ``path`` and return the manifest path."""
    root = Path(path)
    (root / IMAGES).mkdir(parents=True, exist_ok=True)
    (root / SCHEMA).write_text(dataset.schema.model_dump_json(indent=2), encoding="utf-8")
    manifest = root / MANIFEST
    with manifest.open("w", encoding="utf-8") as handle:
        for record in dataset.records:
            image_path = f"{IMAGES}/{record.id}.png"
            Image.fromarray(record.image).save(root / image_path, format="PNG")
            entry = ManifestEntry(id=record.id, image_path=image_path, labels=record.labels, truth=record.truth)
            handle.write(entry.model_dump_json() + "\n")
    logger.info("Saved dataset", dataset=dataset.name, records=len(dataset.records), path=str(root))
    return manifest


def _check_labels(labels: dict, schema: Schema, where: dict) -> None:
    for kind, value in labels.items():
        if kind not in KINDS:
            raise DatasetError(f"Unknown annotation kind '{kind}' in manifest", context={**where, "kind": kind})
        if value is not None and not 0 <= value < schema.cardinality(kind):
            raise DatasetError(
                "Label index outside the schema",
                context={**where, "kind": kind, "value": value},
            )


def load_dataset(path: str | Path, schema: Optional[Schema] = None, name: Optional[str] = None) -> Dataset:
    """
    Read a dataset directory written by ``save_dataset``.

    Args:
        path: Dataset directory
        schema: Schema to validate against; defaults to ``schema.json`` or the default schema
        name: Dataset name; defaults to the directory name

    Raises:
        DatasetError: On a missing or malformed manifest, unknown kinds or missing images
    """
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise DatasetError("Dataset manifest not found", context={"path": str(manifest)})
    if schema is None:
        schema_path = root / SCHEMA
        schema = Schema.model_validate_json(schema_path.read_text(encoding="utf-8")) if schema_path.exists() else Schema()

    records = []
    size: Optional[tuple[int, ...]] = None
    for line_no, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        where = {"path": str(manifest), "line": line_no}
        try:
            entry = ManifestEntry.model_validate_json(line)
        except ValidationError as e:
            raise DatasetError("Malformed manifest line", context=where, original_error=e) from e
        _check_labels(entry.labels, schema, where)

        image_file = root / entry.image_path
        if not image_file.exists():
            raise DatasetError("Image file missing", context={**where, "image": str(image_file)})
        with Image.open(image_file) as img:
            image = np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
        if size is None:
            size = image.shape
        elif image.shape != size:
            raise DatasetError("Image size differs within dataset", context={**where, "shape": image.shape})

        labels = {kind: entry.labels.get(kind) for kind in KINDS}
        records.append(DataRecord(id=entry.id, image=image, labels=labels, truth=entry.truth))

    return Dataset(name=name or root.name, records=records, schema=schema)


def save_knowledgebase(kb: KnowledgeBase, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = {str(model_id): list(pair) for model_id, pair in sorted(kb.entries.items())}
    target.write_text(json.dumps({"entries": payload}, indent=2), encoding="utf-8")
    return target


def load_knowledgebase(path: str | Path) -> KnowledgeBase:
    """
    Raises:
        DatasetError: If the file is missing or invalid
    """
    source = Path(path)
    if not source.exists():
        raise DatasetError("Knowledge base not found", context={"path": str(source)})
    try:
        return KnowledgeBase.model_validate_json(source.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DatasetError("Invalid knowledge base", context={"path": str(source)}, original_error=e) from e
