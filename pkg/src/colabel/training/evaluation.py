"""
Evaluation of saved training runs on held-out datasets.

A run directory written by ``save_run`` is reloaded into a network, scored
per head, and compared across prediction schemes: the plain fused argmax
(AVA), retroactive correction (Match), the per-make cascade (2SC) and the
cascade with correction on top (2SC-Match).
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field

from colabel.ndgrad import load_weights, no_grad, save_weights
from colabel.network.cascade import CascadeHeads, cascade_predict, train_cascade_heads
from colabel.network.colabel_net import ColabelNet, attention_masks, build_model, forward, parameter_census
from colabel.network.models import MODEL_HEAD, ModelConfig
from colabel.synth.models import AnnotationKind, DataRecord, KnowledgeBase, stack_images
from colabel.training.correction import CorrectionResult, correct_scores
from colabel.training.metrics import accuracy, collect_logits, reference_label
from colabel.training.trainer import RUN_MANIFEST, WEIGHTS
from colabel.utils.exceptions import MetricError, TrainingError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)

EVALUATION = "evaluation.json"
CASCADE_WEIGHTS = "cascade_weights.ndg"
MASKS = "masks"

AVA = "AVA"
MATCH = "Match"
CASCADE = "2SC"
CASCADE_MATCH = "2SC-Match"
SCHEMES = (AVA, CASCADE, MATCH, CASCADE_MATCH)


class EvaluationReport(BaseModel):
    """``evaluation.json``: test accuracy per head and per prediction scheme."""

    variant: str
    seed: int
    n_test: int = 0
    tau: float = 0.5
    accuracy: Dict[str, float] = Field(default_factory=dict)
    schemes: Dict[str, float] = Field(default_factory=dict)
    changed: Dict[str, int] = Field(default_factory=dict)
    census: Dict[str, int] = Field(default_factory=dict)


def load_run(run_dir: Union[str, Path]) -> Tuple[ColabelNet, Dict[str, object]]:
    """
    Rebuild the network of a saved run and load its weights.

    Raises:
        TrainingError: If the manifest or weights are missing
    """
    root = Path(run_dir)
    manifest_path = root / RUN_MANIFEST
    if not manifest_path.exists() or not (root / WEIGHTS).exists():
        raise TrainingError("Run directory has no manifest or weights", context={"path": str(root)})
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    model = build_model(ModelConfig.model_validate(manifest["model"]), int(manifest["seed"]))
    model.load_state_dict(load_weights(root / WEIGHTS))
    return model, manifest


def fit_cascade(
    model: ColabelNet,
    records: Sequence[DataRecord],
    kb: KnowledgeBase,
    seed: int,
    epochs: int,
    out_dir: Optional[Union[str, Path]] = None,
) -> CascadeHeads:
    """Train the per-make heads on the model-labeled ``records`` and optionally save them."""
    labeled = [record for record in records if record.has(MODEL_HEAD)]
    if not labeled:
        raise TrainingError("Cascade training needs model labels")
    heads = train_cascade_heads(
        model,
        stack_images([record.image for record in labeled]),
        np.array([record.labels[MODEL_HEAD] for record in labeled]),
        kb,
        seed,
        epochs=epochs,
    )
    if out_dir is not None:
        save_weights(heads.state_dict(), Path(out_dir) / CASCADE_WEIGHTS)
    return heads


def load_cascade(model: ColabelNet, kb: KnowledgeBase, run_dir: Union[str, Path]) -> Optional[CascadeHeads]:
    """The run's cascade heads, or None when the run has none."""
    path = Path(run_dir) / CASCADE_WEIGHTS
    if not path.exists():
        return None
    heads = CascadeHeads(model.config.fusion_dim, kb, np.random.default_rng(0))
    heads.load_state_dict(load_weights(path))
    return heads


def _cascade_scores(model: ColabelNet, heads: CascadeHeads, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    chunks = [np.zeros((0, heads.n_models))]
    for start in range(0, len(images), batch_size):
        chunks.append(cascade_predict(model, heads, images[start:start + batch_size]).scores)
    return np.concatenate(chunks)


def evaluate_run(
    model: ColabelNet,
    records: Sequence[DataRecord],
    kb: Optional[KnowledgeBase] = None,
    cascade: Optional[CascadeHeads] = None,
    tau: float = 0.5,
    seed: int = 0,
) -> Tuple[EvaluationReport, Dict[str, CorrectionResult]]:
    """
    Score a network on test records.

    Per-head accuracy uses each record's label, falling back to generator
    ground truth. The model-head schemes need a model reference for every
    record; Match needs type and make branches and a knowledge base, 2SC
    needs cascade heads.

    Returns:
        The report and the correction results keyed by scheme

    Raises:
        MetricError: If no record has a model reference
    """
    records = [record for record in records if reference_label(record, MODEL_HEAD) is not None]
    if not records:
        raise MetricError("No test records with a model reference")
    images = stack_images([record.image for record in records])
    ids = [record.id for record in records]
    logits = collect_logits(model, images)
    predictions = {head: np.argmax(values, axis=1) for head, values in logits.items()}

    report = EvaluationReport(
        variant=model.variant.value,
        seed=seed,
        n_test=len(records),
        tau=tau,
        census=parameter_census(model),
    )
    for head, predicted in predictions.items():
        pairs = [(p, reference_label(r, head)) for p, r in zip(predicted, records) if reference_label(r, head) is not None]
        if pairs:
            report.accuracy[head] = accuracy(np.array([p for p, _ in pairs]), np.array([t for _, t in pairs]))

    truth = np.array([reference_label(record, MODEL_HEAD) for record in records])
    report.schemes[AVA] = accuracy(predictions[MODEL_HEAD], truth)
    corrections: Dict[str, CorrectionResult] = {}
    type_head, make_head = AnnotationKind.TYPE.value, AnnotationKind.MAKE.value
    can_match = kb is not None and type_head in predictions and make_head in predictions

    if can_match:
        result = correct_scores(logits[MODEL_HEAD], predictions[type_head], predictions[make_head], kb, tau, ids)
        corrections[MATCH] = result
        report.schemes[MATCH] = accuracy(result.predictions, truth)
        report.changed[MATCH] = result.n_changed
    if cascade is not None:
        scores = _cascade_scores(model, cascade, images)
        report.schemes[CASCADE] = accuracy(np.argmax(scores, axis=1), truth)
        if can_match:
            result = correct_scores(scores, predictions[type_head], predictions[make_head], kb, tau, ids)
            corrections[CASCADE_MATCH] = result
            report.schemes[CASCADE_MATCH] = accuracy(result.predictions, truth)
            report.changed[CASCADE_MATCH] = result.n_changed

    logger.info("Evaluated run", variant=report.variant, n_test=report.n_test, schemes=report.schemes)
    return report, corrections


def write_evaluation(report: EvaluationReport, run_dir: Union[str, Path]) -> Path:
    path = Path(run_dir) / EVALUATION
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True), encoding="utf-8")
    return path


def export_masks(
    model: ColabelNet,
    records: Sequence[DataRecord],
    out_dir: Union[str, Path],
    limit: int = 8,
) -> List[Path]:
    """
    Write each gate owner's attention map as a grayscale PNG per record.

    Files are ``<out_dir>/masks/<owner>/<record id>.png``.

    Raises:
        ModelError: If the model has no attention gates
    """
    chosen = list(records)[:limit]
    if not chosen:
        return []
    with no_grad():
        outputs = forward(model, stack_images([record.image for record in chosen]))
    written = []
    for owner, maps in attention_masks(outputs).items():
        folder = Path(out_dir) / MASKS / owner
        folder.mkdir(parents=True, exist_ok=True)
        for record, mask in zip(chosen, maps):
            path = folder / f"{record.id}.png"
            Image.fromarray(np.clip(np.round(mask * 255.0), 0, 255).astype(np.uint8), mode="L").save(path)
            written.append(path)
    logger.debug("Exported attention masks", files=len(written))
    return written
