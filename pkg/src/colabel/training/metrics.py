"""
Evaluation metrics: top-1 accuracy per head and retrieval mAP.
"""

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import pairwise_distances

from colabel.ndgrad import no_grad
from colabel.network.colabel_net import ColabelNet, forward
from colabel.synth.models import DataRecord, Dataset
from colabel.utils.exceptions import MetricError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)


def collect_logits(
    model: ColabelNet,
    images: np.ndarray,
    heads: Optional[Sequence[str]] = None,
    batch_size: int = 64,
) -> Dict[str, np.ndarray]:
    """Logits of ``heads`` (default: every head of the model) for an image stack."""
    heads = list(heads or model.config.heads())
    chunks: Dict[str, List[np.ndarray]] = {head: [] for head in heads}
    with no_grad():
        for start in range(0, len(images), batch_size):
            outputs = forward(model, images[start:start + batch_size])
            for head in heads:
                chunks[head].append(outputs.logits(head).data)
    return {head: np.concatenate(values) for head, values in chunks.items()}


def reference_label(record: DataRecord, head: str) -> Optional[int]:
    """The record's label for ``head``, falling back to generator ground truth."""
    label = record.label(head)
    if label is None and record.truth is not None:
        label = record.truth.get(head)
    return label


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise MetricError("Accuracy over an empty set")
    return float(np.mean(predictions == labels))


def evaluate_accuracy(model: ColabelNet, dataset: Dataset, head: str, batch_size: int = 64) -> float:
    """
    Top-1 accuracy of ``head`` over the records that have a reference label.

    Raises:
        MetricError: If the head does not exist for the model's variant or
            no record has a reference label
    """
    if head not in model.config.heads():
        raise MetricError("Head not available for this variant", context={"head": head, "variant": model.variant.value})
    records = [record for record in dataset.records if reference_label(record, head) is not None]
    if not records:
        raise MetricError("No labeled records to evaluate", context={"head": head, "dataset": dataset.name})
    logits = collect_logits(model, dataset.images(records), [head], batch_size)[head]
    labels = np.array([reference_label(record, head) for record in records])
    return accuracy(np.argmax(logits, axis=1), labels)


def average_precision(relevant: Sequence[bool]) -> float:
    """
    AP of a ranked relevance list: mean of precision@k over relevant ranks.

    Raises:
        MetricError: If nothing in the ranking is relevant
    """
    relevant = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(relevant)
    if hits.size == 0:
        raise MetricError("Average precision needs at least one relevant item")
    precision_at_hits = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precision_at_hits.mean())


def mean_average_precision(
    query_embeddings: np.ndarray,
    query_labels: Sequence[int],
    gallery_embeddings: np.ndarray,
    gallery_labels: Sequence[int],
    metric: str = "euclidean",
) -> float:
    """
    Mean over queries of the AP of the distance-ranked gallery.

    Ties in distance keep gallery order.

    Raises:
        MetricError: If a query class is absent from the gallery
    """
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    missing = sorted(set(query_labels.tolist()) - set(gallery_labels.tolist()))
    if missing:
        raise MetricError("Query classes absent from the gallery", context={"classes": missing})
    distances = pairwise_distances(
        np.asarray(query_embeddings, dtype=np.float64),
        np.asarray(gallery_embeddings, dtype=np.float64),
        metric=metric,
    )
    scores = []
    for row, label in zip(distances, query_labels):
        order = np.argsort(row, kind="stable")
        scores.append(average_precision(gallery_labels[order] == label))
    return float(np.mean(scores))


def evaluate_map(
    embed: Callable[[np.ndarray], np.ndarray],
    query_images: np.ndarray,
    query_labels: Sequence[int],
    gallery_images: np.ndarray,
    gallery_labels: Sequence[int],
    metric: str = "euclidean",
) -> float:
    """mAP of an embedder: embed query and gallery, then rank by distance."""
    score = mean_average_precision(
        embed(query_images), query_labels, embed(gallery_images), gallery_labels, metric
    )
    logger.debug("Evaluated mAP", queries=len(query_labels), gallery=len(gallery_labels), score=score)
    return score


def retrieval_map(embeddings: np.ndarray, labels: Sequence[int], metric: str = "euclidean") -> float:
    """
    Leave-one-out mAP inside one set: every sample queries all the others.

    Samples whose class has no second member are not used as queries.

    Raises:
        MetricError: If no class has two samples
    """
    labels = np.asarray(labels)
    distances = pairwise_distances(np.asarray(embeddings, dtype=np.float64), metric=metric)
    scores = []
    for index, label in enumerate(labels):
        others = np.delete(np.arange(labels.size), index)
        relevant = labels[others] == label
        if not relevant.any():
            continue
        order = np.argsort(distances[index, others], kind="stable")
        scores.append(average_precision(relevant[order]))
    if not scores:
        raise MetricError("No class has two samples", context={"samples": int(labels.size)})
    return float(np.mean(scores))
