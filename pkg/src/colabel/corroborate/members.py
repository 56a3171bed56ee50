"""
Labeling-team members.

Color and type members are classifiers trained with cross-entropy. Make
members are embedders trained with batch-hard triplet loss; they label by
the nearest make centroid of their training embeddings. Both early-stop on
validation data from other datasets and restore their best weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from colabel.corroborate.models import ClusterModel, MemberConfig, MemberKind
from colabel.ndgrad import Adam, Linear, Module, Tensor, no_grad
from colabel.ndgrad import functional as F
from colabel.network.layers import Backbone
from colabel.synth.models import DataRecord, Dataset, stack_images
from colabel.training.losses import triplet_loss
from colabel.training.metrics import accuracy, retrieval_map
from colabel.utils.exceptions import IntegrationError, MetricError
from colabel.utils.logging import get_logger, log_operation_timing

logger = get_logger(__name__)

CROP_PAD = 2
ERASE_PROBABILITY = 0.5


class MemberNetwork(Module):
    """Backbone plus a classification head (classifiers) or a unit-norm projection (embedders)."""

    def __init__(self, config: MemberConfig, n_classes: int, rng: np.random.Generator) -> None:
        self.backbone = Backbone(
            config.stem_channels, config.stage_widths, config.feature_dim, rng, attention=False
        )
        if config.kind == MemberKind.CLASSIFIER:
            self.head = Linear(config.feature_dim, n_classes, rng)
        self._kind = config.kind

    def forward(self, x: Tensor) -> Tensor:
        features = self.backbone(x)
        if self._kind == MemberKind.CLASSIFIER:
            return self.head(features.relu())
        return F.l2_normalize(features)


@dataclass
class TeamMember:
    """
    A trained member of the labeling team for one annotation kind.

    ``training_clusters`` partitions the member's training images in the
    shared feature space; it is attached by the integration step.
    """

    annotation: str
    kind: MemberKind
    source: str
    network: MemberNetwork
    n_classes: int
    config: MemberConfig
    centroids: Dict[int, np.ndarray] = field(default_factory=dict)
    training_clusters: Optional[ClusterModel] = None
    validation_scores: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def outputs(self, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
        width = self.n_classes if self.kind == MemberKind.CLASSIFIER else self.config.feature_dim
        chunks = [np.zeros((0, width))]
        with no_grad():
            for start in range(0, len(images), batch_size):
                chunks.append(self.network(Tensor(images[start:start + batch_size])).data)
        return np.concatenate(chunks)

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        """
        N×n_classes label distribution.

        Embedders turn centroid distances into a softmax with the configured
        temperature; classes without a centroid get probability 0.
        """
        outputs = self.outputs(images)
        if self.kind == MemberKind.CLASSIFIER:
            return F.softmax(Tensor(outputs), axis=1).data
        classes = sorted(self.centroids)
        centroids = np.stack([self.centroids[label] for label in classes])
        distances = np.linalg.norm(outputs[:, None, :] - centroids[None, :, :], axis=2)
        local = F.softmax(Tensor(-distances / self.config.temperature), axis=1).data
        probabilities = np.zeros((outputs.shape[0], self.n_classes))
        probabilities[:, classes] = local
        return probabilities

    def predict(self, images: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(images), axis=1)


def augment(
    images: np.ndarray,
    rng: np.random.Generator,
    flip: bool = True,
    pad: int = CROP_PAD,
    erase_probability: float = ERASE_PROBABILITY,
) -> np.ndarray:
    """Random horizontal flip, padded random crop and random erasing on N×3×H×W."""
    out = images.copy()
    n, _, height, width = out.shape
    if flip:
        flipped = rng.random(n) < 0.5
        out[flipped] = out[flipped, :, :, ::-1]
    if pad:
        padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
        offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
        for index, (dy, dx) in enumerate(offsets):
            out[index] = padded[index, :, dy:dy + height, dx:dx + width]
    for index in np.flatnonzero(rng.random(n) < erase_probability):
        area = rng.uniform(0.02, 0.2) * height * width
        aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
        h = int(min(height, max(1, round(np.sqrt(area * aspect)))))
        w = int(min(width, max(1, round(np.sqrt(area / aspect)))))
        top = int(rng.integers(0, height - h + 1))
        left = int(rng.integers(0, width - w + 1))
        out[index, :, top:top + h, left:left + w] = out[index].mean()
    return out


def _labeled(dataset: Dataset, annotation: str) -> List[DataRecord]:
    return [record for record in dataset.records if record.has(annotation)]


def _pk_batches(labels: np.ndarray, config: MemberConfig, rng: np.random.Generator) -> List[np.ndarray]:
    """Batches of P classes × K samples for triplet mining."""
    by_class = {label: np.flatnonzero(labels == label) for label in np.unique(labels)}
    classes = np.array(sorted(by_class))
    per_batch = min(config.classes_per_batch, classes.size)
    steps = max(1, int(np.ceil(labels.size / (per_batch * config.samples_per_class))))
    batches = []
    for _ in range(steps):
        chosen = rng.choice(classes, size=per_batch, replace=False)
        rows = [
            rng.choice(by_class[label], size=config.samples_per_class, replace=by_class[label].size < config.samples_per_class)
            for label in chosen
        ]
        batches.append(np.concatenate(rows))
    return batches


def _validation_score(member: TeamMember, validation: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    scores = []
    for images, labels in validation:
        if member.kind == MemberKind.CLASSIFIER:
            scores.append(accuracy(np.argmax(member.outputs(images), axis=1), labels))
        else:
            try:
                scores.append(retrieval_map(member.outputs(images), labels))
            except MetricError:
                continue
    return float(np.mean(scores)) if scores else 0.0


def _fit_centroids(member: TeamMember, images: np.ndarray, labels: np.ndarray) -> None:
    embeddings = member.outputs(images)
    for label in np.unique(labels):
        centroid = embeddings[labels == label].mean(axis=0)
        norm = np.linalg.norm(centroid)
        member.centroids[int(label)] = centroid / norm if norm > 0 else centroid


def train_member(
    train_ds: Dataset,
    cross_val: Sequence[Dataset],
    config: MemberConfig,
    n_classes: Optional[int] = None,
) -> TeamMember:
    """
    Train one member on ``train_ds`` for ``config.annotation``.

    Validation uses the labeled records of ``cross_val``: mean accuracy for
    classifiers, mean leave-one-out mAP for embedders. With early stopping
    the member stops ``patience`` epochs after its best score and restores
    the best weights.

    Raises:
        IntegrationError: If the training set has no labels for the kind, or
            no validation set carries any
    """
    annotation = config.annotation
    records = _labeled(train_ds, annotation)
    if not records:
        raise IntegrationError("Training set has no labels", context={"dataset": train_ds.name, "kind": annotation})
    validation = []
    for ds in cross_val:
        val_records = _labeled(ds, annotation)
        if val_records:
            validation.append(
                (stack_images([r.image for r in val_records]), np.array([r.labels[annotation] for r in val_records]))
            )
    if not validation:
        raise IntegrationError("No validation sets", context={"dataset": train_ds.name, "kind": annotation})

    if config.kind == MemberKind.EMBEDDER and np.unique([r.labels[annotation] for r in records]).size < 2:
        raise IntegrationError("Embedder needs at least two classes", context={"dataset": train_ds.name})
    n_classes = n_classes or train_ds.schema.cardinality(annotation)
    rng = np.random.default_rng(config.seed)
    images = stack_images([record.image for record in records])
    labels = np.array([record.labels[annotation] for record in records], dtype=np.int64)
    member = TeamMember(
        annotation=annotation,
        kind=config.kind,
        source=train_ds.name,
        network=MemberNetwork(config, n_classes, rng),
        n_classes=n_classes,
        config=config,
    )

    train_images, train_labels = images, labels
    if config.bootstrap:
        chosen = rng.choice(labels.size, size=labels.size, replace=True)
        train_images, train_labels = images[chosen], labels[chosen]

    optimizer = Adam(member.network.parameters(), learning_rate=config.learning_rate)
    flip = config.augment and annotation in config.flip_kinds
    best_score, best_state = -np.inf, member.network.state_dict()

    with log_operation_timing("member training", source=train_ds.name, kind=annotation, samples=int(labels.size)):
        for epoch in range(config.epochs):
            if member.kind == MemberKind.EMBEDDER:
                batches = _pk_batches(train_labels, config, rng)
            else:
                order = rng.permutation(train_labels.size)
                batches = [order[start:start + config.batch_size] for start in range(0, order.size, config.batch_size)]
            for rows in batches:
                batch = augment(train_images[rows], rng, flip=flip) if config.augment else train_images[rows]
                optimizer.zero_grad()
                output = member.network(Tensor(batch))
                if member.kind == MemberKind.CLASSIFIER:
                    loss = F.cross_entropy(output, train_labels[rows])
                else:
                    loss = triplet_loss(output, train_labels[rows], config.triplet_margin)
                loss.backward()
                optimizer.step()

            score = _validation_score(member, validation)
            member.validation_scores.append(score)
            member.stopped_epoch = epoch
            if score > best_score:
                best_score, best_state, member.best_epoch = score, member.network.state_dict(), epoch
            elif config.early_stopping and epoch - member.best_epoch >= config.patience:
                break

    if config.early_stopping:
        member.network.load_state_dict(best_state)
    if member.kind == MemberKind.EMBEDDER:
        _fit_centroids(member, images, labels)
    logger.info(
        "Trained team member",
        source=train_ds.name,
        kind=annotation,
        best_epoch=member.best_epoch,
        stopped_epoch=member.stopped_epoch,
        best_score=round(float(best_score), 4),
    )
    return member
