"""
Loss terms of the multi-branch network.

    total = L_F + Σ_k (L_B^k + L_H^k)

``L_B^k`` is cross-entropy of branch k over the samples annotated for k,
``L_H^k`` pulls the branch's tentative fused prediction toward the fused
prediction y_F, and ``L_F`` is cross-entropy of y_F against the model label.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from colabel.ndgrad import Tensor
from colabel.ndgrad import functional as F
from colabel.network.models import MODEL_HEAD, ForwardOutputs, Variant
from colabel.training.models import Batch, LossReport, LossWeights
from colabel.utils.exceptions import ShapeError, TrainingError

TRIPLET_MARGIN = 0.3

HARMONIZED = {Variant.COLABEL, Variant.MULTI_INPUT, Variant.NO_ATT, Variant.TWO_STAGE_CASCADE}


def _zero() -> Tensor:
    return Tensor(np.asarray(0.0))


def branch_loss(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """
    Cross-entropy of a branch head averaged over its annotated subset.

    When no sample of the batch carries the annotation the loss is a
    constant zero with no graph behind it.
    """
    rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    if rows.size == 0:
        return _zero()
    return F.cross_entropy(logits[rows], np.asarray(labels)[rows])


def harmonization_loss(branch_fused_logits: Tensor, fused_logits: Tensor, detach: bool = True) -> Tensor:
    """
    Cross-entropy between softmax(y_k_fused) and the soft target softmax(y_F).

    With ``detach`` the target is a constant, so no gradient reaches the
    fusion head through this term.

    Raises:
        ShapeError: If the two logit blocks differ in shape
    """
    if branch_fused_logits.shape != fused_logits.shape:
        raise ShapeError(
            "Harmonization needs matching class dimensions",
            context={"branch": branch_fused_logits.shape, "fused": fused_logits.shape},
        )
    target = F.softmax(fused_logits.detach() if detach else fused_logits, axis=1)
    return F.soft_cross_entropy(branch_fused_logits, target)


def fused_loss(fused_logits: Tensor, labels: np.ndarray) -> Tensor:
    return F.cross_entropy(fused_logits, labels)


def triplet_loss(embeddings: Tensor, labels: Sequence[int], margin: float = TRIPLET_MARGIN) -> Tensor:
    """
    Batch-hard triplet loss.

    For every anchor with at least one positive, take its farthest positive
    and nearest negative: max(0, d(a, p) − d(a, n) + margin), averaged over
    those anchors.

    Raises:
        TrainingError: If the batch has fewer than two classes or no class
            with two samples
    """
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    positives = same & ~np.eye(labels.size, dtype=bool)
    anchors = np.flatnonzero(positives.any(axis=1))
    if np.unique(labels).size < 2 or anchors.size == 0:
        raise TrainingError(
            "Triplet loss needs two classes and a repeated class",
            context={"classes": int(np.unique(labels).size), "batch": int(labels.size)},
        )

    distances = F.pairwise_euclidean(embeddings)
    values = distances.data
    hardest_positive = np.where(positives, values, -np.inf).argmax(axis=1)[anchors]
    hardest_negative = np.where(~same, values, np.inf).argmin(axis=1)[anchors]
    gap = distances[anchors, hardest_positive] - distances[anchors, hardest_negative] + margin
    return gap.relu().mean()


def compute_losses(
    outputs: ForwardOutputs,
    batch: Batch,
    variant: Variant,
    weights: Optional[LossWeights] = None,
    harmonize: bool = True,
    detach_harmonization: bool = True,
) -> Tuple[Tensor, LossReport]:
    """
    Assemble the objective of one step for ``variant``.

    CoLabel-style variants use every term, FusionOnly only L_F, SMBL L_F and
    the branch losses on its shared feature. ``harmonize=False`` switches
    L_H off (warm-up epochs). Terms a variant does not use are reported as 0.

    Raises:
        TrainingError: If a sample of the batch has no model label
    """
    weights = weights or LossWeights()
    model_mask = batch.masks.get(MODEL_HEAD)
    if model_mask is None or not model_mask.all():
        raise TrainingError("Every training sample needs a model label", context={"batch": batch.n_b})

    l_fused = fused_loss(outputs.y_fused, batch.labels[MODEL_HEAD])
    total = l_fused * weights.fused
    report = LossReport(fused=l_fused.item(), n_b=batch.n_b)

    for kind in outputs.branches:
        mask = batch.masks.get(kind, np.zeros(batch.n_b, dtype=bool))
        report.n_c[kind] = int(mask.sum())
        report.branch[kind] = 0.0
        report.harmonization[kind] = 0.0
        if variant == Variant.FUSION_ONLY:
            continue

        l_branch = branch_loss(outputs.y_branch[kind], batch.labels.get(kind, np.full(batch.n_b, -1)), mask)
        report.branch[kind] = l_branch.item()
        total = total + l_branch * weights.branch

        if variant in HARMONIZED and harmonize:
            l_harm = harmonization_loss(outputs.y_branch_fused[kind], outputs.y_fused, detach_harmonization)
            report.harmonization[kind] = l_harm.item()
            total = total + l_harm * weights.harmonization

    return total, report
