"""
JPEG-ensemble voting, team voting and overlap-based member weights.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np

from colabel.corroborate.clustering import cluster_overlap
from colabel.corroborate.members import TeamMember
from colabel.corroborate.models import ClusterModel, EnsembleConfig, Metric, Vote
from colabel.synth.jpeg import jpeg_roundtrip
from colabel.synth.models import stack_images
from colabel.utils.exceptions import OverlapError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)


def majority_vote(labels: Sequence[int], threshold: float = 0.5) -> Optional[int]:
    """The label held by more than ``threshold`` of the votes, if any."""
    if not labels:
        return None
    values, counts = np.unique(np.asarray(labels), return_counts=True)
    best = int(np.argmax(counts))
    return int(values[best]) if counts[best] > threshold * len(labels) else None


def ensemble_vote(probabilities: np.ndarray, threshold: float = 0.5) -> Optional[Vote]:
    """
    Decide from one member's distributions over the copies of an image.

    ``probabilities`` is copies × classes. The confidence of the winning
    label is its mean probability across the copies.
    """
    label = majority_vote(np.argmax(probabilities, axis=1).tolist(), threshold)
    if label is None:
        return None
    return Vote(label=label, confidence=float(probabilities[:, label].mean()))


def jpeg_copies(image: np.ndarray, quality_factors: Sequence[int]) -> List[np.ndarray]:
    """The original H×W×3 uint8 image followed by one JPEG round-trip per quality factor."""
    return [image] + [jpeg_roundtrip(image, quality) for quality in quality_factors]


def ensemble_label(member: TeamMember, image: np.ndarray, config: Optional[EnsembleConfig] = None) -> Optional[Vote]:
    """
    Label one image with a member, keeping the label only on a strict
    majority of the original and its JPEG round-trips.
    """
    config = config or EnsembleConfig()
    copies = stack_images(jpeg_copies(image, config.quality_factors))
    return ensemble_vote(member.predict_proba(copies), config.ensemble_threshold)


def team_vote(
    votes: Sequence[Optional[Vote]],
    weights: Sequence[float],
    agreement_threshold: float = 0.5,
    require_agreement: bool = True,
) -> Optional[int]:
    """
    Weighted vote of the surviving members.

    With ``require_agreement`` nothing is emitted unless the members that
    kept a label carry more than ``agreement_threshold`` of the total
    weight. The label with the largest summed weight wins; ties go to the
    larger summed confidence, then the lowest label.
    """
    total = float(sum(weights))
    surviving = [(vote, float(weight)) for vote, weight in zip(votes, weights) if vote is not None]
    if not surviving:
        return None
    if require_agreement and sum(weight for _, weight in surviving) <= agreement_threshold * total:
        return None
    support: Dict[int, List[float]] = {}
    for vote, weight in surviving:
        weight_sum, confidence_sum = support.get(vote.label, [0.0, 0.0])
        support[vote.label] = [weight_sum + weight, confidence_sum + vote.confidence]
    return min(support, key=lambda label: (-support[label][0], -support[label][1], label))


def team_label(
    team: Sequence[TeamMember],
    weights: np.ndarray,
    image: np.ndarray,
    cluster: int,
    config: Optional[EnsembleConfig] = None,
    require_agreement: bool = True,
) -> Optional[int]:
    """
    Team decision on one image that belongs to unlabeled ``cluster``.

    ``weights`` is clusters × members as returned by ``member_weights``.
    """
    config = config or EnsembleConfig()
    votes = [ensemble_label(member, image, config) for member in team]
    return team_vote(votes, weights[cluster], config.agreement_threshold, require_agreement)


def member_weights(
    unlabeled: ClusterModel,
    team: Sequence[TeamMember],
    metric: Optional[Metric] = None,
) -> np.ndarray:
    """
    clusters × members matrix of overlap weights.

    The weight of member m on unlabeled cluster i is the largest p_U of
    that cluster against any of m's training clusters. A singleton
    unlabeled cluster has no conspecific distance and gets weight 1 for
    every member.

    Raises:
        OverlapError: If a cluster is empty or a member has no training clusters
    """
    metric = metric or unlabeled.metric
    weights = np.zeros((unlabeled.l, len(team)))
    for member in team:
        if member.training_clusters is None:
            raise OverlapError("Member has no training clusters", context={"source": member.source})
    for cluster in range(unlabeled.l):
        points = unlabeled.members(cluster)
        if points.shape[0] == 0:
            raise OverlapError("Empty unlabeled cluster", context={"cluster": cluster})
        if points.shape[0] == 1:
            logger.warning("Singleton unlabeled cluster gets uniform weights", cluster=cluster)
            weights[cluster] = 1.0
            continue
        for position, member in enumerate(team):
            clusters = member.training_clusters
            weights[cluster, position] = max(
                cluster_overlap(points, clusters.members(j), metric).p_u
                for j in range(clusters.l)
                if clusters.members(j).shape[0] > 0
            )
    logger.debug("Computed member weights", clusters=unlabeled.l, members=len(team), mean=float(weights.mean()))
    return weights
