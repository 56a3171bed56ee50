"""
Corroborative integration: labeling teams that complete missing annotations.
"""

from colabel.corroborate.clustering import cluster_overlap, distance_matrix, kmeans, o_metric_point
from colabel.corroborate.evaluation import ablation_ladder, ladder_rows, write_ladder
from colabel.corroborate.features import FrozenEmbedder
from colabel.corroborate.integration import build_team, collect_votes, decide, integrate, plan_kinds
from colabel.corroborate.members import MemberNetwork, TeamMember, augment, train_member
from colabel.corroborate.models import (
    AblationConfig,
    ClusterModel,
    CoverageReport,
    EnsembleConfig,
    FeatureConfig,
    IntegrationPlan,
    KindCoverage,
    KindPlan,
    LadderRow,
    MemberConfig,
    MemberKind,
    OverlapReport,
    Vote,
)
from colabel.corroborate.voting import (
    ensemble_label,
    ensemble_vote,
    jpeg_copies,
    majority_vote,
    member_weights,
    team_label,
    team_vote,
)

__all__ = [
    "AblationConfig",
    "ClusterModel",
    "CoverageReport",
    "EnsembleConfig",
    "FeatureConfig",
    "FrozenEmbedder",
    "IntegrationPlan",
    "KindCoverage",
    "KindPlan",
    "LadderRow",
    "MemberConfig",
    "MemberKind",
    "MemberNetwork",
    "OverlapReport",
    "TeamMember",
    "Vote",
    "ablation_ladder",
    "augment",
    "build_team",
    "cluster_overlap",
    "collect_votes",
    "decide",
    "distance_matrix",
    "ensemble_label",
    "ensemble_vote",
    "integrate",
    "jpeg_copies",
    "kmeans",
    "ladder_rows",
    "majority_vote",
    "member_weights",
    "o_metric_point",
    "plan_kinds",
    "team_label",
    "team_vote",
    "train_member",
    "write_ladder",
]
