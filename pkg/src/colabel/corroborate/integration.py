"""
Corroborative integration: complete missing annotations with labeling teams.

For every annotation kind that some datasets lack, one member is trained
per source dataset that carries it. Each target dataset's unlabeled images
are clustered in the shared feature space, members are weighted per cluster
by overlap with their training data, and the team votes on every missing
label. Existing labels are never touched; undecided labels stay blank.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from colabel.config import RuntimeConfig
from colabel.corroborate.clustering import kmeans
from colabel.corroborate.features import FrozenEmbedder
from colabel.corroborate.members import TeamMember, train_member
from colabel.corroborate.models import (
    CoverageReport,
    IntegrationPlan,
    KindCoverage,
    KindPlan,
    MemberConfig,
    Vote,
)
from colabel.corroborate.voting import ensemble_vote, jpeg_copies, member_weights, team_vote
from colabel.synth.models import AnnotationKind, DataRecord, Dataset, stack_images
from colabel.utils.exceptions import IntegrationError
from colabel.utils.logging import get_stage_logger, log_operation_timing

logger = get_stage_logger("integrate")

INTEGRABLE_KINDS = (AnnotationKind.COLOR.value, AnnotationKind.TYPE.value, AnnotationKind.MAKE.value)
COVERAGE_REPORT = "coverage_report.json"


def _derived_seed(*parts: int) -> int:
    return int(np.random.default_rng(list(parts)).integers(2**31 - 1))


def plan_kinds(datasets: Sequence[Dataset], plan: IntegrationPlan) -> Dict[str, KindPlan]:
    """
    Sources and targets per kind.

    Without explicit kinds in the plan, every kind that is missing from
    some record is completed, using every dataset that has it as a source.
    """
    if plan.kinds:
        return plan.kinds
    kinds: Dict[str, KindPlan] = {}
    for kind in INTEGRABLE_KINDS:
        sources = [ds.name for ds in datasets if ds.labeled(kind)]
        targets = [ds.name for ds in datasets if ds.unlabeled(kind)]
        if targets:
            kinds[kind] = KindPlan(sources=sources, targets=targets)
    return kinds


def own_split(dataset: Dataset, kind: str, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    records = dataset.labeled(kind)
    order = np.random.default_rng(seed).permutation(len(records))
    n_val = min(max(1, int(round(len(records) * fraction))), len(records) - 1)
    val = [records[index] for index in order[:n_val]]
    train = [records[index] for index in order[n_val:]]
    return (
        Dataset(name=dataset.name, records=train, schema=dataset.schema),
        Dataset(name=f"{dataset.name}-val", records=val, schema=dataset.schema),
    )


def build_team(
    sources: Sequence[Dataset],
    kind: str,
    plan: IntegrationPlan,
    embedder: FrozenEmbedder,
    member_config: Optional[MemberConfig] = None,
    threads: int = 1,
) -> List[TeamMember]:
    """
    Train one member per source and attach its training clusters.

    Each member validates on the other sources; a lone source validates on
    a held-out share of its own records.

    Raises:
        IntegrationError: If there is no source
    """
    if not sources:
        raise IntegrationError("No labeled source dataset for annotation kind", context={"kind": kind})
    base = (member_config or plan.member).model_copy(update={"annotation": kind})
    kind_index = INTEGRABLE_KINDS.index(kind)

    def train_one(position: int) -> TeamMember:
        source = sources[position]
        config = base.model_copy(update={"seed": _derived_seed(plan.seed, kind_index, position)})
        others = [ds for index, ds in enumerate(sources) if index != position]
        train_ds = source
        if not others:
            train_ds, val_ds = own_split(source, kind, plan.validation_fraction, config.seed)
            others = [val_ds]
        member = train_member(train_ds, others, config, source.schema.cardinality(kind))
        member.source = source.name
        labeled = source.labeled(kind)
        features = embedder.embed_records(labeled)
        member.training_clusters = kmeans(
            features,
            min(plan.clusters, len(labeled)),
            plan.metric,
            seed=config.seed,
            ids=[record.id for record in labeled],
        )
        return member

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        return list(executor.map(train_one, range(len(sources))))


@dataclass
class TargetVotes:
    """Per-member ensemble votes on the missing records of one target dataset."""

    records: List[DataRecord]
    cluster_labels: np.ndarray
    weights: np.ndarray
    votes: List[List[Optional[Vote]]]


def collect_votes(
    team: Sequence[TeamMember],
    records: Sequence[DataRecord],
    plan: IntegrationPlan,
    embedder: FrozenEmbedder,
    seed: int,
    threads: int = 1,
) -> TargetVotes:
    """Cluster ``records``, weight the team per cluster and gather every member's votes."""
    features = embedder.embed_records(list(records))
    clusters = kmeans(features, min(plan.clusters, len(records)), plan.metric, seed=seed,
                      ids=[record.id for record in records])
    if plan.dynamic_weights:
        weights = member_weights(clusters, team)
    else:
        weights = np.ones((clusters.l, len(team)))

    qualities = plan.ensemble.quality_factors if plan.use_ensemble else []
    n_copies = 1 + len(qualities)
    copies = stack_images([copy for record in records for copy in jpeg_copies(record.image, qualities)])

    def member_votes(member: TeamMember) -> List[Optional[Vote]]:
        probabilities = member.predict_proba(copies).reshape(len(records), n_copies, -1)
        return [ensemble_vote(block, plan.ensemble.ensemble_threshold) for block in probabilities]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        votes = list(executor.map(member_votes, team))
    return TargetVotes(records=list(records), cluster_labels=clusters.labels, weights=weights, votes=votes)


def decide(target: TargetVotes, plan: IntegrationPlan) -> List[Optional[int]]:
    """Team decision for every record of ``target``."""
    decisions: List[Optional[int]] = []
    for row, cluster in enumerate(target.cluster_labels):
        weights = target.weights[cluster]
        votes = [member_votes[row] for member_votes in target.votes]
        if plan.single_best_member:
            best = int(np.argmax(weights))
            votes, weights = [votes[best]], weights[[best]]
        decisions.append(team_vote(votes, weights, plan.ensemble.agreement_threshold, plan.agreement))
    return decisions


def _reference(record: DataRecord, kind: str) -> Optional[int]:
    return record.truth.get(kind) if record.truth else None


def integrate(
    datasets: Sequence[Dataset],
    plan: IntegrationPlan,
    runtime: Optional[RuntimeConfig] = None,
) -> Tuple[List[Dataset], CoverageReport]:
    """
    Complete the missing annotations of ``datasets``.

    Returns new datasets (inputs are left untouched) and the coverage
    report. Accepted-label precision is reported where records carry
    generator ground truth.

    Raises:
        IntegrationError: If a kind to complete has no labeled source
    """
    threads = (runtime or RuntimeConfig()).threads
    by_name = {ds.name: ds for ds in datasets}
    completed = {
        ds.name: Dataset(name=ds.name, records=[replace(r, labels=dict(r.labels)) for r in ds.records], schema=ds.schema)
        for ds in datasets
    }
    embedder = FrozenEmbedder(plan.features)
    report = CoverageReport(seed=plan.seed)

    for kind, kind_plan in plan_kinds(datasets, plan).items():
        sources = [by_name[name] for name in kind_plan.sources if name in by_name and by_name[name].labeled(kind)]
        if not sources:
            raise IntegrationError("No labeled source dataset for annotation kind", context={"kind": kind})
        with log_operation_timing("integration", kind=kind, sources=len(sources)):
            team = build_team(sources, kind, plan, embedder, threads=threads)
            filled = blank = missing = correct = judged = 0
            for target_index, name in enumerate(kind_plan.targets):
                target = completed.get(name)
                if target is None:
                    raise IntegrationError("Unknown target dataset", context={"kind": kind, "dataset": name})
                pending = target.unlabeled(kind)
                if not pending:
                    continue
                missing += len(pending)
                seed = _derived_seed(plan.seed, INTEGRABLE_KINDS.index(kind), 1000 + target_index)
                decisions = decide(collect_votes(team, pending, plan, embedder, seed, threads), plan)
                for record, label in zip(pending, decisions):
                    if label is None:
                        blank += 1
                        continue
                    record.labels[kind] = label
                    filled += 1
                    truth = _reference(record, kind)
                    if truth is not None:
                        judged += 1
                        correct += int(truth == label)
                logger.info("Completed target", kind=kind, dataset=name, missing=len(pending),
                            filled=sum(label is not None for label in decisions))

        total = sum(len(ds) for ds in completed.values())
        labeled = sum(len(ds.labeled(kind)) for ds in completed.values())
        report.kinds[kind] = KindCoverage(
            labeled_fraction=labeled / total if total else 1.0,
            filled=filled,
            blank=blank,
            missing_before=missing,
            accepted_precision=correct / judged if judged else None,
            per_dataset={name: ds.coverage().get(kind, 0.0) for name, ds in completed.items()},
        )

    for kind in INTEGRABLE_KINDS:
        if kind not in report.kinds:
            total = sum(len(ds) for ds in completed.values())
            labeled = sum(len(ds.labeled(kind)) for ds in completed.values())
            report.kinds[kind] = KindCoverage(labeled_fraction=labeled / total if total else 1.0)

    logger.info("Integration finished", coverage={k: round(v.labeled_fraction, 4) for k, v in report.kinds.items()})
    return [completed[ds.name] for ds in datasets], report
