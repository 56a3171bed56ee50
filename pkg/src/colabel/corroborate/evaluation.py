"""
Held-out ablation of the labeling pipeline.

For each source dataset of a kind, its labels are hidden and the team is
built from the remaining sources. Every rung of the ladder adds one
ingredient and reports the precision of the labels it accepts on the
held-out dataset, and the fraction it labels at all:

    Initial → +Bootstrap → +EarlyStop → +Compression(q1) → +Compression(q1,…)
    → +Team → +DynamicWeights → +Agreement

Rungs up to the compression ensembles score members one at a time and
average them; the team rungs score the team decision. Bootstrap and
dynamic-weight rungs apply to embedder kinds only.
"""

import json
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from colabel.config import RuntimeConfig
from colabel.corroborate.clustering import kmeans
from colabel.corroborate.features import FrozenEmbedder
from colabel.corroborate.integration import INTEGRABLE_KINDS, build_team
from colabel.corroborate.members import TeamMember
from colabel.corroborate.models import AblationConfig, LadderRow, MemberKind, Vote, member_kind_for
from colabel.corroborate.voting import ensemble_vote, jpeg_copies, member_weights, team_vote
from colabel.synth.models import DataRecord, Dataset, stack_images
from colabel.utils.exceptions import IntegrationError
from colabel.utils.logging import get_stage_logger, log_operation_timing

logger = get_stage_logger("ablate")

INITIAL = "Initial"
BOOTSTRAP = "+Bootstrap"
EARLY_STOP = "+EarlyStop"
TEAM = "+Team"
DYNAMIC_WEIGHTS = "+DynamicWeights"
AGREEMENT = "+Agreement"

LADDER = "ladder.json"

LadderTable = Dict[str, Dict[str, LadderRow]]


def ladder_rows(quality_factors: Sequence[int], kind: str) -> List[str]:
    """Rung names for ``kind`` in ladder order."""
    embedder = member_kind_for(kind) == MemberKind.EMBEDDER
    rows = [INITIAL]
    if embedder:
        rows.append(BOOTSTRAP)
    rows.append(EARLY_STOP)
    if quality_factors:
        rows.append(f"+Compression({quality_factors[0]})")
        if len(quality_factors) > 1:
            rows.append(f"+Compression({','.join(str(q) for q in quality_factors)})")
    rows.append(TEAM)
    if embedder:
        rows.append(DYNAMIC_WEIGHTS)
    rows.append(AGREEMENT)
    return rows


def _score(decisions: Sequence[Optional[int]], truth: np.ndarray) -> Tuple[Optional[float], float]:
    accepted = np.array([label is not None for label in decisions])
    coverage = float(accepted.mean()) if accepted.size else 0.0
    if not accepted.any():
        return None, coverage
    predicted = np.array([label for label in decisions if label is not None])
    return float(np.mean(predicted == truth[accepted])), coverage


def _labels(votes: Sequence[Optional[Vote]]) -> List[Optional[int]]:
    return [vote.label if vote is not None else None for vote in votes]


def _probabilities(member: TeamMember, copies: np.ndarray, n_records: int) -> np.ndarray:
    return member.predict_proba(copies).reshape(n_records, -1, member.n_classes)


def _member_votes(probabilities: np.ndarray, copies: int, threshold: float) -> List[Optional[Vote]]:
    return [ensemble_vote(block[:copies], threshold) for block in probabilities]


def _hidden(dataset: Dataset, kind: str) -> Tuple[List[DataRecord], np.ndarray]:
    records = [
        replace(record, labels={**record.labels, kind: None}, truth={**(record.truth or {}), kind: record.labels[kind]})
        for record in dataset.labeled(kind)
    ]
    return records, np.array([record.truth[kind] for record in records])


def _holdout(
    kind: str,
    held_out: Dataset,
    remaining: Sequence[Dataset],
    config: AblationConfig,
    seed: int,
    embedder: FrozenEmbedder,
    threads: int,
) -> Dict[str, Tuple[Optional[float], float]]:
    plan = config.plan.model_copy(update={"seed": seed})
    qualities = plan.ensemble.quality_factors
    threshold = plan.ensemble.ensemble_threshold
    embedder_kind = member_kind_for(kind) == MemberKind.EMBEDDER
    records, truth = _hidden(held_out, kind)
    copies = stack_images([copy for record in records for copy in jpeg_copies(record.image, qualities)])

    initial = plan.member.model_copy(update={"early_stopping": False, "bootstrap": False})
    staged = {INITIAL: build_team(remaining, kind, plan, embedder, initial, threads)}
    if embedder_kind:
        staged[BOOTSTRAP] = build_team(remaining, kind, plan, embedder, initial.model_copy(update={"bootstrap": True}), threads)
    final = initial.model_copy(update={"early_stopping": True, "bootstrap": embedder_kind})
    team = build_team(remaining, kind, plan, embedder, final, threads)
    staged[EARLY_STOP] = team

    results: Dict[str, Tuple[Optional[float], float]] = {}
    for row, members in staged.items():
        scores = []
        for member in members:
            votes = _member_votes(_probabilities(member, copies, len(records)), 1, threshold)
            scores.append(_score(_labels(votes), truth))
        results[row] = _average(scores)

    probabilities = [_probabilities(member, copies, len(records)) for member in team]
    rows = ladder_rows(qualities, kind)
    compression_rows = [row for row in rows if row.startswith("+Compression")]
    team_votes: List[List[Optional[Vote]]] = [_member_votes(p, 1, threshold) for p in probabilities]
    for index, row in enumerate(compression_rows):
        n_copies = 2 if index == 0 else 1 + len(qualities)
        team_votes = [_member_votes(p, n_copies, threshold) for p in probabilities]
        results[row] = _average([_score(_labels(votes), truth) for votes in team_votes])

    features = embedder.embed_records(records)
    clusters = kmeans(features, min(plan.clusters, len(records)), plan.metric, seed=seed)
    overlap = member_weights(clusters, team)
    uniform = np.ones_like(overlap)

    def team_decisions(weights: np.ndarray, agreement: bool) -> List[Optional[int]]:
        return [
            team_vote([votes[row] for votes in team_votes], weights[cluster], plan.ensemble.agreement_threshold, agreement)
            for row, cluster in enumerate(clusters.labels)
        ]

    results[TEAM] = _score(team_decisions(uniform, False), truth)
    if embedder_kind:
        results[DYNAMIC_WEIGHTS] = _score(team_decisions(overlap, False), truth)
    results[AGREEMENT] = _score(team_decisions(overlap, True), truth)
    return results


def _average(scores: Sequence[Tuple[Optional[float], float]]) -> Tuple[Optional[float], float]:
    precisions = [precision for precision, _ in scores if precision is not None]
    coverage = float(np.mean([coverage for _, coverage in scores])) if scores else 0.0
    return (float(np.mean(precisions)) if precisions else None), coverage


def ablation_ladder(
    datasets: Sequence[Dataset],
    config: AblationConfig,
    runtime: Optional[RuntimeConfig] = None,
) -> Dict[str, object]:
    """
    Run the held-out ladder for every configured kind and seed.

    Returns ``{"kinds": {kind: {row: LadderRow}}, "per_seed": {...}}`` where
    the top-level rows are medians over seeds of the per-seed means over
    held-out sources.

    Raises:
        IntegrationError: If a kind has fewer than two sources
    """
    threads = (runtime or RuntimeConfig()).threads
    embedder = FrozenEmbedder(config.plan.features)
    kinds = config.kinds or [kind for kind in INTEGRABLE_KINDS if sum(bool(ds.labeled(kind)) for ds in datasets) >= 2]
    per_seed: Dict[int, LadderTable] = {}

    for seed in config.seeds:
        table: LadderTable = {}
        for kind in kinds:
            sources = [ds for ds in datasets if ds.labeled(kind)]
            if len(sources) < 2:
                raise IntegrationError("Held-out ablation needs two sources", context={"kind": kind, "sources": len(sources)})
            with log_operation_timing("ablation ladder", kind=kind, seed=seed):
                runs = [
                    _holdout(kind, held_out, [ds for ds in sources if ds is not held_out], config, seed, embedder, threads)
                    for held_out in sources
                ]
            table[kind] = {}
            for row in ladder_rows(config.plan.ensemble.quality_factors, kind):
                precision, coverage = _average([run[row] for run in runs])
                table[kind][row] = LadderRow(precision=precision, coverage=coverage, holdouts=len(runs))
        per_seed[seed] = table

    summary: LadderTable = {}
    for kind in kinds:
        summary[kind] = {}
        for row in ladder_rows(config.plan.ensemble.quality_factors, kind):
            cells = [per_seed[seed][kind][row] for seed in config.seeds]
            precisions = [cell.precision for cell in cells if cell.precision is not None]
            summary[kind][row] = LadderRow(
                precision=float(np.median(precisions)) if precisions else None,
                coverage=float(np.median([cell.coverage for cell in cells])),
                holdouts=cells[0].holdouts,
            )
    return {"kinds": summary, "per_seed": per_seed}


def write_ladder(ladder: Dict[str, object], path: Union[str, Path]) -> Path:
    """Write ``ladder.json``."""
    def dump(table: LadderTable) -> Dict[str, Dict[str, dict]]:
        return {kind: {row: cell.model_dump() for row, cell in rows.items()} for kind, rows in table.items()}

    document = {
        "kinds": dump(ladder["kinds"]),  # type: ignore[arg-type]
        "per_seed": {str(seed): dump(table) for seed, table in ladder["per_seed"].items()},  # type: ignore[union-attr]
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
    return path
