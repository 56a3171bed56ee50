"""
Convergence comparison across training runs on a shared epoch grid.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from colabel.training.models import RunHistory
from colabel.utils.exceptions import MetricError

NOT_REACHED = "not reached"
DEFAULT_METRIC = "val_accuracy.model"
CONVERGENCE_CSV = "convergence-seed{seed}.csv"
CONVERGENCE_JSON = "convergence-seed{seed}.json"
CONVERGENCE_GLOB = "convergence-seed*.json"


@dataclass
class ConvergenceReport:
    """
    Per-epoch values of one metric for several runs.

    ``gaps[run][i]`` is ``values[run][i] − values[reference][i]``;
    ``epochs_to_threshold[run]`` is the first epoch meeting the threshold
    or ``NOT_REACHED``.
    """

    metric: str
    reference: str
    epochs: List[int]
    values: Dict[str, List[float]]
    gaps: Dict[str, List[float]]
    higher_is_better: bool = True
    epochs_to_threshold: Dict[str, Union[int, str]] = field(default_factory=dict)
    thresholds: Dict[str, float] = field(default_factory=dict)

    def rows(self) -> List[Dict[str, Union[int, float]]]:
        table = []
        for index, epoch in enumerate(self.epochs):
            row: Dict[str, Union[int, float]] = {"epoch": epoch}
            for run, values in self.values.items():
                row[run] = values[index]
                if run != self.reference:
                    row[f"{run}-{self.reference}"] = self.gaps[run][index]
            table.append(row)
        return table

    def summary(self) -> Dict[str, Any]:
        """Thresholds and epochs-to-threshold per run; unreached epochs are null."""
        runs = {}
        for name, series in self.values.items():
            reached = self.epochs_to_threshold.get(name, NOT_REACHED)
            runs[name] = {
                "threshold": self.thresholds.get(name),
                "epochs_to_threshold": None if reached == NOT_REACHED else reached,
                "final": series[-1] if series else None,
            }
        return {
            "metric": self.metric,
            "reference": self.reference,
            "higher_is_better": self.higher_is_better,
            "epochs": len(self.epochs),
            "runs": runs,
        }


def _first_reaching(values: List[float], threshold: float, higher_is_better: bool) -> Union[int, str]:
    for index, value in enumerate(values):
        if (value >= threshold) if higher_is_better else (value <= threshold):
            return index
    return NOT_REACHED


def compare_convergence(
    histories: Mapping[str, RunHistory],
    metric: str = DEFAULT_METRIC,
    reference: Optional[str] = None,
    threshold: Optional[float] = None,
    fraction_of_final: float = 0.9,
) -> ConvergenceReport:
    """
    Compare runs on ``metric`` epoch by epoch.

    With an absolute ``threshold`` every run is measured against it.
    Otherwise each run is measured against its own final value: accuracy
    metrics reach the threshold at ``fraction_of_final × final``, loss
    metrics (any metric named ``*loss*``) at ``final / fraction_of_final``.
    Either way the last epoch always qualifies.

    Raises:
        MetricError: If there are no runs, the epoch grids differ, a run
            lacks the metric, or ``fraction_of_final`` is outside (0, 1]
    """
    if not histories:
        raise MetricError("No runs to compare")
    if not 0.0 < fraction_of_final <= 1.0:
        raise MetricError("fraction_of_final must be in (0, 1]", context={"fraction_of_final": fraction_of_final})
    names = list(histories)
    reference = reference or names[0]
    if reference not in histories:
        raise MetricError("Unknown reference run", context={"reference": reference})

    grid = [record.epoch for record in histories[reference].epochs]
    values: Dict[str, List[float]] = {}
    for name, history in histories.items():
        epochs = [record.epoch for record in history.epochs]
        if epochs != grid:
            raise MetricError("Epoch grids differ", context={"run": name, "epochs": len(epochs), "expected": len(grid)})
        series = history.series(metric)
        if any(value is None for value in series):
            raise MetricError("Run lacks metric", context={"run": name, "metric": metric})
        values[name] = [float(value) for value in series]

    higher_is_better = "loss" not in metric
    report = ConvergenceReport(
        metric=metric,
        reference=reference,
        epochs=grid,
        values=values,
        gaps={name: [v - r for v, r in zip(series, values[reference])] for name, series in values.items()},
        higher_is_better=higher_is_better,
    )
    for name, series in values.items():
        if not series:
            report.thresholds[name] = threshold if threshold is not None else 0.0
            report.epochs_to_threshold[name] = NOT_REACHED
            continue
        if threshold is not None:
            target = threshold
        elif higher_is_better:
            target = fraction_of_final * series[-1]
        else:
            target = series[-1] / fraction_of_final
        report.thresholds[name] = target
        report.epochs_to_threshold[name] = _first_reaching(series, target, higher_is_better)
    return report


def write_convergence_csv(report: ConvergenceReport, path: Union[str, Path]) -> Path:
    """Per-epoch values and gaps as CSV, ready for plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = report.rows()
    columns = list(rows[0]) if rows else ["epoch"]
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_convergence_json(report: ConvergenceReport, path: Union[str, Path]) -> Path:
    """Write ``report.summary()``; the report stage reads these back."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
