"""
Consolidated result tables.

Scans run directories for the artifacts the other stages write (training
histories and manifests, evaluations, labeling ladders and coverage
reports) and lays them out as tables: the labeling ladder per kind,
coverage, one column per network variant, epochs to the convergence
threshold, the prediction-scheme comparison and the parameter census. Absent cells read ``n/a``; inputs
that yield nothing are listed as missing.

Output is deterministic: the same inputs give byte-identical files.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from rich.console import Console
from rich.table import Table

from colabel.corroborate.evaluation import (
    AGREEMENT,
    BOOTSTRAP,
    DYNAMIC_WEIGHTS,
    EARLY_STOP,
    INITIAL,
    LADDER,
    TEAM,
)
from colabel.corroborate.integration import COVERAGE_REPORT
from colabel.corroborate.models import CoverageReport
from colabel.network.models import Variant
from colabel.training.convergence import CONVERGENCE_GLOB
from colabel.training.evaluation import AVA, EVALUATION, SCHEMES, EvaluationReport
from colabel.training.models import RunHistory
from colabel.training.trainer import RUN_MANIFEST, load_history
from colabel.utils.exceptions import TrainingError
from colabel.utils.logging import get_logger

logger = get_logger(__name__)

MISSING_CELL = "n/a"
REPORT_MD = "report.md"

Cell = Optional[Union[float, int, str]]

_LADDER_RANK = {INITIAL: 0, BOOTSTRAP: 1, EARLY_STOP: 2, TEAM: 4, DYNAMIC_WEIGHTS: 5, AGREEMENT: 6}
_VARIANT_ORDER = [variant.value for variant in Variant]


def _ladder_key(row: str) -> tuple:
    if row.startswith("+Compression("):
        return (3, row.count(","), row)
    return (_LADDER_RANK.get(row, 7), 0, row)


def _markdown_cell(value: Cell) -> str:
    if value is None:
        return MISSING_CELL
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _csv_cell(value: Cell) -> str:
    return MISSING_CELL if value is None else str(value)


@dataclass
class ReportTable:
    """A titled table; the first cell of each row is its label."""

    name: str
    title: str
    columns: List[str]
    rows: List[List[Cell]] = field(default_factory=list)

    def markdown(self) -> str:
        lines = [
            f"## {self.title}",
            "",
            "| " + " | ".join(self.columns) + " |",
            "|" + "|".join("---" for _ in self.columns) + "|",
        ]
        lines += ["| " + " | ".join(_markdown_cell(cell) for cell in row) + " |" for row in self.rows]
        return "\n".join(lines) + "\n"

    def write_csv(self, path: Path) -> Path:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(self.columns)
            writer.writerows([[_csv_cell(cell) for cell in row] for row in self.rows])
        return path

    def rich(self) -> Table:
        table = Table(title=self.title)
        for column in self.columns:
            table.add_column(column)
        for row in self.rows:
            table.add_row(*(_markdown_cell(cell) for cell in row))
        return table


@dataclass
class TrainingRun:
    variant: str
    seed: int
    history: RunHistory
    evaluation: Optional[EvaluationReport] = None


@dataclass
class Report:
    tables: List[ReportTable] = field(default_factory=list)
    missing: List[str] = field(default_factory=list)

    def table(self, name: str) -> ReportTable:
        for table in self.tables:
            if table.name == name:
                return table
        raise KeyError(name)

    def markdown(self) -> str:
        parts = ["# Results", ""]
        parts += [table.markdown() for table in self.tables]
        if self.missing:
            parts.append("## Missing runs\n")
            parts += [f"- {entry}" for entry in self.missing]
            parts.append("")
        return "\n".join(parts)

    def write(self, out_dir: Union[str, Path]) -> Path:
        """Write ``report.md`` and one CSV per table; returns the markdown path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for table in self.tables:
            table.write_csv(out / f"{table.name}.csv")
        path = out / REPORT_MD
        path.write_text(self.markdown(), encoding="utf-8")
        logger.info("Wrote report", path=str(path), tables=len(self.tables), missing=len(self.missing))
        return path

    def render(self, console: Optional[Console] = None) -> None:
        console = console or Console()
        for table in self.tables:
            console.print(table.rich())
        for entry in self.missing:
            console.print(f"[yellow]missing:[/yellow] {entry}")


def _median(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    return float(np.median(present)) if present else None


def _load_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _training_runs(root: Path, missing: List[str]) -> List[TrainingRun]:
    runs = []
    for manifest_path in sorted(root.rglob(RUN_MANIFEST)):
        run_dir = manifest_path.parent
        try:
            history = load_history(run_dir)
        except TrainingError:
            missing.append(f"{run_dir.as_posix()}: no history")
            continue
        evaluation_path = run_dir / EVALUATION
        evaluation = (
            EvaluationReport.model_validate(_load_json(evaluation_path)) if evaluation_path.exists() else None
        )
        runs.append(TrainingRun(variant=history.variant, seed=history.seed, history=history, evaluation=evaluation))
    return runs


def _ladder_tables(paths: Sequence[Path]) -> List[ReportTable]:
    tables = []
    for index, path in enumerate(paths):
        suffix = f"_{index + 1}" if len(paths) > 1 else ""
        for kind, rows in sorted(_load_json(path)["kinds"].items()):
            table = ReportTable(
                name=f"ladder_{kind}{suffix}",
                title=f"Labeling ladder: {kind}{suffix.replace('_', ' #')}",
                columns=["Scheme", "Precision", "Coverage", "Held-out sources"],
            )
            for row in sorted(rows, key=_ladder_key):
                cell = rows[row]
                table.rows.append([row, cell["precision"], cell["coverage"], cell["holdouts"]])
            tables.append(table)
    return tables


def _coverage_tables(paths: Sequence[Path]) -> List[ReportTable]:
    tables = []
    for index, path in enumerate(paths):
        suffix = f"_{index + 1}" if len(paths) > 1 else ""
        report = CoverageReport.model_validate(_load_json(path))
        table = ReportTable(
            name=f"coverage{suffix}",
            title=f"Annotation coverage after integration{suffix.replace('_', ' #')}",
            columns=["Kind", "Labeled fraction", "Filled", "Blank", "Accepted precision"],
        )
        for kind, coverage in sorted(report.kinds.items()):
            table.rows.append(
                [kind, coverage.labeled_fraction, coverage.filled, coverage.blank, coverage.accepted_precision]
            )
        tables.append(table)
    return tables


def _by_variant(runs: Sequence[TrainingRun]) -> Dict[str, List[TrainingRun]]:
    grouped: Dict[str, List[TrainingRun]] = {}
    for run in sorted(runs, key=lambda r: (r.variant, r.seed)):
        grouped.setdefault(run.variant, []).append(run)
    return grouped


def _variant_tables(runs: Sequence[TrainingRun], variants: Sequence[str]) -> List[ReportTable]:
    grouped = _by_variant(runs)

    def column(variant: str, value: Callable[[TrainingRun], Optional[float]]) -> Cell:
        return _median([value(run) for run in grouped.get(variant, [])])

    def test_accuracy(run: TrainingRun) -> Optional[float]:
        return run.evaluation.schemes.get(AVA) if run.evaluation else None

    metrics = [
        ("Final validation accuracy (model)", lambda run: run.history.final("val_accuracy.model")),
        ("Final validation loss (total)", lambda run: run.history.final("val_loss.total")),
        ("Final training loss (total)", lambda run: run.history.final("train_loss.total")),
        ("Test accuracy (model)", test_accuracy),
    ]
    table = ReportTable(name="variants", title="Network variants (median over seeds)", columns=["Metric", *variants])
    for label, value in metrics:
        table.rows.append([label, *(column(variant, value) for variant in variants)])
    table.rows.append(["Seeds", *(len(grouped.get(variant, [])) or None for variant in variants)])

    schemes = ReportTable(name="schemes", title="Prediction schemes (test accuracy)", columns=["Variant", *SCHEMES])
    census = ReportTable(name="census", title="Parameter census", columns=["Variant", "Total", "Attention"])
    for variant in variants:
        evaluated = [run.evaluation for run in grouped.get(variant, []) if run.evaluation is not None]
        schemes.rows.append(
            [variant, *(_median([evaluation.schemes.get(scheme) for evaluation in evaluated]) for scheme in SCHEMES)]
        )
        counts = evaluated[0].census if evaluated else {}
        census.rows.append([variant, counts.get("total"), counts.get("attention")])
    return [table, schemes, census]


def _reached_count(runs: Sequence[dict]) -> Cell:
    if not runs:
        return None
    reached = sum(run["epochs_to_threshold"] is not None for run in runs)
    return f"{reached}/{len(runs)}"


def _convergence_table(paths: Sequence[Path], variants: Sequence[str]) -> Optional[ReportTable]:
    summaries = [_load_json(path) for path in paths]
    if not summaries:
        return None
    table = ReportTable(name="convergence", title="Convergence (median over seeds)", columns=["Statistic", *variants])
    for metric in sorted({summary["metric"] for summary in summaries}):
        runs: Dict[str, List[dict]] = {variant: [] for variant in variants}
        for summary in summaries:
            if summary["metric"] == metric:
                for variant, run in summary["runs"].items():
                    runs.setdefault(variant, []).append(run)
        steps = [_median([run["epochs_to_threshold"] for run in runs[v]]) for v in variants]
        thresholds = [_median([run["threshold"] for run in runs[v]]) for v in variants]
        table.rows.append([f"Epochs to threshold ({metric})", *steps])
        table.rows.append([f"Runs reaching threshold ({metric})", *(_reached_count(runs[v]) for v in variants)])
        table.rows.append([f"Threshold ({metric})", *thresholds])
    return table


def build_report(inputs: Sequence[Union[str, Path]], variants: Optional[Sequence[str]] = None) -> Report:
    """
    Collect every artifact under ``inputs`` into tables.

    Args:
        inputs: Run or output directories, searched recursively
        variants: Variant columns to show; defaults to those found. A
            requested variant without runs gets ``n/a`` cells and is
            listed as missing.
    """
    report = Report()
    runs: List[TrainingRun] = []
    ladders: List[Path] = []
    coverages: List[Path] = []
    convergences: List[Path] = []
    for entry in inputs:
        root = Path(entry)
        if not root.exists():
            report.missing.append(f"{root.as_posix()}: not found")
            continue
        found = _training_runs(root, report.missing)
        root_ladders = sorted(root.rglob(LADDER))
        root_coverages = sorted(root.rglob(COVERAGE_REPORT))
        root_convergences = sorted(root.rglob(CONVERGENCE_GLOB))
        if not (found or root_ladders or root_coverages or root_convergences):
            report.missing.append(f"{root.as_posix()}: no results")
        runs += found
        ladders += root_ladders
        coverages += root_coverages
        convergences += root_convergences

    report.tables += _ladder_tables(ladders)
    report.tables += _coverage_tables(coverages)

    present = {run.variant for run in runs}
    if variants:
        columns = list(dict.fromkeys(variants))
        report.missing += [f"variant {variant}: no runs" for variant in columns if variant not in present]
    else:
        columns = sorted(present, key=lambda v: (_VARIANT_ORDER.index(v) if v in _VARIANT_ORDER else len(_VARIANT_ORDER), v))
    if columns:
        report.tables += _variant_tables(runs, columns)
        convergence = _convergence_table(convergences, columns)
        if convergence is not None:
            report.tables.append(convergence)
    return report
