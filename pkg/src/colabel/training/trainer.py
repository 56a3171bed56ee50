"""
Training loop over partially annotated batches.

A run shuffles with its own seeded generator, validates after every epoch
and can persist its history (``history.csv``, ``history.json``), its
weights and a ``run_manifest.json`` describing what was trained on.
"""

import csv
import hashlib
import json
import time
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from colabel.__about__ import __version__
from colabel.ndgrad import SGD, Adam, no_grad, save_weights
from colabel.network.colabel_net import ColabelNet, forward
from colabel.network.models import MODEL_HEAD
from colabel.synth.models import DataRecord, Dataset
from colabel.training.losses import compute_losses
from colabel.training.models import Batch, EpochRecord, LossReport, RunHistory, TrainConfig
from colabel.utils.exceptions import TrainingError
from colabel.utils.logging import get_logger, log_operation_timing

logger = get_logger(__name__)

HISTORY_CSV = "history.csv"
HISTORY_JSON = "history.json"
RUN_MANIFEST = "run_manifest.json"
WEIGHTS = "weights.ndg"

Optimizer = Union[SGD, Adam]


def build_optimizer(model: ColabelNet, config: TrainConfig) -> Optimizer:
    if config.optimizer == "sgd":
        return SGD(model.parameters(), learning_rate=config.learning_rate)
    return Adam(model.parameters(), learning_rate=config.learning_rate)


def split_records(
    records: Sequence[DataRecord],
    fraction: float,
    rng: np.random.Generator,
) -> Tuple[List[DataRecord], List[DataRecord]]:
    """Shuffle and split into (train, validation); validation is empty for fraction 0."""
    order = rng.permutation(len(records))
    n_val = int(round(len(records) * fraction))
    if fraction > 0 and len(records) > 1:
        n_val = min(max(n_val, 1), len(records) - 1)
    val = [records[index] for index in order[:n_val]]
    train = [records[index] for index in order[n_val:]]
    return train, val


def iterate_batches(
    records: Sequence[DataRecord],
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
) -> Iterator[Batch]:
    """Batches in shuffled order when ``rng`` is given, else in record order."""
    order = rng.permutation(len(records)) if rng is not None else np.arange(len(records))
    for start in range(0, len(records), batch_size):
        yield Batch.from_records([records[index] for index in order[start:start + batch_size]])


def total_step(
    model: ColabelNet,
    batch: Batch,
    optimizer: Optimizer,
    config: Optional[TrainConfig] = None,
    harmonize: bool = True,
) -> LossReport:
    """
    One optimizer step on the variant's objective.

    Raises:
        TrainingError: If the objective is not finite; the step is not applied
    """
    config = config or TrainConfig()
    optimizer.zero_grad()
    outputs = forward(model, batch.images)
    total, report = compute_losses(
        outputs,
        batch,
        model.variant,
        config.loss_weights,
        harmonize=harmonize,
        detach_harmonization=config.detach_harmonization,
    )
    if not total.is_finite():
        raise TrainingError(
            "Non-finite loss",
            context={"variant": model.variant.value, "losses": report.as_row(), "ids": batch.ids[:5]},
        )
    total.backward()
    optimizer.step()
    return report


def _mean_rows(rows: List[Tuple[int, Dict[str, float]]]) -> Dict[str, float]:
    totals: Dict[str, float] = {}
    count = sum(weight for weight, _ in rows)
    for weight, row in rows:
        for key, value in row.items():
            totals[key] = totals.get(key, 0.0) + weight * value
    return {key: value / count for key, value in totals.items()} if count else {}


def validate(
    model: ColabelNet,
    records: Sequence[DataRecord],
    config: TrainConfig,
    harmonize: bool = True,
) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Validation losses and per-head accuracies of ``records``."""
    losses: List[Tuple[int, Dict[str, float]]] = []
    correct: Dict[str, int] = {head: 0 for head in model.config.heads()}
    seen: Dict[str, int] = {head: 0 for head in model.config.heads()}
    with no_grad():
        for batch in iterate_batches(records, config.batch_size):
            outputs = forward(model, batch.images)
            _, report = compute_losses(
                outputs, batch, model.variant, config.loss_weights, harmonize, config.detach_harmonization
            )
            losses.append((batch.n_b, report.as_row()))
            for head in correct:
                predictions = outputs.predictions(head)
                mask = batch.masks[head]
                seen[head] += int(mask.sum())
                correct[head] += int((predictions[mask] == batch.labels[head][mask]).sum())
    accuracy = {head: correct[head] / seen[head] for head in correct if seen[head]}
    return _mean_rows(losses), accuracy


def train(
    model: ColabelNet,
    dataset: Union[Dataset, Sequence[Dataset]],
    config: TrainConfig,
    seed: int,
    out_dir: Optional[Union[str, Path]] = None,
    progress: bool = False,
) -> RunHistory:
    """
    Train ``model`` and return its per-epoch history.

    Records without a model label are skipped. With ``out_dir`` the history,
    weights and run manifest are written there.

    Raises:
        TrainingError: If no record carries a model label, or a loss turns
            non-finite
    """
    datasets = [dataset] if isinstance(dataset, Dataset) else list(dataset)
    records = [record for ds in datasets for record in ds.records if record.has(MODEL_HEAD)]
    if not records:
        raise TrainingError("Nothing to train on", context={"datasets": [ds.name for ds in datasets]})

    rng = np.random.default_rng(seed)
    train_records, val_records = split_records(records, config.validation_fraction, rng)
    optimizer = build_optimizer(model, config)
    history = RunHistory(variant=model.variant.value, seed=seed)
    started = time.perf_counter()

    with log_operation_timing("training", variant=model.variant.value, seed=seed, samples=len(train_records)):
        for epoch in tqdm(range(config.epochs), desc=model.variant.value, disable=not progress):
            harmonize = epoch >= config.harmonization_warmup_epochs
            rows = []
            for batch in iterate_batches(train_records, config.batch_size, rng):
                try:
                    report = total_step(model, batch, optimizer, config, harmonize)
                except TrainingError as e:
                    e.context["epoch"] = epoch
                    raise
                rows.append((batch.n_b, report.as_row()))
            record = EpochRecord(epoch=epoch, train_loss=_mean_rows(rows))
            if val_records:
                record.val_loss, record.val_accuracy = validate(model, val_records, config, harmonize)
            history.epochs.append(record)
            logger.info(
                "Epoch finished",
                epoch=epoch,
                train_loss=record.train_loss.get("total"),
                val_accuracy=record.val_accuracy.get(MODEL_HEAD),
            )

    history.wall_clock = time.perf_counter() - started
    if out_dir is not None:
        save_run(model, history, config, datasets, out_dir)
    return history


def dataset_hash(datasets: Sequence[Dataset]) -> str:
    """sha256 over record ids, labels and pixels."""
    digest = hashlib.sha256()
    for ds in datasets:
        digest.update(ds.name.encode("utf-8"))
        for record in ds.records:
            digest.update(record.id.encode("utf-8"))
            digest.update(json.dumps(record.labels, sort_keys=True).encode("utf-8"))
            digest.update(np.ascontiguousarray(record.image).tobytes())
    return digest.hexdigest()


def write_history(history: RunHistory, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """Write ``history.csv`` (flat columns) and ``history.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / HISTORY_CSV
    columns = history.columns()
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        for record in history.epochs:
            row = record.flat()
            row["epoch"] = record.epoch
            writer.writerow(row)
    json_path = out / HISTORY_JSON
    json_path.write_text(history.model_dump_json(indent=2, exclude={"wall_clock"}), encoding="utf-8")
    return csv_path, json_path


def load_history(run_dir: Union[str, Path]) -> RunHistory:
    path = Path(run_dir) / HISTORY_JSON
    if not path.exists():
        raise TrainingError("Run has no history", context={"path": str(path)})
    return RunHistory.model_validate_json(path.read_text(encoding="utf-8"))


def save_run(
    model: ColabelNet,
    history: RunHistory,
    config: TrainConfig,
    datasets: Sequence[Dataset],
    out_dir: Union[str, Path],
    extra: Optional[Dict[str, object]] = None,
) -> Path:
    """Persist history, weights and the run manifest; returns the manifest path."""
    out = Path(out_dir)
    write_history(history, out)
    save_weights(model.state_dict(), out / WEIGHTS)
    manifest = {
        "colabel_version": __version__,
        "variant": history.variant,
        "seed": history.seed,
        "model": model.config.model_dump(mode="json"),
        "train": config.model_dump(mode="json", exclude={"full_scale"}),
        "full_scale": config.full_scale.model_dump(mode="json"),
        "datasets": [ds.name for ds in datasets],
        "dataset_sha256": dataset_hash(datasets),
        "parameters": model.parameter_count(),
        "wall_clock_seconds": round(history.wall_clock, 3),
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    manifest.update(extra or {})
    path = out / RUN_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Saved training run", path=str(out), variant=history.variant)
    return path
