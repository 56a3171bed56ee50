"""
Stage runners and the pipeline that chains them.

Every CLI subcommand is a thin wrapper over one ``run_*`` function here.
Dataset paths inside stage configurations are resolved against a data
root: the pipeline's output root when run by ``pipeline``, otherwise the
``--data`` directory (current directory by default).

When a seed is given on the command line it replaces the configuration's
seed; multi-seed ablations shift every listed seed by it.
"""

import json
import time
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from colabel.__about__ import __version__
from colabel.config import RuntimeConfig, load_json_config
from colabel.corroborate.evaluation import LADDER, ablation_ladder, write_ladder
from colabel.corroborate.integration import COVERAGE_REPORT, integrate, own_split
from colabel.corroborate.members import train_member
from colabel.corroborate.models import AblationConfig, IntegrationPlan, MemberStageConfig
from colabel.ndgrad import save_weights
from colabel.network.colabel_net import build_model
from colabel.network.models import ModelConfig, Variant
from colabel.synth.generator import generate_all, knowledgebase_from_catalog
from colabel.synth.models import AnnotationKind, DataRecord, Dataset, GenerationConfig, KnowledgeBase, Schema
from colabel.synth.storage import KNOWLEDGEBASE, load_dataset, load_knowledgebase, save_dataset, save_knowledgebase
from colabel.training.convergence import (
    CONVERGENCE_CSV,
    CONVERGENCE_JSON,
    compare_convergence,
    write_convergence_csv,
    write_convergence_json,
)
from colabel.training.correction import write_corrections
from colabel.training.evaluation import (
    CASCADE_MATCH,
    MATCH,
    EvaluationReport,
    evaluate_run,
    export_masks,
    fit_cascade,
    load_cascade,
    load_run,
    write_evaluation,
)
from colabel.training.models import NetworkAblationConfig, RunHistory, TrainStageConfig
from colabel.training.report import Report, build_report
from colabel.training.trainer import load_history, save_run, train
from colabel.utils.exceptions import ConfigurationError, MetricError, PipelineError
from colabel.utils.logging import get_stage_logger, log_operation_timing

logger = get_stage_logger("pipeline")

MEMBER_WEIGHTS = "member.ndg"
MEMBER_MANIFEST = "member_manifest.json"
PIPELINE_MANIFEST = "pipeline_manifest.json"
CORRECTION_FILES = {MATCH: "corrections.jsonl", CASCADE_MATCH: "corrections_2sc.jsonl"}

PathLike = Union[str, Path]


class Stage(str, Enum):
    """Subcommands a pipeline can chain."""

    GENERATE = "generate"
    INTEGRATE = "integrate"
    TRAIN_MEMBER = "train-member"
    TRAIN = "train"
    EVAL = "eval"
    CORRECT = "correct"
    ABLATE = "ablate"
    REPORT = "report"


class StageSpec(BaseModel):
    """
    One pipeline stage.

    Attributes:
        name: Unique stage name, also the default output subdirectory
        command: Subcommand to run
        config: Stage configuration path, relative to the pipeline file
        variant: Network variant for ``train``
        out: Output subdirectory under the output root
        run: For ``eval``/``correct``, the ``train`` stage whose run is evaluated
        inputs: For ``report``, the stages whose outputs are read
        masks: For ``eval``, export attention masks
    """

    name: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    command: Stage
    config: Optional[str] = None
    variant: Optional[Variant] = None
    out: Optional[str] = None
    run: Optional[str] = None
    inputs: List[str] = Field(default_factory=list)
    masks: bool = False

    @model_validator(mode="after")
    def validate_references(self) -> "StageSpec":
        if self.command != Stage.REPORT and self.config is None:
            raise ValueError(f"stage {self.name!r} needs a config")
        if self.command in (Stage.EVAL, Stage.CORRECT) and self.run is None:
            raise ValueError(f"stage {self.name!r} needs the train stage it evaluates")
        return self

    @property
    def directory(self) -> str:
        return self.out or self.name


class PipelineConfig(BaseModel):
    """Ordered stages, a global seed and an output root."""

    stages: List[StageSpec] = Field(min_length=1)
    seed: int = 0
    output_root: Optional[str] = None

    @field_validator("stages")
    @classmethod
    def validate_order(cls, v: List[StageSpec]) -> List[StageSpec]:
        seen: Dict[str, Stage] = {}
        for spec in v:
            if spec.name in seen:
                raise ValueError(f"duplicate stage name {spec.name!r}")
            for ref in ([spec.run] if spec.run else []) + spec.inputs:
                if ref not in seen:
                    raise ValueError(f"stage {spec.name!r} refers to {ref!r}, which does not run before it")
            if spec.run and seen[spec.run] != Stage.TRAIN:
                raise ValueError(f"stage {spec.name!r} must refer to a train stage")
            seen[spec.name] = spec.command
        return v

    def stage(self, name: str) -> StageSpec:
        for spec in self.stages:
            if spec.name == name:
                return spec
        raise PipelineError("Unknown stage", context={"stage": name, "known": [s.name for s in self.stages]})

    def check_paths(self, base: PathLike) -> None:
        """
        Raises:
            ConfigurationError: If a stage configuration file does not exist
        """
        missing = [spec.config for spec in self.stages if spec.config and not (Path(base) / spec.config).exists()]
        if missing:
            raise ConfigurationError("Pipeline refers to missing stage configurations", context={"missing": missing})


class AblateStageConfig(BaseModel):
    """The ``ablate`` stage: corroboration ladder, network variants, or both."""

    corroboration: Optional[AblationConfig] = None
    network: Optional[NetworkAblationConfig] = None

    @model_validator(mode="after")
    def validate_any(self) -> "AblateStageConfig":
        if self.corroboration is None and self.network is None:
            raise ValueError("ablate needs a corroboration or a network section")
        return self


def _write_json(payload: object, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _datasets(paths: Sequence[str], data_root: PathLike) -> List[Dataset]:
    return [load_dataset(Path(data_root) / path) for path in paths]


def _knowledgebase(path: Optional[str], data_root: PathLike, schema: Schema) -> KnowledgeBase:
    if path is None:
        return knowledgebase_from_catalog(schema)
    return load_knowledgebase(Path(data_root) / path)


def _model_config(base: ModelConfig, schema: Schema, variant: Optional[Variant]) -> ModelConfig:
    """``base`` with class counts and image size taken from the data."""
    payload = base.model_dump()
    payload["class_counts"] = {kind.value: schema.cardinality(kind.value) for kind in AnnotationKind}
    payload["image_size"] = schema.image_size
    if variant is not None:
        payload["variant"] = variant
    try:
        return ModelConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigurationError("Model configuration does not fit the data", original_error=e) from e


def run_generate(config: GenerationConfig, out: PathLike, seed: Optional[int] = None) -> Dict[str, Path]:
    """Generate every dataset into ``out/<name>`` and write ``out/knowledgebase.json``."""
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    out = Path(out)
    written = {name: save_dataset(dataset, out / name) for name, dataset in generate_all(config).items()}
    save_knowledgebase(knowledgebase_from_catalog(config.schema_), out / KNOWLEDGEBASE)
    return written


def run_integrate(
    plan: IntegrationPlan,
    data_root: PathLike,
    out: PathLike,
    seed: Optional[int] = None,
    runtime: Optional[RuntimeConfig] = None,
) -> Path:
    """Complete the plan's datasets into ``out/<name>``; returns the coverage report path."""
    if seed is not None:
        plan = plan.model_copy(update={"seed": seed})
    completed, report = integrate(_datasets(plan.datasets, data_root), plan, runtime)
    out = Path(out)
    for dataset in completed:
        save_dataset(dataset, out / dataset.name)
    return _write_json(report.model_dump(mode="json"), out / COVERAGE_REPORT)


def run_train_member(
    config: MemberStageConfig,
    data_root: PathLike,
    out: PathLike,
    seed: Optional[int] = None,
) -> Path:
    """Train one member and save its weights and manifest; returns the manifest path."""
    member_config = config.member if seed is None else config.member.model_copy(update={"seed": seed})
    source = load_dataset(Path(data_root) / config.dataset)
    validation = _datasets(config.validation_datasets, data_root)
    train_ds = source
    if not validation:
        train_ds, own = own_split(source, member_config.annotation, config.validation_fraction, member_config.seed)
        validation = [own]
    member = train_member(train_ds, validation, member_config, source.schema.cardinality(member_config.annotation))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(member.network.state_dict(), out / MEMBER_WEIGHTS)
    manifest = {
        "annotation": member.annotation,
        "kind": member.kind.value,
        "source": member.source,
        "validation": [ds.name for ds in validation],
        "n_classes": member.n_classes,
        "best_epoch": member.best_epoch,
        "stopped_epoch": member.stopped_epoch,
        "validation_scores": member.validation_scores,
        "centroids": {str(label): centroid.tolist() for label, centroid in sorted(member.centroids.items())},
        "config": member_config.model_dump(mode="json"),
    }
    return _write_json(manifest, out / MEMBER_MANIFEST)


def run_train(
    config: TrainStageConfig,
    data_root: PathLike,
    out: PathLike,
    variant: Optional[Variant] = None,
    seed: int = 0,
    progress: bool = False,
) -> RunHistory:
    """Train one network, fit cascade heads for the cascade variant, and save the run."""
    datasets = _datasets(config.datasets, data_root)
    schema = datasets[0].schema
    model = build_model(_model_config(config.model, schema, variant), seed)
    history = train(model, datasets, config.train, seed, progress=progress)
    extra: Dict[str, object] = {"cascade": False}
    if model.variant == Variant.TWO_STAGE_CASCADE:
        kb = _knowledgebase(config.knowledgebase, data_root, schema)
        records = [record for ds in datasets for record in ds.records]
        fit_cascade(model, records, kb, seed, config.train.cascade_epochs, out)
        extra["cascade"] = True
    save_run(model, history, config.train, datasets, out, extra)
    return history


def _test_records(config: TrainStageConfig, data_root: PathLike) -> List[DataRecord]:
    if not config.test_datasets:
        raise ConfigurationError("Evaluation needs test_datasets in the train configuration")
    return [record for ds in _datasets(config.test_datasets, data_root) for record in ds.records]


def run_eval(
    config: TrainStageConfig,
    data_root: PathLike,
    run_dir: PathLike,
    masks: bool = False,
) -> EvaluationReport:
    """Evaluate a saved run on the test datasets and write ``evaluation.json``."""
    model, manifest = load_run(run_dir)
    records = _test_records(config, data_root)
    schema = load_dataset(Path(data_root) / config.test_datasets[0]).schema
    kb = _knowledgebase(config.knowledgebase, data_root, schema)
    report, _ = evaluate_run(model, records, kb, load_cascade(model, kb, run_dir), config.train.match_tau,
                             int(manifest["seed"]))
    write_evaluation(report, run_dir)
    if masks:
        if model.config.has_attention:
            export_masks(model, records, run_dir)
        else:
            logger.warning("Variant has no attention gates, skipping mask export", variant=model.variant.value)
    return report


def run_correct(config: TrainStageConfig, data_root: PathLike, run_dir: PathLike) -> EvaluationReport:
    """Apply retroactive correction to a saved run and write the correction logs."""
    model, manifest = load_run(run_dir)
    records = _test_records(config, data_root)
    schema = load_dataset(Path(data_root) / config.test_datasets[0]).schema
    kb = _knowledgebase(config.knowledgebase, data_root, schema)
    report, corrections = evaluate_run(model, records, kb, load_cascade(model, kb, run_dir),
                                       config.train.match_tau, int(manifest["seed"]))
    for scheme, result in corrections.items():
        write_corrections(result.log, Path(run_dir) / CORRECTION_FILES[scheme])
    write_evaluation(report, run_dir)
    return report


def _network_job(stage_json: str, data_root: str, out: str, variant: str, seed: int) -> str:
    config = TrainStageConfig.model_validate_json(stage_json)
    run_train(config, data_root, out, Variant(variant), seed)
    if config.test_datasets:
        run_eval(config, data_root, out)
    return out


def run_ablate(
    config: AblateStageConfig,
    data_root: PathLike,
    out: PathLike,
    seed: Optional[int] = None,
    runtime: Optional[RuntimeConfig] = None,
) -> Dict[str, object]:
    """
    Run the configured ablations.

    Network runs go to ``out/network/<variant>-seed<seed>`` and are fanned
    out over processes, at most ``COLABEL_THREADS`` at a time.
    """
    runtime = runtime or RuntimeConfig()
    shift = seed or 0
    out = Path(out)
    summary: Dict[str, object] = {}

    if config.corroboration is not None:
        ablation = config.corroboration
        ablation = ablation.model_copy(update={"seeds": [s + shift for s in ablation.seeds]})
        ladder = ablation_ladder(_datasets(ablation.plan.datasets, data_root), ablation, runtime)
        summary["ladder"] = str(write_ladder(ladder, out / "corroboration" / LADDER))

    if config.network is not None:
        network = config.network
        seeds = [s + shift for s in network.seeds]
        jobs = [(variant.value, s) for s in seeds for variant in network.variants]
        stage_json = network.stage.model_dump_json()
        dirs = [str(out / "network" / f"{variant}-seed{s}") for variant, s in jobs]
        workers = min(runtime.threads, len(jobs))
        with log_operation_timing("network ablation", runs=len(jobs), workers=workers):
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as executor:
                    futures = [
                        executor.submit(_network_job, stage_json, str(data_root), run_dir, variant, s)
                        for run_dir, (variant, s) in zip(dirs, jobs)
                    ]
                    for future in futures:
                        future.result()
            else:
                for run_dir, (variant, s) in zip(dirs, jobs):
                    _network_job(stage_json, str(data_root), run_dir, variant, s)

        for s in seeds:
            histories = {
                variant.value: load_history(out / "network" / f"{variant.value}-seed{s}")
                for variant in network.variants
            }
            try:
                convergence = compare_convergence(histories)
                write_convergence_csv(convergence, out / "network" / CONVERGENCE_CSV.format(seed=s))
                write_convergence_json(convergence, out / "network" / CONVERGENCE_JSON.format(seed=s))
            except MetricError as e:
                logger.warning("Skipped convergence comparison", seed=s, reason=e.message)
        summary["runs"] = dirs
    return summary


def run_report(inputs: Sequence[PathLike], out: PathLike, variants: Optional[Sequence[str]] = None) -> Report:
    report = build_report(inputs, variants)
    report.write(out)
    return report


def run_stage(
    spec: StageSpec,
    config_dir: Path,
    out_root: Path,
    seed: int,
    runtime: RuntimeConfig,
    directories: Dict[str, Path],
) -> Path:
    """Run one pipeline stage; returns its output directory."""
    out = out_root / spec.directory
    config_path = config_dir / spec.config if spec.config else None
    if spec.command == Stage.GENERATE:
        run_generate(load_json_config(config_path, GenerationConfig), out, seed)
    elif spec.command == Stage.INTEGRATE:
        run_integrate(load_json_config(config_path, IntegrationPlan), out_root, out, seed, runtime)
    elif spec.command == Stage.TRAIN_MEMBER:
        run_train_member(load_json_config(config_path, MemberStageConfig), out_root, out, seed)
    elif spec.command == Stage.TRAIN:
        run_train(load_json_config(config_path, TrainStageConfig), out_root, out, spec.variant, seed)
    elif spec.command == Stage.EVAL:
        out = directories[spec.run]
        run_eval(load_json_config(config_path, TrainStageConfig), out_root, out, spec.masks)
    elif spec.command == Stage.CORRECT:
        out = directories[spec.run]
        run_correct(load_json_config(config_path, TrainStageConfig), out_root, out)
    elif spec.command == Stage.ABLATE:
        run_ablate(load_json_config(config_path, AblateStageConfig), out_root, out, seed, runtime)
    else:
        inputs = [directories[name] for name in spec.inputs] or [out_root]
        run_report(inputs, out)
    return out


def run_pipeline(
    config: PipelineConfig,
    config_dir: PathLike,
    out_root: Optional[PathLike] = None,
    seed: Optional[int] = None,
    only: Optional[str] = None,
    runtime: Optional[RuntimeConfig] = None,
) -> Path:
    """
    Run the stages in declared order, or only the stage named ``only``.

    Outputs of earlier stages are expected under the output root, so a
    single stage can be re-run after a full pipeline.

    Returns:
        Path of ``pipeline_manifest.json``

    Raises:
        ConfigurationError: If a stage configuration file is missing
        PipelineError: If ``only`` names no stage
    """
    runtime = runtime or RuntimeConfig()
    config_dir = Path(config_dir)
    config.check_paths(config_dir)
    root = Path(out_root or config.output_root or runtime.output_root)
    seed = config.seed if seed is None else seed
    selected = [config.stage(only)] if only else config.stages
    directories = {spec.name: root / spec.directory for spec in config.stages}

    completed = []
    for spec in selected:
        with log_operation_timing("pipeline stage", stage=spec.name, command=spec.command.value):
            run_stage(spec, config_dir, root, seed, runtime, directories)
        completed.append({"name": spec.name, "command": spec.command.value, "out": spec.directory})

    manifest = {
        "colabel_version": __version__,
        "seed": seed,
        "stages": completed,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    return _write_json(manifest, root / PIPELINE_MANIFEST)
