"""Tests for the command-line surface and the stage pipeline."""

import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from colabel.config import LoggingConfig, load_config, load_json_config
from colabel.corroborate.models import IntegrationPlan, MemberStageConfig
from colabel.main import dispatch
from colabel.pipeline import (
    MEMBER_MANIFEST,
    MEMBER_WEIGHTS,
    PIPELINE_MANIFEST,
    AblateStageConfig,
    PipelineConfig,
    run_ablate,
    run_pipeline,
    run_report,
    run_train_member,
)
from colabel.network.models import Variant
from colabel.synth.models import GenerationConfig
from colabel.synth.storage import KNOWLEDGEBASE, MANIFEST, save_dataset, save_knowledgebase
from colabel.training.models import TrainStageConfig
from colabel.utils.exceptions import ConfigurationError, DatasetError, PipelineError
from colabel.utils.logging import get_stage_logger, log_error, log_operation_timing, setup_logging


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("COLABEL_THREADS", "1")
    monkeypatch.setenv("COLABEL_OUTPUT_ROOT", str(tmp_path / "runs"))


def _write(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


TINY_SCHEMA = {"n_colors": 3, "n_types": 2, "n_makes": 3, "n_variants": 2, "image_size": 32}
TINY_MEMBER = {"epochs": 2, "patience": 1, "stem_channels": 4, "stage_widths": [4], "feature_dim": 8,
               "classes_per_batch": 3, "samples_per_class": 2}
TINY_FEATURES = {"stem_channels": 4, "stage_widths": [4], "feature_dim": 8}


def _tiny_configs(root):
    _write(root / "generate.json", {
        "schema": TINY_SCHEMA,
        "seed": 5,
        "datasets": [
            {"name": "alpha", "count": 24, "visibility": {"type": False}},
            {"name": "beta", "count": 24, "visibility": {"color": False}},
            {"name": "gamma", "count": 24, "visibility": {"make": False}},
            {"name": "test", "count": 24},
        ],
    })
    _write(root / "integrate.json", {
        "datasets": ["data/alpha", "data/beta", "data/gamma"],
        "clusters": 3,
        "member": TINY_MEMBER,
        "ensemble": {"quality_factors": [90, 50]},
        "features": TINY_FEATURES,
    })
    _write(root / "train.json", {
        "datasets": ["integrated/alpha", "integrated/beta", "integrated/gamma"],
        "test_datasets": ["data/test"],
        "knowledgebase": "data/knowledgebase.json",
        "model": {"shared_channels": 4, "stage_widths": [4, 8], "feature_dim": 8},
        "train": {"epochs": 1, "batch_size": 16, "cascade_epochs": 2},
    })
    return _write(root / "pipeline.json", {
        "seed": 0,
        "stages": [
            {"name": "data", "command": "generate", "config": "generate.json"},
            {"name": "integrated", "command": "integrate", "config": "integrate.json"},
            {"name": "train", "command": "train", "config": "train.json", "variant": "TwoStageCascade"},
            {"name": "eval", "command": "eval", "config": "train.json", "run": "train"},
            {"name": "correct", "command": "correct", "config": "train.json", "run": "train"},
            {"name": "report", "command": "report", "inputs": ["integrated", "train"]},
        ],
    })


BUNDLED = Path(__file__).resolve().parents[1] / "configs" / "small"


def test_bundled_configs_validate():
    pipeline = load_json_config(BUNDLED / "pipeline.json", PipelineConfig)
    pipeline.check_paths(BUNDLED)
    load_json_config(BUNDLED / "generate.json", GenerationConfig)
    load_json_config(BUNDLED / "integrate.json", IntegrationPlan)
    load_json_config(BUNDLED / "member.json", MemberStageConfig)
    load_json_config(BUNDLED / "train.json", TrainStageConfig)

    ablate = load_json_config(BUNDLED / "ablate.json", AblateStageConfig)
    assert ablate.network.variants == list(Variant)
    assert len(ablate.network.seeds) == 5
    assert len(ablate.corroboration.seeds) == 5

def test_help_exits_cleanly():
    assert dispatch(["--help"]) == 0
    assert dispatch(["train", "--help"]) == 0


def test_usage_errors_exit_with_one():
    assert dispatch([]) == 1
    assert dispatch(["frobnicate"]) == 1
    assert dispatch(["train", "--config", "x.json", "--variant", "Nope"]) == 1


def test_missing_or_invalid_config_exits_with_one(tmp_path):
    assert dispatch(["generate", "--config", str(tmp_path / "missing.json")]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert dispatch(["generate", "--config", str(broken)]) == 1
    invalid = _write(tmp_path / "invalid.json", {"datasets": []})
    assert dispatch(["generate", "--config", str(invalid)]) == 1


def test_missing_dataset_exits_with_one(tmp_path):
    config = _write(tmp_path / "integrate.json", {"datasets": ["nowhere"]})
    assert dispatch(["integrate", "--config", str(config), "--data", str(tmp_path)]) == 1


def test_generate_command(tmp_path):
    _tiny_configs(tmp_path)
    out = tmp_path / "data"
    assert dispatch(["generate", "--config", str(tmp_path / "generate.json"), "--out", str(out), "--seed", "2"]) == 0
    for name in ("alpha", "beta", "gamma", "test"):
        assert (out / name / MANIFEST).exists()
    assert (out / KNOWLEDGEBASE).exists()


def test_train_member_with_own_split(tmp_path, tiny_datasets):
    save_dataset(tiny_datasets["alpha"], tmp_path / "data" / "alpha")
    config = MemberStageConfig(dataset="data/alpha", member=TINY_MEMBER | {"annotation": "color"})
    manifest_path = run_train_member(config, tmp_path, tmp_path / "member", seed=4)

    manifest = json.loads(manifest_path.read_text())
    assert manifest["source"] == "alpha"
    assert manifest["validation"] == ["alpha-val"]
    assert manifest["config"]["seed"] == 4
    assert manifest["centroids"] == {}
    assert (tmp_path / "member" / MEMBER_WEIGHTS).exists()
    assert manifest_path.name == MEMBER_MANIFEST


def test_pipeline_config_validation():
    with pytest.raises(ValidationError):
        PipelineConfig(stages=[])
    with pytest.raises(ValidationError):
        PipelineConfig(stages=[
            {"name": "a", "command": "generate", "config": "g.json"},
            {"name": "a", "command": "generate", "config": "g.json"},
        ])
    with pytest.raises(ValidationError):
        PipelineConfig(stages=[{"name": "eval", "command": "eval", "config": "t.json", "run": "train"}])
    with pytest.raises(ValidationError):
        PipelineConfig(stages=[
            {"name": "data", "command": "generate", "config": "g.json"},
            {"name": "eval", "command": "eval", "config": "t.json", "run": "data"},
        ])
    with pytest.raises(ValidationError):
        PipelineConfig(stages=[{"name": "train", "command": "train"}])
    with pytest.raises(ValidationError):
        AblateStageConfig()


def test_pipeline_path_and_stage_errors(tmp_path):
    config = PipelineConfig(stages=[{"name": "data", "command": "generate", "config": "absent.json"}])
    with pytest.raises(ConfigurationError):
        run_pipeline(config, tmp_path, tmp_path / "out")

    _tiny_configs(tmp_path)
    config = PipelineConfig.model_validate_json((tmp_path / "pipeline.json").read_text())
    with pytest.raises(PipelineError):
        run_pipeline(config, tmp_path, tmp_path / "out", only="nope")


def test_single_stage_run(tmp_path):
    pipeline = _tiny_configs(tmp_path)
    out = tmp_path / "out"
    assert dispatch(["pipeline", "--config", str(pipeline), "--out", str(out), "--stage", "data"]) == 0
    manifest = json.loads((out / PIPELINE_MANIFEST).read_text())
    assert [stage["name"] for stage in manifest["stages"]] == ["data"]
    assert (out / "data" / "alpha" / MANIFEST).exists()


def test_report_on_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    report = run_report([tmp_path / "empty"], tmp_path / "report", ["CoLabel"])
    assert any("no results" in entry for entry in report.missing)
    assert "variant CoLabel: no runs" in report.missing
    text = (tmp_path / "report" / "report.md").read_text()
    assert "n/a" in text
    assert dispatch(["report", str(tmp_path / "empty"), "--out", str(tmp_path / "report2")]) == 0


@pytest.mark.slow
def test_pipeline_end_to_end_is_deterministic(tmp_path):
    pipeline = _tiny_configs(tmp_path)
    for out in ("first", "second"):
        assert dispatch(["pipeline", "--config", str(pipeline), "--out", str(tmp_path / out)]) == 0

    for relative in (
        "integrated/coverage_report.json",
        "train/evaluation.json",
        "train/corrections.jsonl",
        "train/history.json",
        "report/variants.csv",
    ):
        first = (tmp_path / "first" / relative).read_bytes()
        assert first == (tmp_path / "second" / relative).read_bytes(), relative

    evaluation = json.loads((tmp_path / "first" / "train" / "evaluation.json").read_text())
    assert set(evaluation["schemes"]) == {"AVA", "Match", "2SC", "2SC-Match"}
    coverage = json.loads((tmp_path / "first" / "integrated" / "coverage_report.json").read_text())
    assert set(coverage["kinds"]) == {"color", "type", "make"}


def test_runtime_failure_exits_with_two(tmp_path, mocker):
    _tiny_configs(tmp_path)
    mocker.patch("colabel.main.run_generate", side_effect=RuntimeError("disk full"))
    assert dispatch(["generate", "--config", str(tmp_path / "generate.json")]) == 2


def test_interrupt_exits_with_two(tmp_path, mocker):
    _tiny_configs(tmp_path)
    run = mocker.patch("colabel.main.run_generate", side_effect=KeyboardInterrupt)
    assert dispatch(["generate", "--config", str(tmp_path / "generate.json"), "--seed", "9"]) == 2
    assert run.call_args.args[2] == 9


def test_runtime_settings_from_environment(monkeypatch):
    monkeypatch.setenv("COLABEL_THREADS", "3")
    monkeypatch.setenv("LOG_LEVEL", "debug")
    config = load_config()
    assert config.runtime.threads == 3
    assert config.logging.level == "DEBUG"

    monkeypatch.setenv("COLABEL_THREADS", "0")
    with pytest.raises(ConfigurationError):
        load_config()


def test_logging_formats(test_config, capsys):
    setup_logging(test_config.logging)
    get_stage_logger("generate").info("Rendered", count=3)
    assert "Rendered" in capsys.readouterr().err

    with pytest.raises(ValidationError):
        LoggingConfig(format="xml")
    setup_logging(LoggingConfig(level="INFO", format="json"))
    get_stage_logger("generate").info("Rendered", count=3)
    line = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(line)["stage"] == "generate"


def _json_records(err):
    return [json.loads(line) for line in err.strip().splitlines() if line.startswith("{")]


def test_timed_operation_tags_nested_events(capsys):
    setup_logging(LoggingConfig(level="INFO", format="json"))
    logger = get_stage_logger("train")
    with log_operation_timing("training", seed=2) as outer:
        logger.info("Epoch finished", epoch=0)
        with log_operation_timing("member training", correlation_id="inner01"):
            logger.info("Member ready")
        logger.info("Epoch finished", epoch=1)
    logger.info("After")

    records = {(r["event"], r.get("epoch")): r for r in _json_records(capsys.readouterr().err)}
    assert records[("Epoch finished", 0)]["correlation_id"] == outer
    assert records[("Member ready", None)]["correlation_id"] == "inner01"
    assert records[("Member ready", None)]["operation"] == "member training"
    assert records[("Epoch finished", 1)]["correlation_id"] == outer
    assert records[("Completed training", None)]["status"] == "success"
    assert records[("Completed training", None)]["seed"] == 2
    assert "correlation_id" not in records[("After", None)]


def test_timed_operation_logs_failure(capsys):
    setup_logging(LoggingConfig(level="INFO", format="json"))
    with pytest.raises(ValueError):
        with log_operation_timing("integration", kind="color"):
            raise ValueError("no sources")
    failed = _json_records(capsys.readouterr().err)[-1]
    assert failed["event"] == "Failed integration"
    assert failed["level"] == "error"
    assert failed["error_type"] == "ValueError"
    assert failed["kind"] == "color"


def test_log_error_carries_exception_context(capsys):
    setup_logging(LoggingConfig(level="INFO", format="json"))
    error = DatasetError("Dataset manifest not found", context={"path": "runs/alpha"}, original_error=OSError("gone"))
    log_error(error, {"command": "train"})
    record = _json_records(capsys.readouterr().err)[-1]
    assert record["error_type"] == "DatasetError"
    assert record["error_message"] == "Dataset manifest not found"
    assert record["path"] == "runs/alpha"
    assert record["command"] == "train"
    assert record["cause"] == "OSError: gone"


@pytest.mark.slow
def test_ablate_every_variant_reaches_the_report(tmp_path, tiny_datasets, tiny_kb):
    for name, dataset in tiny_datasets.items():
        save_dataset(dataset, tmp_path / "data" / name)
    save_knowledgebase(tiny_kb, tmp_path / "data" / KNOWLEDGEBASE)
    variants = [variant.value for variant in Variant]
    config = AblateStageConfig.model_validate({
        "network": {
            "stage": {
                "datasets": ["data/alpha", "data/beta", "data/gamma"],
                "test_datasets": ["data/test"],
                "knowledgebase": f"data/{KNOWLEDGEBASE}",
                "model": {"shared_channels": 4, "stage_widths": [4, 8], "feature_dim": 8},
                "train": {"epochs": 2, "batch_size": 16, "cascade_epochs": 2},
            },
            "variants": variants,
            "seeds": [0, 1],
        }
    })
    out = tmp_path / "ablate"
    summary = run_ablate(config, tmp_path, out)
    assert len(summary["runs"]) == 12

    for seed in (0, 1):
        convergence = json.loads((out / "network" / f"convergence-seed{seed}.json").read_text())
        assert sorted(convergence["runs"]) == sorted(variants)
        assert convergence["reference"] == "CoLabel"
        for run in convergence["runs"].values():
            assert run["epochs_to_threshold"] in (0, 1)

    report = run_report([out], tmp_path / "report")
    assert report.table("variants").columns == ["Metric", *variants]
    assert report.table("variants").rows[-1] == ["Seeds", *([2] * len(variants))]
    table = report.table("convergence")
    assert table.columns == ["Statistic", *variants]
    assert table.rows[1][1:] == ["2/2"] * len(variants)
    assert (tmp_path / "report" / "convergence.csv").exists()
