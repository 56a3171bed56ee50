"""Tests for losses, the training loop, metrics, correction, convergence and evaluation."""

import json

import numpy as np
import pytest

from colabel.ndgrad import Adam, Tensor, grad_check_parameters, no_grad
from colabel.ndgrad import functional as F
from colabel.network import ForwardOutputs, Variant, build_model, forward
from colabel.synth.models import DataRecord, Dataset, KnowledgeBase
from colabel.training import (
    NOT_REACHED,
    Batch,
    EpochRecord,
    RunHistory,
    accuracy,
    branch_loss,
    compare_convergence,
    compute_losses,
    CorrectionInputs,
    correct_scores,
    evaluate_accuracy,
    evaluate_map,
    fused_loss,
    harmonization_loss,
    match_correct,
    load_history,
    mean_average_precision,
    retrieval_map,
    save_run,
    total_step,
    train,
    triplet_loss,
    write_convergence_csv,
    write_convergence_json,
    write_corrections,
)
from colabel.training.evaluation import (
    AVA,
    CASCADE,
    CASCADE_MATCH,
    MATCH,
    MASKS,
    evaluate_run,
    export_masks,
    fit_cascade,
    load_run,
    write_evaluation,
)
from colabel.training.report import MISSING_CELL, REPORT_MD, build_report
from colabel.utils.exceptions import CorrectionError, MetricError, ShapeError, TrainingError


@pytest.fixture
def batch(tiny_datasets):
    return Batch.from_records(tiny_datasets["alpha"].records[:4] + tiny_datasets["beta"].records[:4])


@pytest.fixture
def square_kb():
    """Two makes × two types, one variant: model = 2·make + type."""
    return KnowledgeBase(entries={0: (0, 0), 1: (0, 1), 2: (1, 0), 3: (1, 1)})


# ----------------------------------------------------------------------------
# Losses
# ----------------------------------------------------------------------------


def test_branch_loss_uniform_logits():
    logits = Tensor(np.zeros((5, 6)))
    labels = np.array([0, 1, 2, 3, 4])
    assert branch_loss(logits, labels, np.ones(5, dtype=bool)).item() == pytest.approx(np.log(6))


def test_branch_loss_empty_subset_has_no_graph():
    logits = Tensor(np.ones((3, 4)), requires_grad=True)
    loss = branch_loss(logits, np.array([-1, -1, -1]), np.zeros(3, dtype=bool))
    assert loss.item() == 0.0
    assert not loss.requires_grad


def test_branch_loss_uses_only_annotated_rows():
    logits = Tensor(np.array([[5.0, 0.0], [0.0, 0.0]]))
    masked = branch_loss(logits, np.array([1, -1]), np.array([True, False])).item()
    assert masked == pytest.approx(F.cross_entropy(Tensor(np.array([[5.0, 0.0]])), [1]).item())


def test_fused_loss_uniform_over_catalog():
    assert fused_loss(Tensor(np.zeros((2, 96))), np.array([3, 50])).item() == pytest.approx(4.564348, abs=1e-6)


def test_harmonization_hand_values(rng):
    branch = rng.normal(size=(2, 3))
    fused = rng.normal(size=(2, 3))
    p = np.exp(fused) / np.exp(fused).sum(axis=1, keepdims=True)
    log_q = branch - np.log(np.exp(branch).sum(axis=1, keepdims=True))
    expected = -np.sum(p * log_q) / 2
    assert harmonization_loss(Tensor(branch), Tensor(fused)).item() == pytest.approx(expected, abs=1e-9)

    same = harmonization_loss(Tensor(fused), Tensor(fused)).item()
    assert same == pytest.approx(-np.sum(p * np.log(p)) / 2, abs=1e-9)


def test_harmonization_shape_mismatch():
    with pytest.raises(ShapeError):
        harmonization_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_harmonization_target_is_detached(rng):
    branch = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    fused = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    harmonization_loss(branch, fused).backward()
    assert branch.grad is not None and np.abs(branch.grad).sum() > 0
    assert fused.grad is None or not fused.grad.any()

    fused.grad = None
    harmonization_loss(Tensor(branch.data), fused, detach=False).backward()
    assert fused.grad is not None and fused.grad.any()


def _brute_force_triplet(embeddings, labels, margin):
    n = len(labels)
    distances = np.linalg.norm(embeddings[:, None] - embeddings[None], axis=2)
    gaps = []
    for a in range(n):
        positives = [p for p in range(n) if p != a and labels[p] == labels[a]]
        negatives = [q for q in range(n) if labels[q] != labels[a]]
        if not positives:
            continue
        gaps.append(max(0.0, max(distances[a, p] for p in positives) - min(distances[a, q] for q in negatives) + margin))
    return float(np.mean(gaps))


def test_triplet_loss_matches_exhaustive_mining(rng):
    for _ in range(50):
        embeddings = rng.normal(size=(6, 4))
        labels = np.array([0, 0, 1, 1, 2, rng.integers(0, 3)])
        value = triplet_loss(Tensor(embeddings), labels, margin=0.3).item()
        assert value == pytest.approx(_brute_force_triplet(embeddings, labels, 0.3), abs=1e-9)


def test_triplet_loss_limits():
    separated = Tensor(np.array([[0.0, 0.0], [0.01, 0.0], [10.0, 0.0], [10.01, 0.0]]))
    assert triplet_loss(separated, [0, 0, 1, 1]).item() == 0.0
    identical = Tensor(np.ones((4, 2)))
    assert triplet_loss(identical, [0, 0, 1, 1], margin=0.3).item() == pytest.approx(0.3, abs=1e-5)


def test_triplet_loss_degenerate_batches():
    with pytest.raises(TrainingError):
        triplet_loss(Tensor(np.zeros((3, 2))), [0, 0, 0])
    with pytest.raises(TrainingError):
        triplet_loss(Tensor(np.zeros((3, 2))), [0, 1, 2])


def test_batch_masks_follow_blanks(batch):
    assert batch.n_b == 8
    assert batch.n_c("type") == 4
    assert batch.n_c("color") == 4
    assert batch.n_c("model") == 8
    assert np.all(batch.labels["type"][:4] == -1)


def test_fusion_only_reports_no_branch_terms(tiny_model_config, batch):
    model = build_model(tiny_model_config.model_copy(update={"variant": Variant.FUSION_ONLY}), seed=0)
    total, report = compute_losses(forward(model, batch.images), batch, Variant.FUSION_ONLY)
    assert all(value == 0.0 for value in report.branch.values())
    assert all(value == 0.0 for value in report.harmonization.values())
    assert total.item() == pytest.approx(report.fused)


def test_loss_report_total(tiny_model_config, batch):
    model = build_model(tiny_model_config, seed=0)
    total, report = compute_losses(forward(model, batch.images), batch, Variant.COLABEL)
    assert total.item() == pytest.approx(report.total)
    assert report.n_c == {"color": 4, "type": 4, "make": 8}
    assert all(np.isfinite(value) and value >= 0 for value in report.as_row().values())


def test_missing_model_label_is_rejected(tiny_model_config, batch):
    batch.masks["model"][0] = False
    model = build_model(tiny_model_config, seed=0)
    with pytest.raises(TrainingError):
        compute_losses(forward(model, batch.images), batch, Variant.COLABEL)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_total_objective_gradients(seed, tiny_model_config, tiny_datasets):
    model = build_model(tiny_model_config, seed=seed)
    small = Batch.from_records(tiny_datasets["alpha"].records[:2] + tiny_datasets["gamma"].records[:2])
    params = [
        model.fusion.weight,
        model.heads["color"].weight,
        model.fused_heads["type"].weight,
        model.branches["make"].projection.weight,
    ]

    def loss_fn() -> Tensor:
        total, _ = compute_losses(
            forward(model, small.images), small, Variant.COLABEL, detach_harmonization=False
        )
        return total

    assert grad_check_parameters(loss_fn, params, max_entries=6) <= 1e-4


def test_blank_kind_gives_its_head_no_gradient(tiny_model_config, tiny_datasets):
    model = build_model(tiny_model_config, seed=0)
    blank_type = Batch.from_records(tiny_datasets["alpha"].records[:6])
    model.zero_grad()
    total, _ = compute_losses(forward(model, blank_type.images), blank_type, Variant.COLABEL)
    total.backward()
    grad = model.heads["type"].weight.grad
    assert grad is None or not grad.any()
    assert model.heads["color"].weight.grad is not None


def test_harmonization_never_reaches_the_fusion_head(tiny_model_config, batch):
    model = build_model(tiny_model_config, seed=0)
    outputs = forward(model, batch.images)
    harmonization_loss(outputs.y_branch_fused["color"], outputs.y_fused).backward()
    grad = model.fusion.weight.grad
    assert grad is None or not grad.any()


def test_total_step_overfits_a_fixed_batch(tiny_model_config, batch):
    model = build_model(tiny_model_config, seed=0)
    optimizer = Adam(model.parameters(), learning_rate=5e-3)
    first = total_step(model, batch, optimizer).total
    for _ in range(19):
        last = total_step(model, batch, optimizer).total
    assert last < first


# ----------------------------------------------------------------------------
# Training loop and run persistence
# ----------------------------------------------------------------------------


def test_training_is_reproducible(tiny_model_config, tiny_datasets, tiny_train_config):
    sources = [tiny_datasets["alpha"], tiny_datasets["beta"]]
    first = train(build_model(tiny_model_config, seed=5), sources, tiny_train_config, seed=5)
    second = train(build_model(tiny_model_config, seed=5), sources, tiny_train_config, seed=5)
    assert first.model_dump(exclude={"wall_clock"}) == second.model_dump(exclude={"wall_clock"})
    assert [record.epoch for record in first.epochs] == [0, 1]
    assert first.final("val_accuracy.model") is not None


def test_training_needs_model_labels(tiny_model_config, tiny_train_config, tiny_datasets):
    blank = [
        DataRecord(id=r.id, image=r.image, labels={**r.labels, "model": None})
        for r in tiny_datasets["alpha"].records[:4]
    ]
    with pytest.raises(TrainingError):
        train(build_model(tiny_model_config, seed=0), Dataset(name="blank", records=blank), tiny_train_config, seed=0)


def test_saved_run_reloads(tmp_path, tiny_model_config, tiny_datasets, tiny_train_config):
    model = build_model(tiny_model_config, seed=1)
    train(model, tiny_datasets["gamma"], tiny_train_config, seed=1, out_dir=tmp_path)

    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["variant"] == "CoLabel"
    assert manifest["datasets"] == ["gamma"]
    assert manifest["full_scale"]["image_size"] == 224
    assert (tmp_path / "history.csv").read_text().startswith("epoch,")
    assert "wall_clock" not in (tmp_path / "history.json").read_text()

    restored, _ = load_run(tmp_path)
    images = tiny_datasets["test"].images(tiny_datasets["test"].records[:3])
    with no_grad():
        np.testing.assert_array_equal(forward(restored, images).y_fused.data, forward(model, images).y_fused.data)
    assert load_history(tmp_path).epochs[0].epoch == 0


def test_load_run_without_weights(tmp_path):
    with pytest.raises(TrainingError):
        load_run(tmp_path)


# ----------------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------------


def test_accuracy_ignores_logit_shift(rng):
    logits = rng.normal(size=(20, 5))
    labels = rng.integers(0, 5, size=20)
    expected = sum(int(np.argmax(row) == label) for row, label in zip(logits, labels)) / 20
    assert accuracy(np.argmax(logits, axis=1), labels) == expected
    assert accuracy(np.argmax(logits + 7.5, axis=1), labels) == expected
    with pytest.raises(MetricError):
        accuracy(np.array([]), np.array([]))


def test_evaluate_accuracy_unknown_head(tiny_model_config, tiny_datasets):
    with pytest.raises(MetricError):
        evaluate_accuracy(build_model(tiny_model_config, seed=0), tiny_datasets["test"], "plate")


def test_evaluate_accuracy_falls_back_to_truth(tiny_model_config, tiny_datasets):
    value = evaluate_accuracy(build_model(tiny_model_config, seed=0), tiny_datasets["alpha"], "type")
    assert 0.0 <= value <= 1.0


def test_map_fixed_queries():
    gallery = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    gallery_labels = [0, 0, 1, 1, 2]
    queries = np.array([[0.1], [2.2], [3.1], [4.2], [0.6]])
    query_labels = [0, 0, 1, 2, 1]
    # per-query AP: 1, 11/30, 5/6, 1, 5/12
    expected = 217 / 300
    assert mean_average_precision(queries, query_labels, gallery, gallery_labels) == pytest.approx(expected, abs=1e-9)
    stretched = mean_average_precision(queries * 3.0, query_labels, gallery * 3.0, gallery_labels)
    assert stretched == pytest.approx(expected, abs=1e-9)


def test_map_edge_cases():
    gallery = np.array([[0.0], [1.0]])
    assert mean_average_precision(np.array([[0.0]]), [0], gallery, [0, 1]) == 1.0
    assert mean_average_precision(np.array([[0.0]]), [1], gallery, [0, 1]) == 0.5
    with pytest.raises(MetricError):
        mean_average_precision(np.array([[0.0]]), [2], gallery, [0, 1])
    with pytest.raises(MetricError):
        retrieval_map(np.eye(3), [0, 1, 2])


def test_evaluate_map_embeds_both_sets():
    gallery = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    queries = np.array([[0.1], [2.2], [3.1], [4.2], [0.6]])
    calls = []

    def embed(images):
        calls.append(len(images))
        return images * 2.0

    score = evaluate_map(embed, queries, [0, 0, 1, 2, 1], gallery, [0, 0, 1, 1, 2])
    assert score == pytest.approx(217 / 300, abs=1e-9)
    assert calls == [5, 5]

# ----------------------------------------------------------------------------
# Retroactive correction
# ----------------------------------------------------------------------------


def test_consistent_predictions_are_untouched(square_kb):
    scores = np.array([[3.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 2.0]])
    result = correct_scores(scores, np.array([0, 1]), np.array([0, 1]), square_kb)
    assert result.log == []
    np.testing.assert_array_equal(result.predictions, [0, 3])
    np.testing.assert_array_equal(result.scores, scores)


def test_inconsistent_prediction_is_corrected(square_kb):
    scores = np.array([[0.0, 2.0, 1.5, 0.0]])
    result = correct_scores(scores, np.array([0]), np.array([1]), square_kb, ids=["car-1"])
    entry = result.log[0]
    assert entry.id == "car-1"
    assert (entry.original, entry.corrected, entry.changed) == (1, 2, True)
    assert entry.candidates == [2]
    assert (entry.kb_make, entry.kb_type) == (0, 1)
    assert np.isneginf(result.scores[0, [0, 1, 3]]).all()


def test_low_confidence_candidate_is_rejected(square_kb):
    scores = np.array([[0.0, 3.0, 1.0, 0.0]])
    result = correct_scores(scores, np.array([0]), np.array([1]), square_kb, tau=0.5)
    assert result.predictions[0] == 1
    assert result.log[0].changed is False
    assert result.n_changed == 0


def test_correction_is_idempotent(square_kb, rng):
    scores = rng.normal(size=(40, 4)) * 2
    types = rng.integers(0, 2, size=40)
    makes = rng.integers(0, 2, size=40)
    once = correct_scores(scores, types, makes, square_kb)
    twice = correct_scores(once.scores, types, makes, square_kb)
    np.testing.assert_array_equal(once.predictions, twice.predictions)
    assert twice.n_changed == 0


def test_correction_rejects_bad_inputs(square_kb):
    with pytest.raises(CorrectionError):
        correct_scores(np.zeros((1, 4)), np.array([0]), np.array([0]), KnowledgeBase(entries={}))
    with pytest.raises(CorrectionError):
        correct_scores(np.zeros((1, 4)), np.array([0]), np.array([0]), square_kb, tau=0.0)


def test_correction_log_file(tmp_path, square_kb):
    result = correct_scores(np.array([[0.0, 2.0, 1.5, 0.0]]), np.array([0]), np.array([1]), square_kb)
    path = write_corrections(result.log, tmp_path / "corrections.jsonl")
    entry = json.loads(path.read_text().splitlines()[0])
    assert entry["original"] == 1 and entry["corrected"] == 2
    assert entry["predicted_make"] == 1 and entry["predicted_type"] == 0


# ----------------------------------------------------------------------------
# Convergence
# ----------------------------------------------------------------------------


def _history(name, values):
    return RunHistory(
        variant=name,
        seed=0,
        epochs=[EpochRecord(epoch=i, val_accuracy={"model": v}) for i, v in enumerate(values)],
    )


def test_convergence_gaps_and_thresholds(tmp_path):
    report = compare_convergence(
        {"CoLabel": _history("CoLabel", [0.2, 0.6, 0.9]), "FusionOnly": _history("FusionOnly", [0.1, 0.3, 0.5])},
        threshold=0.8,
    )
    assert report.gaps["FusionOnly"] == pytest.approx([-0.1, -0.3, -0.4])
    assert report.gaps["CoLabel"] == [0.0, 0.0, 0.0]
    assert report.epochs_to_threshold == {"CoLabel": 2, "FusionOnly": NOT_REACHED}

    path = write_convergence_csv(report, tmp_path / "convergence.csv")
    assert path.read_text().splitlines()[0] == "epoch,CoLabel,FusionOnly,FusionOnly-CoLabel"


def test_convergence_relative_threshold():
    report = compare_convergence({"a": _history("a", [0.5, 0.95, 1.0])})
    assert report.thresholds["a"] == pytest.approx(0.9)
    assert report.epochs_to_threshold["a"] == 1


def test_convergence_loss_threshold_sits_above_final():
    history = RunHistory(
        variant="a",
        seed=0,
        epochs=[EpochRecord(epoch=i, train_loss={"total": v}) for i, v in enumerate([2.0, 1.5, 1.05, 1.0])],
    )
    report = compare_convergence({"a": history}, metric="train_loss.total")
    assert report.higher_is_better is False
    assert report.thresholds["a"] == pytest.approx(1.0 / 0.9)
    assert report.epochs_to_threshold["a"] == 2

    strict = compare_convergence({"a": history}, metric="train_loss.total", fraction_of_final=1.0)
    assert strict.epochs_to_threshold["a"] == 3
    with pytest.raises(MetricError):
        compare_convergence({"a": history}, metric="train_loss.total", fraction_of_final=0.0)


def test_convergence_summary_file(tmp_path):
    report = compare_convergence(
        {"CoLabel": _history("CoLabel", [0.2, 0.6, 0.9]), "MultiInput": _history("MultiInput", [0.1, 0.3, 0.5])},
        threshold=0.8,
    )
    summary = json.loads(write_convergence_json(report, tmp_path / "convergence-seed0.json").read_text())
    assert summary["metric"] == "val_accuracy.model"
    assert summary["reference"] == "CoLabel"
    assert summary["runs"]["CoLabel"] == {"threshold": 0.8, "epochs_to_threshold": 2, "final": 0.9}
    assert summary["runs"]["MultiInput"]["epochs_to_threshold"] is None


def test_report_convergence_table(tmp_path):
    for seed, (colabel, multi) in enumerate([([0.5, 0.9, 1.0], [0.2, 0.5, 1.0]), ([0.6, 0.95, 1.0], [0.3, 0.4, 0.8])]):
        report = compare_convergence(
            {"CoLabel": _history("CoLabel", colabel), "MultiInput": _history("MultiInput", multi)}
        )
        write_convergence_json(report, tmp_path / "network" / f"convergence-seed{seed}.json")

    result = build_report([tmp_path], ["CoLabel", "MultiInput", "SMBL"])
    table = result.table("convergence")
    assert table.columns == ["Statistic", "CoLabel", "MultiInput", "SMBL"]
    steps, reached, thresholds = table.rows
    assert steps == ["Epochs to threshold (val_accuracy.model)", 1.0, 2.0, None]
    assert reached == ["Runs reaching threshold (val_accuracy.model)", "2/2", "2/2", None]
    assert thresholds[1] == pytest.approx(0.9)
    assert thresholds[2] == pytest.approx((0.9 + 0.72) / 2)
    assert "Convergence (median over seeds)" in result.markdown()


def test_convergence_rejects_mismatched_grids():
    with pytest.raises(MetricError):
        compare_convergence({"a": _history("a", [0.1, 0.2]), "b": _history("b", [0.1])})
    with pytest.raises(MetricError):
        compare_convergence({})


# ----------------------------------------------------------------------------
# Evaluation and reports
# ----------------------------------------------------------------------------


@pytest.fixture
def trained_cascade_run(tmp_path, tiny_model_config, tiny_datasets, tiny_train_config, tiny_kb):
    config = tiny_model_config.model_copy(update={"variant": Variant.TWO_STAGE_CASCADE})
    model = build_model(config, seed=2)
    sources = [tiny_datasets["alpha"], tiny_datasets["beta"], tiny_datasets["gamma"]]
    history = train(model, sources, tiny_train_config, seed=2)
    heads = fit_cascade(model, [r for ds in sources for r in ds.records], tiny_kb, seed=2, epochs=2, out_dir=tmp_path)
    save_run(model, history, tiny_train_config, sources, tmp_path)
    return tmp_path, model, heads


def test_evaluate_run_schemes(trained_cascade_run, tiny_datasets, tiny_kb):
    run_dir, model, heads = trained_cascade_run
    report, corrections = evaluate_run(model, tiny_datasets["test"].records, tiny_kb, heads, tau=0.5, seed=2)

    assert set(report.schemes) == {AVA, MATCH, CASCADE, CASCADE_MATCH}
    assert all(0.0 <= value <= 1.0 for value in report.schemes.values())
    assert set(report.accuracy) == {"model", "color", "type", "make"}
    assert report.n_test == 24
    assert report.census["total"] == model.parameter_count()
    assert report.changed[MATCH] == corrections[MATCH].n_changed

    write_evaluation(report, run_dir)
    assert json.loads((run_dir / "evaluation.json").read_text())["variant"] == "TwoStageCascade"


def test_evaluate_run_without_knowledgebase(tiny_model_config, tiny_datasets):
    report, corrections = evaluate_run(build_model(tiny_model_config, seed=0), tiny_datasets["test"].records)
    assert list(report.schemes) == [AVA]
    assert corrections == {}


def test_evaluate_run_needs_references(tiny_model_config):
    record = DataRecord(id="x", image=np.zeros((32, 32, 3), dtype=np.uint8), labels={"model": None})
    with pytest.raises(MetricError):
        evaluate_run(build_model(tiny_model_config, seed=0), [record])


def test_export_masks(tmp_path, tiny_model_config, tiny_datasets):
    records = tiny_datasets["test"].records
    written = export_masks(build_model(tiny_model_config, seed=0), records, tmp_path, limit=2)
    assert len(written) == 4 * 2
    assert (tmp_path / MASKS / "make" / f"{records[0].id}.png").exists()


def test_report_single_run_and_missing_variant(trained_cascade_run, tiny_datasets, tiny_kb, tmp_path_factory):
    run_dir, model, heads = trained_cascade_run
    report, _ = evaluate_run(model, tiny_datasets["test"].records, tiny_kb, heads, seed=2)
    write_evaluation(report, run_dir)

    result = build_report([run_dir], variants=["TwoStageCascade", "FusionOnly"])
    variants = result.table("variants")
    assert variants.columns == ["Metric", "TwoStageCascade", "FusionOnly"]
    accuracy_row = variants.rows[0]
    assert accuracy_row[1] == pytest.approx(load_history(run_dir).final("val_accuracy.model"))
    assert accuracy_row[2] is None
    assert "variant FusionOnly: no runs" in result.missing
    assert result.table("schemes").rows[0][1] == pytest.approx(report.schemes[AVA])

    out = tmp_path_factory.mktemp("report")
    path = result.write(out)
    assert path.name == REPORT_MD
    assert f"| {MISSING_CELL} |" in path.read_text()
    again = tmp_path_factory.mktemp("report-again")
    build_report([run_dir], variants=["TwoStageCascade", "FusionOnly"]).write(again)
    assert (again / "variants.csv").read_bytes() == (out / "variants.csv").read_bytes()
    assert build_report([run_dir]).table("variants").columns == ["Metric", "TwoStageCascade"]


def test_report_lists_absent_inputs(tmp_path):
    result = build_report([tmp_path / "nowhere", tmp_path])
    assert result.tables == []
    assert len(result.missing) == 2


def test_match_correct_reads_fused_and_branch_heads(tiny_model_config, tiny_datasets, tiny_kb):
    model = build_model(tiny_model_config, seed=5)
    with no_grad():
        outputs = forward(model, tiny_datasets["test"].images()[:8])
    types = np.argmax(outputs.y_branch["type"].data, axis=1)
    makes = np.argmax(outputs.y_branch["make"].data, axis=1)
    expected = correct_scores(outputs.y_fused.data, types, makes, tiny_kb)

    for source in (outputs, CorrectionInputs(outputs.y_fused.data, types, makes)):
        result = match_correct(source, tiny_kb)
        np.testing.assert_array_equal(result.predictions, expected.predictions)
        np.testing.assert_array_equal(result.scores, expected.scores)
        assert len(result.log) == len(expected.log)


def test_match_correct_needs_type_and_make(square_kb):
    outputs = ForwardOutputs(
        branches=[],
        x_shared=None,
        x_branch={},
        y_branch={},
        y_branch_fused={},
        x_fused=Tensor(np.zeros((1, 2))),
        y_fused=Tensor(np.zeros((1, 4))),
    )
    with pytest.raises(CorrectionError):
        match_correct(outputs, square_kb)
