"""Tests for clustering, overlap, voting, team members and integration."""

import itertools
import json

import numpy as np
import pytest

from colabel.corroborate import (
    AblationConfig,
    FrozenEmbedder,
    IntegrationPlan,
    KindPlan,
    MemberConfig,
    MemberKind,
    MemberNetwork,
    TeamMember,
    Vote,
    ablation_ladder,
    augment,
    cluster_overlap,
    decide,
    distance_matrix,
    ensemble_label,
    ensemble_vote,
    integrate,
    kmeans,
    ladder_rows,
    majority_vote,
    member_weights,
    o_metric_point,
    plan_kinds,
    team_label,
    team_vote,
    train_member,
    write_ladder,
)
from colabel.corroborate.integration import TargetVotes, own_split
from colabel.utils.exceptions import ClusteringError, IntegrationError, OverlapError

# ----------------------------------------------------------------------------
# Clustering
# ----------------------------------------------------------------------------


def test_single_cluster_centroid_is_the_mean(rng):
    points = rng.normal(size=(30, 3))
    model = kmeans(points, 1, metric="euclidean", seed=0)
    np.testing.assert_allclose(model.centroids[0], points.mean(axis=0))
    assert model.sizes() == [30]


def test_separated_blobs(rng):
    points = np.vstack([rng.normal(size=(20, 2)) * 0.1, rng.normal(size=(20, 2)) * 0.1 + 10.0])
    ids = [f"p{i}" for i in range(40)]
    model = kmeans(points, 2, metric="euclidean", seed=3, ids=ids)
    assert len(set(model.labels[:20])) == 1
    assert len(set(model.labels[20:])) == 1
    assert model.labels[0] != model.labels[20]
    assert model.assignments["p0"] == int(model.labels[0])


def test_kmeans_objective_never_increases(rng):
    points = rng.normal(size=(60, 4))
    objective = kmeans(points, 5, metric="euclidean", seed=1).objective
    assert all(later <= earlier + 1e-9 for earlier, later in zip(objective, objective[1:]))


def test_kmeans_is_seeded(rng):
    points = rng.normal(size=(50, 3))
    first = kmeans(points, 4, seed=9)
    second = kmeans(points, 4, seed=9)
    np.testing.assert_array_equal(first.labels, second.labels)


def test_kmeans_rejects_too_few_points():
    with pytest.raises(ClusteringError):
        kmeans(np.zeros((2, 3)), 3)
    with pytest.raises(ClusteringError):
        kmeans(np.zeros((2, 3)), 0)


def test_cosine_distance_of_zero_vector():
    distances = distance_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_allclose(distances, [[1.0, 1.0], [0.0, 1.0]], atol=1e-12)


# ----------------------------------------------------------------------------
# O-metric overlap
# ----------------------------------------------------------------------------


def test_o_metric_hand_distances():
    u_points = np.array([[0.0, 0.0], [0.1, 0.0]])
    t_points = np.array([[1.0, 0.0]])
    assert o_metric_point(u_points[0], u_points, t_points, "euclidean") == pytest.approx(0.1)
    assert o_metric_point(u_points[1], u_points, t_points, "euclidean") == pytest.approx(0.1 / 0.9)
    report = cluster_overlap(u_points, t_points, "euclidean")
    np.testing.assert_allclose(report.ratios, [0.1, 0.1 / 0.9])
    assert report.n_points == 2
    assert report.p_u == 0.0


def test_coincident_training_cluster():
    u_points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    report = cluster_overlap(u_points, u_points.copy(), "euclidean")
    assert np.all(np.isinf(report.ratios))
    assert report.p_u == 1.0


def test_distant_training_cluster(rng):
    u_points = rng.normal(size=(10, 2))
    assert cluster_overlap(u_points, u_points + 1000.0, "euclidean").p_u == 0.0


def _brute_force_overlap(u_points, t_points):
    ratios = []
    for i, u in enumerate(u_points):
        conspecific = min(np.linalg.norm(u - v) for j, v in enumerate(u_points) if j != i)
        heterospecific = min(np.linalg.norm(u - t) for t in t_points)
        ratios.append(np.inf if heterospecific <= 1e-7 else conspecific / heterospecific)
    ratios = np.array(ratios)
    return ratios, np.count_nonzero(ratios > 1.0) / len(ratios)


def test_overlap_matches_brute_force(rng):
    for _ in range(100):
        u_points = rng.normal(size=(int(rng.integers(2, 40)), 2))
        t_points = rng.normal(size=(int(rng.integers(1, 40)), 2)) + rng.normal(size=2)
        report = cluster_overlap(u_points, t_points, "euclidean")
        ratios, p_u = _brute_force_overlap(u_points, t_points)
        np.testing.assert_allclose(report.ratios, ratios, rtol=1e-6)
        borderline = np.count_nonzero(np.abs(ratios - 1.0) < 1e-6) / ratios.size
        assert abs(report.p_u - p_u) <= borderline


def test_overlap_fraction_is_bounded(rng):
    for _ in range(10_000):
        u_points = rng.normal(size=(int(rng.integers(2, 12)), 3))
        t_points = rng.normal(size=(int(rng.integers(1, 12)), 3)) * rng.uniform(0.1, 3.0)
        assert 0.0 <= cluster_overlap(u_points, t_points).p_u <= 1.0


def test_overlap_of_shared_and_disjoint_distributions(rng):
    u_points = rng.normal(size=(40, 2))
    t_points = rng.normal(size=(40, 2))
    assert cluster_overlap(u_points, t_points, "euclidean").p_u > 0.0
    assert cluster_overlap(u_points, t_points + 50.0, "euclidean").p_u == 0.0


def test_overlap_input_errors():
    with pytest.raises(OverlapError):
        cluster_overlap(np.zeros((1, 2)), np.ones((3, 2)))
    with pytest.raises(OverlapError):
        cluster_overlap(np.zeros((3, 2)), np.zeros((0, 2)))


# ----------------------------------------------------------------------------
# Voting
# ----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "votes, expected",
    [([0, 0, 0, 0], 0), ([0, 0, 0, 1], 0), ([0, 0, 1, 1], None), ([0, 1, 2, 3], None), ([], None)],
)
def test_majority_vote_examples(votes, expected):
    assert majority_vote(votes) == expected


def test_majority_vote_truth_table():
    for votes in itertools.product(range(3), repeat=4):
        counts = np.bincount(votes, minlength=3)
        expected = int(np.argmax(counts)) if counts.max() >= 3 else None
        assert majority_vote(list(votes)) == expected, votes


def test_ensemble_vote_confidence():
    probabilities = np.array([[0.7, 0.3], [0.6, 0.4], [0.8, 0.2], [0.1, 0.9]])
    vote = ensemble_vote(probabilities)
    assert vote.label == 0
    assert vote.confidence == pytest.approx(0.55)
    assert ensemble_vote(np.array([[0.9, 0.1], [0.9, 0.1], [0.1, 0.9], [0.1, 0.9]])) is None


def _team_oracle(votes, weights):
    total = sum(weights)
    surviving = [(vote, weight) for vote, weight in zip(votes, weights) if vote is not None]
    if not surviving or sum(weight for _, weight in surviving) <= 0.5 * total:
        return None
    support = {}
    for vote, weight in surviving:
        w, c = support.get(vote.label, (0.0, 0.0))
        support[vote.label] = (w + weight, c + vote.confidence)
    best = max(support.values())
    return min(label for label, value in support.items() if value == best)


def test_team_vote_truth_table():
    options = [None, Vote(label=0, confidence=0.9), Vote(label=1, confidence=0.6), Vote(label=1, confidence=0.95)]
    weight_tables = [(1.0, 1.0, 1.0), (0.9, 0.2, 0.2), (0.5, 0.3, 0.2), (0.0, 1.0, 0.4), (0.25, 0.25, 0.5)]
    for weights in weight_tables:
        for votes in itertools.product(options, repeat=3):
            assert team_vote(list(votes), weights) == _team_oracle(votes, weights), (votes, weights)


def test_team_vote_examples():
    a, b = Vote(label=0, confidence=0.8), Vote(label=1, confidence=0.8)
    assert team_vote([a, a, a], [1.0, 1.0, 1.0]) == 0
    assert team_vote([None, None, a], [1.0, 1.0, 1.0]) is None
    assert team_vote([None, None, a], [1.0, 1.0, 1.0], require_agreement=False) == 0
    assert team_vote([a, b, b], [0.9, 0.2, 0.2]) == 0
    assert team_vote([a, b], [0.5, 0.5]) == 0


# ----------------------------------------------------------------------------
# Members and weights
# ----------------------------------------------------------------------------


def _stub_member(config, training_points, rng):
    return TeamMember(
        annotation=config.annotation,
        kind=config.kind,
        source="stub",
        network=MemberNetwork(config, 3, rng),
        n_classes=3,
        config=config,
        training_clusters=kmeans(training_points, 2, metric="euclidean", seed=0),
    )


def test_member_weights_limits(rng, tiny_member_config):
    points = np.vstack([rng.normal(size=(10, 2)), rng.normal(size=(10, 2)) + 20.0])
    unlabeled = kmeans(points, 2, metric="euclidean", seed=0)
    assert sorted(unlabeled.sizes()) == [10, 10]
    same = _stub_member(tiny_member_config, points, rng)
    far = _stub_member(tiny_member_config, points + 500.0, rng)
    weights = member_weights(unlabeled, [same, far])
    assert weights.shape == (2, 2)
    np.testing.assert_array_equal(weights[:, 0], [1.0, 1.0])
    np.testing.assert_array_equal(weights[:, 1], [0.0, 0.0])


def test_member_weights_singleton_cluster(rng, tiny_member_config):
    points = np.vstack([rng.normal(size=(10, 2)), [[100.0, 100.0]]])
    unlabeled = kmeans(points, 2, metric="euclidean", seed=0)
    member = _stub_member(tiny_member_config, points + 500.0, rng)
    weights = member_weights(unlabeled, [member])
    singleton = int(np.argmin(unlabeled.sizes()))
    assert weights[singleton, 0] == 1.0


def test_member_weights_need_training_clusters(rng, tiny_member_config):
    member = _stub_member(tiny_member_config, rng.normal(size=(6, 2)), rng)
    member.training_clusters = None
    with pytest.raises(OverlapError):
        member_weights(kmeans(rng.normal(size=(6, 2)), 2, "euclidean"), [member])


def test_team_label_uses_the_cluster_row(rng, tiny_member_config, tiny_datasets):
    points = rng.normal(size=(8, 2))
    team = [_stub_member(tiny_member_config, points, np.random.default_rng(seed)) for seed in (1, 2, 3)]
    weights = np.array([[1.0, 1.0, 1.0], [0.9, 0.1, 0.0]])
    image = tiny_datasets["beta"].records[0].image
    votes = [ensemble_label(member, image) for member in team]
    for cluster in (0, 1):
        assert team_label(team, weights, image, cluster) == team_vote(votes, weights[cluster])
    assert team_label(team, weights, image, 0, require_agreement=False) == team_vote(
        votes, weights[0], require_agreement=False
    )


def test_augment_keeps_shape(rng):
    images = rng.uniform(size=(4, 3, 32, 32))
    before = images.copy()
    out = augment(images, rng)
    assert out.shape == images.shape
    np.testing.assert_array_equal(images, before)


def test_classifier_member(tiny_datasets, tiny_member_config):
    member = train_member(tiny_datasets["alpha"], [tiny_datasets["gamma"]], tiny_member_config)
    assert member.kind == MemberKind.CLASSIFIER
    assert member.n_classes == 3
    assert len(member.validation_scores) == member.stopped_epoch + 1
    assert member.stopped_epoch - member.best_epoch <= tiny_member_config.patience

    images = tiny_datasets["beta"].images()[:5]
    probabilities = member.predict_proba(images)
    np.testing.assert_array_equal(member.predict(images), np.argmax(probabilities, axis=1))
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)
    vote = ensemble_label(member, tiny_datasets["beta"].records[0].image)
    assert vote is None or 0 <= vote.label < 3


def test_embedder_member(tiny_datasets, tiny_member_config):
    config = tiny_member_config.model_copy(update={"annotation": "make"})
    member = train_member(tiny_datasets["alpha"], [tiny_datasets["beta"]], config)
    assert member.kind == MemberKind.EMBEDDER
    assert sorted(member.centroids) == [0, 1, 2]
    probabilities = member.predict_proba(tiny_datasets["test"].images()[:4])
    assert probabilities.shape == (4, 3)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)


def test_member_needs_validation_and_labels(tiny_datasets, tiny_member_config):
    with pytest.raises(IntegrationError):
        train_member(tiny_datasets["alpha"], [tiny_datasets["beta"]], tiny_member_config)
    with pytest.raises(IntegrationError):
        train_member(tiny_datasets["beta"], [tiny_datasets["alpha"]], tiny_member_config)


def test_own_split_is_disjoint(tiny_datasets):
    train_ds, val_ds = own_split(tiny_datasets["alpha"], "color", 0.25, seed=0)
    assert len(val_ds) == 6 and len(train_ds) == 18
    assert not {r.id for r in train_ds.records} & {r.id for r in val_ds.records}


def test_frozen_embedder_is_fixed(tiny_datasets, tiny_plan):
    records = tiny_datasets["test"].records[:3]
    first = FrozenEmbedder(tiny_plan.features).embed_records(records)
    second = FrozenEmbedder(tiny_plan.features).embed_records(records)
    assert first.shape == (3, 8)
    np.testing.assert_array_equal(first, second)


# ----------------------------------------------------------------------------
# Integration
# ----------------------------------------------------------------------------


def test_plan_kinds_defaults(tiny_datasets, tiny_plan):
    datasets = [tiny_datasets[name] for name in ("alpha", "beta", "gamma")]
    kinds = plan_kinds(datasets, tiny_plan)
    assert kinds["type"] == KindPlan(sources=["beta", "gamma"], targets=["alpha"])
    assert kinds["color"] == KindPlan(sources=["alpha", "gamma"], targets=["beta"])
    assert kinds["make"] == KindPlan(sources=["alpha", "beta"], targets=["gamma"])


def test_decide_single_best_member(tiny_plan):
    a, b = Vote(label=0, confidence=0.9), Vote(label=1, confidence=0.9)
    target = TargetVotes(
        records=[],
        cluster_labels=np.array([0, 1]),
        weights=np.array([[0.2, 0.9, 0.9], [0.9, 0.1, 0.1]]),
        votes=[[a, a], [b, b], [b, None]],
    )
    assert decide(target, tiny_plan) == [1, 0]
    best = tiny_plan.model_copy(update={"single_best_member": True})
    assert decide(target, best) == [1, 0]
    assert decide(TargetVotes([], np.array([0]), np.array([[0.2, 0.1, 0.9]]), [[a], [b], [None]]), best) == [None]


def test_complete_dataset_is_unchanged(tiny_datasets, tiny_plan):
    completed, report = integrate([tiny_datasets["test"]], tiny_plan.model_copy(update={"datasets": ["test"]}))
    assert [r.labels for r in completed[0].records] == [r.labels for r in tiny_datasets["test"].records]
    assert all(coverage.labeled_fraction == 1.0 for coverage in report.kinds.values())


def test_kind_without_sources(tiny_datasets, tiny_plan):
    plan = tiny_plan.model_copy(update={"kinds": {"color": KindPlan(sources=["beta"], targets=["beta"])}})
    with pytest.raises(IntegrationError):
        integrate([tiny_datasets["beta"]], plan)


def test_integration_fills_blanks_only(tiny_datasets, tiny_plan):
    plan = tiny_plan.model_copy(update={"kinds": {"color": KindPlan(sources=["alpha", "gamma"], targets=["beta"])}})
    datasets = [tiny_datasets[name] for name in ("alpha", "beta", "gamma")]
    completed, report = integrate(datasets, plan)

    for before, after in zip(datasets, completed):
        for old, new in zip(before.records, after.records):
            for kind, value in old.labels.items():
                if value is not None:
                    assert new.labels[kind] == value
    assert all(r.labels["color"] is None for r in tiny_datasets["beta"].records)

    coverage = report.kinds["color"]
    assert coverage.missing_before == 24
    assert coverage.filled + coverage.blank == 24
    assert coverage.labeled_fraction == pytest.approx((48 + coverage.filled) / 72)
    assert report.kinds["type"].labeled_fraction == pytest.approx(48 / 72)
    if coverage.filled:
        assert 0.0 <= coverage.accepted_precision <= 1.0


def test_ladder_rows():
    assert ladder_rows([90, 70, 50], "color") == [
        "Initial",
        "+EarlyStop",
        "+Compression(90)",
        "+Compression(90,70,50)",
        "+Team",
        "+Agreement",
    ]
    make = ladder_rows([90], "make")
    assert make == ["Initial", "+Bootstrap", "+EarlyStop", "+Compression(90)", "+Team", "+DynamicWeights", "+Agreement"]


def test_plan_rejects_model_kind():
    with pytest.raises(ValueError):
        IntegrationPlan(datasets=["a"], kinds={"model": KindPlan()})
    with pytest.raises(ValueError):
        MemberConfig(annotation="model")


@pytest.mark.slow
def test_ablation_ladder_for_color(tmp_path, tiny_datasets, tiny_plan):
    config = AblationConfig(plan=tiny_plan, kinds=["color"], seeds=[0, 1])
    ladder = ablation_ladder([tiny_datasets["alpha"], tiny_datasets["gamma"]], config)

    rows = ladder["kinds"]["color"]
    assert list(rows) == ladder_rows([90, 50], "color")
    for cell in rows.values():
        assert cell.holdouts == 2
        assert 0.0 <= cell.coverage <= 1.0
    assert rows["Initial"].coverage == 1.0
    assert sorted(ladder["per_seed"]) == [0, 1]

    document = json.loads(write_ladder(ladder, tmp_path / "ladder.json").read_text())
    assert set(document["per_seed"]) == {"0", "1"}


def test_ablation_needs_two_sources(tiny_datasets, tiny_plan):
    with pytest.raises(IntegrationError):
        ablation_ladder([tiny_datasets["alpha"]], AblationConfig(plan=tiny_plan, kinds=["color"]))
