"""Tests for the multi-branch network, its variants and the cascade heads."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from colabel.ndgrad import Tensor, grad_check
from colabel.network import (
    AttentionGate,
    CascadeHeads,
    Variant,
    attention_masks,
    build_model,
    cascade_predict,
    forward,
    parameter_census,
    train_cascade_heads,
)
from colabel.synth.models import stack_images
from colabel.utils.exceptions import ModelError


@pytest.fixture
def images(tiny_datasets):
    return stack_images([r.image for r in tiny_datasets["test"].records[:5]])


def _config(tiny_model_config, variant):
    return tiny_model_config.model_copy(update={"variant": variant})


@pytest.mark.parametrize("variant", [v for v in Variant if v != Variant.SMBL])
def test_forward_shapes(tiny_model_config, images, variant):
    config = _config(tiny_model_config, variant)
    outputs = forward(build_model(config, seed=0), images)

    assert outputs.y_fused.shape == (5, 12)
    assert outputs.x_fused.shape == (5, 3 * 8)
    for kind in config.branches:
        assert outputs.x_branch[kind].shape == (5, 8)
        assert outputs.y_branch[kind].shape == (5, config.class_counts[kind])
        assert outputs.y_branch_fused[kind].shape == (5, 12)
    np.testing.assert_array_equal(
        outputs.x_fused.data, np.concatenate([outputs.x_branch[k].data for k in config.branches], axis=1)
    )


def test_single_backbone_variant(tiny_model_config, images):
    outputs = forward(build_model(_config(tiny_model_config, Variant.SMBL), seed=0), images)
    assert outputs.x_branch == {}
    assert outputs.y_branch_fused == {}
    assert outputs.x_fused.shape == (5, 8)
    assert outputs.y_branch["make"].shape == (5, 3)


def test_build_is_deterministic(tiny_model_config):
    first = build_model(tiny_model_config, seed=4).state_dict()
    second = build_model(tiny_model_config, seed=4).state_dict()
    assert list(first) == list(second)
    for name in first:
        np.testing.assert_array_equal(first[name], second[name])


def test_attention_ablation_keeps_other_weights(tiny_model_config):
    gated = build_model(tiny_model_config, seed=2).state_dict()
    plain = build_model(_config(tiny_model_config, Variant.NO_ATT), seed=2).state_dict()
    assert set(plain) == {name for name in gated if ".gate." not in name}
    for name, value in plain.items():
        np.testing.assert_array_equal(value, gated[name])


def test_attention_masks(tiny_model_config, images):
    outputs = forward(build_model(tiny_model_config, seed=0), images)
    maps = attention_masks(outputs)
    assert set(maps) == {"shared", "color", "type", "make"}
    for mask in maps.values():
        assert mask.shape == (5, 32, 32)
        assert np.all((mask > 0) & (mask < 1))


def test_attention_masks_require_gates(tiny_model_config, images):
    outputs = forward(build_model(_config(tiny_model_config, Variant.NO_ATT), seed=0), images)
    with pytest.raises(ModelError):
        attention_masks(outputs)


def test_masks_belong_to_their_forward_call(tiny_model_config, images):
    model = build_model(tiny_model_config, seed=0)
    first = forward(model, images)
    kept = {owner: [mask.copy() for mask in masks] for owner, masks in first.masks.items()}
    second = forward(model, images[3:])
    for owner, masks in kept.items():
        for before, after in zip(masks, first.masks[owner]):
            np.testing.assert_array_equal(before, after)
        assert [mask.shape[0] for mask in second.masks[owner]] == [2] * len(masks)
    assert not any("mask" in name for name in vars(model.shared.gate))


def test_concurrent_forwards_on_a_shared_model(tiny_model_config, images):
    model = build_model(tiny_model_config, seed=0)
    batches = [images, images[3:], images[:1]]
    serial = [attention_masks(forward(model, batch)) for batch in batches]
    with ThreadPoolExecutor(max_workers=3) as pool:
        threaded = list(pool.map(lambda batch: attention_masks(forward(model, batch)), batches))
    for expected, actual in zip(serial, threaded):
        assert set(expected) == set(actual)
        for owner in expected:
            np.testing.assert_allclose(actual[owner], expected[owner])


def test_parameter_census(tiny_model_config):
    gated = parameter_census(build_model(tiny_model_config, seed=0))
    plain = parameter_census(build_model(_config(tiny_model_config, Variant.NO_ATT), seed=0))
    assert plain["attention"] == 0
    assert gated["total"] - gated["attention"] == plain["total"]
    assert gated["branches.color"] == gated["branches.make"]


def test_wrong_image_size(tiny_model_config):
    with pytest.raises(ModelError):
        forward(build_model(tiny_model_config, seed=0), np.zeros((2, 3, 16, 16)))


def test_gate_gradients(rng):
    gate = AttentionGate(4, rng, reduction=2)

    def f(x: Tensor) -> Tensor:
        return (gate(x) ** 2).mean()

    assert grad_check(f, Tensor(rng.normal(size=(2, 4, 4, 4)))) <= 1e-4


def test_cascade_routes_within_predicted_make(tiny_model_config, tiny_kb, tiny_datasets):
    model = build_model(_config(tiny_model_config, Variant.TWO_STAGE_CASCADE), seed=0)
    records = tiny_datasets["test"].records
    heads = train_cascade_heads(
        model,
        stack_images([r.image for r in records]),
        np.array([r.labels["model"] for r in records]),
        tiny_kb,
        seed=1,
        epochs=2,
    )
    assert isinstance(heads, CascadeHeads)
    prediction = cascade_predict(model, heads, stack_images([r.image for r in records[:6]]))

    assert prediction.scores.shape == (6, 12)
    for row, make in enumerate(prediction.routed_makes):
        allowed = heads.models_of(int(make))
        assert int(prediction.predictions[row]) in allowed
        outside = np.setdiff1d(np.arange(12), allowed)
        assert np.all(np.isneginf(prediction.scores[row, outside]))
