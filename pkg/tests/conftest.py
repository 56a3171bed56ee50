"""Test configuration and shared fixtures."""

from typing import Dict

import numpy as np
import pytest
import structlog

from colabel.config import AppConfig, LoggingConfig, RuntimeConfig
from colabel.corroborate.models import EnsembleConfig, FeatureConfig, IntegrationPlan, MemberConfig
from colabel.network.models import ModelConfig, Variant
from colabel.synth.generator import generate_all, knowledgebase_from_catalog
from colabel.synth.models import Dataset, DatasetPlan, DomainShift, GenerationConfig, KnowledgeBase, Schema
from colabel.training.models import TrainConfig


@pytest.fixture(autouse=True)
def _reset_structlog():
    """Drop logging config bound to a test's captured stderr once it closes."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def test_config() -> AppConfig:
    """Create a test configuration."""
    config = AppConfig()
    config.runtime = RuntimeConfig(threads=1, output_root="runs-test")
    config.logging = LoggingConfig(level="DEBUG", format="text")
    return config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_schema() -> Schema:
    """3 colors, 2 types, 3 makes, 2 variants: 12 models at 32×32."""
    return Schema(n_colors=3, n_types=2, n_makes=3, n_variants=2, image_size=32)


@pytest.fixture
def tiny_kb(tiny_schema: Schema) -> KnowledgeBase:
    return knowledgebase_from_catalog(tiny_schema)


@pytest.fixture
def tiny_generation(tiny_schema: Schema) -> GenerationConfig:
    """Three partially annotated sources and a fully annotated test set."""
    return GenerationConfig(
        schema=tiny_schema,
        seed=7,
        datasets=[
            DatasetPlan(name="alpha", count=24, visibility={"type": False},
                        domain=DomainShift(background=40, noise=3.0)),
            DatasetPlan(name="beta", count=24, visibility={"color": False},
                        domain=DomainShift(background=70, noise=5.0)),
            DatasetPlan(name="gamma", count=24, visibility={"make": False},
                        domain=DomainShift(background=25, noise=2.0)),
            DatasetPlan(name="test", count=24),
        ],
    )


@pytest.fixture
def tiny_datasets(tiny_generation: GenerationConfig) -> Dict[str, Dataset]:
    return generate_all(tiny_generation)


@pytest.fixture
def tiny_model_config(tiny_schema: Schema) -> ModelConfig:
    return ModelConfig.from_schema(
        tiny_schema, Variant.COLABEL, shared_channels=4, stage_widths=[4, 8], feature_dim=8
    )


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=16, learning_rate=2e-3, cascade_epochs=3)


@pytest.fixture
def tiny_member_config() -> MemberConfig:
    return MemberConfig(
        annotation="color",
        epochs=2,
        patience=1,
        stem_channels=4,
        stage_widths=[4],
        feature_dim=8,
        classes_per_batch=3,
        samples_per_class=2,
    )


@pytest.fixture
def tiny_plan(tiny_member_config: MemberConfig) -> IntegrationPlan:
    return IntegrationPlan(
        datasets=["alpha", "beta", "gamma"],
        clusters=3,
        member=tiny_member_config,
        ensemble=EnsembleConfig(quality_factors=[90, 50]),
        features=FeatureConfig(stem_channels=4, stage_widths=[4], feature_dim=8),
        seed=3,
    )
