"""
Fixed feature space for clustering and overlap.

Every dataset is embedded by the same randomly initialized, frozen
convolutional backbone, so overlaps between any two datasets are measured
in one space that no team member influences.
"""

import numpy as np

from colabel.corroborate.models import FeatureConfig
from colabel.ndgrad import Tensor, no_grad
from colabel.network.layers import Backbone
from colabel.synth.models import DataRecord, stack_images


class FrozenEmbedder:
    """Random conv backbone whose parameters never receive gradients."""

    def __init__(self, config: FeatureConfig | None = None) -> None:
        self.config = config or FeatureConfig()
        rng = np.random.default_rng(self.config.seed)
        self.backbone = Backbone(
            self.config.stem_channels,
            self.config.stage_widths,
            self.config.feature_dim,
            rng,
            attention=False,
        )
        self.backbone.freeze()

    def __call__(self, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
        """N×3×H×W floats in [0, 1] → N×feature_dim."""
        chunks = [np.zeros((0, self.config.feature_dim))]
        with no_grad():
            for start in range(0, len(images), batch_size):
                chunks.append(self.backbone(Tensor(images[start:start + batch_size])).data)
        return np.concatenate(chunks)

    def embed_records(self, records: list[DataRecord]) -> np.ndarray:
        return self(stack_images([record.image for record in records]))
