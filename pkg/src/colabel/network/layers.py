"""
Building blocks: attention gate, conv stages and the branch backbone.

Gates keep no per-call state. Callers that want the spatial masks use the
``*_with_masks`` forwards, which return them next to the activations.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from colabel.ndgrad import Conv2d, Linear, Module, Tensor
from colabel.ndgrad import functional as F

GateMask = Optional[np.ndarray]


class AttentionGate(Module):
    """
    Two-path gate: channel scaling followed by a spatial mask.

    Channel path: global average pool → Linear(C, C/r) → ReLU → Linear(C/r, C)
    → sigmoid. Spatial path: channel mean → 3×3 conv → sigmoid. The output
    has the input's shape.
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4) -> None:
        hidden = max(1, channels // reduction)
        self.squeeze = Linear(channels, hidden, rng)
        self.excite = Linear(hidden, channels, rng)
        self.spatial = Conv2d(1, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_with_mask(x)[0]

    def forward_with_mask(self, x: Tensor) -> tuple[Tensor, GateMask]:
        """Gated output and the spatial mask of this call, N×H×W."""
        n, c = x.shape[0], x.shape[1]
        descriptor = F.global_avg_pool(x)
        scale = self.excite(self.squeeze(descriptor).relu()).sigmoid()
        x = x * scale.reshape(n, c, 1, 1)
        mask = self.spatial(x.mean(axis=1, keepdims=True)).sigmoid()
        return x * mask, mask.data[:, 0].copy()


class IdentityGate(Module):
    """Stand-in for the gate in the attention ablation."""

    def forward(self, x: Tensor) -> Tensor:
        return x

    def forward_with_mask(self, x: Tensor) -> tuple[Tensor, GateMask]:
        return x, None


class ConvStage(Module):
    """conv 3×3 → ReLU → gate → 2×2 average pool."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        attention: bool = True,
        reduction: int = 4,
        gate_rng: Optional[np.random.Generator] = None,
    ) -> None:
        self.conv = Conv2d(in_channels, out_channels, rng)
        self.gate: AttentionGate | IdentityGate = (
            AttentionGate(out_channels, rng if gate_rng is None else gate_rng, reduction) if attention else IdentityGate()
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_with_mask(x)[0]

    def forward_with_mask(self, x: Tensor) -> tuple[Tensor, GateMask]:
        gated, mask = self.gate.forward_with_mask(self.conv(x).relu())
        return F.avg_pool2d(gated), mask


class Branch(Module):
    """Conv stages, global average pooling and a linear projection to the feature dimension."""

    def __init__(
        self,
        in_channels: int,
        widths: list[int],
        feature_dim: int,
        rng: np.random.Generator,
        attention: bool = True,
        reduction: int = 4,
        gate_rng: Optional[np.random.Generator] = None,
    ) -> None:
        stages = []
        for width in widths:
            stages.append(ConvStage(in_channels, width, rng, attention, reduction, gate_rng))
            in_channels = width
        self.stages = stages
        self.projection = Linear(in_channels, feature_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_with_masks(x)[0]

    def forward_with_masks(self, x: Tensor) -> tuple[Tensor, list[np.ndarray]]:
        """Feature vector and the masks of the gated stages, in stage order."""
        masks = []
        for stage in self.stages:
            x, mask = stage.forward_with_mask(x)
            if mask is not None:
                masks.append(mask)
        return self.projection(F.global_avg_pool(x)), masks


class Backbone(Module):
    """Input stem followed by a branch: image → feature vector."""

    def __init__(
        self,
        stem_channels: int,
        widths: list[int],
        feature_dim: int,
        rng: np.random.Generator,
        attention: bool = True,
        reduction: int = 4,
        gate_rng: Optional[np.random.Generator] = None,
    ) -> None:
        self.stem = ConvStage(3, stem_channels, rng, attention, reduction, gate_rng)
        self.branch = Branch(stem_channels, widths, feature_dim, rng, attention, reduction, gate_rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.branch(self.stem(x))
