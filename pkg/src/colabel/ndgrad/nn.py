"""
Parameter containers and layers.

``Module`` discovers its parameters by walking its attributes in
definition order (tensors that require gradients, nested modules, and
lists/dicts of modules), which gives every parameter a stable dotted
name for persistence and for optimizer state alignment.

Initialization is deterministic: weights are drawn uniformly in
±√(6/(fan_in+fan_out)) from the ``numpy.random.Generator`` passed to the
layer, biases start at zero.
"""

from __future__ import annotations

from typing import Any, Iterator, Mapping

import numpy as np

from colabel.ndgrad import functional as F
from colabel.ndgrad.tensor import Parameter, Tensor
from colabel.utils.exceptions import ShapeError


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> Parameter:
    """Uniform Glorot initialization as a trainable tensor."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-bound, bound, size=shape))


def zeros_parameter(shape: tuple[int, ...]) -> Parameter:
    return Parameter(np.zeros(shape))


class Module:
    """Base class for anything that owns parameters."""

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, Any]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield name, value

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        """Parameters with dotted names, in definition order."""
        found: list[tuple[str, Tensor]] = []
        for name, value in self._children():
            found.extend(_collect(f"{prefix}{name}", value))
        return found

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        """Stop gradients to every parameter (used for fixed feature extractors)."""
        for p in self.parameters():
            p.requires_grad = False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """
        Copy arrays into the parameters with matching names.

        Raises:
            ShapeError: On missing/unexpected names or shape mismatches
        """
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(
                "State does not match module parameters",
                context={"missing": missing[:5], "unexpected": unexpected[:5]},
            )
        for name, param in params.items():
            array = np.asarray(state[name], dtype=np.float64)
            if array.shape != param.shape:
                raise ShapeError(
                    "Parameter shape mismatch",
                    context={"name": name, "expected": param.shape, "got": array.shape},
                )
            param.data = array.copy()


def _collect(name: str, value: Any) -> list[tuple[str, Tensor]]:
    if isinstance(value, Parameter):
        return [(name, value)]
    if isinstance(value, Module):
        return value.named_parameters(prefix=f"{name}.")
    if isinstance(value, (list, tuple)):
        found: list[tuple[str, Tensor]] = []
        for index, item in enumerate(value):
            found.extend(_collect(f"{name}.{index}", item))
        return found
    if isinstance(value, dict):
        found = []
        for key, item in value.items():
            found.extend(_collect(f"{name}.{key}", item))
        return found
    return []


class Linear(Module):
    """Affine map x·W + b with W of shape in×out."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        self.weight = glorot_uniform((in_features, out_features), in_features, out_features, rng)
        self.bias = zeros_parameter((out_features,))

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """3×3 convolution with bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        stride: int = 1,
        pad: int = 1,
    ) -> None:
        fan_in, fan_out = in_channels * 9, out_channels * 9
        self.weight = glorot_uniform((out_channels, in_channels, 3, 3), fan_in, fan_out, rng)
        self.bias = zeros_parameter((out_channels,))
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)
