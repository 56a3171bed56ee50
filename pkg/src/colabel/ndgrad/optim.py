"""
First-order optimizers.

``optimizer_step`` is the functional core: it applies one SGD or Adam update
to a list of parameters given their gradients and an ``OptimizerState``.
``SGD`` and ``Adam`` wrap it for the usual ``step()`` / ``zero_grad()``
training loop over a module's parameter list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from colabel.ndgrad.tensor import Tensor
from colabel.utils.exceptions import ShapeError

Method = Literal["sgd", "adam"]


@dataclass
class OptimizerState:
    """
    Learning rate, step counter and per-parameter moment buffers.

    ``first_moments``/``second_moments`` are created lazily on the first
    adaptive step and always match the parameter shapes.
    """

    learning_rate: float
    step: int = 0
    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: OptimizerState,
    method: Method = "sgd",
) -> list[Tensor]:
    """
    Update ``params`` in place and return them.

    A ``None`` gradient is treated as zero. SGD: p ← p − lr·g. Adam: the
    standard bias-corrected first/second-moment update.

    Raises:
        ShapeError: If the parameter and gradient lists disagree in length or shape
    """
    if len(params) != len(grads):
        raise ShapeError(
            "Parameter and gradient counts differ",
            context={"params": len(params), "grads": len(grads)},
        )
    resolved: list[np.ndarray] = []
    for param, grad in zip(params, grads):
        g = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if g.shape != param.shape:
            raise ShapeError(
                "Gradient shape does not match parameter",
                context={"param": param.shape, "grad": g.shape},
            )
        resolved.append(g)

    state.step += 1
    lr = state.learning_rate
    if method == "sgd":
        for param, g in zip(params, resolved):
            param.data = param.data - lr * g
        return list(params)

    if not state.first_moments:
        state.first_moments = [np.zeros_like(p.data) for p in params]
        state.second_moments = [np.zeros_like(p.data) for p in params]
    elif len(state.first_moments) != len(params):
        raise ShapeError(
            "Optimizer state was built for a different parameter list",
            context={"state": len(state.first_moments), "params": len(params)},
        )

    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for index, (param, g) in enumerate(zip(params, resolved)):
        m = state.beta1 * state.first_moments[index] + (1.0 - state.beta1) * g
        v = state.beta2 * state.second_moments[index] + (1.0 - state.beta2) * g * g
        state.first_moments[index] = m
        state.second_moments[index] = v
        m_hat = m / correction1
        v_hat = v / correction2
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return list(params)


class _Optimizer:
    method: Method = "sgd"

    def __init__(self, params: Sequence[Tensor], learning_rate: float) -> None:
        self.params = list(params)
        self.state = OptimizerState(learning_rate=learning_rate)

    def step(self) -> None:
        # frozen parameters keep their slot so moment buffers stay aligned
        grads = [p.grad if p.requires_grad else None for p in self.params]
        optimizer_step(self.params, grads, self.state, self.method)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGD(_Optimizer):
    """Plain stochastic gradient descent."""

    method: Method = "sgd"


class Adam(_Optimizer):
    """Adam with β₁=0.9, β₂=0.999, ε=1e-8 unless overridden."""

    method: Method = "adam"

    def __init__(
        self,
        params: Sequence[Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        super().__init__(params, learning_rate)
        self.state.beta1 = beta1
        self.state.beta2 = beta2
        self.state.eps = eps
