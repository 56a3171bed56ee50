"""
Finite-difference verification of backward rules.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from colabel.ndgrad.tensor import Tensor, no_grad
from colabel.utils.exceptions import GradientError

EPS_RANGE = (1e-6, 1e-3)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


def _check_eps(eps: float) -> None:
    if not EPS_RANGE[0] <= eps <= EPS_RANGE[1]:
        raise GradientError("grad_check eps outside [1e-6, 1e-3]", context={"eps": eps})


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """
    Compare the backward gradient of scalar ``f`` at ``x`` with central differences.

    Args:
        f: Tensor function returning a scalar tensor
        x: Point of evaluation (its values are copied, never modified)
        eps: Finite-difference step in [1e-6, 1e-3]

    Returns:
        max |a − n| / max(1, |a|, |n|) over all entries of x
    """
    _check_eps(eps)
    leaf = Tensor(x.data, requires_grad=True)
    f(leaf).backward()
    analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad

    base = x.data.astype(np.float64).copy()
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    with no_grad():
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + eps
            upper = f(Tensor(base)).item()
            flat[index] = original - eps
            lower = f(Tensor(base)).item()
            flat[index] = original
            numeric.reshape(-1)[index] = (upper - lower) / (2.0 * eps)
    return _relative_error(analytic, numeric)


def grad_check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Check gradients of a closure-built loss with respect to parameter tensors.

    Parameters are perturbed in place and restored. With ``max_entries``,
    only that many randomly chosen entries per parameter are checked.

    Returns:
        Maximum relative error over every checked entry
    """
    _check_eps(eps)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)

    worst = 0.0
    for param, grad in zip(params, analytic):
        flat = param.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.zeros(len(indices))
        with no_grad():
            for slot, index in enumerate(indices):
                original = flat[index]
                flat[index] = original + eps
                upper = loss_fn().item()
                flat[index] = original - eps
                lower = loss_fn().item()
                flat[index] = original
                numeric[slot] = (upper - lower) / (2.0 * eps)
        worst = max(worst, _relative_error(grad.reshape(-1)[indices], numeric))
    return worst
