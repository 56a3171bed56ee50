"""
Neural-network operations on ndgrad tensors.

Convolution, pooling, softmax/cross-entropy and the distance helpers used
by the embedding losses. Each function records its own backward rule so
the graph stays small even for large convolutions.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from colabel.ndgrad.tensor import Tensor
from colabel.utils.exceptions import ShapeError

KERNEL = 3


def conv_output_size(size: int, stride: int, pad: int) -> int:
    """
    Output extent of a 3×3 convolution: (size + 2·pad − 3) / stride + 1.

    Raises:
        ShapeError: If the division is not exact or the result is empty
    """
    span = size + 2 * pad - KERNEL
    if span < 0 or span % stride != 0:
        raise ShapeError(
            "Convolution output size is not an integer",
            context={"size": size, "stride": stride, "pad": pad},
        )
    return span // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 1,
) -> Tensor:
    """
    3×3 cross-correlation of an N×C×H×W input with a K×C×3×3 kernel.

    Args:
        x: Input batch
        weight: Kernel bank
        bias: Optional per-output-channel bias of shape (K,)
        stride: 1 or 2
        pad: 0 or 1 (zero padding on every side)

    Returns:
        Output of shape N×K×H'×W'

    Raises:
        ShapeError: For unsupported stride/pad, channel mismatch or non-integer output size
    """
    if stride not in (1, 2) or pad not in (0, 1):
        raise ShapeError("conv2d supports stride in {1,2} and pad in {0,1}",
                         context={"stride": stride, "pad": pad})
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2:] != (KERNEL, KERNEL):
        raise ShapeError("conv2d needs N×C×H×W input and K×C×3×3 kernel",
                         context={"x": x.shape, "weight": weight.shape})
    n, c, h, w = x.shape
    k = weight.shape[0]
    if weight.shape[1] != c:
        raise ShapeError("Kernel channels do not match input channels",
                         context={"x": x.shape, "weight": weight.shape})
    out_h = conv_output_size(h, stride, pad)
    out_w = conv_output_size(w, stride, pad)

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))[:, :, ::stride, ::stride]
    # windows: N×C×H'×W'×3×3
    w_data = weight.data
    out = np.tensordot(windows, w_data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, k, 1, 1)

    def backward(g: np.ndarray) -> list[Optional[np.ndarray]]:
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_padded = np.zeros_like(padded)
        for i in range(KERNEL):
            for j in range(KERNEL):
                grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += np.einsum(
                    "nkhw,kc->nchw", g, w_data[:, :, i, j]
                )
        grad_x = grad_padded[:, :, pad:pad + h, pad:pad + w] if pad else grad_padded
        grads: list[Optional[np.ndarray]] = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, "conv2d")


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping average pooling; spatial dims must be divisible by ``size``."""
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError("Pooling window does not tile the input", context={"shape": x.shape, "size": size})
    pooled = x.data.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5))
    scale = 1.0 / (size * size)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.repeat(np.repeat(g, size, axis=2), size, axis=3) * scale,)

    return Tensor._make(pooled, (x,), backward, "avg_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over the spatial axes of an N×C×H×W tensor, giving N×C."""
    return x.mean(axis=(2, 3))


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    """Row softmax computed with max subtraction."""
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (z,), backward, "softmax")


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax."""
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (z,), backward, "log_softmax")


def cross_entropy(logits: Tensor, targets: Sequence[int] | np.ndarray) -> Tensor:
    """
    Mean cross-entropy between N×C logits and integer class targets.

    The log-softmax is fused into the loss; the backward rule is
    (softmax − onehot) / N.

    Raises:
        ShapeError: On an empty batch, non 2-D logits or out-of-range targets
    """
    if logits.ndim != 2:
        raise ShapeError("cross_entropy needs N×C logits", context={"shape": logits.shape})
    n, c = logits.shape
    target_idx = np.asarray(targets, dtype=np.int64).reshape(-1)
    if n == 0:
        raise ShapeError("cross_entropy on an empty batch")
    if target_idx.shape[0] != n:
        raise ShapeError("Target count does not match batch size",
                         context={"batch": n, "targets": target_idx.shape[0]})
    if target_idx.min() < 0 or target_idx.max() >= c:
        raise ShapeError("Target index outside [0, C)", context={"classes": c})

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -log_probs[rows, target_idx].mean()

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, target_idx] -= 1.0
        return (grad * (g / n),)

    return Tensor._make(np.asarray(loss), (logits,), backward, "cross_entropy")


def soft_cross_entropy(logits: Tensor, target_probs: Tensor) -> Tensor:
    """
    −(1/N) Σ_i Σ_c target[i, c] · log softmax(logits)[i, c].

    Gradients reach ``target_probs`` too unless the caller detaches it.
    """
    if logits.shape != target_probs.shape:
        raise ShapeError("Soft cross-entropy operands differ in shape",
                         context={"logits": logits.shape, "targets": target_probs.shape})
    n = logits.shape[0]
    if n == 0:
        raise ShapeError("soft_cross_entropy on an empty batch")
    return (target_probs * log_softmax(logits, axis=1)).sum() * (-1.0 / n)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row of an N×D tensor to unit L2 norm."""
    norms = ((x * x).sum(axis=1, keepdims=True) + eps).sqrt()
    return x / norms


def pairwise_euclidean(x: Tensor, eps: float = 1e-12) -> Tensor:
    """N×N matrix of Euclidean distances between the rows of an N×D tensor."""
    n, d = x.shape
    diff = x.reshape(n, 1, d) - x.reshape(1, n, d)
    return ((diff * diff).sum(axis=2) + eps).sqrt()


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x·W (+ b) for N×I input and I×O weight."""
    out = x @ weight
    return out if bias is None else out + bias
