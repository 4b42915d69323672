"""Forward/backward kernels on dense float64 arrays.

Image tensors are plain ``np.ndarray`` of shape (n, c, h, w); flat tensors
are (n, d). Convolutions use stride 1 and zero "same" padding with
``floor((k-1)/2)`` rows/cols before and ``ceil((k-1)/2)`` after, so the
spatial size is preserved for odd and even kernels alike.

The convolution loops are compiled with numba (no fastmath, so no
reassociation); each output accumulates in a fixed row-major order, which
keeps results bitwise reproducible between runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

ACTIVATIONS = ("sigmoid", "relu", "identity")


@dataclass
class ConvKernel:
    weights: np.ndarray  # (f_out, f_in, k, k)
    bias: np.ndarray  # (f_out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ValueError(f"conv weights must be (f_out, f_in, k, k), got {self.weights.shape}")
        if min(self.weights.shape) < 1:
            raise ValueError("conv kernel dimensions must be >= 1")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match f_out={self.weights.shape[0]}")

    @property
    def f_out(self) -> int:
        return self.weights.shape[0]

    @property
    def f_in(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size

    def copy(self) -> ConvKernel:
        return ConvKernel(self.weights.copy(), self.bias.copy())


def check_finite(a: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains NaN or Inf")
    return a


def _check_image(x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"{name} must have shape (n, c, h, w), got {x.shape}")
    if x.size == 0:
        raise ValueError(f"{name} is empty")
    return check_finite(x, name)


def same_padding(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k // 2


def _pad(x: np.ndarray, before: int, after: int) -> np.ndarray:
    if before == 0 and after == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (before, after), (before, after)))


@njit(cache=True)
def _conv_fwd(xp, w, b, out):
    n, f_out, h, wd = out.shape
    f_in, k = w.shape[1], w.shape[2]
    for s in range(n):
        for o in range(f_out):
            out[s, o, :, :] = b[o]
            for c in range(f_in):
                for u in range(k):
                    for v in range(k):
                        wt = w[o, c, u, v]
                        for i in range(h):
                            for j in range(wd):
                                out[s, o, i, j] += xp[s, c, i + u, j + v] * wt


@njit(cache=True)
def _conv_bwd(xp, w, gy, gw, gxp, need_gx):
    n, f_out, h, wd = gy.shape
    f_in, k = w.shape[1], w.shape[2]
    # per-column partial sums keep the reduction vectorizable and its order fixed
    acc = np.empty(wd)
    for s in range(n):
        for o in range(f_out):
            for c in range(f_in):
                for u in range(k):
                    for v in range(k):
                        acc[:] = 0.0
                        for i in range(h):
                            for j in range(wd):
                                acc[j] += gy[s, o, i, j] * xp[s, c, i + u, j + v]
                        total = 0.0
                        for j in range(wd):
                            total += acc[j]
                        gw[o, c, u, v] += total
                        if need_gx:
                            wt = w[o, c, u, v]
                            for i in range(h):
                                for j in range(wd):
                                    gxp[s, c, i + u, j + v] += gy[s, o, i, j] * wt


def conv2d_forward(x: np.ndarray, kern: ConvKernel) -> np.ndarray:
    """Same-padded, stride-1 cross-correlation plus bias.

    ``y[n,o,i,j] = bias[o] + sum_{c,u,v} xpad[n,c,i+u,j+v] * w[o,c,u,v]``,
    accumulated starting from the bias in (c, u, v) row-major order.
    """
    x = _check_image(x)
    if x.shape[1] != kern.f_in:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {kern.f_in}")
    n, _, h, w = x.shape
    xp = np.ascontiguousarray(_pad(x, *same_padding(kern.k)))
    y = np.empty((n, kern.f_out, h, w))
    _conv_fwd(xp, np.ascontiguousarray(kern.weights), kern.bias, y)
    return y


def conv2d_backward(x: np.ndarray, kern: ConvKernel, grad_y: np.ndarray,
                    need_grad_x: bool = True) -> tuple[np.ndarray | None, ConvKernel]:
    """Gradients of :func:`conv2d_forward` w.r.t. its input and kernel.

    Returns ``(grad_x, grad_kernel)``; ``grad_x`` is None when
    ``need_grad_x`` is False (e.g. for the first layer).
    """
    x = _check_image(x)
    grad_y = _check_image(grad_y, "grad_y")
    n, c, h, w = x.shape
    if grad_y.shape != (n, kern.f_out, h, w) or c != kern.f_in:
        raise ValueError(f"shape mismatch: x {x.shape}, grad_y {grad_y.shape}, "
                         f"kernel {kern.weights.shape}")
    before, after = same_padding(kern.k)
    xp = np.ascontiguousarray(_pad(x, before, after))
    gw = np.zeros_like(kern.weights)
    gxp = np.zeros(xp.shape if need_grad_x else (1, 1, 1, 1))
    _conv_bwd(xp, np.ascontiguousarray(kern.weights), np.ascontiguousarray(grad_y), gw, gxp, need_grad_x)
    gb = grad_y.sum(axis=(0, 2, 3))
    grad_x = None
    if need_grad_x:
        grad_x = np.ascontiguousarray(gxp[:, :, before:before + h, before:before + w])
    return grad_x, ConvKernel(gw, gb)


def _check_dense(x, weights, bias=None):
    x = check_finite(np.asarray(x, dtype=np.float64), "x")
    weights = np.asarray(weights, dtype=np.float64)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(f"dim mismatch: x {x.shape}, weights {weights.shape}")
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weights.shape[1],):
            raise ValueError(f"bias shape {bias.shape} does not match {weights.shape[1]} outputs")
    return x, weights, bias


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``x @ weights + bias`` with x of shape (n, d)."""
    x, weights, bias = _check_dense(x, weights, bias)
    return x @ weights + bias


def dense_backward(x: np.ndarray, weights: np.ndarray, grad_y: np.ndarray):
    """Return ``(grad_x, grad_weights, grad_bias)`` for :func:`dense_forward`."""
    x, weights, _ = _check_dense(x, weights)
    grad_y = check_finite(np.asarray(grad_y, dtype=np.float64), "grad_y")
    if grad_y.shape != (x.shape[0], weights.shape[1]):
        raise ValueError(f"grad_y shape {grad_y.shape} does not match output "
                         f"{(x.shape[0], weights.shape[1])}")
    return grad_y @ weights.T, x.T @ grad_y, grad_y.sum(axis=0)


def sigmoid(t: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "identity":
        return np.asarray(x, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_derivative(kind: str, x: np.ndarray) -> np.ndarray:
    """Elementwise derivative at pre-activation ``x`` (ReLU'(0) is taken as 0)."""
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind == "relu":
        return (np.asarray(x) > 0).astype(np.float64)
    if kind == "identity":
        return np.ones(np.shape(x))
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(kind: str, x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return np.asarray(grad_y, dtype=np.float64)
    return grad_y * activation_derivative(kind, x)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient w.r.t. the logits.

    The gradient is ``(softmax - onehot) / n``, i.e. already averaged over
    the batch.
    """
    logits = check_finite(np.asarray(logits, dtype=np.float64), "logits")
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n, m = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ValueError(f"labels must lie in 0..{m - 1}")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -float(logp[rows, labels].sum()) / n
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad
