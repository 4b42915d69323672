"""Linear-operator view of a residual stack.

For linear branches W_1..W_H the stack ``(I + W_H) ... (I + W_1) x`` equals
the sum over every subset S of {1..H} of the ordered product of the W_h in
S applied to x (higher index applied later). Truncating that sum at
subsets of size <= 1 gives the parallel architecture.
"""

from __future__ import annotations

from itertools import combinations
from math import comb

import numpy as np

from .tensor import activation, activation_derivative

MAX_EXPANSION_DEPTH = 20


def _as_ops(ops, x) -> tuple[list[np.ndarray], np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x must be a vector")
    mats = [np.asarray(W, dtype=np.float64) for W in ops]
    for W in mats:
        if W.shape != (x.size, x.size):
            raise ValueError(f"operator shape {W.shape} does not match vector length {x.size}")
        if not np.all(np.isfinite(W)):
            raise ValueError("operator has non-finite entries")
    return mats, x


def sequential_apply(ops, x) -> np.ndarray:
    """``(I + W_H) ... (I + W_1) x``, applied layer by layer from W_1."""
    mats, z = _as_ops(ops, x)
    for W in mats:
        z = z + W @ z
    return z


def expansion_terms(depth: int, max_order: int):
    """Yield every subset (as an ascending tuple of 0-based layer indices) of size <= max_order."""
    for size in range(max_order + 1):
        yield from combinations(range(depth), size)


def term_count(depth: int, order: int) -> int:
    """Number of expansion terms using exactly ``order`` operators."""
    return comb(depth, order)


def expansion_apply(ops, x, max_order: int) -> np.ndarray:
    """Sum of all operator products with at most ``max_order`` factors, applied to x."""
    mats, x = _as_ops(ops, x)
    H = len(mats)
    if not 0 <= max_order <= H:
        raise ValueError(f"max_order must lie in 0..{H}, got {max_order}")
    if H > MAX_EXPANSION_DEPTH:
        raise ValueError(f"expansion enumerates 2^H terms; H={H} exceeds {MAX_EXPANSION_DEPTH}")
    y = np.zeros_like(x)
    for subset in expansion_terms(H, max_order):
        term = x
        for h in subset:
            term = mats[h] @ term
        y = y + term
    return y


def truncation_error(ops, x, order: int) -> float:
    """Relative L2 error of the order-truncated expansion against the full stack."""
    ref = sequential_apply(ops, x)
    norm = np.linalg.norm(ref)
    if norm == 0.0:
        raise ZeroDivisionError("reference output has zero norm")
    return float(np.linalg.norm(expansion_apply(ops, x, order) - ref) / norm)


def residual_dense_forward(Ws, bs, kind: str, x) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Run ``z_h = z_{h-1} + act(W_h z_{h-1} + b_h)``; return (z_0..z_H, pre-activations)."""
    z = np.asarray(x, dtype=np.float64)
    zs, pres = [z], []
    for W, b in zip(Ws, bs):
        pre = W @ z + b
        z = z + activation(kind, pre)
        zs.append(z)
        pres.append(pre)
    return zs, pres


def residual_gradient_product(Ws, kind: str, x, grad_out, h: int = 0, bs=None) -> np.ndarray:
    """dE/dz_h from dE/dz_H via the product of ``(I + W_k^T diag(act'(pre_k)))``.

    The product runs over k = h+1..H; the rightmost factor (k = H) meets
    ``grad_out`` first. Pre-activations come from a forward pass of the
    dense residual stack on ``x`` with biases ``bs`` (zeros if omitted).
    """
    Ws = [np.asarray(W, dtype=np.float64) for W in Ws]
    H = len(Ws)
    if not 0 <= h <= H:
        raise ValueError(f"h must lie in 0..{H}")
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != x.shape or any(W.shape != (x.size, x.size) for W in Ws):
        raise ValueError("dim mismatch between weights, x and grad_out")
    if bs is None:
        bs = [np.zeros(x.size)] * H
    _, pres = residual_dense_forward(Ws, bs, kind, x)
    for k in range(H - 1, h - 1, -1):
        g = g + Ws[k].T @ (activation_derivative(kind, pres[k]) * g)
    return g
