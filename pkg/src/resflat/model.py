"""Sequential residual CNN and its flattened parallel counterpart.

Both variants share one layout::

    x --1x1 conv--> p --[residual middle]--> z --flatten--> dense --> logits

and differ only in the residual middle:

* sequential: ``z_0 = p``, ``z_h = z_{h-1} + act(conv_h(z_{h-1}))``
* parallel:   ``z = p + sum_h act(conv_h(p))``

The parallel form is the order-1 truncation of the expanded sequential
stack (see :mod:`resflat.expansion`). Initialization depends only on the
layer's position, never on the variant.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import rng
from .tensor import (
    ConvKernel,
    activation,
    activation_backward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
)

IMAGE_SIZE = 32
VARIANTS = ("sequential", "parallel")


@dataclass(frozen=True)
class ArchitectureSpec:
    input_channels: int = 1
    depth: int = 1
    filters: int = 1
    kernel: int = 16
    activation: str = "relu"
    variant: str = "sequential"
    base_seed: int = 0
    num_classes: int = 10

    def __post_init__(self):
        if self.input_channels not in (1, 3):
            raise ValueError("input_channels must be 1 (MNIST) or 3 (CIFAR-10)")
        for name in ("depth", "filters", "kernel", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.activation not in ("sigmoid", "relu"):
            raise ValueError(f"activation must be 'sigmoid' or 'relu', got {self.activation!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0 <= self.base_seed <= rng.MASK64:
            raise ValueError("base_seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ArchitectureSpec:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown ArchitectureSpec fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> ArchitectureSpec:
        return cls.from_dict(json.loads(s))

    def with_variant(self, variant: str) -> ArchitectureSpec:
        return replace(self, variant=variant)


@dataclass
class ModelParams:
    """Parameter blocks: projection, H residual branches, dense classifier."""

    projection: ConvKernel
    branches: list[ConvKernel]
    classifier_weights: np.ndarray  # (1024 * F, num_classes)
    classifier_bias: np.ndarray  # (num_classes,)

    def blocks(self) -> list[np.ndarray]:
        """Flat list of every array, in a fixed order (used by the optimizer)."""
        out = [self.projection.weights, self.projection.bias]
        for b in self.branches:
            out += [b.weights, b.bias]
        out += [self.classifier_weights, self.classifier_bias]
        return out

    @classmethod
    def from_blocks(cls, blocks: list[np.ndarray]) -> ModelParams:
        if len(blocks) < 6 or len(blocks) % 2:
            raise ValueError("malformed block list")
        proj = ConvKernel(blocks[0], blocks[1])
        branches = [ConvKernel(blocks[i], blocks[i + 1]) for i in range(2, len(blocks) - 2, 2)]
        return cls(proj, branches, blocks[-2], blocks[-1])

    @property
    def block_count(self) -> int:
        return len(self.branches) + 2

    def size(self) -> int:
        return sum(b.size for b in self.blocks())

    def copy(self) -> ModelParams:
        return ModelParams.from_blocks([b.copy() for b in self.blocks()])

    def equal(self, other: ModelParams) -> bool:
        """Bitwise equality of every block."""
        a, b = self.blocks(), other.blocks()
        return len(a) == len(b) and all(
            x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(a, b)
        )


def _init_conv(seed: int, f_in: int, f_out: int, k: int) -> ConvKernel:
    fan_in, fan_out = f_in * k * k, f_out * k * k
    w = rng.glorot_uniform(seed, fan_in, fan_out, f_out * f_in * k * k)
    return ConvKernel(w.reshape(f_out, f_in, k, k), np.zeros(f_out))


def build_model(spec: ArchitectureSpec) -> ModelParams:
    """Seeded initial parameters for ``spec`` (Glorot-uniform weights, zero biases)."""
    F, k = spec.filters, spec.kernel
    proj = _init_conv(rng.layer_seed(spec.base_seed, rng.PROJECTION_INDEX), spec.input_channels, F, 1)
    branches = [_init_conv(rng.layer_seed(spec.base_seed, h), F, F, k)
                for h in range(1, spec.depth + 1)]
    d = IMAGE_SIZE * IMAGE_SIZE * F
    seed = rng.layer_seed(spec.base_seed, rng.CLASSIFIER_INDEX)
    w = rng.glorot_uniform(seed, d, spec.num_classes, d * spec.num_classes).reshape(d, spec.num_classes)
    return ModelParams(proj, branches, w, np.zeros(spec.num_classes))


@dataclass
class ForwardCache:
    x: np.ndarray
    projected: np.ndarray
    # sequential: inputs z_0..z_{H-1} of each branch; parallel: unused (all = projected)
    branch_inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    features: np.ndarray | None = None  # flattened z


def _check_input(params: ModelParams, spec: ArchitectureSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    expected = (spec.input_channels, IMAGE_SIZE, IMAGE_SIZE)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"input must have shape (n, {', '.join(map(str, expected))}), got {x.shape}")
    if len(params.branches) != spec.depth:
        raise ValueError(f"params have {len(params.branches)} branches, spec depth is {spec.depth}")
    return x


def forward(params: ModelParams, spec: ArchitectureSpec, x: np.ndarray,
            keep_cache: bool = True) -> tuple[np.ndarray, ForwardCache | None]:
    """Logits of shape (n, num_classes) and, optionally, the activation cache."""
    x = _check_input(params, spec, x)
    p = conv2d_forward(x, params.projection)
    cache = ForwardCache(x=x, projected=p) if keep_cache else None
    z = p
    if spec.variant == "sequential":
        for kern in params.branches:
            pre = conv2d_forward(z, kern)
            if keep_cache:
                cache.branch_inputs.append(z)
                cache.pre_activations.append(pre)
            z = z + activation(spec.activation, pre)
    else:
        for kern in params.branches:
            pre = conv2d_forward(p, kern)
            if keep_cache:
                cache.pre_activations.append(pre)
            z = z + activation(spec.activation, pre)
    flat = z.reshape(z.shape[0], -1)
    if keep_cache:
        cache.features = flat
    logits = dense_forward(flat, params.classifier_weights, params.classifier_bias)
    return logits, cache


def backward(params: ModelParams, spec: ArchitectureSpec, cache: ForwardCache,
             grad_logits: np.ndarray) -> ModelParams:
    """Reverse-mode gradients, returned in the same layout as ``params``."""
    if cache is None or cache.features is None:
        raise ValueError("backward needs the cache of a forward(keep_cache=True) call")
    n = cache.x.shape[0]
    if len(cache.pre_activations) != len(params.branches) or grad_logits.shape != (n, spec.num_classes):
        raise ValueError("stale cache: shapes do not match params/grad_logits")
    if cache.features.shape[1] != params.classifier_weights.shape[0]:
        raise ValueError("stale cache: feature width does not match classifier")
    g_flat, g_cw, g_cb = dense_backward(cache.features, params.classifier_weights, grad_logits)
    gz = g_flat.reshape(cache.projected.shape)
    grads: list[ConvKernel | None] = [None] * len(params.branches)
    if spec.variant == "sequential":
        # identity path carries gz through untouched; each branch adds its share
        for h in reversed(range(len(params.branches))):
            g_pre = activation_backward(spec.activation, cache.pre_activations[h], gz)
            gx, grads[h] = conv2d_backward(cache.branch_inputs[h], params.branches[h], g_pre)
            gz = gz + gx
        gp = gz
    else:
        gp = gz
        for h, kern in enumerate(params.branches):
            g_pre = activation_backward(spec.activation, cache.pre_activations[h], gz)
            gx, grads[h] = conv2d_backward(cache.projected, kern, g_pre)
            gp = gp + gx
    _, g_proj = conv2d_backward(cache.x, params.projection, gp, need_grad_x=False)
    return ModelParams(g_proj, grads, g_cw, g_cb)


def parameter_count(spec: ArchitectureSpec) -> int:
    """Total trainable scalars; independent of the variant."""
    F, k, H = spec.filters, spec.kernel, spec.depth
    projection = spec.input_channels * F + F
    branches = H * (k * k * F * F + F)
    classifier = IMAGE_SIZE * IMAGE_SIZE * F * spec.num_classes + spec.num_classes
    return projection + branches + classifier


def overdetermination_ratio(examples: int, outputs: int, parameters: int) -> float:
    """Constraints per free parameter, ``K * M / P``."""
    if parameters <= 0:
        raise ValueError("parameter count must be >= 1")
    return examples * outputs / parameters
