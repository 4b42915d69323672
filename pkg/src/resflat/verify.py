"""Self-checks run by ``resflat verify``.

Each check returns a :class:`CheckResult`; the suite never raises on a
failed property, it reports it. Kernels are looked up through their
modules at call time, so a patched kernel is what gets checked.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import expansion, model, tensor
from .data import Dataset
from .train import TrainConfig, train


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den)) if a.size else 0.0


def numeric_grad(f, arr: np.ndarray, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (perturbed in place)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        out[n] = (fp - fm) / (2 * step)
    return out


def check_expansion_exactness(trials: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        H, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        ops = [rng.normal(scale=0.5, size=(d, d)) for _ in range(H)]
        x = rng.normal(size=d)
        ref = expansion.sequential_apply(ops, x)
        full = expansion.expansion_apply(ops, x, H)
        worst = max(worst, float(np.linalg.norm(full - ref) / np.linalg.norm(ref)))
    return CheckResult("expansion_exactness", worst <= 1e-10, f"max rel err {worst:.2e} over {trials} stacks")


def small_norm_operators(rng: np.random.Generator, depth: int, dim: int, norm: float = 0.2):
    """Random Gaussian operators rescaled to spectral norm ``norm``."""
    ops = [rng.normal(size=(dim, dim)) for _ in range(depth)]
    return [norm * W / np.linalg.norm(W, 2) for W in ops]


def check_truncation_scaling(trials: int = 20, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(trials):
        H, d = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        ops = small_norm_operators(rng, H, d)
        x = rng.normal(size=d)
        e1 = expansion.truncation_error([0.1 * W for W in ops], x, 1)
        e2 = expansion.truncation_error([0.01 * W for W in ops], x, 1)
        ratios.append(e1 / e2)
    lo, hi = min(ratios), max(ratios)
    return CheckResult("truncation_scaling", 80 <= lo and hi <= 120,
                       f"order-1 error ratio per decade of alpha in [{lo:.1f}, {hi:.1f}]")


def _backprop_dense_stack(Ws, bs, kind, x, grad_out):
    zs, pres = expansion.residual_dense_forward(Ws, bs, kind, x)
    g = np.asarray(grad_out, dtype=np.float64)[None, :]
    for W, pre in zip(reversed(Ws), reversed(pres)):
        g_pre = tensor.activation_backward(kind, pre[None, :], g)
        g = g + g_pre @ W
    return g[0]


def check_gradient_product(trials: int = 20, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for kind in ("sigmoid", "relu", "identity"):
        for _ in range(trials):
            H, d = 3, 4
            Ws = [rng.normal(scale=0.5, size=(d, d)) for _ in range(H)]
            bs = [rng.normal(scale=0.1, size=d) for _ in range(H)]
            x, g = rng.normal(size=d), rng.normal(size=d)
            a = expansion.residual_gradient_product(Ws, kind, x, g, 0, bs)
            b = _backprop_dense_stack(Ws, bs, kind, x, g)
            worst = max(worst, rel_error(a, b))
    return CheckResult("gradient_product", worst <= 1e-10, f"max rel err vs backprop {worst:.2e}")


def check_conv_gradients(seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in (1, 2, 3, 4):
        x = rng.normal(size=(2, 2, 5, 5))
        kern = tensor.ConvKernel(rng.normal(size=(3, 2, k, k)), rng.normal(size=3))
        gy = rng.normal(size=(2, 3, 5, 5))

        def f():
            return float(np.sum(tensor.conv2d_forward(x, kern) * gy))

        gx, gk = tensor.conv2d_backward(x, kern, gy)
        worst = max(worst,
                    rel_error(gx.ravel(), numeric_grad(f, x)),
                    rel_error(gk.weights.ravel(), numeric_grad(f, kern.weights)),
                    rel_error(gk.bias, numeric_grad(f, kern.bias)))
    return CheckResult("conv_gradient_fd", worst < 1e-5, f"max rel err {worst:.2e}")


def check_dense_gradients(seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)
    gy = rng.normal(size=(3, 5))

    def f():
        return float(np.sum(tensor.dense_forward(x, W, b) * gy))

    gx, gw, gb = tensor.dense_backward(x, W, gy)
    worst = max(rel_error(gx.ravel(), numeric_grad(f, x)),
                rel_error(gw.ravel(), numeric_grad(f, W)),
                rel_error(gb, numeric_grad(f, b)))
    return CheckResult("dense_gradient_fd", worst < 1e-5, f"max rel err {worst:.2e}")


def _offkink_case(spec: model.ArchitectureSpec, margin: float = 1e-4, start: int = 0):
    """Params and a 2-example batch whose pre-activations all stay >= margin away from 0."""
    for s in range(start, start + 500):
        rng = np.random.default_rng(s)
        params = model.build_model(spec)
        for b in params.blocks():
            b += rng.normal(scale=0.05, size=b.shape)
        x = rng.random((2, spec.input_channels, 32, 32))
        _, cache = model.forward(params, spec, x)
        if spec.activation != "relu" or min(np.abs(p).min() for p in cache.pre_activations) >= margin:
            return params, x, rng.integers(0, 10, size=2)
    raise RuntimeError("no off-kink case found")


def model_gradient_error(spec: model.ArchitectureSpec, classifier_samples: int | None = 64,
                         step: float = 1e-5) -> float:
    """Max per-entry relative error of :func:`model.backward` against central differences.

    Every projection and branch entry is checked; the classifier weights are
    sampled (``None`` checks all of them).
    """
    params, x, y = _offkink_case(spec)

    def loss():
        logits, _ = model.forward(params, spec, x, keep_cache=False)
        return tensor.softmax_cross_entropy(logits, y)[0]

    logits, cache = model.forward(params, spec, x)
    _, g = tensor.softmax_cross_entropy(logits, y)
    grads = model.backward(params, spec, cache, g)
    worst = 0.0
    blocks = params.blocks()
    gblocks = grads.blocks()
    for i, (p, gp) in enumerate(zip(blocks, gblocks)):
        idx = None
        if i == len(blocks) - 2 and classifier_samples is not None:
            idx = np.random.default_rng(99).choice(p.size, size=min(classifier_samples, p.size), replace=False)
        num = numeric_grad(loss, p, step, idx)
        ana = gp.reshape(-1) if idx is None else gp.reshape(-1)[idx]
        worst = max(worst, rel_error(ana, num, floor=1e-6))
    return worst


def check_model_gradients(full: bool = False) -> CheckResult:
    worst = 0.0
    combos = [(v, a) for v in model.VARIANTS for a in ("relu", "sigmoid")]
    for variant, act in combos:
        spec = model.ArchitectureSpec(depth=3, filters=2, kernel=2, activation=act, variant=variant)
        worst = max(worst, model_gradient_error(spec, None if full else 64))
    return CheckResult("model_gradient_fd", worst < 1e-4,
                       f"max rel err {worst:.2e} (H=3, F=2, k=2, both variants and activations)")


def _toy_dataset(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, 1, 32, 32)), rng.integers(0, 10, size=n), "train", "toy")


def check_h1_collapse() -> CheckResult:
    ds = _toy_dataset(64, 5)
    seq = model.ArchitectureSpec(depth=1, filters=1, kernel=4, variant="sequential", base_seed=11)
    par = seq.with_variant("parallel")
    ps, pp = model.build_model(seq), model.build_model(par)
    ls = model.forward(ps, seq, ds.images, keep_cache=False)[0]
    lp = model.forward(pp, par, ds.images, keep_cache=False)[0]
    cfg = TrainConfig(learning_rate=1e-3, epochs=2, batch_size=16)
    hs, hp = train(seq, ds, ds, cfg), train(par, ds, ds, cfg)
    ok = ps.equal(pp) and ls.tobytes() == lp.tobytes() and hs == hp
    return CheckResult("h1_collapse", ok, "H=1 sequential/parallel params, logits and losses bitwise equal"
                       if ok else "H=1 sequential and parallel runs differ")


def check_init_sharing() -> CheckResult:
    seq = model.ArchitectureSpec(depth=4, filters=2, kernel=3, base_seed=5)
    ps, pp = model.build_model(seq), model.build_model(seq.with_variant("parallel"))
    ok = ps.equal(pp) and ps.equal(model.build_model(seq))
    return CheckResult("init_sharing", ok, "initial blocks identical across variants and rebuilds")


def check_determinism() -> CheckResult:
    ds = _toy_dataset(48, 6)
    spec = model.ArchitectureSpec(depth=3, filters=2, kernel=2, variant="sequential", base_seed=3)
    cfg = TrainConfig(learning_rate=1e-3, epochs=2, batch_size=20)
    h1, p1 = train(spec, ds, ds, cfg, return_params=True)
    h2, p2 = train(spec, ds, ds, cfg, return_params=True)
    ok = h1 == h2 and p1.equal(p2)
    return CheckResult("determinism", ok, "repeated training bitwise identical" if ok else "runs differ")


def run_checks(level: str = "quick") -> list[CheckResult]:
    if level not in ("quick", "full"):
        raise ValueError("level must be 'quick' or 'full'")
    full = level == "full"
    checks = [
        ("expansion_exactness", lambda: check_expansion_exactness(500 if full else 100)),
        ("truncation_scaling", lambda: check_truncation_scaling(100 if full else 20)),
        ("gradient_product", lambda: check_gradient_product(100 if full else 20)),
        ("conv_gradient_fd", check_conv_gradients),
        ("dense_gradient_fd", check_dense_gradients),
        ("model_gradient_fd", lambda: check_model_gradients(full)),
        ("h1_collapse", check_h1_collapse),
        ("init_sharing", check_init_sharing),
        ("determinism", check_determinism),
    ]
    results = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(name, False, f"raised {exc!r}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.seconds:6.2f}s  {r.detail}"
             for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} properties passed")
    return "\n".join(lines)
