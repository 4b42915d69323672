import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resflat import expansion
from resflat.model import (
    ArchitectureSpec,
    ModelParams,
    backward,
    build_model,
    forward,
    overdetermination_ratio,
    parameter_count,
)
from resflat.tensor import ConvKernel, dense_backward, dense_forward, softmax_cross_entropy
from resflat.verify import _offkink_case

from .conftest import max_rel

PUBLISHED_Q = {  # filters -> (MNIST Q, CIFAR-10 Q), as printed
    1: (41.771, 34.804), 2: (16.256, 13.545), 4: (5.630, 4.691),
    8: (1.743, 1.453), 16: (0.495, 0.412), 32: (0.132, 0.110),
}


def zero_branches(params):
    for b in params.branches:
        b.weights[:] = 0
        b.bias[:] = 0
    return params


def test_spec_json_round_trip():
    spec = ArchitectureSpec(input_channels=3, depth=4, filters=2, kernel=6, activation="sigmoid",
                            variant="parallel", base_seed=2**64 - 1)
    d = json.loads(spec.to_json())
    assert set(d) == {"input_channels", "depth", "filters", "kernel", "activation", "variant",
                      "base_seed", "num_classes"}
    assert ArchitectureSpec.from_json(spec.to_json()) == spec


@pytest.mark.parametrize("bad", [dict(depth=0), dict(filters=0), dict(kernel=0), dict(input_channels=2),
                                 dict(activation="tanh"), dict(variant="wide"), dict(base_seed=-1)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        ArchitectureSpec(**bad)


def test_build_is_deterministic_and_variant_independent():
    spec = ArchitectureSpec(depth=3, filters=2, kernel=3, base_seed=9)
    a, b = build_model(spec), build_model(spec)
    c = build_model(spec.with_variant("parallel"))
    assert a.equal(b) and a.equal(c)
    assert a.block_count == 5
    assert not a.equal(build_model(ArchitectureSpec(depth=3, filters=2, kernel=3, base_seed=10)))


def test_branch_h_shares_init_across_depths():
    # branch h depends only on (base seed, h): a deeper model extends a shallower one
    shallow = build_model(ArchitectureSpec(depth=2, filters=2, kernel=3))
    deep = build_model(ArchitectureSpec(depth=5, filters=2, kernel=3, variant="parallel"))
    for h in range(2):
        assert shallow.branches[h].weights.tobytes() == deep.branches[h].weights.tobytes()
    assert not deep.projection.bias.any() and not deep.classifier_bias.any()


def test_parameter_count_matches_built_model():
    for spec in (ArchitectureSpec(depth=16, filters=1, kernel=16),
                 ArchitectureSpec(input_channels=3, depth=2, filters=3, kernel=4)):
        assert build_model(spec).size() == parameter_count(spec)
    assert parameter_count(ArchitectureSpec(depth=16, filters=1, kernel=16)) == 14_364


@pytest.mark.parametrize("F", sorted(PUBLISHED_Q))
def test_published_ratio_table(F):
    for channels, K, expected in ((1, 60_000, PUBLISHED_Q[F][0]), (3, 50_000, PUBLISHED_Q[F][1])):
        P = parameter_count(ArchitectureSpec(input_channels=channels, depth=16, filters=F, kernel=16))
        assert abs(overdetermination_ratio(K, 10, P) - expected) <= 1e-3 + 1e-12


def test_count_examples():
    assert parameter_count(ArchitectureSpec(depth=16, filters=4, kernel=16)) == 106_578
    assert parameter_count(ArchitectureSpec(input_channels=3, depth=16, filters=1, kernel=16)) == 14_366
    assert round(overdetermination_ratio(60_000, 10, 14_364), 3) == 41.771
    assert overdetermination_ratio(50_000, 10, 500_000) == 1.0
    assert abs(overdetermination_ratio(50_000, 10, 4_522_634) - 0.110) < 1e-3
    with pytest.raises(ValueError):
        overdetermination_ratio(10, 10, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.sampled_from([1, 2, 4, 6, 8, 16]), st.sampled_from([1, 3]))
def test_count_is_variant_free_and_q_decreasing_in_filters(H, F, k, c):
    seq = ArchitectureSpec(input_channels=c, depth=H, filters=F, kernel=k)
    assert parameter_count(seq) == parameter_count(seq.with_variant("parallel"))
    wider = ArchitectureSpec(input_channels=c, depth=H, filters=F + 1, kernel=k)
    assert overdetermination_ratio(1000, 10, parameter_count(wider)) < overdetermination_ratio(
        1000, 10, parameter_count(seq))


def test_zero_branches_relu_reduce_to_classifier_of_projection():
    x = np.random.default_rng(0).random((3, 1, 32, 32))
    outs = []
    for variant in ("sequential", "parallel"):
        spec = ArchitectureSpec(depth=3, filters=2, kernel=2, activation="relu", variant=variant)
        p = zero_branches(build_model(spec))
        logits, cache = forward(p, spec, x)
        expected = dense_forward(cache.projected.reshape(3, -1), p.classifier_weights, p.classifier_bias)
        np.testing.assert_array_equal(logits, expected)
        outs.append(logits)
    np.testing.assert_array_equal(*outs)


def test_zero_branches_sigmoid_add_half_per_layer():
    x = np.random.default_rng(1).random((2, 1, 32, 32))
    for variant in ("sequential", "parallel"):
        spec = ArchitectureSpec(depth=2, filters=1, kernel=3, activation="sigmoid", variant=variant)
        p = zero_branches(build_model(spec))
        _, cache = forward(p, spec, x)
        np.testing.assert_allclose(cache.features.reshape(cache.projected.shape), cache.projected + 1.0,
                                   rtol=0, atol=1e-15)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**64 - 1), st.sampled_from(["relu", "sigmoid"]), st.sampled_from([1, 2, 5]))
def test_h1_collapse_bitwise(seed, act, k):
    x = np.random.default_rng(seed % 1000).random((2, 1, 32, 32))
    seq = ArchitectureSpec(depth=1, filters=1, kernel=k, activation=act, base_seed=seed)
    par = seq.with_variant("parallel")
    ls = forward(build_model(seq), seq, x)[0]
    lp = forward(build_model(par), par, x)[0]
    assert ls.tobytes() == lp.tobytes()


def test_variants_differ_for_depth_two():
    x = np.random.default_rng(2).random((2, 1, 32, 32))
    seq = ArchitectureSpec(depth=2, filters=1, kernel=3)
    par = seq.with_variant("parallel")
    assert not np.array_equal(forward(build_model(seq), seq, x)[0], forward(build_model(par), par, x)[0])


def test_forward_shape_errors():
    spec = ArchitectureSpec(depth=1, filters=1, kernel=2)
    p = build_model(spec)
    with pytest.raises(ValueError):
        forward(p, spec, np.zeros((1, 3, 32, 32)))
    with pytest.raises(ValueError):
        forward(p, ArchitectureSpec(depth=2, filters=1, kernel=2), np.zeros((1, 1, 32, 32)))


def test_backward_zero_grad_and_stale_cache():
    spec = ArchitectureSpec(depth=2, filters=1, kernel=2)
    p = build_model(spec)
    x = np.random.default_rng(3).random((2, 1, 32, 32))
    _, cache = forward(p, spec, x)
    g = backward(p, spec, cache, np.zeros((2, 10)))
    assert all(not b.any() for b in g.blocks())
    with pytest.raises(ValueError, match="stale"):
        backward(p, spec, cache, np.zeros((3, 10)))
    other = ArchitectureSpec(depth=3, filters=1, kernel=2)
    with pytest.raises(ValueError, match="stale"):
        backward(build_model(other), other, cache, np.zeros((2, 10)))


@pytest.mark.parametrize("variant", ["sequential", "parallel"])
@pytest.mark.parametrize("act", ["relu", "sigmoid"])
def test_backward_matches_finite_differences(variant, act):
    spec = ArchitectureSpec(depth=3, filters=2, kernel=2, activation=act, variant=variant)
    params, x, y = _offkink_case(spec)

    def loss():
        return softmax_cross_entropy(forward(params, spec, x, keep_cache=False)[0], y)[0]

    logits, cache = forward(params, spec, x)
    grads = backward(params, spec, cache, softmax_cross_entropy(logits, y)[1])
    blocks, gblocks = params.blocks(), grads.blocks()
    step = 1e-5
    for i, (p, g) in enumerate(zip(blocks, gblocks)):
        flat = p.reshape(-1)
        # every conv entry; a fixed stride through the classifier weights
        idx = range(flat.size) if flat.size < 500 else range(0, flat.size, 211)
        for j in idx:
            old = flat[j]
            flat[j] = old + step
            hi = loss()
            flat[j] = old - step
            lo = loss()
            flat[j] = old
            num = (hi - lo) / (2 * step)
            assert max_rel(g.reshape(-1)[j], num, floor=1e-6) < 1e-4, (i, j)


def _dense_residual_backprop(Ws, bs, act, x, grad_out):
    """Reverse mode through z_h = z_{h-1} + act(z_{h-1} W_h^T + b_h) using the dense kernels."""
    from resflat.tensor import activation, activation_backward

    zs, pres = [x[None, :]], []
    for W, b in zip(Ws, bs):
        pre = dense_forward(zs[-1], W.T, b)
        pres.append(pre)
        zs.append(zs[-1] + activation(act, pre))
    g = grad_out[None, :]
    for h in reversed(range(len(Ws))):
        g_pre = activation_backward(act, pres[h], g)
        gx, _, _ = dense_backward(zs[h], Ws[h].T, g_pre)
        g = g + gx
    return g[0]


@pytest.mark.parametrize("act", ["sigmoid", "relu", "identity"])
def test_dense_residual_analog_matches_product_formula(act):
    rng = np.random.default_rng(7)
    for _ in range(10):
        H, d = 5, 6
        Ws = [rng.normal(scale=0.4, size=(d, d)) for _ in range(H)]
        bs = [rng.normal(scale=0.1, size=d) for _ in range(H)]
        x, g = rng.normal(size=d), rng.normal(size=d)
        a = _dense_residual_backprop(Ws, bs, act, x, g)
        b = expansion.residual_gradient_product(Ws, act, x, g, 0, bs)
        assert max_rel(a, b) <= 1e-10


def test_model_params_block_round_trip():
    p = build_model(ArchitectureSpec(depth=2, filters=2, kernel=2))
    q = ModelParams.from_blocks([b.copy() for b in p.blocks()])
    assert q.equal(p) and len(q.branches) == 2
    assert isinstance(q.projection, ConvKernel)
