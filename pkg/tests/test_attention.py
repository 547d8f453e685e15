import math

import numpy as np
import pytest

from dozerformer.attention import HeadConfig, mha_param_shapes, multi_head_attention, scaled_dot_attention
from dozerformer.errors import ConfigError, InvalidMaskError
from dozerformer.masks import AttnMask, local_self_mask, stride_self_mask, union_masks
from dozerformer.tensor import Tensor, grad_check

from reference import mha_ref


def random_params(d, rng, requires_grad=False):
    return {k: Tensor(rng.uniform(-0.5, 0.5, size=s), requires_grad=requires_grad)
            for k, s in mha_param_shapes(d).items()}


def identity_params(d):
    p = {}
    for tag in "qkvo":
        p[f"w_{tag}"] = Tensor(np.eye(d))
        p[f"b_{tag}"] = Tensor(np.zeros(d))
    return p


def test_identity_qkv_closed_form():
    eye = Tensor(np.eye(2))
    out = scaled_dot_attention(eye, eye, eye, AttnMask.full(2, 2)).data
    a = math.exp(1 / math.sqrt(2))
    hi, lo = a / (a + 1), 1 / (a + 1)
    np.testing.assert_allclose(out, [[hi, lo], [lo, hi]], rtol=1e-14)
    np.testing.assert_allclose([hi, lo], [0.6698, 0.3302], atol=5e-5)


def test_diagonal_mask_returns_values(rng):
    q, k, v = (Tensor(rng.normal(size=(4, 3))) for _ in range(3))
    out = scaled_dot_attention(q, k, v, AttnMask.eye(4)).data
    np.testing.assert_array_equal(out, v.data)


def test_zero_values_give_zero_output(rng):
    q, k = Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(5, 2)))
    m = AttnMask((rng.random((3, 5)) < 0.5) | np.eye(3, 5, dtype=bool))
    out = scaled_dot_attention(q, k, Tensor(np.zeros((5, 2))), m).data
    assert np.all(out == 0.0)


def test_empty_mask_row_rejected(rng):
    q = Tensor(rng.normal(size=(2, 2)))
    with pytest.raises(InvalidMaskError):
        scaled_dot_attention(q, q, q, np.array([[True, False], [False, False]]))


def test_mha_identity_diagonal():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    out = multi_head_attention(x, x, AttnMask.eye(3), HeadConfig(4, 1), identity_params(4)).data
    np.testing.assert_allclose(out, x.data, rtol=0, atol=0)


def test_mha_two_heads_shape(rng):
    x = Tensor(rng.normal(size=(5, 4)))
    cfg = HeadConfig(4, 2)
    assert cfg.d_k == 2
    out = multi_head_attention(x, x, AttnMask.full(5, 5), cfg, random_params(4, rng))
    assert out.shape == (5, 4)


def test_mha_head_counts_differ_but_finite(rng):
    xq, xkv = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(3, 8)))
    params = random_params(8, rng)
    outs = [multi_head_attention(xq, xkv, AttnMask.full(3, 3), HeadConfig(8, h), params).data for h in (1, 2, 4)]
    for o in outs:
        assert o.shape == (3, 8) and np.all(np.isfinite(o))
    assert not np.allclose(outs[0], outs[1]) and not np.allclose(outs[1], outs[2])


def test_mha_matches_numpy_reference(rng):
    xq, xkv = rng.normal(size=(4, 6)), rng.normal(size=(7, 6))
    params = random_params(6, rng)
    out = multi_head_attention(Tensor(xq), Tensor(xkv), AttnMask.full(4, 7), HeadConfig(6, 3), params).data
    ref = mha_ref(xq, xkv, {k: v.data for k, v in params.items()}, 3)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_bad_head_config():
    with pytest.raises(ConfigError):
        HeadConfig(6, 4)


def test_projection_shape_mismatch(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    params = random_params(4, rng)
    params["w_k"] = Tensor(np.zeros((4, 3)))
    with pytest.raises(ConfigError, match="w_k"):
        multi_head_attention(x, x, AttnMask.full(3, 3), HeadConfig(4, 2), params)


def test_saturated_dozer_mask_equals_full_attention(rng):
    n = 6
    sat = union_masks([local_self_mask(n, 2 * n - 1), stride_self_mask(n, 2)])
    assert sat == AttnMask.full(n, n)
    x = Tensor(rng.normal(size=(2, n, 8)))
    params = random_params(8, rng)
    a = multi_head_attention(x, x, sat, HeadConfig(8, 2), params).data
    b = np.stack([mha_ref(x.data[i], x.data[i], {k: v.data for k, v in params.items()}, 2) for i in range(2)])
    assert np.max(np.abs(a - b)) <= 1e-10


def test_key_permutation_invariance(rng):
    n_q, n_k, d = 4, 7, 4
    q, k, v = rng.normal(size=(n_q, d)), rng.normal(size=(n_k, d)), rng.normal(size=(n_k, d))
    mask = rng.random((n_q, n_k)) < 0.5
    mask[:, 0] = True
    perm = rng.permutation(n_k)
    a = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), mask).data
    b = scaled_dot_attention(Tensor(q), Tensor(k[perm]), Tensor(v[perm]), mask[:, perm]).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_mha_gradcheck(rng):
    d = 4
    params = random_params(d, rng, requires_grad=True)
    xq = Tensor(rng.uniform(-1, 1, size=(3, d)), requires_grad=True)
    xkv = Tensor(rng.uniform(-1, 1, size=(5, d)), requires_grad=True)
    mask = np.array([[1, 1, 0, 0, 1], [0, 1, 1, 0, 0], [1, 0, 0, 1, 1]], bool)
    weights = Tensor(rng.uniform(-1, 1, size=(3, d)))

    def loss():
        return (multi_head_attention(xq, xkv, mask, HeadConfig(d, 2), params) * weights).sum()

    report = grad_check(loss, [xq, xkv, *params.values()])
    assert report.max_relative_error <= 1e-4, report
