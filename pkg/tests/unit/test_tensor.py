"""张量引擎单元测试
"""
import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

from common.exceptions import ContractError, DimensionError, LengthError
from core.gradcheck import gradient_check
from core.tensor import (
    Tensor,
    backward,
    concat,
    dilated_causal_conv,
    dropout,
    einsum,
    layer_norm,
    matmul,
    no_grad,
    pad_left,
    softmax,
    split,
    tensor_abs,
)


def _param(rng, *shape, name=None):
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def conv_oracle(x, f, dilation):
    """三重循环参考实现 y[o][t] = Σ_i Σ_s f[o][i][s]·x[i][t + span − d·s]"""
    c_out, c_in, k = f.shape
    span = dilation * (k - 1)
    out = np.zeros((c_out, x.shape[1] - span))
    for o in range(c_out):
        for t in range(out.shape[1]):
            total = 0.0
            for i in range(c_in):
                for s in range(k):
                    total += f[o, i, s] * x[i, t + span - dilation * s]
            out[o, t] = total
    return out


def test_matmul_forward_and_shape_error():
    """矩阵乘的前向与维度检查"""
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    assert np.array_equal(matmul(a, b).data, np.array([[3.0], [7.0]]))

    with pytest.raises(DimensionError) as info:
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(info.value) and "(4, 2)" in str(info.value)


def test_matmul_gradient():
    """z = A·B 的梯度：dA = dZ·Bᵀ，dB = Aᵀ·dZ"""
    a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    b = Tensor([[0.5, -1.0], [2.0, 1.0]], requires_grad=True)
    backward(matmul(a, b).sum())
    ones = np.ones((2, 2))
    assert np.allclose(a.grad, ones @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ ones)


def test_gradient_accumulates_on_reused_leaf():
    """同一叶子在计算带上出现两次时梯度相加"""
    x = Tensor([3.0], requires_grad=True)
    backward((x * x + x).sum())
    assert x.grad[0] == pytest.approx(7.0)


def test_frozen_leaf_receives_no_gradient():
    """冻结的叶子不累积梯度"""
    x = Tensor([1.0, 2.0], requires_grad=True, frozen=True)
    w = Tensor([3.0, 4.0], requires_grad=True)
    backward((x * w).sum())
    assert x.grad is None
    assert np.array_equal(w.grad, np.array([1.0, 2.0]))


def test_backward_requires_scalar_on_tape():
    """backward 只接受计算带上的标量"""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)
    with pytest.raises(ContractError):
        backward(Tensor(1.0))


def test_no_grad_stops_recording():
    """no_grad 内不记录计算带"""
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.node is None


def test_softmax_rows_sum_to_one_and_stable():
    """softmax 行和为 1，大数值输入不溢出"""
    rng = np.random.default_rng(0)
    for _ in range(100):
        logits = rng.standard_normal((4, 7)) * 50.0
        rows = softmax(Tensor(logits), axis=-1).data.sum(axis=-1)
        assert np.allclose(rows, 1.0, atol=1e-10)
    big = softmax(Tensor([1000.0, 1000.0]), axis=-1).data
    assert np.allclose(big, [0.5, 0.5])


def test_layer_norm_normalizes_last_axis():
    """层归一化后每行均值 0、方差约为 1"""
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((3, 5, 8)) * 4.0 + 2.0)
    y = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-5).data
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=-1), 1.0, atol=1e-3)


def test_dropout_eval_identity_and_seeded_train():
    """评估模式原样返回；训练模式按种子确定"""
    x = Tensor(np.ones((50, 50)))
    assert dropout(x, 0.3, training=False) is x
    a = dropout(x, 0.3, True, np.random.default_rng(3)).data
    b = dropout(x, 0.3, True, np.random.default_rng(3)).data
    assert np.array_equal(a, b)
    kept = a[a > 0]
    assert np.allclose(kept, 1.0 / 0.7)
    with pytest.raises(ContractError):
        dropout(x, 0.3, True, None)


def test_dilated_conv_matches_loop_oracle_bit_exact():
    """膨胀因果卷积与三重循环参考实现逐位一致"""
    rng = np.random.default_rng(2)
    for dilation in (1, 2, 3):
        for k in (2, 3):
            x = rng.integers(-5, 6, size=(3, 13)).astype(np.float64)
            f = rng.integers(-3, 4, size=(2, 3, k)).astype(np.float64)
            y = dilated_causal_conv(Tensor(x), Tensor(f), dilation).data
            assert np.array_equal(y, conv_oracle(x, f, dilation))


def test_dilated_conv_examples():
    """单通道手算样例"""
    x = Tensor([[1.0, 2.0, 3.0, 4.0]])
    identity = Tensor([[[1.0, 0.0]]])
    assert np.array_equal(dilated_causal_conv(x, identity, 1).data, [[2.0, 3.0, 4.0]])
    lagged = Tensor([[[0.0, 1.0]]])
    assert np.array_equal(dilated_causal_conv(x, lagged, 2).data, [[1.0, 2.0]])


def test_dilated_conv_too_short_raises():
    """序列长度不超过 d·(k−1) 时报错"""
    with pytest.raises(LengthError):
        dilated_causal_conv(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 1, 2))), 2)


def test_dilated_conv_is_causal():
    """扰动未来输入不影响之前的输出"""
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = rng.standard_normal((1, 2, 3, 10))
        f = Tensor(rng.standard_normal((2, 2, 2)))
        base = dilated_causal_conv(Tensor(x), f, 2).data
        perturbed = x.copy()
        perturbed[..., 7:] += rng.standard_normal(perturbed[..., 7:].shape)
        moved = dilated_causal_conv(Tensor(perturbed), f, 2).data
        # 输出第 j 步对应输入第 j+2 步
        assert np.array_equal(base[..., :5], moved[..., :5])


def test_split_concat_and_pad():
    """切分/拼接互逆，左补零"""
    x = Tensor(np.arange(12.0).reshape(3, 4))
    parts = split(x, 2, axis=-1)
    assert [p.shape for p in parts] == [(3, 2), (3, 2)]
    assert np.array_equal(concat(parts, axis=-1).data, x.data)
    padded = pad_left(x, 2, axis=-1).data
    assert padded.shape == (3, 6) and np.all(padded[:, :2] == 0.0)
    with pytest.raises(DimensionError):
        split(x, 3, axis=-1)


@pytest.mark.parametrize("op", ["matmul", "einsum", "softmax", "layer_norm", "conv", "abs_mean", "split_concat", "sigmoid_tanh"])
def test_operator_gradients_match_finite_differences(op):
    """各可微算子的解析梯度与中心差分一致"""
    rng = np.random.default_rng(5)
    if op == "matmul":
        a, b = _param(rng, 2, 3, 4), _param(rng, 4, 5)
        tensors, fn = [a, b], lambda: (matmul(a, b) * matmul(a, b)).sum()
    elif op == "einsum":
        a, b = _param(rng, 2, 3, 4, 2), _param(rng, 3, 5)
        tensors, fn = [a, b], lambda: (einsum("bcnt,co->bont", a, b).tanh()).sum()
    elif op == "softmax":
        a, w = _param(rng, 3, 4), Tensor(rng.standard_normal((3, 4)))
        tensors, fn = [a], lambda: (softmax(a, axis=-1) * w).sum()
    elif op == "layer_norm":
        x, g, b = _param(rng, 2, 3, 6), _param(rng, 6), _param(rng, 6)
        w = Tensor(rng.standard_normal((2, 3, 6)))
        tensors, fn = [x, g, b], lambda: (layer_norm(x, g, b) * w).sum()
    elif op == "conv":
        x, f = _param(rng, 2, 3, 2, 9), _param(rng, 4, 3, 2)
        tensors, fn = [x, f], lambda: (dilated_causal_conv(x, f, 2).tanh()).sum()
    elif op == "abs_mean":
        x = Tensor(rng.standard_normal((4, 5)) + 0.1, requires_grad=True)
        tensors, fn = [x], lambda: tensor_abs(x * 3.0).mean()
    elif op == "split_concat":
        x = _param(rng, 3, 4)
        w = Tensor(rng.standard_normal((3, 4)))
        tensors, fn = [x], lambda: (concat(list(reversed(split(x, 2))), axis=-1) * w).sum()
    else:
        x = _param(rng, 3, 3)
        tensors, fn = [x], lambda: (x.sigmoid() * x.tanh() + x.relu() / 2.0).sum()
    result = gradient_check(fn, tensors)
    assert result.passed(1e-4), f"{op}: {result.worst} {result.max_rel_error}"
