"""交通图模块单元测试
"""
import sys
import os
import math

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

from common.exceptions import ConfigurationError, DataFormatError, InvalidValueError, NodeIndexError
from core.gradcheck import gradient_check
from core.graph import (
    GraphBundle,
    adaptive_adjacency,
    build_adjacency,
    diffusion_conv,
    init_node_factors,
    load_adjacency_csv,
    save_adjacency_csv,
    transition_matrices,
)
from core.tensor import Tensor


def _bundle(rng, n, dim=4):
    adjacency = rng.uniform(0.0, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) > 0.4)
    np.fill_diagonal(adjacency, 0.0)
    e1 = Tensor(rng.standard_normal((n, dim)), requires_grad=True, name="e1")
    e2 = Tensor(rng.standard_normal((n, dim)), requires_grad=True, name="e2")
    return GraphBundle.from_adjacency(adjacency, e1, e2)


def _weights(rng, depth, d_in, d_out):
    return [
        tuple(Tensor(rng.standard_normal((d_in, d_out)), requires_grad=True, name=f"w{k}{j}") for j in range(3))
        for k in range(depth + 1)
    ]


def test_build_adjacency_single_edge():
    """一条边、距离等于 sigma → e^-1"""
    adjacency = build_adjacency([(0, 1, 2.0)], 2, sigma=2.0, threshold=0.0)
    assert adjacency[0, 1] == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert adjacency[1, 0] == 0.0
    assert np.all(np.diag(adjacency) == 0.0)


def test_build_adjacency_threshold_and_errors():
    """阈值剪枝与非法输入"""
    adjacency = build_adjacency([(0, 1, 1.0), (1, 2, 10.0)], 3, sigma=1.0, threshold=0.1)
    assert adjacency[0, 1] > 0.0 and adjacency[1, 2] == 0.0
    with pytest.raises(NodeIndexError):
        build_adjacency([(0, 5, 1.0)], 3)
    with pytest.raises(InvalidValueError):
        build_adjacency([(0, 1, -1.0)], 3)


def test_transition_rows_are_stochastic():
    """P_f、P_b 非零行和为 1，全零行保持全零"""
    rng = np.random.default_rng(0)
    for _ in range(100):
        bundle = _bundle(rng, 6)
        for matrix in (bundle.forward_transition, bundle.backward_transition):
            sums = matrix.sum(axis=1)
            nonzero = sums > 0
            assert np.allclose(sums[nonzero], 1.0, atol=1e-10)
            assert np.all(sums[~nonzero] == 0.0)
    p_f, p_b = transition_matrices(np.zeros((3, 3)))
    assert np.all(p_f == 0.0) and np.all(p_b == 0.0)


def test_adaptive_adjacency_rows_sum_to_one():
    """Ã_apt 每行和为 1"""
    rng = np.random.default_rng(1)
    for _ in range(100):
        e1, e2 = Tensor(rng.standard_normal((5, 3))), Tensor(rng.standard_normal((5, 3)))
        rows = adaptive_adjacency(e1, e2).data.sum(axis=1)
        assert np.allclose(rows, 1.0, atol=1e-10)


def test_adaptive_adjacency_two_node_example():
    """E1·E2ᵀ = [[1,−5],[−5,1]] → relu 后 [[1,0],[0,1]] → 行 [e/(e+1), 1/(e+1)]"""
    e1 = Tensor(np.eye(2))
    e2 = Tensor(np.array([[1.0, -5.0], [-5.0, 1.0]]))
    got = adaptive_adjacency(e1, e2).data
    high, low = math.e / (math.e + 1.0), 1.0 / (math.e + 1.0)
    assert np.allclose(got, [[high, low], [low, high]], atol=1e-12, rtol=0.0)
    assert abs(got[0, 0] - 0.73106) < 1e-5 and abs(got[0, 1] - 0.26894) < 1e-5


def test_diffusion_conv_matches_dense_power_oracle():
    """K ≤ 3 时与显式矩阵幂的参考实现一致"""
    rng = np.random.default_rng(2)
    for depth in (0, 1, 2, 3):
        bundle = _bundle(rng, 5)
        x = rng.standard_normal((5, 3))
        weights = _weights(rng, depth, 3, 4)
        adaptive = bundle.adaptive_adjacency().data
        supports = [bundle.forward_transition, bundle.backward_transition, adaptive]
        expected = np.zeros((5, 4))
        for k in range(depth + 1):
            for j, support in enumerate(supports):
                expected += np.linalg.matrix_power(support, k) @ x @ weights[k][j].data
        got = diffusion_conv(Tensor(x), bundle, weights, depth).data
        assert np.allclose(got, expected, atol=1e-10, rtol=0.0)


def test_diffusion_conv_batched_matches_per_timestep():
    """B×D×N×T 输入逐时间步等价于 N×D 输入"""
    rng = np.random.default_rng(3)
    bundle = _bundle(rng, 4)
    weights = _weights(rng, 2, 3, 2)
    x = rng.standard_normal((2, 3, 4, 5))
    batched = diffusion_conv(Tensor(x), bundle, weights, 2).data
    for b in range(2):
        for t in range(5):
            single = diffusion_conv(Tensor(x[b, :, :, t].T), bundle, weights, 2).data
            assert np.allclose(batched[b, :, :, t].T, single, atol=1e-12)


def test_diffusion_conv_depth_zero_isolated_nodes():
    """K=0 退化为 X·(W01+W02+W03)；无边时 P 项为零"""
    rng = np.random.default_rng(4)
    bundle = GraphBundle.from_adjacency(
        np.zeros((3, 3)),
        Tensor(rng.standard_normal((3, 2))),
        Tensor(rng.standard_normal((3, 2))),
    )
    weights = _weights(rng, 0, 2, 2)
    x = rng.standard_normal((3, 2))
    got = diffusion_conv(Tensor(x), bundle, weights, 0).data
    expected = x @ (weights[0][0].data + weights[0][1].data + weights[0][2].data)
    assert np.allclose(got, expected, atol=1e-12)


def test_diffusion_conv_is_linear_in_signal():
    """f(aX + bY) = a·f(X) + b·f(Y)"""
    rng = np.random.default_rng(6)
    for depth in (1, 2, 3):
        bundle = _bundle(rng, 5)
        weights = _weights(rng, depth, 3, 2)
        x, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        a, b = 0.7, -1.3
        combined = diffusion_conv(Tensor(a * x + b * y), bundle, weights, depth).data
        separate = a * diffusion_conv(Tensor(x), bundle, weights, depth).data \
            + b * diffusion_conv(Tensor(y), bundle, weights, depth).data
        assert np.allclose(combined, separate, atol=1e-10, rtol=0.0)


def test_diffusion_conv_preserves_constant_signal():
    """P_f 行随机、只留 W_k1 = I：每个 k 项都等于 c·ones"""
    rng = np.random.default_rng(7)
    adjacency = rng.uniform(0.1, 1.0, size=(4, 4))
    np.fill_diagonal(adjacency, 0.0)
    bundle = GraphBundle.from_adjacency(adjacency, *init_node_factors(4, seed=7))
    assert np.allclose(bundle.forward_transition.sum(axis=1), 1.0, atol=1e-12)
    c = 2.5
    x = Tensor(c * np.ones((4, 2)))
    depth = 3
    for k in range(depth + 1):
        weights = [tuple(Tensor(np.zeros((2, 2))) for _ in range(3)) for _ in range(depth + 1)]
        weights[k] = (Tensor(np.eye(2)), Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))))
        term = diffusion_conv(x, bundle, weights, depth).data
        assert np.allclose(term, c, atol=1e-12, rtol=0.0)
    weights = [(Tensor(np.eye(2)), Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2)))) for _ in range(depth + 1)]
    assert np.allclose(diffusion_conv(x, bundle, weights, depth).data, (depth + 1) * c, atol=1e-12)


def test_diffusion_conv_wrong_weight_count():
    """权重个数与 K 不符时报配置错误"""
    rng = np.random.default_rng(5)
    bundle = _bundle(rng, 3)
    with pytest.raises(ConfigurationError):
        diffusion_conv(Tensor(np.zeros((3, 2))), bundle, _weights(rng, 1, 2, 2), 2)


def test_diffusion_conv_gradients():
    """对 X、W 和 E1/E2 的梯度"""
    rng = np.random.default_rng(6)
    bundle = _bundle(rng, 4, dim=3)
    weights = _weights(rng, 2, 3, 2)
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True, name="x")
    probe = Tensor(rng.standard_normal((4, 2)))

    def loss():
        return (diffusion_conv(x, bundle, weights, 2) * probe).sum()

    tensors = [x, bundle.source_factors, bundle.target_factors] + [w for triple in weights for w in triple]
    result = gradient_check(loss, tensors)
    assert result.passed(1e-4), result.worst


def test_init_node_factors_deterministic():
    """同一种子得到同样的 E1/E2"""
    a1, a2 = init_node_factors(6, seed=3)
    b1, b2 = init_node_factors(6, seed=3)
    assert np.array_equal(a1.data, b1.data) and np.array_equal(a2.data, b2.data)
    assert not np.array_equal(a1.data, a2.data)
    assert a1.shape == (6, 10)


def test_adjacency_csv_round_trip(tmp_path):
    """边表 CSV 写出再读回"""
    path = str(tmp_path / "adjacency.csv")
    edges = [(0, 1, 0.25), (1, 0, 0.25), (1, 2, 0.5)]
    save_adjacency_csv(path, edges)
    loaded = load_adjacency_csv(path, 3, sigma=0.5, threshold=0.0)
    assert np.array_equal(loaded, build_adjacency(edges, 3, sigma=0.5, threshold=0.0))

    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n0,1,1.0\n")
    with pytest.raises(DataFormatError):
        load_adjacency_csv(str(bad), 3)
