"""交通图模块

由传感器距离构建邻接矩阵、前向/后向转移矩阵、自适应邻接矩阵，
并实现扩散图卷积 Z = Σ_k P_f^k X W_k1 + P_b^k X W_k2 + Ã_apt^k X W_k3
"""

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import logging

from common.constants import ADAPTIVE_EMBEDDING_DIM, DEFAULT_ADJ_THRESHOLD
from common.exceptions import (
    ConfigurationError,
    DataFormatError,
    DimensionError,
    InvalidValueError,
    NodeIndexError,
)
from common.utilities import MathUtils
from core.tensor import Tensor, as_tensor, einsum, matmul, relu, softmax

logger = logging.getLogger(__name__)

Edge = Tuple[int, int, float]


@dataclass
class GraphBundle:
    """图相关张量的集合

    Attributes:
        num_nodes: 节点数 N
        adjacency: N×N 非负邻接矩阵 A
        forward_transition: P_f
        backward_transition: P_b
        source_factors: 自适应邻接的 E1 (N×d_e)，可学习
        target_factors: 自适应邻接的 E2 (N×d_e)，可学习
    """

    num_nodes: int
    adjacency: np.ndarray
    forward_transition: np.ndarray
    backward_transition: np.ndarray
    source_factors: Optional[Tensor] = None
    target_factors: Optional[Tensor] = None
    _constants: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_adjacency(
        cls,
        adjacency: np.ndarray,
        source_factors: Optional[Tensor] = None,
        target_factors: Optional[Tensor] = None,
    ) -> "GraphBundle":
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DimensionError(f"邻接矩阵必须为方阵，得到 {adjacency.shape}")
        if np.any(adjacency < 0):
            raise InvalidValueError("邻接矩阵不能有负值")
        p_f, p_b = transition_matrices(adjacency)
        return cls(
            num_nodes=adjacency.shape[0],
            adjacency=adjacency,
            forward_transition=p_f,
            backward_transition=p_b,
            source_factors=source_factors,
            target_factors=target_factors,
        )

    def with_factors(self, source_factors: Tensor, target_factors: Tensor) -> "GraphBundle":
        """返回挂上 E1/E2 的新图（转移矩阵共享）"""
        for name, factors in (("E1", source_factors), ("E2", target_factors)):
            if factors.ndim != 2 or factors.shape[0] != self.num_nodes:
                raise DimensionError(f"{name} 形状应为 ({self.num_nodes}, d_e)，得到 {factors.shape}")
        return GraphBundle(
            num_nodes=self.num_nodes,
            adjacency=self.adjacency,
            forward_transition=self.forward_transition,
            backward_transition=self.backward_transition,
            source_factors=source_factors,
            target_factors=target_factors,
        )

    def transition_tensor(self, direction: str) -> Tensor:
        """以常量张量形式返回 P_f / P_b（缓存）"""
        if direction not in self._constants:
            matrix = self.forward_transition if direction == "forward" else self.backward_transition
            self._constants[direction] = Tensor(matrix)
        return self._constants[direction]

    def adaptive_adjacency(self) -> Tensor:
        """由当前 E1/E2 计算 Ã_apt"""
        if self.source_factors is None or self.target_factors is None:
            raise ConfigurationError("图中没有自适应邻接的节点因子 E1/E2")
        return adaptive_adjacency(self.source_factors, self.target_factors)


def build_adjacency(
    edges: Iterable[Edge],
    num_nodes: int,
    sigma: Optional[float] = None,
    threshold: float = DEFAULT_ADJ_THRESHOLD,
) -> np.ndarray:
    """由有向边距离构建高斯核邻接矩阵

    A[u][v] = exp(−d²/σ²)，低于 threshold 置 0；对角线恒为 0。
    sigma 缺省为所给距离的标准差。
    """
    edges = [(int(u), int(v), float(d)) for u, v, d in edges]
    if num_nodes < 1:
        raise InvalidValueError(f"节点数必须为正，得到 {num_nodes}")
    if not 0.0 <= threshold < 1.0:
        raise InvalidValueError(f"threshold 必须在 [0, 1) 内，得到 {threshold}")
    for u, v, d in edges:
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise NodeIndexError(f"边 ({u}, {v}) 的节点编号超出 [0, {num_nodes})")
        if not d > 0:
            raise InvalidValueError(f"边 ({u}, {v}) 的距离必须为正，得到 {d}")

    adjacency = np.zeros((num_nodes, num_nodes))
    if not edges:
        return adjacency

    if sigma is None:
        distances = np.array([d for _, _, d in edges])
        sigma = float(distances.std())
        if sigma == 0.0:
            sigma = float(distances.mean())
    if not sigma > 0:
        raise InvalidValueError(f"sigma 必须为正，得到 {sigma}")

    pruned = 0
    for u, v, d in edges:
        if u == v:
            continue
        weight = MathUtils.gaussian_kernel(d, sigma)
        if weight >= threshold:
            adjacency[u, v] = weight
        else:
            adjacency[u, v] = 0.0
            pruned += 1
    logger.debug(f"build_adjacency: {len(edges)} 条边，sigma={sigma:.6g}，阈值剪除 {pruned} 条")
    return adjacency


def transition_matrices(adjacency: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """P_f = A / rowsum(A)，P_b = Aᵀ / rowsum(Aᵀ)；全零行保持全零"""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    return _row_normalize(adjacency), _row_normalize(adjacency.T)


def _row_normalize(matrix: np.ndarray) -> np.ndarray:
    sums = matrix.sum(axis=1, keepdims=True)
    safe = np.where(sums > 0, sums, 1.0)
    return np.where(sums > 0, matrix / safe, 0.0)


def adaptive_adjacency(source_factors: Tensor, target_factors: Tensor) -> Tensor:
    """Ã_apt = softmax(relu(E1·E2ᵀ))，按行归一化"""
    if source_factors.shape != target_factors.shape:
        raise DimensionError(f"E1 {source_factors.shape} 与 E2 {target_factors.shape} 形状不同")
    return softmax(relu(matmul(source_factors, target_factors.T)), axis=1)


def init_node_factors(
    num_nodes: int,
    seed: int,
    dim: int = ADAPTIVE_EMBEDDING_DIM,
    prefix: str = "graph",
) -> Tuple[Tensor, Tensor]:
    """初始化 E1/E2（fan-in 均匀分布）"""
    factors = []
    for name in ("source_factors", "target_factors"):
        full = f"{prefix}.{name}"
        rng = MathUtils.derive_rng(seed, f"init/{full}")
        factors.append(Tensor(MathUtils.fan_in_uniform(rng, (num_nodes, dim), dim), requires_grad=True, name=full))
    return factors[0], factors[1]


def _propagate(support: Tensor, h: Tensor) -> Tensor:
    """单跳传播 P·X（逐时间步）"""
    if h.ndim == 2:
        return matmul(support, h)
    return einsum("nm,bcmt->bcnt", support, h)


def _project(h: Tensor, weight: Tensor) -> Tensor:
    """特征投影 X·W（逐时间步）"""
    if h.ndim == 2:
        return matmul(h, weight)
    return einsum("bcnt,cm->bmnt", h, weight)


def diffusion_conv(
    x: Tensor,
    bundle: GraphBundle,
    weights: Sequence[Sequence[Tensor]],
    depth: int,
    adaptive: Optional[Tensor] = None,
) -> Tensor:
    """扩散图卷积

    Args:
        x: 单个时间步 N×D_in，或按时间步独立处理的 B×D_in×N×T
        bundle: 图
        weights: 长度 K+1 的列表，每项为 (W_k1, W_k2, W_k3)，形状 D_in×M
        depth: 扩散深度 K
        adaptive: 预先算好的 Ã_apt（各层共享时传入），缺省时现算

    Returns:
        N×M 或 B×M×N×T
    """
    x = as_tensor(x)
    if x.ndim not in (2, 4):
        raise DimensionError(f"diffusion_conv 输入应为 2 维或 4 维，得到 {x.shape}")
    node_axis = 0 if x.ndim == 2 else 2
    if x.shape[node_axis] != bundle.num_nodes:
        raise DimensionError(f"输入节点数 {x.shape[node_axis]} 与图节点数 {bundle.num_nodes} 不符")
    count = sum(len(triple) for triple in weights)
    if depth < 0 or len(weights) != depth + 1 or count != 3 * (depth + 1):
        raise ConfigurationError(f"扩散深度 K={depth} 需要 {3 * (depth + 1)} 个权重矩阵，得到 {count}")

    if adaptive is None:
        adaptive = bundle.adaptive_adjacency()
    supports = [bundle.transition_tensor("forward"), bundle.transition_tensor("backward"), adaptive]

    out = None
    for j, support in enumerate(supports):
        h = x
        for k in range(depth + 1):
            if k > 0:
                h = _propagate(support, h)
            term = _project(h, weights[k][j])
            out = term if out is None else out + term
    return out


def load_adjacency_csv(path: str, num_nodes: int, sigma: Optional[float] = None,
                       threshold: float = DEFAULT_ADJ_THRESHOLD) -> np.ndarray:
    """读取 from,to,distance 边表 CSV 并构建邻接矩阵"""
    frame = pd.read_csv(path)
    expected = ["from", "to", "distance"]
    if list(frame.columns[:3]) != expected:
        raise DataFormatError(f"邻接 CSV 表头应为 {expected}，得到 {list(frame.columns)}", row=1)
    edges = list(zip(frame["from"].astype(int), frame["to"].astype(int), frame["distance"].astype(float)))
    logger.info(f"读取邻接边表 {path}: {len(edges)} 条边")
    return build_adjacency(edges, num_nodes, sigma=sigma, threshold=threshold)


def save_adjacency_csv(path: str, edges: List[Edge]) -> None:
    """写出 from,to,distance 边表 CSV"""
    frame = pd.DataFrame(edges, columns=["from", "to", "distance"])
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
