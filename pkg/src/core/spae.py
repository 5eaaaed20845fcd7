"""空间位置感知嵌入（SPAE）模块

每个节点一条可学习编码，用正弦/余弦初始化，在输入层之后加到隐藏表示上；
并提供嵌入离散度诊断（PCA 投影到 2 维后映射到单位圆，计算合成向量长度）
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import logging

from common.constants import SPAE_BASE
from common.exceptions import DimensionError, InvalidValueError
from common.utilities import MathUtils
from core.tensor import Tensor, reshape, transpose

logger = logging.getLogger(__name__)

INIT_KINDS = ("sinusoidal", "random")


@dataclass
class SPAETable:
    """SPAE 编码表

    Attributes:
        table: N×d_model 可学习张量
        frozen: 冻结时梯度被丢弃（w/EF 消融）
        init_kind: sinusoidal 或 random（w/RI 消融）
    """

    table: Tensor
    frozen: bool = False
    init_kind: str = "sinusoidal"

    @property
    def num_nodes(self) -> int:
        return self.table.shape[0]

    @property
    def d_model(self) -> int:
        return self.table.shape[1]


def sinusoidal_value(position: int, dim: int, d_model: int) -> float:
    """按公式逐元素计算：偶数维 sin，奇数维 cos，两支指数都用 2k/d_model"""
    angle = position / math.pow(SPAE_BASE, 2.0 * dim / d_model)
    return math.sin(angle) if dim % 2 == 0 else math.cos(angle)


def sinusoidal_table(num_nodes: int, d_model: int) -> np.ndarray:
    """向量化的正弦初始化表"""
    positions = np.arange(num_nodes, dtype=np.float64)[:, None]
    dims = np.arange(d_model)[None, :]
    angles = positions / np.power(SPAE_BASE, 2.0 * dims / d_model)
    return np.where(dims % 2 == 0, np.sin(angles), np.cos(angles))


def init_spae(
    num_nodes: int,
    d_model: int,
    init_kind: str = "sinusoidal",
    seed: int = 0,
    frozen: bool = False,
    name: str = "spae.table",
) -> SPAETable:
    """初始化 SPAE 表"""
    if num_nodes < 1 or d_model < 1:
        raise InvalidValueError(f"SPAE 需要 N≥1 且 d_model≥1，得到 N={num_nodes}, d_model={d_model}")
    if init_kind == "sinusoidal":
        values = sinusoidal_table(num_nodes, d_model)
    elif init_kind == "random":
        rng = MathUtils.derive_rng(seed, "spae/random")
        values = rng.uniform(-0.5, 0.5, size=(num_nodes, d_model))
    else:
        raise InvalidValueError(f"未知的 SPAE 初始化方式: {init_kind}，可选 {INIT_KINDS}")
    table = Tensor(values, requires_grad=True, name=name, frozen=frozen)
    return SPAETable(table=table, frozen=frozen, init_kind=init_kind)


def apply_spae(hidden: Tensor, spae: SPAETable) -> Tensor:
    """output[b][c][n][t] = H[b][c][n][t] + table[n][c]"""
    if hidden.ndim != 4:
        raise DimensionError(f"apply_spae 需要 B×C×N×T 输入，得到 {hidden.shape}")
    _, channels, nodes, _ = hidden.shape
    if channels != spae.d_model:
        raise DimensionError(f"通道数 {channels} 与 d_model {spae.d_model} 不符")
    if nodes != spae.num_nodes:
        raise DimensionError(f"节点数 {nodes} 与 SPAE 表行数 {spae.num_nodes} 不符")
    encoding = reshape(transpose(spae.table, (1, 0)), (1, channels, nodes, 1))
    return hidden + encoding


@dataclass
class DispersionResult:
    """离散度诊断结果

    Attributes:
        angles: 每个节点在单位圆上的角度（被跳过的节点为 NaN）
        resultant_length: 圆周合成向量长度 R，0 为均匀分散，1 为坍缩
        collapsed: 全部点重合（或全部被跳过）
        skipped: 2 维投影为零向量而被跳过的点数
        explained_variance: 前两个主成分的方差
    """

    angles: np.ndarray
    resultant_length: float
    collapsed: bool
    skipped: int
    explained_variance: np.ndarray


def dispersion_score(node_embeddings: Union[Tensor, np.ndarray], zero_tol: float = 1e-12) -> DispersionResult:
    """PCA 降到 2 维 → 单位化为 (cos θ, sin θ) → 合成向量长度"""
    data = node_embeddings.data if isinstance(node_embeddings, Tensor) else np.asarray(node_embeddings, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 2:
        raise DimensionError(f"dispersion_score 需要 N≥2、C≥2 的矩阵，得到 {data.shape}")
    num_nodes = data.shape[0]
    centered = data - data.mean(axis=0, keepdims=True)
    scale = float(np.max(np.abs(centered)))
    if scale <= zero_tol * max(1.0, float(np.max(np.abs(data)))):
        logger.warning("所有嵌入重合，离散度按坍缩处理 (R=1)")
        return DispersionResult(
            angles=np.full(num_nodes, np.nan),
            resultant_length=1.0,
            collapsed=True,
            skipped=num_nodes,
            explained_variance=np.zeros(2),
        )

    covariance = centered.T @ centered / num_nodes
    variances, components = MathUtils.power_iteration(covariance, num_vectors=2)
    projected = centered @ components
    norms = np.hypot(projected[:, 0], projected[:, 1])
    valid = norms > zero_tol * max(float(norms.max()), 1.0)
    skipped = int(num_nodes - valid.sum())
    if skipped:
        logger.warning(f"{skipped} 个节点的 2 维投影为零向量，已跳过")

    angles = np.full(num_nodes, np.nan)
    angles[valid] = np.arctan2(projected[valid, 1], projected[valid, 0])
    if not valid.any():
        return DispersionResult(angles, 1.0, True, skipped, variances)
    length = MathUtils.resultant_length(angles[valid])
    return DispersionResult(
        angles=angles,
        resultant_length=min(max(length, 0.0), 1.0),
        collapsed=False,
        skipped=skipped,
        explained_variance=variances,
    )
