"""时间模式注意力模块（TPAM）

对每个节点独立地在 T 个时间步之间做多头自注意力，
随后加残差并在特征维做层归一化
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
import logging

from common.constants import LAYER_NORM_EPS
from common.exceptions import ConfigurationError, DimensionError
from common.utilities import MathUtils
from core.tensor import Tensor, as_tensor, concat, layer_norm, matmul, softmax, split, transpose

logger = logging.getLogger(__name__)


@dataclass
class TPAMParams:
    """TPAM 投影矩阵（无偏置）

    Attributes:
        w_query / w_key / w_value: D×d
        w_out: d×D
        heads: 头数 H，要求 d 能被 H 整除
    """

    w_query: Tensor
    w_key: Tensor
    w_value: Tensor
    w_out: Tensor
    heads: int

    @property
    def width(self) -> int:
        return self.w_query.shape[1]

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def validate(self, features: int) -> None:
        if self.heads < 1 or self.width % self.heads != 0:
            raise ConfigurationError(f"注意力宽度 {self.width} 不能被头数 {self.heads} 整除")
        for name, weight in (("W_Q", self.w_query), ("W_K", self.w_key), ("W_V", self.w_value)):
            if weight.shape != (features, self.width):
                raise DimensionError(f"{name} 形状应为 ({features}, {self.width})，得到 {weight.shape}")
        if self.w_out.shape != (self.width, features):
            raise DimensionError(f"W_O 形状应为 ({self.width}, {features})，得到 {self.w_out.shape}")

    def tensors(self) -> List[Tuple[str, Tensor]]:
        return [("w_query", self.w_query), ("w_key", self.w_key), ("w_value", self.w_value), ("w_out", self.w_out)]


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = LAYER_NORM_EPS

    def tensors(self) -> List[Tuple[str, Tensor]]:
        return [("gamma", self.gamma), ("beta", self.beta)]


def init_tpam(features: int, heads: int, seed: int, prefix: str, width: Optional[int] = None) -> TPAMParams:
    width = features if width is None else width
    if heads < 1 or width % heads != 0:
        raise ConfigurationError(f"注意力宽度 {width} 不能被头数 {heads} 整除")
    tensors = {}
    shapes = {
        "w_query": ((features, width), features),
        "w_key": ((features, width), features),
        "w_value": ((features, width), features),
        "w_out": ((width, features), width),
    }
    for name, (shape, fan_in) in shapes.items():
        full = f"{prefix}.{name}"
        rng = MathUtils.derive_rng(seed, f"init/{full}")
        tensors[name] = Tensor(MathUtils.fan_in_uniform(rng, shape, fan_in), requires_grad=True, name=full)
    return TPAMParams(heads=heads, **tensors)


def init_layer_norm(features: int, prefix: str, eps: float = LAYER_NORM_EPS) -> LayerNormParams:
    return LayerNormParams(
        gamma=Tensor(np.ones(features), requires_grad=True, name=f"{prefix}.gamma"),
        beta=Tensor(np.zeros(features), requires_grad=True, name=f"{prefix}.beta"),
        eps=eps,
    )


def qkv_project(x: Tensor, params: TPAMParams) -> Tuple[Tensor, Tensor, Tensor]:
    """Q = X·W_Q，K = X·W_K，V = X·W_V；X 的最后两维为 T×D"""
    x = as_tensor(x)
    return matmul(x, params.w_query), matmul(x, params.w_key), matmul(x, params.w_value)


def _swap_last(t: Tensor) -> Tensor:
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(t, axes)


def multi_head_attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    params: TPAMParams,
    return_attention: bool = False,
) -> Union[Tensor, Tuple[Tensor, np.ndarray]]:
    """按头切分 → softmax(QKᵀ/√d_h)·V → 拼接 → W_O

    Args:
        query / key / value: ...×T×d
        return_attention: 同时返回注意力图 ...×H×T×T

    Returns:
        ...×T×D，或 (输出, 注意力图)
    """
    heads = params.heads
    scale = 1.0 / math.sqrt(params.head_dim)
    outputs, maps = [], []
    for q, k, v in zip(split(query, heads, -1), split(key, heads, -1), split(value, heads, -1)):
        weights = softmax(matmul(q, _swap_last(k)) * scale, axis=-1)
        outputs.append(matmul(weights, v))
        if return_attention:
            maps.append(weights.data)
    out = matmul(concat(outputs, axis=-1), params.w_out)
    if return_attention:
        return out, np.stack(maps, axis=-3)
    return out


def tpam_attention(
    x: Tensor,
    params: TPAMParams,
    return_attention: bool = False,
) -> Union[Tensor, Tuple[Tensor, np.ndarray]]:
    """残差之前的注意力分支，输入输出均为 B×D×N×T"""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"TPAM 需要 B×D×N×T 输入，得到 {x.shape}")
    params.validate(x.shape[1])
    per_node = transpose(x, (0, 2, 3, 1))  # B×N×T×D
    q, k, v = qkv_project(per_node, params)
    result = multi_head_attention(q, k, v, params, return_attention=return_attention)
    if return_attention:
        att, maps = result
        return transpose(att, (0, 3, 1, 2)), maps
    return transpose(result, (0, 3, 1, 2))


def tpam_forward(
    x: Tensor,
    params: TPAMParams,
    norm: LayerNormParams,
    return_attention: bool = False,
) -> Union[Tensor, Tuple[Tensor, np.ndarray]]:
    """LayerNorm(MHA(X) + X)，在特征维归一化

    Returns:
        B×D×N×T；return_attention 时附带 B×N×H×T×T 注意力图
    """
    x = as_tensor(x)
    result = tpam_attention(x, params, return_attention=return_attention)
    att, maps = result if return_attention else (result, None)
    per_node = transpose(att + x, (0, 2, 3, 1))
    normed = transpose(layer_norm(per_node, norm.gamma, norm.beta, norm.eps), (0, 3, 1, 2))
    if return_attention:
        return normed, maps
    return normed
