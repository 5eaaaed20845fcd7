"""时空学习模块（STLM）

门控 TCN（膨胀因果卷积 + tanh/sigmoid 门）后接扩散图卷积，
按节点独立处理时间维，按时间步独立处理图维
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import logging

from common.constants import DEFAULT_DROPOUT
from common.exceptions import DimensionError, LengthError
from common.utilities import MathUtils
from core.graph import GraphBundle, diffusion_conv
from core.tensor import Tensor, as_tensor, dilated_causal_conv, dropout, reshape, sigmoid, tanh

logger = logging.getLogger(__name__)


@dataclass
class GatedTCNParams:
    """门控 TCN 参数

    Attributes:
        filter_kernel: Θ1，C_out×C_in×k
        gate_kernel: Θ2，C_out×C_in×k
        filter_bias: b，长度 C_out
        gate_bias: c，长度 C_out
        dilation: 膨胀因子
        layer_index: 所在 ST 层编号（用于报错）
    """

    filter_kernel: Tensor
    gate_kernel: Tensor
    filter_bias: Tensor
    gate_bias: Tensor
    dilation: int = 1
    layer_index: int = 0

    def tensors(self) -> List[Tuple[str, Tensor]]:
        return [
            ("filter_kernel", self.filter_kernel),
            ("gate_kernel", self.gate_kernel),
            ("filter_bias", self.filter_bias),
            ("gate_bias", self.gate_bias),
        ]


@dataclass
class DiffusionConvParams:
    """扩散卷积参数：weights[k] = (W_k1, W_k2, W_k3)，分别对应 P_f、P_b、Ã_apt"""

    weights: List[Tuple[Tensor, Tensor, Tensor]]
    depth: int

    def tensors(self) -> List[Tuple[str, Tensor]]:
        named = []
        for k, triple in enumerate(self.weights):
            for label, weight in zip(("forward", "backward", "adaptive"), triple):
                named.append((f"k{k}.{label}", weight))
        return named


def init_gated_tcn(
    in_channels: int,
    out_channels: int,
    kernel_size: int,
    dilation: int,
    seed: int,
    prefix: str,
    layer_index: int = 0,
) -> GatedTCNParams:
    fan_in = in_channels * kernel_size
    tensors = {}
    shapes = {
        "filter_kernel": (out_channels, in_channels, kernel_size),
        "gate_kernel": (out_channels, in_channels, kernel_size),
        "filter_bias": (out_channels,),
        "gate_bias": (out_channels,),
    }
    for name, shape in shapes.items():
        full = f"{prefix}.{name}"
        rng = MathUtils.derive_rng(seed, f"init/{full}")
        tensors[name] = Tensor(MathUtils.fan_in_uniform(rng, shape, fan_in), requires_grad=True, name=full)
    return GatedTCNParams(dilation=dilation, layer_index=layer_index, **tensors)


def init_diffusion(in_channels: int, out_channels: int, depth: int, seed: int, prefix: str) -> DiffusionConvParams:
    """3(K+1) 个 D_in×M 矩阵，fan-in 取拼接后的宽度"""
    fan_in = 3 * (depth + 1) * in_channels
    weights = []
    for k in range(depth + 1):
        triple = []
        for label in ("forward", "backward", "adaptive"):
            full = f"{prefix}.k{k}.{label}"
            rng = MathUtils.derive_rng(seed, f"init/{full}")
            values = MathUtils.fan_in_uniform(rng, (in_channels, out_channels), fan_in)
            triple.append(Tensor(values, requires_grad=True, name=full))
        weights.append(tuple(triple))
    return DiffusionConvParams(weights=weights, depth=depth)


def gated_tcn(x: Tensor, params: GatedTCNParams) -> Tensor:
    """h = tanh(Θ1 ⋆ x + b) ⊙ σ(Θ2 ⋆ x + c)

    Args:
        x: B×C_in×N×T

    Returns:
        B×C_out×N×(T − d·(k−1))
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"gated_tcn 需要 B×C×N×T 输入，得到 {x.shape}")
    if params.filter_kernel.shape != params.gate_kernel.shape:
        raise DimensionError(f"Θ1 {params.filter_kernel.shape} 与 Θ2 {params.gate_kernel.shape} 形状不同")
    out_channels = params.filter_kernel.shape[0]
    try:
        filt = dilated_causal_conv(x, params.filter_kernel, params.dilation)
        gate = dilated_causal_conv(x, params.gate_kernel, params.dilation)
    except LengthError as e:
        raise LengthError(f"第 {params.layer_index} 层门控 TCN: {e}") from e
    b = reshape(params.filter_bias, (1, out_channels, 1, 1))
    c = reshape(params.gate_bias, (1, out_channels, 1, 1))
    return tanh(filt + b) * sigmoid(gate + c)


def stlm_forward(
    x: Tensor,
    tcn: GatedTCNParams,
    diffusion: DiffusionConvParams,
    bundle: GraphBundle,
    training: bool = False,
    dropout_p: float = DEFAULT_DROPOUT,
    rng: Optional[np.random.Generator] = None,
    adaptive: Optional[Tensor] = None,
) -> Tensor:
    """门控 TCN → 扩散图卷积 → dropout（仅训练模式）

    残差连接由外层 ST 层负责，这里不加。
    """
    h = gated_tcn(x, tcn)
    z = diffusion_conv(h, bundle, diffusion.weights, diffusion.depth, adaptive=adaptive)
    return dropout(z, dropout_p, training, rng)
