"""PASTN 模型组装模块

输入层 → SPAE → L 个 ST 层（STLM 后接 TPAM，带残差与 skip）→ 两层输出头
"""

import itertools
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
import logging

from common.constants import (
    ADAPTIVE_EMBEDDING_DIM,
    DEFAULT_DROPOUT,
    DEFAULT_INPUT_STEPS,
    DEFAULT_OUTPUT_STEPS,
    INPUT_FEATURES,
    KERNEL_SIZE,
    LAYER_NORM_EPS,
)
from common.exceptions import ConfigurationError, DimensionError
from common.utilities import MathUtils, ValidationUtils
from config import Config
from core.graph import GraphBundle, init_node_factors
from core.spae import INIT_KINDS, SPAETable, apply_spae, init_spae
from core.stlm import DiffusionConvParams, GatedTCNParams, init_diffusion, init_gated_tcn, stlm_forward
from core.tensor import Tensor, as_tensor, einsum, no_grad, pad_left, relu, reshape, transpose
from core.tpam import LayerNormParams, TPAMParams, init_layer_norm, init_tpam, tpam_forward

logger = logging.getLogger(__name__)

SEARCH_LAYERS = (4, 6, 8)
SEARCH_CHANNELS = (16, 24, 32)
SEARCH_DEPTHS = (1, 2, 3)
SEARCH_HEADS = (2, 4, 8)

ABLATION_FLAGS = ("no_spae", "no_tpam", "st_only", "spae_random_init", "spae_frozen")


@dataclass(frozen=True)
class ModelConfig:
    """模型结构配置

    skip 宽度固定为 2C，输出头隐藏宽度为 4C，膨胀因子按 1,2,1,2,... 交替。
    """

    num_nodes: int
    layers: int = 4
    channels: int = 16
    diffusion_depth: int = 2
    heads: int = 4
    kernel_size: int = KERNEL_SIZE
    input_steps: int = DEFAULT_INPUT_STEPS
    output_steps: int = DEFAULT_OUTPUT_STEPS
    input_features: int = INPUT_FEATURES
    dropout: float = DEFAULT_DROPOUT
    adaptive_dim: int = ADAPTIVE_EMBEDDING_DIM
    layer_norm_eps: float = LAYER_NORM_EPS
    use_spae: bool = True
    use_tpam: bool = True
    spae_init: str = "sinusoidal"
    spae_frozen: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def skip_channels(self) -> int:
        return 2 * self.channels

    @property
    def head_channels(self) -> int:
        return 4 * self.channels

    @property
    def dilations(self) -> List[int]:
        return [1 if i % 2 == 0 else 2 for i in range(self.layers)]

    @property
    def receptive_field(self) -> int:
        return 1 + sum(d * (self.kernel_size - 1) for d in self.dilations)

    @property
    def padded_length(self) -> int:
        return max(self.input_steps, self.receptive_field)

    @property
    def final_length(self) -> int:
        """最深一层输出的时间长度（skip 路径只取最后一步）"""
        return self.padded_length - (self.receptive_field - 1)

    def validate(self) -> None:
        """检查配置；T < R 时输入左补零到 R，T ≥ R 时 skip 路径只取最后一步，头部读到的时间长度恒为 1"""
        for name in ("num_nodes", "layers", "channels", "heads", "kernel_size",
                     "input_steps", "output_steps", "input_features", "adaptive_dim"):
            ValidationUtils.require_positive_int(name, getattr(self, name))
        if self.diffusion_depth < 0:
            raise ConfigurationError(f"diffusion_depth 不能为负，得到 {self.diffusion_depth}")
        ValidationUtils.require_probability("dropout", self.dropout)
        ValidationUtils.require_choice("spae_init", self.spae_init, INIT_KINDS)
        if self.use_tpam and self.channels % self.heads != 0:
            raise ConfigurationError(f"通道数 {self.channels} 不能被头数 {self.heads} 整除")
        if self.final_length < 1:
            raise ConfigurationError(
                f"感受野 {self.receptive_field} 与输入长度 {self.input_steps} 无法产生输出时间步"
            )

    def parameter_breakdown(self) -> "OrderedDict[str, int]":
        """按组件统计参数个数"""
        c, n = self.channels, self.num_nodes
        breakdown: "OrderedDict[str, int]" = OrderedDict()
        breakdown["input"] = self.input_features * c + c
        breakdown["spae"] = n * c if self.use_spae else 0
        breakdown["graph"] = 2 * n * self.adaptive_dim
        per_layer_tcn = 2 * c * c * self.kernel_size + 2 * c
        per_layer_diffusion = 3 * (self.diffusion_depth + 1) * c * c
        per_layer_tpam = (4 * c * c + 2 * c) if self.use_tpam else 0
        per_layer_skip = c * self.skip_channels + self.skip_channels
        breakdown["tcn"] = self.layers * per_layer_tcn
        breakdown["diffusion"] = self.layers * per_layer_diffusion
        breakdown["tpam"] = self.layers * per_layer_tpam
        breakdown["skip"] = self.layers * per_layer_skip
        breakdown["head"] = (
            self.skip_channels * self.head_channels + self.head_channels
            + self.head_channels * self.output_steps + self.output_steps
        )
        return breakdown

    def parameter_count(self) -> int:
        return sum(self.parameter_breakdown().values())

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"未知的模型配置项: {unknown}")
        return cls(**data)

    @classmethod
    def from_preset(cls, name: str, num_nodes: int, **overrides) -> "ModelConfig":
        """由 config.json 的默认值和预设构建"""
        config = Config.get_instance()
        values = config.get_model_config()
        try:
            values.update(config.get_preset(name))
        except KeyError as e:
            raise ConfigurationError(str(e)) from e
        values.update(overrides)
        values["num_nodes"] = num_nodes
        return cls.from_dict(values)

    @staticmethod
    def search_grid() -> Iterator[Tuple[int, int, int, int]]:
        """(L, C, K, H) 超参数网格"""
        return itertools.product(SEARCH_LAYERS, SEARCH_CHANNELS, SEARCH_DEPTHS, SEARCH_HEADS)


def ablation_variant(config: ModelConfig, flags: Optional[Dict[str, bool]] = None) -> ModelConfig:
    """按消融开关返回新的配置，其余结构保持不变"""
    flags = dict(flags or {})
    unknown = sorted(set(flags) - set(ABLATION_FLAGS))
    if unknown:
        raise ConfigurationError(f"未知的消融开关: {unknown}")
    no_spae = flags.get("no_spae", False) or flags.get("st_only", False)
    no_tpam = flags.get("no_tpam", False) or flags.get("st_only", False)
    if no_spae and (flags.get("spae_random_init") or flags.get("spae_frozen")):
        raise ConfigurationError("去掉 SPAE 的同时又设置了 SPAE 初始化/冻结开关")
    changes: Dict[str, Any] = {}
    if no_spae:
        changes["use_spae"] = False
    if no_tpam:
        changes["use_tpam"] = False
    if flags.get("spae_random_init"):
        changes["spae_init"] = "random"
    if flags.get("spae_frozen"):
        changes["spae_frozen"] = True
    return replace(config, **changes) if changes else config


def variant_flags(variant: str) -> Dict[str, bool]:
    """消融变体名 → 开关"""
    if variant == "full":
        return {}
    if variant not in ABLATION_FLAGS:
        raise ConfigurationError(f"未知的消融变体: {variant}")
    return {variant: True}


@dataclass
class STLayerParams:
    tcn: GatedTCNParams
    diffusion: DiffusionConvParams
    tpam: Optional[TPAMParams]
    norm: Optional[LayerNormParams]
    skip_weight: Tensor
    skip_bias: Tensor


def _linear(seed: int, name: str, c_in: int, c_out: int) -> Tuple[Tensor, Tensor]:
    tensors = []
    for suffix, shape in (("weight", (c_in, c_out)), ("bias", (c_out,))):
        full = f"{name}.{suffix}"
        rng = MathUtils.derive_rng(seed, f"init/{full}")
        tensors.append(Tensor(MathUtils.fan_in_uniform(rng, shape, c_in), requires_grad=True, name=full))
    return tensors[0], tensors[1]


class ModelParams:
    """全部可学习参数，按声明顺序登记"""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        c = config.channels

        self.input_weight, self.input_bias = _linear(seed, "input", config.input_features, c)
        self.spae: Optional[SPAETable] = None
        if config.use_spae:
            self.spae = init_spae(config.num_nodes, c, config.spae_init, seed, frozen=config.spae_frozen)
        self.source_factors, self.target_factors = init_node_factors(config.num_nodes, seed, config.adaptive_dim)

        self.layers: List[STLayerParams] = []
        for i, dilation in enumerate(config.dilations):
            prefix = f"layers.{i}"
            tcn = init_gated_tcn(c, c, config.kernel_size, dilation, seed, f"{prefix}.tcn", layer_index=i)
            diffusion = init_diffusion(c, c, config.diffusion_depth, seed, f"{prefix}.diffusion")
            tpam = norm = None
            if config.use_tpam:
                tpam = init_tpam(c, config.heads, seed, f"{prefix}.tpam")
                norm = init_layer_norm(c, f"{prefix}.norm", config.layer_norm_eps)
            skip_weight, skip_bias = _linear(seed, f"{prefix}.skip", c, config.skip_channels)
            self.layers.append(STLayerParams(tcn, diffusion, tpam, norm, skip_weight, skip_bias))

        self.hidden_weight, self.hidden_bias = _linear(seed, "head.hidden", config.skip_channels, config.head_channels)
        self.output_weight, self.output_bias = _linear(seed, "head.output", config.head_channels, config.output_steps)

    def named_tensors(self) -> List[Tuple[str, Tensor]]:
        named = [("input.weight", self.input_weight), ("input.bias", self.input_bias)]
        if self.spae is not None:
            named.append(("spae.table", self.spae.table))
        named += [("graph.source_factors", self.source_factors), ("graph.target_factors", self.target_factors)]
        for i, layer in enumerate(self.layers):
            prefix = f"layers.{i}"
            named += [(f"{prefix}.tcn.{n}", t) for n, t in layer.tcn.tensors()]
            named += [(f"{prefix}.diffusion.{n}", t) for n, t in layer.diffusion.tensors()]
            if layer.tpam is not None:
                named += [(f"{prefix}.tpam.{n}", t) for n, t in layer.tpam.tensors()]
                named += [(f"{prefix}.norm.{n}", t) for n, t in layer.norm.tensors()]
            named += [(f"{prefix}.skip.weight", layer.skip_weight), (f"{prefix}.skip.bias", layer.skip_bias)]
        named += [
            ("head.hidden.weight", self.hidden_weight), ("head.hidden.bias", self.hidden_bias),
            ("head.output.weight", self.output_weight), ("head.output.bias", self.output_bias),
        ]
        return named

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return [(name, t) for name, t in self.named_tensors() if not t.frozen]

    def count(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    def zero_grad(self) -> None:
        for _, t in self.named_tensors():
            t.zero_grad()

    def snapshot(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self.named_tensors())

    def load_snapshot(self, snapshot: Dict[str, np.ndarray]) -> None:
        named = self.named_tensors()
        if [name for name, _ in named] != list(snapshot):
            raise ConfigurationError("参数快照的名称/顺序与模型不一致")
        for name, t in named:
            values = np.asarray(snapshot[name], dtype=np.float64)
            if values.shape != t.shape:
                raise DimensionError(f"参数 {name} 形状应为 {t.shape}，得到 {values.shape}")
            t.data[...] = values


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """逐位置线性投影：B×C_in×N×T → B×C_out×N×T"""
    out = einsum("bcnt,co->bont", x, weight)
    return out + reshape(bias, (1, bias.shape[0], 1, 1))


def forward(
    x: Tensor,
    params: ModelParams,
    bundle: GraphBundle,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    capture: Optional[Dict[str, Any]] = None,
) -> Tensor:
    """前向计算

    Args:
        x: B×T×N×D_feat（已标准化）
        params: 模型参数
        bundle: 带 E1/E2 的图
        mode: train 或 eval（train 时启用 dropout，需要 rng）
        capture: 传入 dict 时记录中间结果（numpy 数组）

    Returns:
        B×T'×N×1
    """
    cfg = params.config
    x = as_tensor(x)
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode 只能为 train 或 eval，得到 {mode}")
    if x.ndim != 4 or x.shape[1:] != (cfg.input_steps, cfg.num_nodes, cfg.input_features):
        expected = ("B", cfg.input_steps, cfg.num_nodes, cfg.input_features)
        raise DimensionError(f"输入形状应为 {expected}，得到 {x.shape}")
    training = mode == "train"

    h = transpose(x, (0, 3, 2, 1))  # B×D_feat×N×T
    h = pad_left(h, cfg.padded_length - cfg.input_steps, axis=-1)
    h = conv1x1(h, params.input_weight, params.input_bias)
    if capture is not None:
        capture["input_layer"] = h.data.copy()
    if params.spae is not None:
        h = apply_spae(h, params.spae)
    if capture is not None:
        capture["spae_layer"] = h.data.copy()
        capture["layer_outputs"] = []
        capture["attention"] = []

    adaptive = bundle.adaptive_adjacency()
    skip = None
    for layer in params.layers:
        residual = h
        s = stlm_forward(h, layer.tcn, layer.diffusion, bundle, training, cfg.dropout, rng, adaptive)
        if layer.tpam is not None:
            if capture is not None:
                s, maps = tpam_forward(s, layer.tpam, layer.norm, return_attention=True)
                capture["attention"].append(maps)
            else:
                s = tpam_forward(s, layer.tpam, layer.norm)
        length = s.shape[-1]
        h = s + residual[..., -length:]
        projected = conv1x1(s[..., -1:], layer.skip_weight, layer.skip_bias)
        skip = projected if skip is None else skip + projected
        if capture is not None:
            capture["layer_outputs"].append(h.data.copy())

    out = conv1x1(relu(skip), params.hidden_weight, params.hidden_bias)
    out = conv1x1(relu(out), params.output_weight, params.output_bias)  # B×T'×N×1
    return out


class PASTNModel:
    """模型 = 配置 + 参数 + 图"""

    def __init__(self, config: ModelConfig, adjacency: np.ndarray, seed: int = 0,
                 params: Optional[ModelParams] = None):
        self.config = config
        self.seed = seed
        self.params = params if params is not None else ModelParams(config, seed)
        base = GraphBundle.from_adjacency(adjacency)
        if base.num_nodes != config.num_nodes:
            raise ConfigurationError(f"邻接矩阵节点数 {base.num_nodes} 与配置 N={config.num_nodes} 不符")
        self.bundle = base.with_factors(self.params.source_factors, self.params.target_factors)
        logger.debug(f"PASTNModel: {self.params.count()} 个参数，感受野 {config.receptive_field}")

    def forward(self, x, training: bool = False, rng: Optional[np.random.Generator] = None,
                capture: Optional[Dict[str, Any]] = None) -> Tensor:
        return forward(x, self.params, self.bundle, "train" if training else "eval", rng, capture)

    def predict(self, history: np.ndarray, scaler) -> np.ndarray:
        """单个窗口（T×N×D_feat，已标准化）→ T'×N 原始单位的预测"""
        if scaler.num_nodes != self.config.num_nodes:
            raise ConfigurationError(
                f"标准化器节点数 {scaler.num_nodes} 与模型节点数 {self.config.num_nodes} 不符"
            )
        history = np.asarray(history, dtype=np.float64)
        with no_grad():
            out = self.forward(history[None, ...])
        return scaler.inverse_transform(out.data[0, :, :, 0])
