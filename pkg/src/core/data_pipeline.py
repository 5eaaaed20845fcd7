"""数据管道模块

读取/生成 5 分钟粒度的流量序列，附加时间特征，按训练段统计量做 z-score，
切成 (T 步输入, T' 步目标) 滑动窗口
"""

import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import logging

from common.constants import (
    DEFAULT_GRAPH_RADIUS,
    DEFAULT_INPUT_STEPS,
    DEFAULT_OUTPUT_STEPS,
    DEFAULT_SPLIT_RATIOS,
    INTERVAL_MINUTES,
    STEPS_PER_DAY,
    SYNTHETIC_START,
)
from common.exceptions import DataError, DataFormatError, DimensionError, InvalidValueError
from common.utilities import DateUtils, MathUtils
from core.graph import Edge, GraphBundle
from core.training import SplitRanges, chronological_split

logger = logging.getLogger(__name__)

NODE_COLUMN = re.compile(r"^node_(\d+)$")


@dataclass
class RawSeries:
    """原始流量序列

    Attributes:
        values: S×N 流量（每 5 分钟车辆数）
        start: 第一个时间戳
        interval_minutes: 采样间隔
        node_ids: 节点名
    """

    values: np.ndarray
    start: pd.Timestamp
    interval_minutes: int = INTERVAL_MINUTES
    node_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"流量序列应为 S×N，得到 {self.values.shape}")
        if np.isnan(self.values).any():
            raise DataError("流量序列中含有 NaN")
        if not self.node_ids:
            self.node_ids = [f"node_{i}" for i in range(self.values.shape[1])]
        self.start = pd.Timestamp(self.start)

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return DateUtils.make_index(self.start, self.num_steps, self.interval_minutes)


@dataclass
class Scaler:
    """流量通道的 z-score 标准化器（全局均值/标准差）"""

    mean: float
    std: float
    num_nodes: int

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "num_nodes": self.num_nodes}

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(mean=float(data["mean"]), std=float(data["std"]), num_nodes=int(data["num_nodes"]))


@dataclass
class WindowedDataset:
    """滑动窗口数据集

    Attributes:
        inputs: W×T×N×3（z 流量、时刻、星期）
        targets: W×T'×N×1（z 流量）
        flow: 原始单位流量 S×N，用于按原始单位评估
        scaler: 训练段统计量
        splits: 训练/验证/测试窗口下标范围，未切分时为 None
    """

    inputs: np.ndarray
    targets: np.ndarray
    flow: np.ndarray
    scaler: Scaler
    splits: Optional[SplitRanges]
    input_steps: int
    output_steps: int
    ratios: Tuple[float, float, float] = DEFAULT_SPLIT_RATIOS

    @property
    def num_windows(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.inputs.shape[2]

    def batch(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        indices = np.asarray(indices, dtype=np.int64)
        return self.inputs[indices], self.targets[indices]

    def targets_original(self, indices: Sequence[int]) -> np.ndarray:
        """原始单位的目标值 len×T'×N，直接取自原始序列"""
        indices = np.asarray(indices, dtype=np.int64)
        offsets = self.input_steps + np.arange(self.output_steps)
        return self.flow[indices[:, None] + offsets[None, :]]


def random_geometric_edges(
    num_nodes: int,
    seed: int,
    radius: float = DEFAULT_GRAPH_RADIUS,
) -> Tuple[List[Edge], np.ndarray]:
    """单位正方形上的随机几何图：距离不超过 radius 的点对双向连边"""
    if num_nodes < 2:
        raise InvalidValueError(f"至少需要 2 个节点，得到 {num_nodes}")
    rng = MathUtils.derive_rng(seed, "graph/positions")
    positions = rng.uniform(0.0, 1.0, size=(num_nodes, 2))
    edges: List[Edge] = []
    for u in range(num_nodes):
        for v in range(num_nodes):
            if u == v:
                continue
            distance = float(np.hypot(*(positions[u] - positions[v])))
            if distance <= radius:
                edges.append((u, v, distance))
    logger.info(f"随机几何图: {num_nodes} 个节点，{len(edges)} 条有向边 (r={radius})")
    return edges, positions


def generate_synthetic(
    num_nodes: int,
    days: int,
    bundle: GraphBundle,
    seed: int,
    amplitude_scale: float = 1.0,
    noise_scale: float = 1.0,
    spillover: float = 0.3,
    weekday_boost: float = 25.0,
) -> RawSeries:
    """合成交通流量

    flow(t, n) = base_n + amp_n·sin(2π(tod(t) − phase_n)) + boost·[工作日]
                 + spillover·Σ_m P_f[n][m]·flow(t−1, m) + N(0, σ_n²)，截断到 ≥ 0
    """
    if num_nodes < 2 or days < 2:
        raise InvalidValueError(f"合成数据需要 N≥2 且 days≥2，得到 N={num_nodes}, days={days}")
    if bundle.num_nodes != num_nodes:
        raise DimensionError(f"图节点数 {bundle.num_nodes} 与 N={num_nodes} 不符")

    rng = MathUtils.derive_rng(seed, "synthetic/params")
    base = rng.uniform(80.0, 250.0, size=num_nodes)
    amp = rng.uniform(40.0, 120.0, size=num_nodes) * amplitude_scale
    phase = rng.uniform(0.0, 1.0, size=num_nodes)
    sigma = rng.uniform(3.0, 10.0, size=num_nodes) * noise_scale

    steps = days * STEPS_PER_DAY
    index = DateUtils.make_index(SYNTHETIC_START, steps)
    tod = DateUtils.time_of_day(index)
    weekday = DateUtils.is_weekday(index).astype(np.float64)
    noise = MathUtils.derive_rng(seed, "synthetic/noise").standard_normal((steps, num_nodes)) * sigma

    seasonal = base[None, :] + amp[None, :] * np.sin(2.0 * np.pi * (tod[:, None] - phase[None, :]))
    seasonal = seasonal + weekday_boost * weekday[:, None]
    p_f = bundle.forward_transition
    flow = np.zeros((steps, num_nodes))
    previous = np.zeros(num_nodes)
    for t in range(steps):
        current = seasonal[t] + noise[t]
        if spillover and t > 0:
            current = current + spillover * (p_f @ previous)
        previous = np.maximum(current, 0.0)
        flow[t] = previous
    logger.info(f"生成合成流量: {steps} 步 × {num_nodes} 节点 (seed={seed})")
    return RawSeries(values=flow, start=index[0])


def save_flow_csv(path: str, raw: RawSeries) -> None:
    frame = pd.DataFrame(raw.values, columns=raw.node_ids)
    frame.insert(0, "timestamp", [DateUtils.format_timestamp(ts) for ts in raw.timestamps])
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def load_flow_csv(path: str) -> RawSeries:
    """读取 timestamp,node_0,...,node_{N−1} 格式的流量 CSV

    空单元格用该节点上一个有效读数填充；第一行不能缺失。
    行号从表头为第 1 行算起。
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if frame.empty or frame.columns[0] != "timestamp":
        raise DataFormatError("流量 CSV 第一列必须是 timestamp", row=1)

    node_columns = {}
    for column in frame.columns[1:]:
        match = NODE_COLUMN.match(column)
        if match:
            node_columns[int(match.group(1))] = column
        else:
            logger.warning(f"忽略非节点列: {column}")
    if not node_columns or sorted(node_columns) != list(range(len(node_columns))):
        raise DataFormatError(f"节点列必须为 node_0..node_(N-1)，得到 {sorted(node_columns.values())}", row=1)
    ordered = [node_columns[i] for i in range(len(node_columns))]

    try:
        index = DateUtils.parse_timestamps(frame["timestamp"])
    except (ValueError, TypeError) as e:
        raise DataFormatError(f"时间戳无法解析: {e}", row=2) from e
    bad = DateUtils.first_irregular_step(index)
    if bad is not None:
        raise DataFormatError(f"时间戳 {frame['timestamp'].iloc[bad]} 与上一行间隔不是 {INTERVAL_MINUTES} 分钟", row=bad + 2)

    cells = frame[ordered]
    missing = cells.apply(lambda col: col.str.strip() == "")
    if missing.iloc[0].any():
        absent = [c for c in ordered if missing.iloc[0][c]]
        raise DataFormatError(f"第一个读数缺失: {absent}", row=2)
    numeric = cells.apply(pd.to_numeric, errors="coerce")
    invalid = numeric.isna() & ~missing
    if invalid.values.any():
        position, column = np.argwhere(invalid.values)[0]
        name = ordered[column]
        raise DataFormatError(f"{name} 的值 {cells.iloc[position][name]!r} 不是数字", row=int(position) + 2)
    filled = int(missing.values.sum())
    if filled:
        logger.warning(f"{path}: {filled} 个缺失读数已用前值填充")
    values = numeric.ffill().to_numpy(dtype=np.float64)
    return RawSeries(values=values, start=index[0], node_ids=ordered)


def featurize_and_window(
    raw: RawSeries,
    input_steps: int = DEFAULT_INPUT_STEPS,
    output_steps: int = DEFAULT_OUTPUT_STEPS,
    ratios: Optional[Sequence[float]] = DEFAULT_SPLIT_RATIOS,
) -> WindowedDataset:
    """特征化 + 滑动窗口

    ratios 为 None 时不切分，标准化统计量取自全部序列。
    S = T + T' 时只有 1 个窗口，只能配 ratios=None；默认 6:2:2 切分
    需要每段在去掉 T+T'−1 个间隔窗口后仍有窗口，否则抛出 DataError。
    """
    steps, nodes = raw.values.shape
    if steps < input_steps + output_steps:
        raise DataError(f"序列长度 {steps} 小于 T+T'={input_steps + output_steps}")
    num_windows = steps - input_steps - output_steps + 1

    splits = None
    fit_end = steps
    if ratios is not None:
        splits = chronological_split(num_windows, ratios, gap=input_steps + output_steps - 1)
        fit_end = splits.train.stop - 1 + input_steps + output_steps
    span = raw.values[:fit_end]
    mean = float(span.mean())
    std = float(span.std())
    if std == 0.0:
        logger.warning("训练段流量为常数，标准差按 1 处理")
        std = 1.0
    scaler = Scaler(mean=mean, std=std, num_nodes=nodes)

    index = raw.timestamps
    z_flow = scaler.transform(raw.values)
    tod = np.broadcast_to(DateUtils.time_of_day(index)[:, None], (steps, nodes))
    dow = np.broadcast_to(DateUtils.day_of_week(index)[:, None], (steps, nodes))
    features = np.stack([z_flow, tod, dow], axis=-1)  # S×N×3

    offsets_in = np.arange(input_steps)
    offsets_out = input_steps + np.arange(output_steps)
    starts = np.arange(num_windows)[:, None]
    inputs = features[starts + offsets_in[None, :]]
    targets = z_flow[starts + offsets_out[None, :]][..., None]
    logger.info(f"窗口化: {num_windows} 个窗口，scaler mean={mean:.6g} std={std:.6g}")
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        flow=raw.values,
        scaler=scaler,
        splits=splits,
        input_steps=input_steps,
        output_steps=output_steps,
        ratios=tuple(ratios) if ratios is not None else DEFAULT_SPLIT_RATIOS,
    )


def persistence_baseline(
    window_input: np.ndarray,
    output_steps: int = DEFAULT_OUTPUT_STEPS,
    scaler: Optional[Scaler] = None,
) -> np.ndarray:
    """用每个节点最后一个观测值填满 T' 步

    window_input 为 T×N（原始单位）或 T×N×D_feat（第 0 通道为流量；
    传入 scaler 时视为已标准化并还原）。
    """
    window_input = np.asarray(window_input, dtype=np.float64)
    last = window_input[-1, :, 0] if window_input.ndim == 3 else window_input[-1]
    if scaler is not None:
        last = scaler.inverse_transform(last)
    return np.repeat(last[None, :], output_steps, axis=0)


def persistence_forecasts(dataset: WindowedDataset, indices: Sequence[int]) -> np.ndarray:
    """一批窗口的持续性预测 len×T'×N（原始单位）"""
    indices = np.asarray(indices, dtype=np.int64)
    last = dataset.flow[indices + dataset.input_steps - 1]
    return np.repeat(last[:, None, :], dataset.output_steps, axis=1)
