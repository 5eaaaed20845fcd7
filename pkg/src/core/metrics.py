"""评估指标模块

MAE / RMSE / 掩码 MAPE，整体、逐预测步和 15min/30min/1h 三个命名时距
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import logging

from common.constants import DEFAULT_MAPE_MASK_EPS, HORIZON_STEPS, METRICS_COLUMNS
from common.exceptions import DimensionError
from common.utilities import FileUtils

logger = logging.getLogger(__name__)


@dataclass
class MetricRow:
    """一行指标；mape 为 None 表示所有目标都被掩码"""

    name: str
    mae: float
    rmse: float
    mape: Optional[float]
    masked_count: int
    count: int

    def as_dict(self) -> Dict[str, Any]:
        return {
            "horizon": self.name,
            "mae": self.mae,
            "rmse": self.rmse,
            "mape": self.mape,
            "masked_count": self.masked_count,
        }


@dataclass
class MetricsReport:
    overall: MetricRow
    steps: List[MetricRow]
    horizons: Dict[str, MetricRow]
    sample_count: int
    notices: List[str] = field(default_factory=list)

    @property
    def mape_masked(self) -> int:
        return self.overall.masked_count


def _as_samples(values: np.ndarray) -> np.ndarray:
    """统一成 S×T'×N"""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 4 and values.shape[-1] == 1:
        values = values[..., 0]
    if values.ndim == 1:
        return values.reshape(-1, 1, 1)
    if values.ndim == 2:
        return values[None, ...]
    if values.ndim == 3:
        return values
    raise DimensionError(f"指标输入应为 1~4 维，得到 {values.shape}")


def _row(name: str, pred: np.ndarray, target: np.ndarray, mask_eps: float) -> MetricRow:
    error = pred - target
    mae = float(np.mean(np.abs(error)))
    rmse = float(math.sqrt(np.mean(error ** 2)))
    keep = np.abs(target) >= mask_eps
    mape = None
    if keep.any():
        mape = float(np.mean(np.abs(error[keep]) / np.abs(target[keep])) * 100.0)
    return MetricRow(name, mae, rmse, mape, int(error.size - keep.sum()), int(error.size))


def compute_metrics(pred, target, mask_eps: float = DEFAULT_MAPE_MASK_EPS) -> MetricsReport:
    """原始单位下的指标

    pred / target 形状相同，可为 S×T'×N（或 S×T'×N×1、T'×N、一维）。
    """
    pred_arr, target_arr = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred_arr.shape != target_arr.shape:
        raise DimensionError(f"预测 {pred_arr.shape} 与目标 {target_arr.shape} 形状不同")
    pred_arr, target_arr = _as_samples(pred_arr), _as_samples(target_arr)
    horizon = pred_arr.shape[1]

    overall = _row("overall", pred_arr, target_arr, mask_eps)
    steps = [
        _row(f"step_{j + 1}", pred_arr[:, j], target_arr[:, j], mask_eps)
        for j in range(horizon)
    ]
    horizons: Dict[str, MetricRow] = {}
    notices: List[str] = []
    for name, step in HORIZON_STEPS.items():
        if step <= horizon:
            source = steps[step - 1]
            horizons[name] = MetricRow(name, source.mae, source.rmse, source.mape, source.masked_count, source.count)
        else:
            notices.append(f"预测步数 {horizon} 不足 {step}，缺少 {name} 时距")
    for notice in notices:
        logger.info(notice)
    return MetricsReport(overall=overall, steps=steps, horizons=horizons, sample_count=pred_arr.shape[0], notices=notices)


def horizon_table(report: MetricsReport) -> List[Dict[str, Any]]:
    """15min / 30min / 1h 三行（按时距顺序，缺失的时距略去）"""
    return [report.horizons[name].as_dict() for name in HORIZON_STEPS if name in report.horizons]


def format_horizon_table(report: MetricsReport) -> str:
    lines = [f"{'horizon':<8} {'MAE':>10} {'RMSE':>10} {'MAPE':>9}"]
    for row in horizon_table(report):
        mape = "NA" if row["mape"] is None else f"{row['mape']:.2f}%"
        lines.append(f"{row['horizon']:<8} {row['mae']:>10.4f} {row['rmse']:>10.4f} {mape:>9}")
    lines.extend(report.notices)
    return "\n".join(lines)


def metrics_rows(report: MetricsReport) -> List[Dict[str, Any]]:
    """metrics.csv 的行：逐步、命名时距、整体"""
    rows = [row.as_dict() for row in report.steps]
    rows += horizon_table(report)
    rows.append(report.overall.as_dict())
    return rows


def write_metrics_csv(path: str, report: MetricsReport, extra_rows: Optional[List[MetricRow]] = None) -> None:
    rows = metrics_rows(report) + [row.as_dict() for row in extra_rows or []]
    FileUtils.write_csv(path, rows, METRICS_COLUMNS)


def read_metrics_csv(path: str) -> pd.DataFrame:
    """读回 metrics.csv，NA 还原为缺失值"""
    return pd.read_csv(path, na_values=["NA"], keep_default_na=False)
