"""评估指标单元测试
"""
import sys
import os
import math

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

from common.exceptions import DimensionError
from core.metrics import (
    MetricRow,
    compute_metrics,
    format_horizon_table,
    horizon_table,
    read_metrics_csv,
    write_metrics_csv,
)


def test_basic_example():
    """pred=[10,20]、target=[12,16] → MAE 3、RMSE √10、MAPE 20.8333%"""
    overall = compute_metrics(np.array([10.0, 20.0]), np.array([12.0, 16.0])).overall
    assert overall.mae == pytest.approx(3.0)
    assert overall.rmse == pytest.approx(math.sqrt(10.0))
    assert overall.mape == pytest.approx((2.0 / 12.0 + 4.0 / 16.0) / 2.0 * 100.0)
    assert overall.masked_count == 0 and overall.count == 2


def test_mape_masks_small_targets():
    """|target| < 1 的位置不参与 MAPE；全部被掩码时 MAPE 为 None"""
    report = compute_metrics(np.array([1.0, 5.0]), np.array([0.5, 4.0]))
    assert report.overall.mape == pytest.approx(25.0)
    assert report.overall.masked_count == 1
    assert report.overall.mae == pytest.approx(0.75)
    empty = compute_metrics(np.array([1.0, 2.0]), np.zeros(2))
    assert empty.overall.mape is None and empty.mape_masked == 2


def test_metric_properties():
    """RMSE ≥ MAE；交换 pred/target 时 MAE、RMSE 不变；完全一致时为 0"""
    rng = np.random.default_rng(0)
    for _ in range(50):
        pred = rng.uniform(0, 100, size=(4, 12, 3))
        target = rng.uniform(0, 100, size=(4, 12, 3))
        a = compute_metrics(pred, target).overall
        b = compute_metrics(target, pred).overall
        assert a.rmse >= a.mae - 1e-12
        assert a.mae == pytest.approx(b.mae) and a.rmse == pytest.approx(b.rmse)
    same = compute_metrics(pred, pred).overall
    assert same.mae == 0.0 and same.rmse == 0.0 and same.mape == 0.0


def test_horizon_rows_pick_steps():
    """15min/30min/1h 取第 3/6/12 步"""
    target = np.full((2, 12, 1), 100.0)
    pred = target + np.arange(1, 13, dtype=float)[None, :, None]
    report = compute_metrics(pred, target)
    assert [row["horizon"] for row in horizon_table(report)] == ["h15min", "h30min", "h1h"]
    assert [report.horizons[name].mae for name in ("h15min", "h30min", "h1h")] == [3.0, 6.0, 12.0]
    assert report.steps[0].name == "step_1" and len(report.steps) == 12
    assert report.sample_count == 2
    assert "h1h" in format_horizon_table(report)


def test_short_horizon_reports_notice():
    """T'=6 时缺少 1h 时距并给出提示"""
    report = compute_metrics(np.ones((3, 6, 2)), np.ones((3, 6, 2)) * 2.0)
    assert set(report.horizons) == {"h15min", "h30min"}
    assert len(report.notices) == 1
    assert report.notices[0] in format_horizon_table(report)


def test_shape_mismatch():
    """形状不同报维度错误"""
    with pytest.raises(DimensionError):
        compute_metrics(np.ones((2, 12, 3)), np.ones((2, 12, 4)))


def test_metrics_csv_round_trip(tmp_path):
    """metrics.csv 写出再读回：逐步、时距、整体和附加行，NA 还原为缺失"""
    target = np.full((2, 12, 1), 100.0)
    target[:, 0] = 0.0
    report = compute_metrics(target + 1.0, target)
    extra = MetricRow("persistence_overall", 2.0, 2.5, None, 3, 24)
    path = str(tmp_path / "metrics.csv")
    write_metrics_csv(path, report, [extra])
    frame = read_metrics_csv(path)
    assert list(frame.columns) == ["horizon", "mae", "rmse", "mape", "masked_count"]
    assert len(frame) == 12 + 3 + 1 + 1
    rows = frame.set_index("horizon")
    assert math.isnan(rows.loc["step_1", "mape"])
    assert rows.loc["step_2", "mape"] == pytest.approx(1.0)
    assert rows.loc["overall", "mae"] == report.overall.mae
    assert rows.loc["persistence_overall", "masked_count"] == 3
