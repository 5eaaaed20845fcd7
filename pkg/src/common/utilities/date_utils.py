"""日期时间工具模块

提供 5 分钟采样序列的时间戳生成、间隔检查与时间特征计算
"""

from typing import Optional

import numpy as np
import pandas as pd

from common.constants import INTERVAL_MINUTES


class DateUtils:
    """日期时间工具类"""

    @staticmethod
    def parse_timestamps(values) -> pd.DatetimeIndex:
        """解析时间戳列"""
        return pd.DatetimeIndex(pd.to_datetime(values))

    @staticmethod
    def make_index(start: str, periods: int, minutes: int = INTERVAL_MINUTES) -> pd.DatetimeIndex:
        """生成等间隔时间戳"""
        return pd.date_range(start=pd.Timestamp(start), periods=periods, freq=f"{minutes}min")

    @staticmethod
    def first_irregular_step(index: pd.DatetimeIndex, minutes: int = INTERVAL_MINUTES) -> Optional[int]:
        """返回第一个间隔不等于 minutes 的位置（该行下标），全部规则时返回 None"""
        if len(index) < 2:
            return None
        deltas = np.diff(index.asi8)
        expected = pd.Timedelta(minutes=minutes).value
        bad = np.nonzero(deltas != expected)[0]
        if bad.size == 0:
            return None
        return int(bad[0]) + 1

    @staticmethod
    def time_of_day(index: pd.DatetimeIndex) -> np.ndarray:
        """一天中的时刻，取值 [0, 1)"""
        minutes = index.hour * 60 + index.minute + index.second / 60.0
        return np.asarray(minutes, dtype=np.float64) / 1440.0

    @staticmethod
    def day_of_week(index: pd.DatetimeIndex) -> np.ndarray:
        """星期几 / 7，周一为 0"""
        return np.asarray(index.dayofweek, dtype=np.float64) / 7.0

    @staticmethod
    def is_weekday(index: pd.DatetimeIndex) -> np.ndarray:
        """是否工作日"""
        return np.asarray(index.dayofweek < 5)

    @staticmethod
    def format_timestamp(ts: pd.Timestamp) -> str:
        """格式化为 CSV 使用的字符串"""
        return ts.strftime("%Y-%m-%d %H:%M:%S")
