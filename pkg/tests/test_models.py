#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
单元测试 - 核心数据模型
"""

import math

import numpy as np
import pandas as pd
import pytest

from models import ForecastPanel, Interval, IntervalKind, IntervalStream, covers, forecast_std, mean_forecast
from utils import DataError


class TestInterval:
    """预测区间测试"""

    def test_finite_interval_covers_endpoints(self):
        """测试闭区间包含端点"""
        interval = Interval.finite(1.0, 3.0, 0.2)
        assert covers(interval, 1.0)
        assert covers(interval, 3.0)
        assert not covers(interval, 3.0001)
        assert interval.length() == 2.0

    def test_infinite_interval_covers_everything(self):
        """测试无限区间恒覆盖"""
        interval = Interval.infinite(0.2)
        assert covers(interval, 1e12)
        assert interval.length() == math.inf

    def test_empty_interval_never_covers(self):
        """测试空区间长度为0且不覆盖任何值"""
        interval = Interval.empty(2.0, 0.2)
        assert interval.kind is IntervalKind.EMPTY
        assert interval.length() == 0.0
        assert not covers(interval, 2.0)

    def test_finite_interval_rejects_reversed_bounds(self):
        """测试有限区间拒绝 lower > upper"""
        with pytest.raises(DataError):
            Interval.finite(3.0, 1.0, 0.2)

    def test_alpha_must_be_in_open_unit_interval(self):
        """测试名义误覆盖率越界"""
        with pytest.raises(DataError):
            Interval.finite(0.0, 1.0, 1.0)


class TestForecastPanel:
    """预测面板测试"""

    def setup_method(self):
        """初始化"""
        self.timestamps = pd.date_range("2022-01-01", periods=3, freq="h")

    def test_mean_and_std_use_population_variance(self):
        """测试均值与总体标准差"""
        panel = ForecastPanel(self.timestamps, [1.0, 2.0, 3.0], [[1.0, 2.0, 3.0], [2.0, 2.0, 2.0], [0.0, 0.0, 6.0]])
        assert mean_forecast(panel, 0) == pytest.approx(2.0)
        assert forecast_std(panel, 0) == pytest.approx(math.sqrt(2.0 / 3.0))
        assert forecast_std(panel, 1) == 0.0
        assert panel.n_forecasters == 3

    def test_duplicate_timestamp_rejected(self):
        """测试重复时间戳被拒绝"""
        timestamps = pd.DatetimeIndex(["2022-01-01 00:00", "2022-01-01 00:00", "2022-01-01 01:00"])
        with pytest.raises(DataError):
            ForecastPanel(timestamps, [1.0, 2.0, 3.0], np.ones((3, 2)))

    def test_non_finite_values_rejected(self):
        """测试非有限值被拒绝"""
        with pytest.raises(DataError):
            ForecastPanel(self.timestamps, [1.0, np.nan, 3.0], np.ones((3, 2)))
        with pytest.raises(DataError):
            ForecastPanel(self.timestamps, [1.0, 2.0, 3.0], [[1.0], [np.inf], [1.0]])

    def test_length_mismatch_rejected(self):
        """测试长度不一致被拒绝"""
        with pytest.raises(DataError):
            ForecastPanel(self.timestamps, [1.0, 2.0], np.ones((3, 2)))

    def test_arrays_are_read_only(self):
        """测试构造后不可修改"""
        panel = ForecastPanel(self.timestamps, [1.0, 2.0, 3.0], np.ones((3, 2)))
        with pytest.raises(ValueError):
            panel.y[0] = 5.0


class TestIntervalStream:
    """未校准区间流测试"""

    def test_defaults_for_group_and_point(self):
        """测试默认单分组与中点点预测"""
        stream = IntervalStream(t_index=[0, 1], lower=[0.0, 1.0], upper=[2.0, 5.0], y=[1.0, 1.0], alpha=0.2)
        assert list(stream.group_key) == [0, 0]
        assert list(stream.point) == [1.0, 3.0]
        assert list(stream.lengths) == [2.0, 4.0]
        assert list(stream.groups()) == [0]

    def test_reversed_bounds_rejected(self):
        """测试 lower > upper 被拒绝"""
        with pytest.raises(DataError):
            IntervalStream(t_index=[0], lower=[2.0], upper=[1.0], y=[0.0], alpha=0.2)

    def test_time_index_must_increase_within_group(self):
        """测试组内时间索引必须严格递增，不同组之间可以交错"""
        IntervalStream(t_index=[0, 0, 1, 1], lower=[0.0] * 4, upper=[1.0] * 4, y=[0.5] * 4,
                       alpha=0.2, group_key=[0, 1, 0, 1])
        with pytest.raises(DataError):
            IntervalStream(t_index=[1, 0], lower=[0.0] * 2, upper=[1.0] * 2, y=[0.5] * 2, alpha=0.2)

    def test_records_carry_intervals(self):
        """测试逐条记录"""
        stream = IntervalStream(t_index=[3], lower=[0.0], upper=[2.0], y=[1.0], alpha=0.1)
        record = next(stream.records())
        assert record.t == 3
        assert record.interval.alpha_nominal == 0.1
        assert record.point == 1.0
