#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
pytest配置文件
定义测试套件的共享fixtures和配置
"""

import os
import sys
import tempfile

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models import ForecastPanel, IntervalStream  # noqa: E402


@pytest.fixture
def temp_dir():
    """提供临时目录fixture"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir


@pytest.fixture
def small_panel():
    """提供 10 天逐小时、M=3 的小面板（带小时分组）"""
    rng = np.random.default_rng(7)
    n_rows = 240
    signal = 50.0 + 10.0 * np.sin(np.arange(n_rows) * 2.0 * np.pi / 24.0)
    forecasts = signal[:, None] + rng.normal(0.0, 2.0, (n_rows, 3))
    y = signal + rng.normal(0.0, 3.0, n_rows)
    timestamps = pd.date_range("2021-03-01", periods=n_rows, freq="h")
    return ForecastPanel(timestamps=timestamps, y=y, forecasts=forecasts, group_key=timestamps.hour.to_numpy())


@pytest.fixture
def synthetic_stream():
    """提供单分组、长度 400 的未校准区间流：区间 [-1.5, 1.5]，实际值 N(0,1)"""
    rng = np.random.default_rng(11)
    n = 400
    half = np.full(n, 1.5)
    return IntervalStream(
        t_index=np.arange(n),
        lower=-half,
        upper=half,
        y=rng.standard_normal(n),
        alpha=0.2,
        point=np.zeros(n),
    )


@pytest.fixture
def config_file(temp_dir):
    """提供一个小规模运行用的配置文件，返回 (配置路径, 输出目录)"""
    output_dir = os.path.join(temp_dir, "output")
    path = os.path.join(temp_dir, "config.ini")
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            "[Paths]\n"
            f"output_path = {output_dir}\n"
            "[Model]\n"
            "window_days = 20\n"
            "[Conformal]\n"
            "calibration_warmup = 10\n"
            "calibration_size = 50\n"
            "[Bootstrap]\n"
            "n_samples = 20\n"
            "sample_size = 200\n"
            "[Synthetic]\n"
            "length = 1200\n"
            "n_runs = 2\n"
            "warmup = 200\n"
            "[Performance]\n"
            "max_workers = 2\n"
            "[Run]\n"
            "seed = 2024\n"
        )
    return path, output_dir


# pytest配置
def pytest_configure(config):
    """配置pytest"""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests"
    )


def pytest_collection_modifyitems(config, items):
    """修改测试收集"""
    # 为测试添加标记
    for item in items:
        if "integration" in item.nodeid:
            item.add_marker(pytest.mark.integration)
        else:
            item.add_marker(pytest.mark.unit)
