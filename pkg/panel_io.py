#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
预测面板的CSV读写
表头为 timestamp,y,f1,...,fM；时间戳为ISO-8601，逗号分隔，UTF-8，LF换行。
缺失值不做插补，一律拒绝并报告行号。
"""

import os
import logging
from typing import List

import numpy as np
import pandas as pd

from models import ForecastPanel
from utils import DataError

# 设置模块级logger
logger = logging.getLogger(__name__)

HOUR = pd.Timedelta(hours=1)


def _line_number(row_position: int) -> int:
    """数据行在文件中的行号（表头为第 1 行）"""
    return row_position + 2


def _check_header(columns: List[str]) -> int:
    if len(columns) < 3 or columns[0] != 'timestamp' or columns[1] != 'y':
        raise DataError(f"表头必须为 timestamp,y,f1,...,fM，实际为: {','.join(columns)}")
    expected = [f"f{j}" for j in range(1, len(columns) - 1)]
    if columns[2:] != expected:
        raise DataError(f"预测列必须依次命名为 {','.join(expected)}，实际为: {','.join(columns[2:])}")
    return len(expected)


def _parse_numeric(df: pd.DataFrame, column: str) -> np.ndarray:
    # 逐个用 float() 解析，保证与写出时的 repr 精确往返
    texts = df[column].tolist()
    values = np.empty(len(texts))
    for pos, text in enumerate(texts):
        try:
            values[pos] = float(text)
        except ValueError:
            values[pos] = np.nan
        if not np.isfinite(values[pos]):
            raise DataError(f"第 {_line_number(pos)} 行 {column} 列无法解析为有限数值: '{text}'")
    return values


def ingest_panel(path: str) -> ForecastPanel:
    """
    读取并验证预测面板

    逐小时的数据额外获得 group_key = 小时（0-23），用于按小时分别校准。

    Raises:
        DataError: 文件不存在、为空、表头不符、字段缺失或无法解析、时间戳重复或逆序
    """
    if not os.path.isfile(path):
        raise DataError(f"输入文件不存在: {path}")

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DataError(f"输入文件为空（0 行）: {path}")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"CSV 格式错误: {e}")

    columns = [str(c).strip() for c in df.columns]
    n_forecasters = _check_header(columns)
    df.columns = columns
    if df.empty:
        raise DataError(f"输入文件没有数据行（0 行）: {path}")

    missing = df.apply(lambda col: col.str.strip() == '')
    if missing.to_numpy().any():
        pos, col = np.argwhere(missing.to_numpy())[0]
        raise DataError(f"第 {_line_number(int(pos))} 行缺少字段 {columns[int(col)]}")

    timestamps = pd.to_datetime(df['timestamp'], format='ISO8601', errors='coerce')
    if timestamps.isna().any():
        pos = int(np.flatnonzero(timestamps.isna().to_numpy())[0])
        raise DataError(f"第 {_line_number(pos)} 行的时间戳无法解析: '{df['timestamp'].iloc[pos]}'")
    index = pd.DatetimeIndex(timestamps)
    steps = np.diff(index.asi8)
    bad = np.flatnonzero(steps <= 0)
    if bad.size:
        pos = int(bad[0]) + 1
        reason = "重复" if steps[bad[0]] == 0 else "逆序"
        raise DataError(f"第 {_line_number(pos)} 行的时间戳{reason}: {df['timestamp'].iloc[pos]}")

    y = _parse_numeric(df, 'y')
    forecasts = np.column_stack([_parse_numeric(df, f"f{j}") for j in range(1, n_forecasters + 1)])

    group_key = None
    if len(index) > 1 and bool(np.all(np.diff(index.asi8) == HOUR.value)):
        group_key = index.hour.to_numpy()

    panel = ForecastPanel(timestamps=index, y=y, forecasts=forecasts, group_key=group_key)
    logger.info(f"已读取面板: {len(panel)} 行, M={n_forecasters}, 逐小时分组={'是' if group_key is not None else '否'}")
    return panel


def emit_panel(panel: ForecastPanel, path: str) -> None:
    """把面板写回CSV（ingest_panel 的逆操作）"""
    data = {'timestamp': [ts.isoformat() for ts in panel.timestamps], 'y': panel.y}
    for j in range(panel.n_forecasters):
        data[f"f{j + 1}"] = panel.forecasts[:, j]
    pd.DataFrame(data).to_csv(path, index=False, lineterminator='\n', encoding='utf-8')
    logger.info(f"已写出面板: {path}")
