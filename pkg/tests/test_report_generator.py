#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
单元测试 - 结果表导出
"""

import json
import os

import numpy as np
import pandas as pd
import pytest
from openpyxl import load_workbook

from metrics import SYNTHETIC_METRICS, MetricsReport
from report_generator import MISSING, format_table, metrics_table, write_excel_workbook, write_table


@pytest.fixture
def aggregated():
    """两种方法的汇总表，带标准差列"""
    data = {'method': ['Initial', 'WACI']}
    for name in SYNTHETIC_METRICS:
        data[name] = [1.234567891, 80.0]
        data[f"{name}_std"] = [0.5, 0.25]
    table = pd.DataFrame(data)
    table.loc[0, 'ils'] = np.nan
    table.loc[0, 'ils_std'] = np.nan
    return table


def make_report(ils=0.5, stds=None):
    return MetricsReport(
        coverage=80.0, mean_length=4.0, winkler=6.5, pearson=0.3, ils=ils,
        spearman=0.4, length_std=1.0, mcd=2.0, n=100, stds=stds or {},
    )


class TestFormatTable:
    """结果表格式化测试"""

    def test_export_columns(self, aggregated):
        """测试导出列名与标准差列"""
        table = format_table(aggregated, SYNTHETIC_METRICS)
        assert list(table.columns[:3]) == ['method', 'mean_empirical_coverage', 'mean_empirical_coverage_std']
        assert 'ils_0.10' in table.columns
        assert table.loc[0, 'mean_empirical_coverage'] == pytest.approx(1.234568)

    def test_missing_ils(self, aggregated):
        """测试未校准方法的 ILS 写成 "--" """
        table = format_table(aggregated, SYNTHETIC_METRICS)
        assert table.loc[0, 'ils_0.10'] == MISSING
        assert table.loc[0, 'ils_0.10_std'] == MISSING
        assert table.loc[1, 'ils_0.10'] == 80.0

    def test_paper_style(self, aggregated):
        """测试 "值 (标准差)" 格式"""
        table = format_table(aggregated, SYNTHETIC_METRICS, paper_style=True)
        assert table.loc[1, 'mean_empirical_coverage'] == "80.00 (0.25)"
        assert table.loc[0, 'ils_0.10'] == MISSING
        assert not any(col.endswith('_std') for col in table.columns)

    def test_without_std_columns(self, aggregated):
        """测试没有标准差列时只导出均值"""
        means = aggregated[['method'] + SYNTHETIC_METRICS]
        table = format_table(means, SYNTHETIC_METRICS, paper_style=True)
        assert table.loc[1, 'winkler_score'] == "80.00"


class TestMetricsTable:
    """八项指标表测试"""

    def test_column_order(self):
        """测试列顺序与结果表一致"""
        table = metrics_table([('HQR (none)', make_report(ils=None)), ('HQR (WACI)', make_report())])
        assert list(table.columns) == [
            'method', 'mean_empirical_coverage', 'average_length', 'winkler_score', 'pearson_correlation',
            'ils_0.10', 'spearman_correlation', 'interval_length_std', 'mcd_5',
        ]
        assert table.loc[0, 'ils_0.10'] == "--"
        assert table.loc[1, 'ils_0.10'] == 0.5

    def test_bootstrap_columns(self):
        """测试自助法标准误列"""
        report = make_report(stds={'coverage': 1.5, 'ils': 0.1})
        table = metrics_table([('HQR (ACI)', report)])
        assert table.loc[0, 'mean_empirical_coverage_std'] == 1.5
        assert table.loc[0, 'ils_0.10_std'] == 0.1
        styled = metrics_table([('HQR (ACI)', report)], paper_style=True)
        assert styled.loc[0, 'mean_empirical_coverage'] == "80.00 (1.50)"


class TestWriteTable:
    """文件写出测试"""

    def test_csv_and_json_mirror(self, temp_dir, aggregated):
        """测试CSV与JSON镜像内容一致"""
        table = format_table(aggregated, SYNTHETIC_METRICS)
        path = os.path.join(temp_dir, "table1.csv")
        written = write_table(table, path, json_mirror=True)
        assert written == [path, os.path.join(temp_dir, "table1.json")]
        with open(path, 'rb') as f:
            assert b"\r\n" not in f.read()
        with open(written[1], encoding='utf-8') as f:
            records = json.load(f)
        assert [r['method'] for r in records] == ['Initial', 'WACI']
        assert records[0]['ils_0.10'] == MISSING

    def test_no_json_by_default(self, temp_dir, aggregated):
        """测试默认不写JSON"""
        path = os.path.join(temp_dir, "table2.csv")
        assert write_table(aggregated, path) == [path]
        assert not os.path.exists(os.path.join(temp_dir, "table2.json"))


class TestExcelWorkbook:
    """Excel工作簿测试"""

    def test_one_sheet_per_table(self, temp_dir, aggregated):
        """测试每张表一个工作表"""
        path = os.path.join(temp_dir, "results.xlsx")
        tables = {'table1': format_table(aggregated, SYNTHETIC_METRICS), 'table2': aggregated}
        assert write_excel_workbook(tables, path) == path
        workbook = load_workbook(path)
        assert workbook.sheetnames == ['table1', 'table2']
        assert workbook['table1']['A1'].value == 'method'

    def test_empty_tables(self, temp_dir):
        """测试没有结果表时不写文件"""
        path = os.path.join(temp_dir, "results.xlsx")
        assert write_excel_workbook({}, path) is None
        assert not os.path.exists(path)
