"""
报告生成模块
负责把结果表、状态轨迹和扫描结果写成CSV（可选JSON镜像），以及汇总所有表的Excel工作簿
"""

import os
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd  # type: ignore

from metrics import METRIC_COLUMNS, MetricsReport

# 设置模块级logger
logger = logging.getLogger(__name__)

_EXPORT_NAMES = dict(METRIC_COLUMNS)
MISSING = "--"


def _rounded(value: float) -> object:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return MISSING
    return round(float(value), 6)


def format_table(table: pd.DataFrame, metrics: Sequence[str], paper_style: bool = False) -> pd.DataFrame:
    """
    把按指标字段命名的结果表转成导出格式

    输入含 'method' 列、每个指标一列，可选 `<指标>_std` 列；缺失值（如未校准的 ILS）写成 "--"。
    paper_style 时合并为 "值 (标准差)" 字符串。
    """
    rows: List[Dict[str, object]] = []
    for _, record in table.iterrows():
        row: Dict[str, object] = {'method': record['method']}
        for name in metrics:
            column = _EXPORT_NAMES[name]
            value = record.get(name)
            std = record.get(f"{name}_std") if f"{name}_std" in table.columns else None
            if paper_style:
                if _rounded(value) == MISSING:
                    row[column] = MISSING
                elif std is None or _rounded(std) == MISSING:
                    row[column] = f"{value:.2f}"
                else:
                    row[column] = f"{value:.2f} ({std:.2f})"
            else:
                row[column] = _rounded(value)
                if f"{name}_std" in table.columns:
                    row[f"{column}_std"] = _rounded(std)
        rows.append(row)
    return pd.DataFrame(rows)


def metrics_table(reports: Sequence[Tuple[str, MetricsReport]], paper_style: bool = False) -> pd.DataFrame:
    """每个 (方法名, MetricsReport) 一行，八项指标按表格顺序排列"""
    rows: List[Dict[str, object]] = []
    for label, report in reports:
        row: Dict[str, object] = {'method': label}
        row.update(report.to_row(paper_style=paper_style))
        rows.append(row)
    return pd.DataFrame(rows)


def write_table(table: pd.DataFrame, path: str, json_mirror: bool = False) -> List[str]:
    """
    写出CSV（LF换行、UTF-8），json_mirror 时同名写出 .json

    Returns:
        List[str]: 写出的文件路径
    """
    table.to_csv(path, index=False, lineterminator='\n', encoding='utf-8')
    written = [path]
    if json_mirror:
        json_path = os.path.splitext(path)[0] + '.json'
        with open(json_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(table.to_json(orient='records', force_ascii=False, indent=2))
            f.write('\n')
        written.append(json_path)
    logger.info(f"已写出: {', '.join(written)}")
    return written


def write_excel_workbook(tables: Dict[str, pd.DataFrame], path: str) -> Optional[str]:
    """把所有结果表写进一个Excel工作簿，每张表一个工作表"""
    if not tables:
        logger.warning("没有可写入Excel的结果表")
        return None
    try:
        with pd.ExcelWriter(path, engine='openpyxl') as writer:  # type: ignore
            for sheet_name, table in tables.items():
                sheet = sheet_name[:31]
                table.to_excel(writer, sheet_name=sheet, index=False)  # type: ignore

                # 格式化工作表
                worksheet = writer.sheets[sheet]
                for column in worksheet.columns:
                    cells = [cell for cell in column]
                    max_length = max(len(str(cell.value)) for cell in cells if cell.value is not None)
                    adjusted_width = min(max_length + 2, 50)  # 最大宽度50
                    worksheet.column_dimensions[cells[0].column_letter].width = adjusted_width
    except (OSError, ValueError) as e:
        logger.error(f"生成Excel工作簿失败: {e}")
        return None
    logger.info(f"Excel工作簿已生成: {path}（{len(tables)} 个工作表）")
    return path
