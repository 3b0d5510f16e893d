#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
配置验证模块
统一处理所有配置相关的验证逻辑，遵循DRY原则
"""

import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from utils import UsageError


class ConfigValidationError(UsageError):
    """配置验证异常类"""
    pass


MODEL_KINDS = ('QRA', 'HQR', 'HQR_W')
METHODS = ('none', 'ACI', 'WACI', 'CQR')
WEIGHT_SCHEMES = ('gaussian', 'geometric')


def validate_file_path(path: str, allow_empty: bool = False) -> Tuple[bool, str]:
    """
    验证文件路径

    Args:
        path: 文件路径
        allow_empty: 是否允许空路径（使用默认值）

    Returns:
        Tuple[bool, str]: (是否有效, 错误信息)
    """
    if not path:
        if allow_empty:
            return True, ""
        return False, "文件路径不能为空"

    if not os.path.isfile(path):
        return False, f"文件不存在: {path}"

    return True, ""


def validate_output_path(path: str, allow_empty: bool = False) -> Tuple[bool, str]:
    """
    验证输出目录路径（可以尚不存在，但不能与已有文件重名）

    Args:
        path: 输出目录路径
        allow_empty: 是否允许空路径（使用默认值）

    Returns:
        Tuple[bool, str]: (是否有效, 错误信息)
    """
    if not path:
        if allow_empty:
            return True, ""
        return False, "输出路径不能为空"

    if os.path.exists(path) and not os.path.isdir(path):
        return False, f"输出路径已存在且不是目录: {path}"

    return True, ""


def validate_probability(value: str, allow_empty: bool = False) -> Tuple[bool, str]:
    """验证开区间 (0,1) 内的概率"""
    if not value:
        if allow_empty:
            return True, ""
        return False, "值不能为空"

    try:
        float_value = float(value)
    except ValueError:
        return False, "请输入一个有效的数字"
    if not 0.0 < float_value < 1.0:
        return False, "值应在(0,1)之间"
    return True, ""


def validate_positive_float(value: str, allow_empty: bool = False, minimum: float = 0.0) -> Tuple[bool, str]:
    """验证大于 minimum 的实数（minimum>0 时允许等于 minimum）"""
    if not value:
        if allow_empty:
            return True, ""
        return False, "值不能为空"

    try:
        float_value = float(value)
    except ValueError:
        return False, "请输入一个有效的数字"
    if minimum > 0:
        if float_value < minimum:
            return False, f"值应不小于{minimum}"
    elif not float_value > 0:
        return False, "值应大于0"
    return True, ""


def validate_positive_number(value: str, allow_empty: bool = False) -> Tuple[bool, str]:
    """
    验证正整数

    Args:
        value: 字符串形式的数值
        allow_empty: 是否允许空值（使用默认值）

    Returns:
        Tuple[bool, str]: (是否有效, 错误信息)
    """
    if not value:
        if allow_empty:
            return True, ""
        return False, "值不能为空"

    try:
        int_value = int(value)
        if int_value <= 0:
            return False, "值应大于0"
        return True, ""
    except ValueError:
        return False, "请输入一个有效的整数"


def validate_positive_number_or_zero(value: str, allow_empty: bool = False) -> Tuple[bool, str]:
    """验证非负整数（预热长度、种子）"""
    if not value:
        if allow_empty:
            return True, ""
        return False, "值不能为空"

    try:
        int_value = int(value)
        if int_value < 0:
            return False, "值应大于或等于0"
        return True, ""
    except ValueError:
        return False, "请输入一个有效的整数"


def validate_choice(value: str, choices: Sequence[str], allow_empty: bool = False) -> Tuple[bool, str]:
    """验证枚举取值（不区分大小写，'-' 与 '_' 等价）"""
    if not value:
        if allow_empty:
            return True, ""
        return False, "值不能为空"

    normalized = value.strip().lower().replace('-', '_')
    if normalized not in [c.lower() for c in choices]:
        return False, f"取值应为 {', '.join(choices)} 之一"
    return True, ""


def validate_choice_list(value: str, choices: Sequence[str], allow_empty: bool = False) -> Tuple[bool, str]:
    """验证逗号分隔的枚举列表，例如 'none,ACI,WACI'"""
    if not value:
        if allow_empty:
            return True, ""
        return False, "列表不能为空"

    items = [item.strip() for item in value.split(',') if item.strip()]
    if not items:
        return False, "列表不能为空"
    for item in items:
        valid, error = validate_choice(item, choices)
        if not valid:
            return False, f"'{item}' {error}"
    if len(set(i.lower() for i in items)) != len(items):
        return False, "列表中有重复项"
    return True, ""


def validate_probability_list(value: str, allow_empty: bool = False) -> Tuple[bool, str]:
    """验证逗号分隔的概率列表，例如 '0.2,0.1'"""
    if not value:
        if allow_empty:
            return True, ""
        return False, "列表不能为空"

    for item in value.split(','):
        valid, error = validate_probability(item.strip())
        if not valid:
            return False, f"'{item.strip()}' {error}"
    return True, ""


def validate_sigma_range(value: str, allow_empty: bool = False) -> Tuple[bool, str]:
    """验证 start:stop:step 形式的 σ 扫描范围"""
    if not value:
        if allow_empty:
            return True, ""
        return False, "范围不能为空"

    parts = value.split(':')
    if len(parts) != 3:
        return False, "格式应为 start:stop:step"
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        return False, "start、stop、step 必须是数字"
    if not (start > 0 and step > 0 and stop >= start):
        return False, "要求 start>0、step>0 且 stop>=start"
    return True, ""


def _get(config_dict: Dict[str, Any], section: str, key: str) -> str:
    return str(config_dict.get(section, {}).get(key, '') or '').strip()


def _float_or_none(value: str) -> Optional[float]:
    try:
        return float(value) if value else None
    except ValueError:
        return None


# (段, 键, 校验函数)；所有项都允许为空，为空时使用内置默认值
_FIELD_RULES = [
    ('Paths', 'input_csv', validate_file_path),
    ('Paths', 'output_path', validate_output_path),
    ('Model', 'model_kind', lambda v, allow_empty: validate_choice(v, MODEL_KINDS, allow_empty)),
    ('Model', 'window_days', validate_positive_number),
    ('Model', 'refit_step', validate_positive_number),
    ('Model', 'alpha', validate_probability),
    ('Model', 'alphas', validate_probability_list),
    ('Conformal', 'methods', lambda v, allow_empty: validate_choice_list(v, METHODS, allow_empty)),
    ('Conformal', 'gamma', validate_positive_float),
    ('Conformal', 'sigma', validate_positive_float),
    ('Conformal', 'weight_scheme', lambda v, allow_empty: validate_choice(v, WEIGHT_SCHEMES, allow_empty)),
    ('Conformal', 'decay', validate_probability),
    ('Conformal', 'grid_step', validate_positive_float),
    ('Conformal', 'grid_min', lambda v, allow_empty: (True, "") if v == "" or _float_or_none(v) is not None
        else (False, "请输入一个有效的数字")),
    ('Conformal', 'grid_max', lambda v, allow_empty: (True, "") if v == "" or _float_or_none(v) is not None
        else (False, "请输入一个有效的数字")),
    ('Conformal', 'calibration_size', validate_positive_number),
    ('Conformal', 'calibration_warmup', validate_positive_number_or_zero),
    ('Bootstrap', 'n_samples', validate_positive_number),
    ('Bootstrap', 'sample_size', validate_positive_number),
    ('Bootstrap', 'mean_block_length', lambda v, allow_empty: validate_positive_float(v, allow_empty, minimum=1.0)),
    ('Synthetic', 'length', validate_positive_number),
    ('Synthetic', 'n_runs', validate_positive_number),
    ('Synthetic', 'warmup', validate_positive_number_or_zero),
    ('Synthetic', 'calibration_size', validate_positive_number),
    ('Synthetic', 'grid_step', validate_positive_float),
    ('Synthetic', 'gamma', validate_positive_float),
    ('Synthetic', 'sigma', validate_positive_float),
    ('Synthetic', 'trace_runs', validate_positive_number_or_zero),
    ('Sweep', 'levels', validate_probability_list),
    ('Sweep', 'sigma_range', validate_sigma_range),
    ('Performance', 'max_workers', validate_positive_number),
    ('Run', 'seed', validate_positive_number_or_zero),
]


def validate_all_config(config_dict: Dict[str, Any]) -> Tuple[List[str], List[str]]:
    """
    验证所有配置

    Args:
        config_dict: 配置字典（段 -> 键 -> 字符串值）

    Returns:
        Tuple[List[str], List[str]]: (错误信息列表, 警告信息列表)
    """
    errors: List[str] = []
    warnings: List[str] = []

    for section, key, rule in _FIELD_RULES:
        value = _get(config_dict, section, key)
        valid, error = rule(value, True)
        if not valid:
            errors.append(f"[{section}] {key}: {error}")

    grid_min = _float_or_none(_get(config_dict, 'Conformal', 'grid_min'))
    grid_max = _float_or_none(_get(config_dict, 'Conformal', 'grid_max'))
    if (grid_min is None) != (grid_max is None):
        warnings.append("[Conformal] grid_min 与 grid_max 需同时给出，否则按预热期长度自动建网格")
    elif grid_min is not None and grid_max is not None and grid_min >= grid_max:
        errors.append("[Conformal] grid_min 必须小于 grid_max")

    gamma = _float_or_none(_get(config_dict, 'Conformal', 'gamma'))
    if gamma is not None and gamma > 0.1:
        warnings.append(f"[Conformal] gamma={gamma} 较大，有效误覆盖率会剧烈震荡")

    warmup = _get(config_dict, 'Conformal', 'calibration_warmup')
    size = _get(config_dict, 'Conformal', 'calibration_size')
    if warmup.isdigit() and size.isdigit() and int(warmup) > int(size):
        warnings.append("[Conformal] calibration_warmup 大于 calibration_size，超出部分的预热分数会被立即淘汰")

    workers = _get(config_dict, 'Performance', 'max_workers')
    if workers.isdigit() and int(workers) > 32:
        warnings.append(f"[Performance] max_workers={workers} 过大，可能无法带来加速")

    return errors, warnings
