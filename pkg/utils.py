import os
import logging
from typing import List, Optional

import numpy as np

# 设置模块级logger
logger = logging.getLogger(__name__)


class HqrWaciError(Exception):
    """项目所有错误的基类，exit_code 对应命令行退出码"""
    exit_code: int = 1
    keyword: str = "unknown"


class UsageError(HqrWaciError):
    """参数或配置使用错误"""
    exit_code = 1
    keyword = "usage"


class DataError(HqrWaciError):
    """输入数据不满足数据模型的不变量"""
    exit_code = 2
    keyword = "data"


class InsufficientDataError(DataError):
    """数据长度不足以完成拟合或预热"""
    keyword = "insufficient"


class InvalidLevelError(DataError):
    """分位数水平不在 (0,1) 内"""
    keyword = "level"


class ScoreUndefinedError(DataError):
    """空区间或无限区间无法计算一致性分数"""
    keyword = "score"


class UnsupportedDiagnosticError(DataError):
    """诊断功能不支持当前模型类型"""
    keyword = "diagnostic"


class NumericalError(HqrWaciError):
    """数值计算失败"""
    exit_code = 3
    keyword = "numerical"


class SolverFailureError(NumericalError):
    """线性规划求解器未收敛，携带求解器诊断信息"""
    keyword = "solver"

    def __init__(self, message: str, status: Optional[int] = None, iterations: Optional[int] = None):
        super().__init__(message)
        self.status = status
        self.iterations = iterations


# 错误解释字典
ERROR_EXPLANATIONS = {
    "usage": {
        "explanation": "命令行参数或配置文件有误",
        "suggestion": "请运行 `python main.py <子命令> --help` 查看所有参数及其默认值，并检查config.ini中的取值范围。"
    },
    "data": {
        "explanation": "输入数据格式错误",
        "suggestion": "请检查CSV文件的表头是否为 timestamp,y,f1,...,fM，时间戳是否严格递增且没有缺失值。"
    },
    "insufficient": {
        "explanation": "历史数据不足",
        "suggestion": "请提供更长的时间序列，或减小滚动窗口(window_days)与预热长度(calibration_warmup)。"
    },
    "level": {
        "explanation": "分位数水平无效",
        "suggestion": "alpha 必须在 (0,1) 之间，分位数水平 β 同理。"
    },
    "score": {
        "explanation": "一致性分数无定义",
        "suggestion": "CQR分数只能在有限区间上计算，请检查未校准区间是否包含无穷端点。"
    },
    "diagnostic": {
        "explanation": "诊断功能不适用于该模型",
        "suggestion": "系数轨迹只对 HQR 和 HQR_W 模型有意义，请使用 --model HQR 或 --model HQR_W。"
    },
    "numerical": {
        "explanation": "数值计算失败",
        "suggestion": "请检查输入数据的量级是否合理，或尝试减小滚动窗口。"
    },
    "solver": {
        "explanation": "线性规划求解器未能收敛",
        "suggestion": "通常由设计矩阵病态引起。请检查预测列是否存在极端值或完全共线。"
    },
    # 通用错误
    "unknown": {
        "explanation": "未知错误",
        "suggestion": "程序遇到了一个未预期的错误，请查看logs目录下的日志文件。"
    }
}


def get_error_explanation(error_keyword: str) -> str:
    """
    根据错误关键字获取用户友好的错误解释与建议

    Args:
        error_keyword: 错误关键字（如'solver'或'insufficient'）

    Returns:
        str: 格式化的错误解释和建议
    """
    error_info = ERROR_EXPLANATIONS.get(error_keyword.lower(), ERROR_EXPLANATIONS["unknown"])

    explanation = error_info["explanation"]
    suggestion = error_info["suggestion"]

    return f"\n[错误解释] {explanation}\n[解决方案] {suggestion}\n"


def derive_seeds(master_seed: int, count: int) -> List[int]:
    """
    从主种子派生出 count 个互相独立的子种子

    子种子只依赖 (master_seed, 序号)，与执行顺序和并发方式无关。
    """
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def ensure_dir(path: str) -> Optional[str]:
    """
    确保一个目录存在，如果不存在则创建它

    Args:
        path: 目录路径

    Returns:
        Optional[str]: 成功时返回目录路径

    Raises:
        OSError: 当创建目录失败时（权限不足、路径无效等）
    """
    if not path:
        raise ValueError("目录路径不能为空")

    try:
        if not os.path.exists(path):
            os.makedirs(path, exist_ok=True)
        return path
    except OSError as e:
        raise OSError(f"创建目录 '{path}' 失败: {e}")
