# file: models.py

"""
核心数据模型定义文件
时间序列目标值、点预测集合与预测区间的共享数据模型，以及运行配置与导出记录的结构
这是整个项目的「单一事实来源 (Single Source of Truth)」
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, Optional, Tuple, TypedDict

import numpy as np
import pandas as pd
from typing_extensions import NotRequired

from utils import DataError


def _frozen_array(values: object, dtype: object = float) -> np.ndarray:
    """复制为只读 numpy 数组，保证构造后不可变"""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --- 预测区间 ---

class IntervalKind(str, Enum):
    FINITE = "finite"
    INFINITE = "infinite"
    EMPTY = "empty"


@dataclass(frozen=True)
class Interval:
    """
    扩展实数上的闭预测区间 [lower, upper]

    kind=empty 时区间为空集，lower/upper 都保存收缩前区间的中点，仅供 Winkler 罚项使用。
    """
    lower: float
    upper: float
    alpha_nominal: float
    kind: IntervalKind = IntervalKind.FINITE

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha_nominal < 1.0:
            raise DataError(f"名义误覆盖率必须在(0,1)内: {self.alpha_nominal}")
        if self.kind is IntervalKind.FINITE:
            if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
                raise DataError(f"有限区间的端点必须有限: [{self.lower}, {self.upper}]")
            if self.lower > self.upper:
                raise DataError(f"有限区间要求 lower <= upper: [{self.lower}, {self.upper}]")
        elif self.kind is IntervalKind.INFINITE:
            if not (self.lower == -math.inf or self.upper == math.inf):
                raise DataError(f"无限区间至少有一端为无穷: [{self.lower}, {self.upper}]")

    @classmethod
    def finite(cls, lower: float, upper: float, alpha_nominal: float) -> 'Interval':
        return cls(float(lower), float(upper), alpha_nominal, IntervalKind.FINITE)

    @classmethod
    def infinite(cls, alpha_nominal: float, lower: float = -math.inf, upper: float = math.inf) -> 'Interval':
        return cls(float(lower), float(upper), alpha_nominal, IntervalKind.INFINITE)

    @classmethod
    def empty(cls, midpoint: float, alpha_nominal: float) -> 'Interval':
        return cls(float(midpoint), float(midpoint), alpha_nominal, IntervalKind.EMPTY)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def length(self) -> float:
        if self.kind is IntervalKind.EMPTY:
            return 0.0
        if self.kind is IntervalKind.INFINITE:
            return math.inf
        return self.upper - self.lower

    def covers(self, y: float) -> bool:
        return covers(self, y)


def covers(interval: Interval, y: float) -> bool:
    """覆盖指示函数：lower <= y <= upper（扩展实数比较），空区间恒为 False"""
    if interval.kind is IntervalKind.EMPTY:
        return False
    return interval.lower <= y <= interval.upper


# --- 预测面板 ---

@dataclass(frozen=True, eq=False)
class ForecastPanel:
    """
    对齐的目标值与 M 个点预测

    Attributes:
        timestamps: 严格递增的时间点
        y: 实际值，长度 T
        forecasts: T×M 矩阵，(t, j) 为第 j 个预测器在 t 时刻的点预测
        group_key: 可选的分组键（例如小时 0-23），用于按组校准
    """
    timestamps: pd.DatetimeIndex
    y: np.ndarray
    forecasts: np.ndarray
    group_key: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        timestamps = pd.DatetimeIndex(self.timestamps)
        y = _frozen_array(self.y)
        forecasts = np.array(self.forecasts, dtype=float, copy=True)
        if forecasts.ndim == 1:
            forecasts = forecasts.reshape(-1, 1)
        forecasts.setflags(write=False)

        if forecasts.ndim != 2 or forecasts.shape[1] < 1:
            raise DataError("forecasts 至少需要 1 列")
        if len(timestamps) != len(y) or forecasts.shape[0] != len(y):
            raise DataError(
                f"长度不一致: timestamps={len(timestamps)}, y={len(y)}, forecasts={forecasts.shape[0]}"
            )
        if len(timestamps) > 1:
            steps = np.diff(timestamps.asi8)
            bad = np.flatnonzero(steps <= 0)
            if bad.size:
                raise DataError(f"时间戳必须严格递增，第 {int(bad[0]) + 1} 行违反（重复或逆序）: {timestamps[bad[0] + 1]}")
        if not np.all(np.isfinite(y)):
            raise DataError(f"y 含有非有限值，第 {int(np.flatnonzero(~np.isfinite(y))[0])} 行")
        if not np.all(np.isfinite(forecasts)):
            raise DataError("forecasts 含有非有限值")

        group_key = None
        if self.group_key is not None:
            group_key = _frozen_array(self.group_key, dtype=np.int64)
            if len(group_key) != len(y):
                raise DataError(f"group_key 长度({len(group_key)})与 y 长度({len(y)})不一致")

        object.__setattr__(self, 'timestamps', timestamps)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'forecasts', forecasts)
        object.__setattr__(self, 'group_key', group_key)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_forecasters(self) -> int:
        return int(self.forecasts.shape[1])

    def mean_forecasts(self) -> np.ndarray:
        return self.forecasts.mean(axis=1)

    def forecast_stds(self) -> np.ndarray:
        return self.forecasts.std(axis=1, ddof=0)

    def equals(self, other: 'ForecastPanel') -> bool:
        """逐元素比较两个面板（用于CSV往返校验）"""
        if not isinstance(other, ForecastPanel):
            return False
        if (self.group_key is None) != (other.group_key is None):
            return False
        if self.group_key is not None and not np.array_equal(self.group_key, other.group_key):  # type: ignore
            return False
        return (
            self.timestamps.equals(other.timestamps)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.forecasts, other.forecasts)
        )


def mean_forecast(panel: ForecastPanel, t: int) -> float:
    """第 t 行点预测的算术平均"""
    return float(np.mean(panel.forecasts[t]))


def forecast_std(panel: ForecastPanel, t: int) -> float:
    """第 t 行点预测的标准差（总体方差，除以 M）"""
    return float(np.std(panel.forecasts[t], ddof=0))


# --- 区间流 ---

@dataclass(frozen=True)
class IntervalRecord:
    t: int
    interval: Interval
    y: float
    group_key: int
    point: float


@dataclass(frozen=True, eq=False)
class IntervalStream:
    """
    未校准区间流：把分位数回归阶段与校准阶段解耦

    point 为集合预测均值，供 Spearman 指标使用；crossings 为分位数交叉（下界>上界）被交换的次数。
    """
    t_index: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    y: np.ndarray
    alpha: float
    group_key: Optional[np.ndarray] = None
    point: Optional[np.ndarray] = None
    timestamps: Optional[pd.DatetimeIndex] = None
    crossings: int = 0

    def __post_init__(self) -> None:
        n = len(self.t_index)
        t_index = _frozen_array(self.t_index, dtype=np.int64)
        lower = _frozen_array(self.lower)
        upper = _frozen_array(self.upper)
        y = _frozen_array(self.y)
        group_key = _frozen_array(np.zeros(n) if self.group_key is None else self.group_key, dtype=np.int64)
        point = _frozen_array(0.5 * (lower + upper) if self.point is None else self.point)
        for name, arr in (('lower', lower), ('upper', upper), ('y', y), ('group_key', group_key), ('point', point)):
            if len(arr) != n:
                raise DataError(f"区间流字段 {name} 长度({len(arr)})与 t_index 长度({n})不一致")
        if np.any(lower > upper):
            raise DataError("区间流中存在 lower > upper 的记录")
        for key in np.unique(group_key):
            if np.any(np.diff(t_index[group_key == key]) <= 0):
                raise DataError(f"分组 {int(key)} 内的时间索引必须严格递增")
        object.__setattr__(self, 't_index', t_index)
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'group_key', group_key)
        object.__setattr__(self, 'point', point)

    def __len__(self) -> int:
        return len(self.t_index)

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    def interval(self, i: int) -> Interval:
        return Interval.finite(self.lower[i], self.upper[i], self.alpha)

    def records(self) -> Iterator[IntervalRecord]:
        for i in range(len(self)):
            yield IntervalRecord(
                t=int(self.t_index[i]),
                interval=self.interval(i),
                y=float(self.y[i]),
                group_key=int(self.group_key[i]),  # type: ignore
                point=float(self.point[i]),  # type: ignore
            )

    def groups(self) -> Dict[int, np.ndarray]:
        """分组键 -> 该组记录在流中的位置（按键升序）"""
        keys = self.group_key  # type: ignore
        return {int(k): np.flatnonzero(keys == k) for k in np.unique(keys)}


# --- 运行配置 ---

@dataclass(frozen=True)
class RunConfig:
    """合并配置文件、环境变量与命令行参数后的最终运行配置"""
    input_csv: Optional[str] = None
    synthetic: bool = False
    model_kind: str = "HQR"
    window_days: int = 180
    refit_step: int = 24
    alpha: float = 0.2
    alphas: Tuple[float, ...] = (0.2, 0.1)
    methods: Tuple[str, ...] = ("none", "ACI", "WACI")
    gamma: float = 0.02
    sigma: float = 3.0
    weight_scheme: str = "gaussian"
    decay: float = 0.5
    grid_step: float = 0.1
    grid_min: Optional[float] = None
    grid_max: Optional[float] = None
    calibration_size: int = 200
    calibration_warmup: int = 30
    bootstrap_samples: int = 1000
    bootstrap_size: int = 1000
    block_length: float = 24.0
    synth_length: int = 10000
    n_runs: int = 100
    synth_warmup: int = 500
    synth_calibration_size: Optional[int] = None
    synth_grid_step: float = 0.25
    synth_gamma: float = 0.01
    synth_sigma: float = 1.0
    trace_runs: int = 1
    levels: Tuple[float, ...] = (0.05, 0.1, 0.2, 0.3, 0.4)
    sigma_range: Tuple[float, float, float] = (0.1, 200.0, 0.1)
    output_dir: str = "./output"
    seed: int = 12345
    max_workers: int = 4
    json_mirror: bool = False
    paper_style: bool = False
    excel: bool = False


# --- 导出记录结构 ---

class TraceRecord(TypedDict):
    """校准状态机每一步的导出记录"""
    t: int
    group: int
    base_length: float
    idx: int
    alpha_tilde: float
    quantile: float
    err: int
    lower: float
    upper: float
    kind: str
    timestamp: NotRequired[str]


class CoefficientTraceRow(TypedDict):
    """系数轨迹的一行：每个 (窗口, α) 一行"""
    window_end: int
    alpha: float
    lambda_lower: float
    lambda_upper: float
    degenerate: bool
    timestamp: NotRequired[str]


class SyntheticTraceRow(TypedDict):
    t: int
    delta: int
    y: float
    base_lower: float
    base_upper: float
    method: str
    lower: float
    upper: float
