#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
一致性校准模块
一致性分数、带 +∞ 的增广分位数，以及 SCP / CQR / ACI / WACI 四种校准过程。
ACI 与 WACI 是逐步推进的状态机，每个分组（例如每个小时）各自维护一份独立状态。
"""

import bisect
import logging
import math
import concurrent.futures
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from metrics import EvaluationRecord
from models import Interval, IntervalKind, IntervalStream, TraceRecord, covers
from utils import DataError, InsufficientDataError, InvalidLevelError, ScoreUndefinedError

# 设置模块级logger
logger = logging.getLogger(__name__)

# ceil 之前扣除的浮点容差，避免 0.8*5=4.000000000000001 这类误差把 k 推高一位
_CEIL_TOL = 1e-9

TRACE_COLUMNS = ['t', 'group', 'base_length', 'idx', 'alpha_tilde', 'quantile', 'err', 'lower', 'upper', 'kind']


class ScoreSet:
    """
    滑动校准窗口中的有限一致性分数，查询时隐含追加一个 +∞ 元素

    容量 capacity 为 None 时不淘汰；超出容量时按先进先出淘汰最旧的分数。
    """

    def __init__(self, capacity: Optional[int] = None, scores: Iterable[float] = ()):
        if capacity is not None and capacity < 1:
            raise DataError(f"校准窗口容量必须为正整数: {capacity}")
        self.capacity = capacity
        self._fifo: Deque[float] = deque()
        self._sorted: List[float] = []
        for score in scores:
            self.add(score)

    def add(self, score: float) -> None:
        score = float(score)
        if not math.isfinite(score):
            raise ScoreUndefinedError(f"一致性分数必须有限: {score}")
        self._fifo.append(score)
        bisect.insort(self._sorted, score)
        if self.capacity is not None and len(self._fifo) > self.capacity:
            oldest = self._fifo.popleft()
            del self._sorted[bisect.bisect_left(self._sorted, oldest)]

    def __len__(self) -> int:
        return len(self._fifo)

    def values(self) -> List[float]:
        """按插入顺序返回"""
        return list(self._fifo)

    def sorted_values(self) -> List[float]:
        return list(self._sorted)

    def copy(self) -> 'ScoreSet':
        return ScoreSet(self.capacity, self._fifo)


def augmented_quantile(scores: Union[ScoreSet, Sequence[float]], p: float) -> float:
    """
    分数集合 ∪ {+∞} 的 p 分位数

    k = ceil(p·(n+1))：1<=k<=n 时返回第 k 小的分数，k>n 时返回 +∞，k<=0 时返回 -∞
    （ACI/WACI 的有效水平超出 [0,1] 时会出现后两种情况）。
    """
    ordered = scores.sorted_values() if isinstance(scores, ScoreSet) else sorted(float(s) for s in scores)
    n = len(ordered)
    k = math.ceil(p * (n + 1) - _CEIL_TOL)
    if k > n:
        return math.inf
    if k <= 0:
        return -math.inf
    return ordered[k - 1]


def calibration_quantile(scores: Union[ScoreSet, Sequence[float]], alpha: float) -> float:
    """静态划分校准所用的 Q_{1-α}"""
    return augmented_quantile(scores, 1.0 - alpha)


def cqr_score(y: float, interval: Interval) -> float:
    """CQR 一致性分数 max(y-u, l-y)，严格落在区间内部时为负"""
    if interval.kind is not IntervalKind.FINITE:
        raise ScoreUndefinedError(f"一致性分数只对有限区间有定义，收到 {interval.kind.value} 区间")
    return max(y - interval.upper, interval.lower - y)


def cqr_conformalize(interval: Interval, quantile: float) -> Interval:
    """
    上下界各向外平移 Q（Q<0 时向内收缩）

    收缩后下界超过上界时得到空区间；Q=+∞ 得到无限区间，Q=-∞ 得到空区间。
    空区间保存原区间的中点。
    """
    if interval.kind is not IntervalKind.FINITE:
        raise DataError(f"只能校准有限区间，收到 {interval.kind.value} 区间")
    alpha = interval.alpha_nominal
    if quantile == math.inf:
        return Interval.infinite(alpha)
    if quantile == -math.inf:
        return Interval.empty(interval.midpoint, alpha)
    lower = interval.lower - quantile
    upper = interval.upper + quantile
    if lower > upper:
        return Interval.empty(interval.midpoint, alpha)
    return Interval.finite(lower, upper, alpha)


def miscoverage(interval: Interval, y: float) -> int:
    """err_t：未覆盖为 1；空区间恒为 1，无限区间恒为 0"""
    return 0 if covers(interval, y) else 1


def scp_step(mu_hat: float, y: Optional[float], store: ScoreSet, alpha: float) -> Interval:
    """
    以点预测为中心的对称区间 [μ̂-Q, μ̂+Q]，Q 为绝对残差的 Q_{1-α}

    给出 y 时，把实际的 |y-μ̂| 追加到分数集合（滑动校准）。
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidLevelError(f"alpha 必须在(0,1)内: {alpha}")
    quantile = calibration_quantile(store, alpha)
    if quantile == math.inf:
        interval = Interval.infinite(alpha)
    else:
        interval = Interval.finite(mu_hat - quantile, mu_hat + quantile, alpha)
    if y is not None:
        store.add(abs(y - mu_hat))
    return interval


# --- 长度网格 ---

class WeightScheme(str, Enum):
    GAUSSIAN = "gaussian"
    GEOMETRIC = "geometric"


@dataclass(frozen=True)
class LengthGrid:
    """
    未校准区间长度的一维网格 (l_min, l_min+δ, ..., l_max)

    网格至少两个点；唯一的例外是 single() 构造的单点网格，此时 WACI 退化为 ACI。
    l_max 不落在步长整数倍上时，最后一个点截到 l_max。
    """
    l_min: float
    step: float
    l_max: float
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise DataError(f"网格步长必须为正: {self.step}")
        if not (math.isfinite(self.l_min) and math.isfinite(self.l_max)):
            raise DataError(f"网格端点必须有限: [{self.l_min}, {self.l_max}]")
        if self.l_min > self.l_max:
            raise DataError(f"网格要求 l_min < l_max: [{self.l_min}, {self.l_max}]")
        count = math.ceil((self.l_max - self.l_min) / self.step - _CEIL_TOL) + 1
        points = np.minimum(self.l_min + self.step * np.arange(count), self.l_max)
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)

    @classmethod
    def from_lengths(cls, lengths: Sequence[float], step: float, widen: float = 0.1) -> 'LengthGrid':
        """预热期长度的最小/最大值各向外放宽 widen 倍的极差；极差为 0 时各放宽一个步长"""
        lengths = np.asarray(lengths, dtype=float)
        if lengths.size == 0:
            raise InsufficientDataError("构造长度网格需要至少一个预热区间")
        low, high = float(np.min(lengths)), float(np.max(lengths))
        spread = high - low
        margin = widen * spread if spread > 0 else step
        return cls(low - margin, step, high + margin)

    @classmethod
    def single(cls, point: float) -> 'LengthGrid':
        return cls(float(point), 1.0, float(point))

    def __len__(self) -> int:
        return len(self.points)

    def nearest_index(self, length: float) -> int:
        """按绝对距离取最近的网格点，距离相等时取较小下标；越界长度自然落到端点"""
        return int(np.argmin(np.abs(self.points - length)))

    def contains(self, length: float) -> bool:
        return self.l_min <= length <= self.l_max


# --- 状态机 ---

@dataclass
class ConformalStep:
    """最近一步的诊断信息，供状态轨迹导出"""
    idx: int
    alpha_tilde: float
    quantile: float
    err: int


@dataclass
class AciState:
    """
    ACI 状态：标量 α_t，按 α_{t+1} = α_t + γ(α* - err_t) 更新，不截断到 [0,1]

    adaptive=False 时 α_t 保持 α* 不变，即滑动窗口 CQR。
    """
    alpha_star: float
    gamma: float
    scores: ScoreSet
    alpha_t: float = float('nan')
    adaptive: bool = True
    err_history: List[int] = field(default_factory=list)
    last_step: Optional[ConformalStep] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha_star < 1.0:
            raise InvalidLevelError(f"alpha_star 必须在(0,1)内: {self.alpha_star}")
        if not self.gamma > 0:
            raise DataError(f"gamma 必须为正: {self.gamma}")
        if math.isnan(self.alpha_t):
            self.alpha_t = self.alpha_star

    @classmethod
    def create(cls, alpha_star: float, gamma: float, capacity: Optional[int] = None,
               adaptive: bool = True) -> 'AciState':
        return cls(alpha_star=alpha_star, gamma=gamma, scores=ScoreSet(capacity), adaptive=adaptive)


@dataclass
class WaciState:
    """
    WACI 状态：网格上每个点一个有效误覆盖率，初始全部为 α*

    每一步按入射长度最近的网格点取 α̃，再用距离衰减的权重更新整条向量。
    高斯权重按最大值归一化，最近点权重恰为 1；几何权重为 decay^|idx-j|。
    """
    grid: LengthGrid
    alpha_star: float
    gamma: float
    scores: ScoreSet
    weight_scheme: WeightScheme = WeightScheme.GAUSSIAN
    sigma: float = 1.0
    decay: float = 0.5
    alpha_vec: np.ndarray = field(default=None)  # type: ignore[assignment]
    err_history: List[int] = field(default_factory=list)
    last_step: Optional[ConformalStep] = None
    clamped: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha_star < 1.0:
            raise InvalidLevelError(f"alpha_star 必须在(0,1)内: {self.alpha_star}")
        if not self.gamma > 0:
            raise DataError(f"gamma 必须为正: {self.gamma}")
        self.weight_scheme = WeightScheme(self.weight_scheme)
        if self.weight_scheme is WeightScheme.GAUSSIAN and not self.sigma > 0:
            raise DataError(f"高斯核宽度 sigma 必须为正: {self.sigma}")
        if self.weight_scheme is WeightScheme.GEOMETRIC and not 0.0 < self.decay < 1.0:
            raise DataError(f"几何衰减系数必须在(0,1)内: {self.decay}")
        if self.alpha_vec is None:
            self.alpha_vec = np.full(len(self.grid), self.alpha_star, dtype=float)
        elif len(self.alpha_vec) != len(self.grid):
            raise DataError("alpha_vec 长度必须等于网格点数")

    @classmethod
    def create(
        cls,
        grid: LengthGrid,
        alpha_star: float,
        gamma: float,
        capacity: Optional[int] = None,
        weight_scheme: Union[str, WeightScheme] = WeightScheme.GAUSSIAN,
        sigma: float = 1.0,
        decay: float = 0.5,
    ) -> 'WaciState':
        return cls(grid=grid, alpha_star=alpha_star, gamma=gamma, scores=ScoreSet(capacity),
                   weight_scheme=WeightScheme(weight_scheme), sigma=sigma, decay=decay)

    def weights(self, idx: int, length: float) -> np.ndarray:
        points = self.grid.points
        if self.weight_scheme is WeightScheme.GEOMETRIC:
            return self.decay ** np.abs(np.arange(len(points)) - idx).astype(float)
        dist_sq = (points - length) ** 2
        # 在指数内减去最近点的距离，等价于除以最大权重且不会下溢
        return np.exp(-(dist_sq - dist_sq[idx]) / (2.0 * self.sigma ** 2))


def aci_step(state: AciState, interval: Interval, y: float) -> Tuple[Interval, AciState]:
    """用 Q_{1-α_t} 校准当前区间，计算 err_t，更新 α，并把实际分数追加到校准窗口"""
    alpha_tilde = state.alpha_t
    quantile = augmented_quantile(state.scores, 1.0 - alpha_tilde)
    conformalized = cqr_conformalize(interval, quantile)
    err = miscoverage(conformalized, y)
    if state.adaptive:
        state.alpha_t = alpha_tilde + state.gamma * (state.alpha_star - err)
    state.scores.add(cqr_score(y, interval))
    state.err_history.append(err)
    state.last_step = ConformalStep(idx=-1, alpha_tilde=alpha_tilde, quantile=quantile, err=err)
    return conformalized, state


def waci_step(state: WaciState, interval: Interval, y: float) -> Tuple[Interval, WaciState]:
    """
    WACI 单步

    1. 取与未校准长度最近的网格点 idx，α̃ = alpha_vec[idx]
    2. 用 Q_{1-α̃} 校准并计算 err
    3. alpha_vec += γ·(α* - err)·w
    4. 把实际分数追加到校准窗口
    """
    length = interval.length()
    idx = state.grid.nearest_index(length)
    if not state.grid.contains(length):
        state.clamped += 1
    alpha_tilde = float(state.alpha_vec[idx])
    quantile = augmented_quantile(state.scores, 1.0 - alpha_tilde)
    conformalized = cqr_conformalize(interval, quantile)
    err = miscoverage(conformalized, y)
    state.alpha_vec = state.alpha_vec + state.gamma * (state.alpha_star - err) * state.weights(idx, length)
    state.scores.add(cqr_score(y, interval))
    state.err_history.append(err)
    state.last_step = ConformalStep(idx=idx, alpha_tilde=alpha_tilde, quantile=quantile, err=err)
    return conformalized, state


# --- 区间流编排 ---

class ConformalMethod(str, Enum):
    NONE = "none"
    ACI = "ACI"
    WACI = "WACI"
    CQR = "CQR"

    @classmethod
    def parse(cls, name: Union[str, 'ConformalMethod']) -> 'ConformalMethod':
        if isinstance(name, ConformalMethod):
            return name
        for member in cls:
            if member.value.lower() == str(name).strip().lower():
                return member
        raise DataError(f"未知的校准方法: {name}（可选: none, ACI, WACI, CQR）")


@dataclass(frozen=True)
class ConformalParams:
    """
    校准参数

    grid 显式给出时直接使用；否则 grid_min/grid_max 都给出时按它们建网格；
    再否则每个分组用自己预热期的未校准长度按 grid_step 建网格。
    """
    alpha_star: float
    gamma: float = 0.01
    sigma: float = 1.0
    weight_scheme: WeightScheme = WeightScheme.GAUSSIAN
    decay: float = 0.5
    grid_step: float = 0.1
    grid_min: Optional[float] = None
    grid_max: Optional[float] = None
    calibration_size: Optional[int] = 500
    grid: Optional[LengthGrid] = None

    def grid_for(self, warmup_lengths: np.ndarray) -> LengthGrid:
        if self.grid is not None:
            return self.grid
        if self.grid_min is not None and self.grid_max is not None:
            return LengthGrid(self.grid_min, self.grid_step, self.grid_max)
        return LengthGrid.from_lengths(warmup_lengths, self.grid_step)

    def new_state(self, method: ConformalMethod, warmup_lengths: np.ndarray) -> Union[AciState, WaciState]:
        if method is ConformalMethod.WACI:
            return WaciState.create(self.grid_for(warmup_lengths), self.alpha_star, self.gamma,
                                    self.calibration_size, self.weight_scheme, self.sigma, self.decay)
        return AciState.create(self.alpha_star, self.gamma, self.calibration_size,
                               adaptive=method is ConformalMethod.ACI)


@dataclass(eq=False)
class ConformalResult:
    """
    校准结果：与输入区间流逐条对应

    预热记录（warmup=True）只用于填充分数集合，输出区间等于未校准区间，不参与评估。
    """
    base: IntervalStream
    method: ConformalMethod
    intervals: List[Interval]
    warmup: np.ndarray
    trace: pd.DataFrame
    states: Dict[int, Union[AciState, WaciState, None]]

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def lower(self) -> np.ndarray:
        return np.array([c.lower for c in self.intervals], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([c.upper for c in self.intervals], dtype=float)

    @property
    def kinds(self) -> List[IntervalKind]:
        return [c.kind for c in self.intervals]

    def covered(self) -> np.ndarray:
        return np.array([covers(c, y) for c, y in zip(self.intervals, self.base.y)], dtype=bool)

    def evaluation_record(self, label: Optional[Sequence[int]] = None) -> EvaluationRecord:
        """非预热部分的评估记录；label 与输入区间流等长"""
        keep = np.flatnonzero(~self.warmup)
        base = [self.base.interval(i) for i in keep]
        return EvaluationRecord.from_intervals(
            y=self.base.y[keep],
            base=base,
            intervals=[self.intervals[i] for i in keep],
            point=self.base.point[keep],  # type: ignore[index]
            label=None if label is None else np.asarray(label)[keep],
            conformalized=self.method is not ConformalMethod.NONE,
        )


def _run_group(
    stream: IntervalStream,
    positions: np.ndarray,
    key: int,
    method: ConformalMethod,
    params: ConformalParams,
    calibration_warmup: int,
) -> Tuple[Dict[int, Interval], List[TraceRecord], Union[AciState, WaciState, None]]:
    outputs: Dict[int, Interval] = {}
    trace: List[TraceRecord] = []
    if method is ConformalMethod.NONE:
        for pos in positions:
            outputs[int(pos)] = stream.interval(int(pos))
        return outputs, trace, None

    warm = positions[:calibration_warmup]
    if method is ConformalMethod.WACI and len(warm) == 0 and params.grid is None and (
            params.grid_min is None or params.grid_max is None):
        raise InsufficientDataError("WACI 在没有预热数据时需要显式给出长度网格")
    state = params.new_state(method, stream.lengths[warm])
    for pos in warm:
        pos = int(pos)
        base = stream.interval(pos)
        state.scores.add(cqr_score(float(stream.y[pos]), base))
        outputs[pos] = base

    step = waci_step if method is ConformalMethod.WACI else aci_step
    for pos in positions[calibration_warmup:]:
        pos = int(pos)
        base = stream.interval(pos)
        conformalized, state = step(state, base, float(stream.y[pos]))  # type: ignore[arg-type, operator]
        outputs[pos] = conformalized
        info = state.last_step
        record: TraceRecord = {
            't': int(stream.t_index[pos]),
            'group': key,
            'base_length': float(base.length()),
            'idx': info.idx,  # type: ignore[union-attr]
            'alpha_tilde': info.alpha_tilde,  # type: ignore[union-attr]
            'quantile': info.quantile,  # type: ignore[union-attr]
            'err': info.err,  # type: ignore[union-attr]
            'lower': conformalized.lower,
            'upper': conformalized.upper,
            'kind': conformalized.kind.value,
        }
        if stream.timestamps is not None:
            record['timestamp'] = stream.timestamps[pos].isoformat()
        trace.append(record)
    return outputs, trace, state


def run_conformal_stream(
    stream: IntervalStream,
    method: Union[str, ConformalMethod],
    params: ConformalParams,
    calibration_warmup: int,
    max_workers: int = 1,
) -> ConformalResult:
    """
    对区间流逐组在线校准

    每个 group_key 一个独立的状态机；每组前 calibration_warmup 条记录只用于填充分数集合。
    method=none 时输出等于输入。返回的 trace 为每个校准步骤一行（列见 TRACE_COLUMNS）。
    """
    method = ConformalMethod.parse(method)
    if calibration_warmup < 0:
        raise DataError(f"calibration_warmup 不能为负: {calibration_warmup}")
    groups = stream.groups()
    for key, positions in groups.items():
        if len(positions) <= calibration_warmup:
            raise InsufficientDataError(
                f"分组 {key} 只有 {len(positions)} 条记录，不足以覆盖 {calibration_warmup} 条预热"
            )

    def run_one(item: Tuple[int, np.ndarray]):
        key, positions = item
        return _run_group(stream, positions, key, method, params, calibration_warmup)

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(executor.map(run_one, groups.items()))

    intervals: List[Optional[Interval]] = [None] * len(stream)
    trace: List[TraceRecord] = []
    states: Dict[int, Union[AciState, WaciState, None]] = {}
    warmup = np.zeros(len(stream), dtype=bool)
    for (key, positions), (outputs, group_trace, state) in zip(groups.items(), results):
        for pos, interval in outputs.items():
            intervals[pos] = interval
        # method=none 也标记预热段，保证各方法在同一批记录上评估
        warmup[positions[:calibration_warmup]] = True
        trace.extend(group_trace)
        states[key] = state

    columns = TRACE_COLUMNS + (['timestamp'] if stream.timestamps is not None else [])
    trace_df = pd.DataFrame(trace, columns=columns)
    if not trace_df.empty:
        trace_df = trace_df.sort_values(['t', 'group'], kind='mergesort').reset_index(drop=True)

    kinds = [c.kind for c in intervals if c is not None]
    n_empty = sum(k is IntervalKind.EMPTY for k in kinds)
    n_infinite = sum(k is IntervalKind.INFINITE for k in kinds)
    if n_empty or n_infinite:
        logger.warning(f"[{method.value}] 校准后出现 {n_empty} 个空区间、{n_infinite} 个无限区间")
    clamped = sum(s.clamped for s in states.values() if isinstance(s, WaciState))
    if clamped:
        logger.warning(f"[{method.value}] 有 {clamped} 个未校准长度落在网格之外，已按端点处理")
    logger.info(f"[{method.value}] 校准完成: {len(groups)} 个分组, {len(stream)} 条记录")

    return ConformalResult(
        base=stream,
        method=method,
        intervals=intervals,  # type: ignore[arg-type]
        warmup=warmup,
        trace=trace_df,
        states=states,
    )
