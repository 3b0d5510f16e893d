#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
预测区间评估指标模块
覆盖率、平均长度、Winkler 分数、长度-覆盖 Pearson 相关、ILS λ 覆盖偏差、
误差-长度 Spearman 相关、长度标准差、MCD，以及平稳自助法标准误。
覆盖率一类的指标均以百分比表示。
"""

import logging
import concurrent.futures
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from models import Interval, IntervalKind, IntervalStream
from utils import DataError, derive_seeds

# 设置模块级logger
logger = logging.getLogger(__name__)

KIND_FINITE = 0
KIND_INFINITE = 1
KIND_EMPTY = 2

KIND_CODES = {
    IntervalKind.FINITE: KIND_FINITE,
    IntervalKind.INFINITE: KIND_INFINITE,
    IntervalKind.EMPTY: KIND_EMPTY,
}

# (字段名, 导出列名)，顺序与结果表一致
METRIC_COLUMNS: List[Tuple[str, str]] = [
    ('coverage', 'mean_empirical_coverage'),
    ('mean_length', 'average_length'),
    ('winkler', 'winkler_score'),
    ('pearson', 'pearson_correlation'),
    ('ils', 'ils_0.10'),
    ('spearman', 'spearman_correlation'),
    ('length_std', 'interval_length_std'),
    ('mcd', 'mcd_5'),
]

# 合成实验表格只展示其中六项
SYNTHETIC_METRICS = ['coverage', 'mean_length', 'winkler', 'pearson', 'ils', 'mcd']


class Correlation(NamedTuple):
    value: float
    degenerate: bool


@dataclass(frozen=True)
class ReplacementInterval:
    """计算长度时替代无限区间的固定区间（基础模型在训练段上的最小下界与最大上界）"""
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise DataError(f"替代区间的端点必须有限: [{self.lower}, {self.upper}]")
        if self.lower > self.upper:
            raise DataError(f"替代区间要求 lower <= upper: [{self.lower}, {self.upper}]")

    @property
    def length(self) -> float:
        return float(self.upper - self.lower)


def replacement_from_base(lower: Sequence[float], upper: Sequence[float]) -> ReplacementInterval:
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.size == 0:
        raise DataError("没有可用于构造替代区间的基础区间")
    return ReplacementInterval(float(np.min(lower)), float(np.max(upper)))


@dataclass(frozen=True, eq=False)
class EvaluationRecord:
    """
    按列存储的评估记录

    kind 为区间类型编码（0 有限 / 1 无限 / 2 空），空区间的 lower、upper 保存收缩前的中点。
    conformalized=False 表示没有做任何后处理，此时 ILS 指标无定义。
    """
    y: np.ndarray
    base_lower: np.ndarray
    base_upper: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    kind: np.ndarray
    point: np.ndarray
    label: Optional[np.ndarray] = None
    conformalized: bool = True

    def __post_init__(self) -> None:
        n = len(self.y)
        for name in ('base_lower', 'base_upper', 'lower', 'upper', 'kind', 'point'):
            if len(getattr(self, name)) != n:
                raise DataError(f"评估记录字段 {name} 的长度与 y 不一致")
        if self.label is not None and len(self.label) != n:
            raise DataError("评估记录的状态标签长度与 y 不一致")

    @classmethod
    def from_intervals(
        cls,
        y: Sequence[float],
        base: Sequence[Interval],
        intervals: Sequence[Interval],
        point: Sequence[float],
        label: Optional[Sequence[int]] = None,
        conformalized: bool = True,
    ) -> 'EvaluationRecord':
        return cls(
            y=np.asarray(y, dtype=float),
            base_lower=np.array([b.lower for b in base], dtype=float),
            base_upper=np.array([b.upper for b in base], dtype=float),
            lower=np.array([c.lower for c in intervals], dtype=float),
            upper=np.array([c.upper for c in intervals], dtype=float),
            kind=np.array([KIND_CODES[c.kind] for c in intervals], dtype=np.int8),
            point=np.asarray(point, dtype=float),
            label=None if label is None else np.asarray(label),
            conformalized=conformalized,
        )

    @classmethod
    def from_stream(cls, stream: IntervalStream, label: Optional[Sequence[int]] = None) -> 'EvaluationRecord':
        """未校准区间流直接作为评估对象（校准后区间等于基础区间）"""
        return cls(
            y=np.asarray(stream.y),
            base_lower=np.asarray(stream.lower),
            base_upper=np.asarray(stream.upper),
            lower=np.asarray(stream.lower),
            upper=np.asarray(stream.upper),
            kind=np.zeros(len(stream), dtype=np.int8),
            point=np.asarray(stream.point),
            label=None if label is None else np.asarray(label),
            conformalized=False,
        )

    def __len__(self) -> int:
        return len(self.y)

    def take(self, indices: np.ndarray) -> 'EvaluationRecord':
        indices = np.asarray(indices, dtype=np.int64)
        return EvaluationRecord(
            y=self.y[indices],
            base_lower=self.base_lower[indices],
            base_upper=self.base_upper[indices],
            lower=self.lower[indices],
            upper=self.upper[indices],
            kind=self.kind[indices],
            point=self.point[indices],
            label=None if self.label is None else self.label[indices],
            conformalized=self.conformalized,
        )

    def subset(self, mask: np.ndarray) -> 'EvaluationRecord':
        return self.take(np.flatnonzero(np.asarray(mask, dtype=bool)))

    @property
    def covered(self) -> np.ndarray:
        return (self.kind != KIND_EMPTY) & (self.lower <= self.y) & (self.y <= self.upper)

    @property
    def base_lengths(self) -> np.ndarray:
        return self.base_upper - self.base_lower

    def lengths(self, replacement: Optional[ReplacementInterval] = None) -> np.ndarray:
        """校准后区间长度：无限区间替换为替代区间长度，空区间为 0"""
        infinite = self.kind == KIND_INFINITE
        if np.any(infinite) and replacement is None:
            raise DataError(f"存在 {int(np.count_nonzero(infinite))} 个无限区间，计算长度需要提供替代区间")
        lengths = np.where(self.kind == KIND_FINITE, self.upper - self.lower, 0.0)
        if replacement is not None:
            lengths = np.where(infinite, replacement.length, lengths)
        return lengths


def _require_nonempty(records: EvaluationRecord) -> None:
    if len(records) == 0:
        raise DataError("评估记录为空，无法计算指标")


def empirical_coverage(records: EvaluationRecord) -> float:
    """校准后区间覆盖实际值的百分比"""
    _require_nonempty(records)
    return 100.0 * float(np.mean(records.covered))


def mean_interval_length(records: EvaluationRecord, replacement: Optional[ReplacementInterval] = None) -> float:
    _require_nonempty(records)
    return float(np.mean(records.lengths(replacement)))


def winkler_score(
    records: EvaluationRecord,
    alpha: float,
    replacement: Optional[ReplacementInterval] = None,
) -> float:
    """
    平均 Winkler 分数：长度加上 2/α 倍的越界距离

    空区间长度为 0，罚项以收缩前区间的中点为界双向计算；无限区间取替代长度且无罚项。
    """
    _require_nonempty(records)
    lengths = records.lengths(replacement)
    y = records.y
    scale = 2.0 / alpha
    finite = records.kind == KIND_FINITE
    below = np.where(finite & (y < records.lower), records.lower - y, 0.0)
    above = np.where(finite & (y > records.upper), y - records.upper, 0.0)
    empty_penalty = np.where(records.kind == KIND_EMPTY, np.abs(y - records.lower), 0.0)
    scores = lengths + scale * (below + above + empty_penalty)
    return float(np.mean(scores))


def _pearson(x: np.ndarray, y: np.ndarray) -> Correlation:
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return Correlation(0.0, True)
    value = float(np.corrcoef(x, y)[0, 1])
    if not np.isfinite(value):
        return Correlation(0.0, True)
    return Correlation(float(np.clip(value, -1.0, 1.0)), False)


def pearson_len_cov(records: EvaluationRecord, replacement: Optional[ReplacementInterval] = None) -> Correlation:
    """区间长度与覆盖指示函数之间的 Pearson 相关；任一序列方差为 0 时记为 0 并标记退化"""
    return _pearson(records.lengths(replacement), records.covered.astype(float))


def spearman_err_len(records: EvaluationRecord, replacement: Optional[ReplacementInterval] = None) -> Correlation:
    """集合均值绝对误差与区间长度之间的 Spearman 秩相关（并列取平均秩）"""
    errors = np.abs(records.y - records.point)
    lengths = records.lengths(replacement)
    if len(errors) < 2 or np.ptp(errors) == 0 or np.ptp(lengths) == 0:
        return Correlation(0.0, True)
    return _pearson(rankdata(errors, method='average'), rankdata(lengths, method='average'))


def ils_lambda_coverage(
    records: EvaluationRecord,
    alpha: float,
    lam: float = 0.10,
    replacement: Optional[ReplacementInterval] = None,
) -> Optional[float]:
    """
    被校准步骤改动最大的 λ 比例样本上的覆盖偏差（百分比）

    Δ_i = ||C^c_i| - |C_i||，选取 Δ_i >= q_{1-λ}(Δ) 的样本，返回 100·|该子集覆盖率 - (1-α)|。
    未做校准时返回 None（表格中显示为 "--"）。
    """
    if not records.conformalized:
        return None
    _require_nonempty(records)
    if not 0.0 < lam <= 1.0:
        raise DataError(f"ILS 的 λ 必须在 (0,1] 内: {lam}")
    delta = np.abs(records.lengths(replacement) - records.base_lengths)
    threshold = np.quantile(delta, 1.0 - lam)
    selected = delta >= threshold
    coverage = float(np.mean(records.covered[selected]))
    return 100.0 * abs(coverage - (1.0 - alpha))


def interval_length_std(records: EvaluationRecord, replacement: Optional[ReplacementInterval] = None) -> float:
    """区间长度的总体标准差"""
    if len(records) < 2:
        raise DataError("计算长度标准差至少需要 2 条记录")
    return float(np.std(records.lengths(replacement), ddof=0))


def mcd(
    records: EvaluationRecord,
    alpha: float,
    lam: float = 5.0,
    replacement: Optional[ReplacementInterval] = None,
) -> float:
    """
    平均覆盖偏差（百分比）

    按区间长度的经验分位数切成 K=100/λ 个等频箱，第 k 箱为 [q_{(k-1)/K}, q_{k/K})，最后一箱上端闭合；
    对非空的箱求 |箱内覆盖率 - (1-α)| 的平均。
    """
    n_bins = int(round(100.0 / lam))
    if n_bins < 1:
        raise DataError(f"MCD 的 λ 无效: {lam}")
    if len(records) < n_bins:
        raise DataError(f"MCD 需要至少 {n_bins} 条记录，当前仅 {len(records)} 条")
    lengths = records.lengths(replacement)
    edges = np.quantile(lengths, np.linspace(0.0, 1.0, n_bins + 1))
    bins = np.searchsorted(edges[1:-1], lengths, side='right')
    covered = records.covered.astype(float)
    counts = np.bincount(bins, minlength=n_bins)
    hits = np.bincount(bins, weights=covered, minlength=n_bins)
    nonempty = counts > 0
    deviations = np.abs(hits[nonempty] / counts[nonempty] - (1.0 - alpha))
    return 100.0 * float(np.mean(deviations))


# --- 平稳自助法 ---

def stationary_bootstrap_indices(
    n: int,
    sample_size: int,
    mean_block_length: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    平稳自助法的重抽样下标

    每个位置以 p=1/mean_block_length 的概率开启新块（随机起点），否则延续上一位置的下一个下标，
    越过末尾时回绕到开头。mean_block_length=1 时退化为独立同分布重抽样。
    """
    if n < 1:
        raise DataError("自助法需要非空的记录")
    if mean_block_length < 1.0:
        raise DataError(f"平均块长必须 >= 1: {mean_block_length}")
    restart = rng.random(sample_size) < 1.0 / mean_block_length
    restart[0] = True
    starts = rng.integers(0, n, size=sample_size)
    block_id = np.cumsum(restart) - 1
    block_pos = np.flatnonzero(restart)
    offset = np.arange(sample_size) - block_pos[block_id]
    return (starts[block_pos][block_id] + offset) % n


@dataclass(frozen=True)
class BootstrapConfig:
    """
    平稳自助法配置

    Attributes:
        n_samples: 自助样本个数
        sample_size: 每个自助样本的长度
        mean_block_length: 几何块长的均值
        seed: 主种子；第 i 个样本的种子只依赖 (seed, i)
        max_workers: 并发评估的线程数
    """
    n_samples: int = 1000
    sample_size: int = 1000
    mean_block_length: float = 24.0
    seed: int = 0
    max_workers: int = 1

    def __post_init__(self) -> None:
        if self.n_samples < 2 or self.sample_size < 1:
            raise DataError("自助样本个数至少为 2，样本长度至少为 1")
        if self.mean_block_length < 1.0:
            raise DataError(f"平均块长必须 >= 1: {self.mean_block_length}")


def _resample_all(records: EvaluationRecord, config: BootstrapConfig) -> List[np.ndarray]:
    seeds = derive_seeds(config.seed, config.n_samples)
    return [
        stationary_bootstrap_indices(len(records), config.sample_size, config.mean_block_length,
                                     np.random.default_rng(s))
        for s in seeds
    ]


def stationary_bootstrap_std(
    metric: Callable[[EvaluationRecord], Optional[float]],
    records: EvaluationRecord,
    n_samples: int = 1000,
    sample_size: int = 1000,
    mean_block_length: float = 24.0,
    seed: int = 0,
) -> float:
    """某个指标在平稳自助样本上的标准差"""
    _require_nonempty(records)
    config = BootstrapConfig(n_samples, sample_size, mean_block_length, seed)
    values = [metric(records.take(idx)) for idx in _resample_all(records, config)]
    finite = [float(v) for v in values if v is not None]
    if len(finite) < 2:
        return 0.0
    return float(np.std(finite, ddof=1))


# --- 汇总 ---

@dataclass(frozen=True)
class MetricsReport:
    """八项指标汇总；stds 为可选的自助法标准误，degenerate 列出退化的相关系数"""
    coverage: float
    mean_length: float
    winkler: float
    pearson: float
    ils: Optional[float]
    spearman: float
    length_std: float
    mcd: float
    n: int
    empty_count: int = 0
    infinite_count: int = 0
    degenerate: Tuple[str, ...] = ()
    stds: Dict[str, float] = field(default_factory=dict)

    def values(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name, _ in METRIC_COLUMNS}

    def to_row(self, metrics: Optional[Sequence[str]] = None, paper_style: bool = False) -> Dict[str, object]:
        """
        展开为一行扁平记录

        默认每个指标一列，有标准误时追加 `<列名>_std` 列；paper_style 时合并成 "值 (标准误)" 字符串。
        ILS 未定义时为 "--"。
        """
        wanted = metrics or [name for name, _ in METRIC_COLUMNS]
        columns = dict(METRIC_COLUMNS)
        row: Dict[str, object] = {}
        for name in wanted:
            column = columns[name]
            value = getattr(self, name)
            std = self.stds.get(name)
            if value is None:
                row[column] = "--"
                if std is not None and not paper_style:
                    row[f"{column}_std"] = "--"
                continue
            if paper_style:
                row[column] = f"{value:.2f}" if std is None else f"{value:.2f} ({std:.2f})"
            else:
                row[column] = round(float(value), 6)
                if std is not None:
                    row[f"{column}_std"] = round(float(std), 6)
        return row


def _compute(
    records: EvaluationRecord,
    alpha: float,
    replacement: Optional[ReplacementInterval],
    ils_lambda: float,
    mcd_lambda: float,
) -> Tuple[Dict[str, Optional[float]], Tuple[str, ...]]:
    pearson = pearson_len_cov(records, replacement)
    spearman = spearman_err_len(records, replacement)
    values: Dict[str, Optional[float]] = {
        'coverage': empirical_coverage(records),
        'mean_length': mean_interval_length(records, replacement),
        'winkler': winkler_score(records, alpha, replacement),
        'pearson': pearson.value,
        'ils': ils_lambda_coverage(records, alpha, ils_lambda, replacement),
        'spearman': spearman.value,
        'length_std': interval_length_std(records, replacement),
        'mcd': mcd(records, alpha, mcd_lambda, replacement),
    }
    degenerate = tuple(name for name, corr in (('pearson', pearson), ('spearman', spearman)) if corr.degenerate)
    return values, degenerate


def evaluate(
    records: EvaluationRecord,
    alpha: float,
    replacement: Optional[ReplacementInterval] = None,
    bootstrap: Optional[BootstrapConfig] = None,
    ils_lambda: float = 0.10,
    mcd_lambda: float = 5.0,
) -> MetricsReport:
    """
    一次计算全部指标

    提供 bootstrap 时，所有指标共用同一组重抽样下标计算标准误。
    """
    _require_nonempty(records)
    values, degenerate = _compute(records, alpha, replacement, ils_lambda, mcd_lambda)
    empty_count = int(np.count_nonzero(records.kind == KIND_EMPTY))
    infinite_count = int(np.count_nonzero(records.kind == KIND_INFINITE))
    if empty_count or infinite_count:
        logger.warning(f"评估记录中有 {empty_count} 个空区间、{infinite_count} 个无限区间")
    if degenerate:
        logger.warning(f"相关系数退化（方差为 0）: {', '.join(degenerate)}")

    stds: Dict[str, float] = {}
    if bootstrap is not None:
        def one_replicate(indices: np.ndarray) -> Dict[str, Optional[float]]:
            return _compute(records.take(indices), alpha, replacement, ils_lambda, mcd_lambda)[0]

        with concurrent.futures.ThreadPoolExecutor(max_workers=bootstrap.max_workers) as executor:
            replicates = list(executor.map(one_replicate, _resample_all(records, bootstrap)))
        for name, _ in METRIC_COLUMNS:
            samples = [r[name] for r in replicates if r[name] is not None]
            if len(samples) >= 2:
                stds[name] = float(np.std(samples, ddof=1))

    return MetricsReport(
        n=len(records),
        empty_count=empty_count,
        infinite_count=infinite_count,
        degenerate=degenerate,
        stds=stds,
        **values,  # type: ignore[arg-type]
    )
