#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
线性分位数回归模块
通过精确的线性规划最小化 pinball 损失，提供 QRA / HQR / HQR_W 三种特征构造，
以及滚动窗口回测驱动（输出未校准的区间流）与系数轨迹诊断。
"""

import logging
import concurrent.futures
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.optimize import linprog
from tqdm import tqdm

from models import ForecastPanel, IntervalStream, CoefficientTraceRow
from utils import (
    DataError, InsufficientDataError, InvalidLevelError,
    SolverFailureError, UnsupportedDiagnosticError,
)

# 设置模块级logger
logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    """分位数回归模型类型，决定特征映射"""
    QRA = "QRA"
    HQR = "HQR"
    HQR_W = "HQR_W"

    @classmethod
    def parse(cls, name: str) -> 'ModelKind':
        key = name.strip().upper().replace('-', '_')
        try:
            return cls(key)
        except ValueError:
            raise DataError(f"未知的模型类型: {name}（可选: QRA, HQR, HQR_W）")

    def feature_count(self, n_forecasters: int) -> int:
        if self is ModelKind.QRA:
            return n_forecasters
        if self is ModelKind.HQR:
            return 2
        return n_forecasters + 1


@dataclass(frozen=True)
class QuantileModel:
    """单个 β 水平的线性分位数回归系数 (λ0, λ1, ..., λm)，λ0 为截距"""
    beta: float
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        coefficients = np.array(self.coefficients, dtype=float, copy=True)
        if coefficients.ndim != 1 or coefficients.size < 1:
            raise DataError("系数向量至少包含截距")
        if not np.all(np.isfinite(coefficients)):
            raise DataError(f"β={self.beta} 的系数含有非有限值")
        coefficients.setflags(write=False)
        object.__setattr__(self, 'coefficients', coefficients)

    @property
    def n_features(self) -> int:
        return int(self.coefficients.size - 1)


@dataclass(frozen=True)
class RollingConfig:
    """
    滚动窗口配置

    Attributes:
        window_size: 每次拟合使用的训练行数 W
        alpha: 目标误覆盖率，下分位 α/2，上分位 1-α/2
        refit_step: 每隔多少行重新拟合一次（日前电价为 24）
        max_workers: 并发拟合窗口的线程数
    """
    window_size: int
    alpha: float
    refit_step: int = 1
    max_workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InvalidLevelError(f"alpha 必须在(0,1)内: {self.alpha}")
        if self.window_size < 1 or self.refit_step < 1 or self.max_workers < 1:
            raise DataError("window_size、refit_step、max_workers 必须为正整数")

    @property
    def lower_level(self) -> float:
        return self.alpha / 2.0

    @property
    def upper_level(self) -> float:
        return 1.0 - self.alpha / 2.0


@dataclass(frozen=True)
class WindowFit:
    """一个滚动窗口的拟合结果：在 [train_start, block_start) 上训练，预测 [block_start, block_end)"""
    block_start: int
    block_end: int
    train_start: int
    lower: QuantileModel
    upper: QuantileModel


def _check_level(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise InvalidLevelError(f"分位数水平必须在(0,1)内: {beta}")


def pinball_loss(beta: float, y: float, yhat: float) -> float:
    """pinball 损失：y>=ŷ 时为 β(y-ŷ)，否则为 (1-β)(ŷ-y)"""
    _check_level(beta)
    diff = y - yhat
    if diff >= 0:
        return beta * diff
    return (1.0 - beta) * (-diff)


def pinball_objective(beta: float, X: np.ndarray, y: np.ndarray, coefficients: np.ndarray) -> float:
    """训练集上的 pinball 损失总和"""
    _check_level(beta)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    coefficients = np.asarray(coefficients, dtype=float)
    residual = np.asarray(y, dtype=float) - (coefficients[0] + X @ coefficients[1:])
    return float(np.sum(np.where(residual >= 0, beta * residual, (beta - 1.0) * residual)))


def fit_quantile(beta: float, X: np.ndarray, y: np.ndarray) -> QuantileModel:
    """
    以线性规划精确求解线性分位数回归

    变量为 [λ (p+1个，自由), u (n个, >=0), v (n个, >=0)]，约束 Dλ + u - v = y，
    目标为 β·Σu + (1-β)·Σv。对偶单纯形返回一个最优顶点，秩亏时任一最优顶点都可接受。

    Args:
        beta: 分位数水平
        X: n×m 特征矩阵（不含截距列）
        y: 长度 n 的目标值

    Returns:
        QuantileModel: 含截距的系数

    Raises:
        InvalidLevelError: β 不在 (0,1)
        InsufficientDataError: 行数少于 m+2
        SolverFailureError: 求解器未收敛
    """
    _check_level(beta)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float)
    n_samples, n_features = X.shape
    if len(y) != n_samples:
        raise DataError(f"X 行数({n_samples})与 y 长度({len(y)})不一致")
    if n_samples < n_features + 2:
        raise InsufficientDataError(f"拟合至少需要 {n_features + 2} 行，当前仅 {n_samples} 行")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("特征矩阵或目标值含有非有限值")

    design = np.hstack([np.ones((n_samples, 1)), X])
    n_coef = n_features + 1

    c = np.concatenate([
        np.zeros(n_coef),
        np.full(n_samples, beta),
        np.full(n_samples, 1.0 - beta),
    ])
    identity = sparse.identity(n_samples, format='csr')
    A_eq = sparse.hstack([sparse.csr_matrix(design), identity, -identity], format='csr')
    bounds = [(None, None)] * n_coef + [(0, None)] * (2 * n_samples)

    res = linprog(c, A_eq=A_eq, b_eq=y, bounds=bounds, method='highs-ds')
    if not res.success:
        raise SolverFailureError(
            f"β={beta} 的分位数回归求解失败: {res.message} (status={res.status}, 迭代次数={res.nit})",
            status=int(res.status),
            iterations=int(res.nit),
        )
    return QuantileModel(beta=beta, coefficients=res.x[:n_coef])


def predict_quantile(model: QuantileModel, x: Sequence[float]) -> float:
    """截距加点积"""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.n_features:
        raise DataError(f"特征维度不匹配: 模型需要 {model.n_features} 维，输入为 {x.size} 维")
    return float(model.coefficients[0] + x @ model.coefficients[1:])


def build_features(kind: ModelKind, panel: ForecastPanel, t: int) -> np.ndarray:
    """单行特征：QRA 为 M 个预测；HQR 为 (均值, 标准差)；HQR_W 为 (M 个预测, 标准差)"""
    row = panel.forecasts[t]
    if kind is ModelKind.QRA:
        return np.array(row, dtype=float)
    std = float(np.std(row, ddof=0))
    if kind is ModelKind.HQR:
        return np.array([float(np.mean(row)), std])
    return np.append(np.array(row, dtype=float), std)


def build_feature_matrix(kind: ModelKind, panel: ForecastPanel) -> np.ndarray:
    """所有行的特征矩阵，与 build_features 逐行一致"""
    forecasts = np.asarray(panel.forecasts, dtype=float)
    if kind is ModelKind.QRA:
        return forecasts.copy()
    std = panel.forecast_stds().reshape(-1, 1)
    if kind is ModelKind.HQR:
        return np.hstack([panel.mean_forecasts().reshape(-1, 1), std])
    return np.hstack([forecasts, std])


def first_predictable_index(kind: ModelKind, panel: ForecastPanel) -> int:
    """第一个可预测行：之前至少要有 特征数+2 行训练数据"""
    return kind.feature_count(panel.n_forecasters) + 2


def fit_rolling_models(kind: ModelKind, panel: ForecastPanel, cfg: RollingConfig) -> List[WindowFit]:
    """
    对每个重拟合块在之前 W 行（序列开头不足 W 行时用全部已有数据）上拟合上下分位模型

    各窗口的拟合互相独立，可并发执行；返回结果按时间排序。
    """
    X = build_feature_matrix(kind, panel)
    n_features = X.shape[1]
    if cfg.window_size < n_features + 2:
        raise DataError(f"window_size({cfg.window_size}) 必须不小于特征数+2({n_features + 2})")

    n_rows = len(panel)
    first = first_predictable_index(kind, panel)
    if n_rows <= first:
        raise InsufficientDataError(
            f"数据不足: 第一个可预测的行索引为 {first}，但面板只有 {n_rows} 行"
        )

    y = panel.y
    block_starts = list(range(first, n_rows, cfg.refit_step))

    def fit_block(block_start: int) -> WindowFit:
        train_start = max(0, block_start - cfg.window_size)
        X_train = X[train_start:block_start]
        y_train = y[train_start:block_start]
        return WindowFit(
            block_start=block_start,
            block_end=min(block_start + cfg.refit_step, n_rows),
            train_start=train_start,
            lower=fit_quantile(cfg.lower_level, X_train, y_train),
            upper=fit_quantile(cfg.upper_level, X_train, y_train),
        )

    logger.info(f"[{kind.value}] 滚动拟合 {len(block_starts)} 个窗口 (W={cfg.window_size}, α={cfg.alpha})")
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
        fits = list(tqdm(
            executor.map(fit_block, block_starts),
            total=len(block_starts),
            desc=f"[{kind.value}] 滚动拟合",
            disable=len(block_starts) < 50,
        ))
    return fits


def rolling_intervals(kind: ModelKind, panel: ForecastPanel, cfg: RollingConfig) -> IntervalStream:
    """
    滚动窗口回测，输出未校准区间流

    t 时刻的区间只依赖 t 之前的行；预测下界大于上界时交换两者并计数。
    """
    fits = fit_rolling_models(kind, panel, cfg)
    X = build_feature_matrix(kind, panel)
    first = fits[0].block_start
    n_rows = len(panel)

    lower = np.empty(n_rows - first)
    upper = np.empty(n_rows - first)
    for fit in fits:
        rows = slice(fit.block_start, fit.block_end)
        out = slice(fit.block_start - first, fit.block_end - first)
        lower[out] = fit.lower.coefficients[0] + X[rows] @ fit.lower.coefficients[1:]
        upper[out] = fit.upper.coefficients[0] + X[rows] @ fit.upper.coefficients[1:]

    crossed = lower > upper
    crossings = int(np.count_nonzero(crossed))
    if crossings:
        logger.warning(f"[{kind.value}] 检测到 {crossings} 次分位数交叉，已交换上下界")
        lower, upper = np.minimum(lower, upper), np.maximum(lower, upper)

    return IntervalStream(
        t_index=np.arange(first, n_rows),
        lower=lower,
        upper=upper,
        y=panel.y[first:],
        alpha=cfg.alpha,
        group_key=None if panel.group_key is None else panel.group_key[first:],
        point=panel.mean_forecasts()[first:],
        timestamps=panel.timestamps[first:],
        crossings=crossings,
    )


def coefficient_trace(
    kind: ModelKind,
    panel: ForecastPanel,
    cfg: RollingConfig,
    levels: Sequence[float],
) -> pd.DataFrame:
    """
    标准差特征系数 λ2(α/2) 与 λ2(1-α/2) 在每个窗口、每个 α 上的取值

    HQR 的 λ2 即系数向量的最后一项；HQR_W 中对应 λ_{M+1}，同样是最后一项。
    训练窗口内标准差列为常数时，它与截距共线，该行标记为 degenerate。
    """
    if kind is ModelKind.QRA:
        raise UnsupportedDiagnosticError("QRA 模型没有标准差特征，无法输出系数轨迹")

    std = panel.forecast_stds()
    rows: List[CoefficientTraceRow] = []
    degenerate_count = 0
    for alpha in levels:
        fits = fit_rolling_models(kind, panel, replace(cfg, alpha=float(alpha)))
        for fit in fits:
            window_std = std[fit.train_start:fit.block_start]
            degenerate = bool(np.ptp(window_std) <= 1e-12)
            degenerate_count += int(degenerate)
            rows.append({
                'window_end': fit.block_start,
                'timestamp': panel.timestamps[fit.block_start].isoformat(),
                'alpha': float(alpha),
                'lambda_lower': float(fit.lower.coefficients[-1]),
                'lambda_upper': float(fit.upper.coefficients[-1]),
                'degenerate': degenerate,
            })
    if degenerate_count:
        logger.warning(f"有 {degenerate_count} 个窗口的标准差特征为常数，λ2 与截距共线")

    columns = ['window_end', 'timestamp', 'alpha', 'lambda_lower', 'lambda_upper', 'degenerate']
    return pd.DataFrame(rows, columns=columns)


def sign_fractions(model: QuantileModel, X: np.ndarray, y: np.ndarray, tol: float = 1e-7) -> Tuple[float, float]:
    """训练残差严格为负、严格为正的比例（分别应不超过 β 与 1-β）"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != len(y):
        X = X.reshape(len(y), -1)
    residual = np.asarray(y, dtype=float) - (model.coefficients[0] + X @ model.coefficients[1:])
    n = float(len(residual))
    return float(np.count_nonzero(residual < -tol)) / n, float(np.count_nonzero(residual > tol)) / n
