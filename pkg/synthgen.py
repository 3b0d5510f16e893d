#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
合成数据模块
两状态（高/低不确定性）合成过程及其解析未校准区间、多次蒙特卡洛实验，
以及用于端到端测试的合成预测集合面板和两区制区间流。
"""

import logging
import math
import concurrent.futures
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import betainc, ndtri
from tqdm import tqdm

from conformal import ConformalMethod, ConformalParams, run_conformal_stream
from metrics import SYNTHETIC_METRICS, evaluate, replacement_from_base
from models import ForecastPanel, IntervalStream, SyntheticTraceRow
from utils import DataError, InvalidLevelError, derive_seeds

# 设置模块级logger
logger = logging.getLogger(__name__)

HIGH_STATE = 0
LOW_STATE = 1

# 表格名 -> 评估的状态子集（None 表示全部观测）
TABLE_SUBSETS: Dict[str, Optional[int]] = {
    'table1': HIGH_STATE,
    'table2': LOW_STATE,
    'table3': None,
}

METHOD_LABELS: List[Tuple[str, ConformalMethod]] = [
    ('Initial', ConformalMethod.NONE),
    ('ACI', ConformalMethod.ACI),
    ('WACI', ConformalMethod.WACI),
]


@dataclass(frozen=True)
class SyntheticConfig:
    """
    合成实验配置

    Attributes:
        mu: 已知均值
        sigma_high / sigma_low: 两个状态下的真实标准差
        transition_increment: 每步未切换时切换概率的增量
        length: 每次运行的序列长度
        alpha: 目标误覆盖率
        n_runs: 蒙特卡洛运行次数
        seed: 主种子，每次运行的种子由它派生
        warmup: 只用于填充校准分数、不参与评估的步数
        calibration_size: 校准分数集合容量，None 表示保留全部历史分数
        grid_step: WACI 长度网格步长
        gamma / sigma: ACI、WACI 的步长和高斯核宽度
        df / n_reference: 解析区间 μ ± t_{1-α/2, df}·σ̂·sqrt(1 + 1/n_reference)
        trace_runs: 导出逐步轨迹的运行数（从第 0 次开始）
        max_workers: 并发运行数
    """
    mu: float = 100.0
    sigma_high: float = 7.0
    sigma_low: float = 2.0
    transition_increment: float = 0.0001
    length: int = 10000
    alpha: float = 0.2
    n_runs: int = 100
    seed: int = 12345
    warmup: int = 500
    calibration_size: Optional[int] = None
    grid_step: float = 0.25
    gamma: float = 0.01
    sigma: float = 1.0
    df: int = 9
    n_reference: int = 10
    trace_runs: int = 1
    max_workers: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InvalidLevelError(f"alpha 必须在(0,1)内: {self.alpha}")
        for name in ('sigma_high', 'sigma_low', 'transition_increment', 'grid_step', 'gamma', 'sigma'):
            if not getattr(self, name) > 0:
                raise DataError(f"{name} 必须为正: {getattr(self, name)}")
        if self.length <= self.warmup or self.n_runs < 1:
            raise DataError(f"length({self.length}) 必须大于 warmup({self.warmup})，n_runs 至少为 1")
        if self.calibration_size is not None and self.calibration_size < 1:
            raise DataError(f"calibration_size 必须为正或留空: {self.calibration_size}")


@dataclass(frozen=True, eq=False)
class SyntheticRun:
    """一次合成运行：δ=0 为高不确定性状态"""
    y: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    sigma_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mu: float
    alpha: float
    seed: int

    def __len__(self) -> int:
        return len(self.y)


def t_critical(p: float, df: int) -> float:
    """
    Student t 分布的 p 分位数

    CDF 由正则化不完全 Beta 函数给出，用 brentq 求根，绝对容差 1e-9 以内。
    """
    if not 0.0 < p < 1.0:
        raise InvalidLevelError(f"概率必须在(0,1)内: {p}")
    if df < 1:
        raise DataError(f"自由度必须 >= 1: {df}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_critical(1.0 - p, df)

    def upper_tail_gap(t: float) -> float:
        cdf = 1.0 - 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
        return cdf - p

    high = 1.0
    while upper_tail_gap(high) < 0:
        high *= 2.0
    return float(brentq(upper_tail_gap, 0.0, high, xtol=1e-12, rtol=1e-14, maxiter=500))


def _regime_path(u: np.ndarray, increment: float) -> np.ndarray:
    """切换概率从 0 开始；本步先判定是否切换（切换后概率归零，否则加 increment），再记录状态"""
    delta = np.empty(len(u), dtype=np.int8)
    state = HIGH_STATE
    prob = 0.0
    for t, draw in enumerate(u):
        if draw < prob:
            state = 1 - state
            prob = 0.0
        else:
            prob += increment
        delta[t] = state
    return delta


def generate_run(cfg: SyntheticConfig, seed: int) -> SyntheticRun:
    """
    生成一次合成运行

    y_t ~ N(μ, σ_t)，用同一个种子化均匀流做逆 CDF 变换；
    σ̂_t 在高状态为 σ_high + 2sin(0.001t)，低状态为 σ_low + cos(0.005t)，t 为从 0 开始的全局步号。
    """
    rng = np.random.default_rng(seed)
    u_switch = rng.random(cfg.length)
    u_noise = rng.random(cfg.length)

    delta = _regime_path(u_switch, cfg.transition_increment)
    high = delta == HIGH_STATE
    sigma = np.where(high, cfg.sigma_high, cfg.sigma_low)
    tiny = np.finfo(float).tiny
    y = cfg.mu + sigma * ndtri(np.clip(u_noise, tiny, 1.0 - np.finfo(float).eps))

    t = np.arange(cfg.length, dtype=float)
    sigma_hat = np.where(high, cfg.sigma_high + 2.0 * np.sin(0.001 * t), cfg.sigma_low + np.cos(0.005 * t))
    half_width = t_critical(1.0 - cfg.alpha / 2.0, cfg.df) * sigma_hat * math.sqrt(1.0 + 1.0 / cfg.n_reference)

    return SyntheticRun(
        y=y,
        delta=delta,
        sigma=sigma,
        sigma_hat=sigma_hat,
        lower=cfg.mu - half_width,
        upper=cfg.mu + half_width,
        mu=cfg.mu,
        alpha=cfg.alpha,
        seed=seed,
    )


def run_to_stream(run: SyntheticRun) -> IntervalStream:
    """合成运行转为单分组的未校准区间流，点预测取已知均值"""
    n = len(run)
    return IntervalStream(
        t_index=np.arange(n),
        lower=run.lower,
        upper=run.upper,
        y=run.y,
        alpha=run.alpha,
        point=np.full(n, run.mu),
    )


def conformal_params(cfg: SyntheticConfig) -> ConformalParams:
    return ConformalParams(
        alpha_star=cfg.alpha,
        gamma=cfg.gamma,
        sigma=cfg.sigma,
        grid_step=cfg.grid_step,
        calibration_size=cfg.calibration_size,
    )


def _run_single(cfg: SyntheticConfig, run_index: int, seed: int) -> Tuple[List[Dict[str, object]], Optional[pd.DataFrame]]:
    run = generate_run(cfg, seed)
    stream = run_to_stream(run)
    params = conformal_params(cfg)
    replacement = replacement_from_base(run.lower[:cfg.warmup], run.upper[:cfg.warmup])

    rows: List[Dict[str, object]] = []
    trace_rows: List[SyntheticTraceRow] = []
    keep_trace = run_index < cfg.trace_runs
    for label, method in METHOD_LABELS:
        result = run_conformal_stream(stream, method, params, cfg.warmup)
        records = result.evaluation_record(label=run.delta)
        for table, state in TABLE_SUBSETS.items():
            subset = records if state is None else records.subset(records.label == state)
            report = evaluate(subset, cfg.alpha, replacement)
            row: Dict[str, object] = {'run': run_index, 'table': table, 'method': label}
            row.update({name: report.values()[name] for name in SYNTHETIC_METRICS})
            rows.append(row)
        if keep_trace:
            lower, upper = result.lower, result.upper
            for t in range(len(run)):
                trace_rows.append({
                    't': t,
                    'delta': int(run.delta[t]),
                    'y': float(run.y[t]),
                    'base_lower': float(run.lower[t]),
                    'base_upper': float(run.upper[t]),
                    'method': label,
                    'lower': float(lower[t]),
                    'upper': float(upper[t]),
                })

    trace = pd.DataFrame(trace_rows) if keep_trace else None
    return rows, trace


@dataclass
class SyntheticResult:
    """per_run 为每次运行每张表每个方法一行；tables 为跨运行的均值（及标准差）"""
    per_run: pd.DataFrame
    tables: Dict[str, pd.DataFrame]
    traces: Dict[int, pd.DataFrame] = field(default_factory=dict)


def aggregate_runs(per_run: pd.DataFrame, n_runs: int) -> Dict[str, pd.DataFrame]:
    """按 (表, 方法) 汇总均值；多于一次运行时追加 `<指标>_std` 列（样本标准差）"""
    method_order = [label for label, _ in METHOD_LABELS]
    tables: Dict[str, pd.DataFrame] = {}
    for table in TABLE_SUBSETS:
        part = per_run[per_run['table'] == table]
        grouped = part.groupby('method', sort=False)[SYNTHETIC_METRICS]
        means = grouped.mean()
        out = pd.DataFrame({'method': method_order})
        for name in SYNTHETIC_METRICS:
            out[name] = out['method'].map(means[name])
            if n_runs > 1:
                out[f"{name}_std"] = out['method'].map(grouped.std(ddof=1)[name])
        tables[table] = out
    return tables


def run_experiment(cfg: SyntheticConfig, show_progress: bool = True) -> SyntheticResult:
    """
    运行完整的合成实验

    每次运行：生成序列，预热分数集合，分别用 none/ACI/WACI 校准，
    在高状态子集、低状态子集和全部观测上评估。各次运行的种子只依赖 (主种子, 序号)，
    并发执行后按序号排序，结果与线程数无关。
    """
    seeds = derive_seeds(cfg.seed, cfg.n_runs)
    logger.info(f"开始合成实验: {cfg.n_runs} 次运行 × {cfg.length} 步, α={cfg.alpha}")

    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
        futures = {
            executor.submit(_run_single, cfg, index, seed): index
            for index, seed in enumerate(seeds)
        }
        outputs: Dict[int, Tuple[List[Dict[str, object]], Optional[pd.DataFrame]]] = {}
        for future in tqdm(concurrent.futures.as_completed(futures), total=len(futures),
                           desc="合成实验", disable=not show_progress):
            outputs[futures[future]] = future.result()

    rows: List[Dict[str, object]] = []
    traces: Dict[int, pd.DataFrame] = {}
    for index in sorted(outputs):
        run_rows, trace = outputs[index]
        rows.extend(run_rows)
        if trace is not None:
            traces[index] = trace

    per_run = pd.DataFrame(rows)
    # 未校准方法的 ILS 为 None，统一成 NaN 以便聚合
    per_run[SYNTHETIC_METRICS] = per_run[SYNTHETIC_METRICS].astype(float)
    logger.info("合成实验完成")
    return SyntheticResult(per_run=per_run, tables=aggregate_runs(per_run, cfg.n_runs), traces=traces)


# --- 合成预测面板与两区制区间流 ---

def generate_ensemble_panel(
    days: int,
    n_forecasters: int = 3,
    seed: int = 0,
    heteroscedastic: bool = True,
    noise_scale: float = 1.5,
    start: str = "2020-01-01",
) -> ForecastPanel:
    """
    逐小时的合成预测集合面板

    各预测器围绕真实信号按离散度 s_t 展开（每行随机打乱顺序，避免某一列固定偏高），
    实际值的噪声尺度与 s_t 成正比。heteroscedastic=False 时 s_t 为常数。
    """
    if days < 1 or n_forecasters < 1:
        raise DataError("days 与 n_forecasters 必须为正")
    rng = np.random.default_rng(seed)
    n_rows = days * 24
    t = np.arange(n_rows, dtype=float)
    hours = np.arange(n_rows) % 24

    level = np.empty(n_rows)
    level[0] = 0.0
    shocks = rng.normal(0.0, 0.5, n_rows)
    for i in range(1, n_rows):
        level[i] = 0.98 * level[i - 1] + shocks[i]
    signal = 50.0 + 15.0 * np.sin(2.0 * np.pi * hours / 24.0 - np.pi / 2.0) \
        + 5.0 * np.sin(2.0 * np.pi * t / (24.0 * 7.0)) + level

    if heteroscedastic:
        log_spread = np.empty(n_rows)
        log_spread[0] = 0.0
        spread_shocks = rng.normal(0.0, 0.25, n_rows)
        for i in range(1, n_rows):
            log_spread[i] = 0.97 * log_spread[i - 1] + spread_shocks[i]
        spread = np.clip(2.5 * np.exp(log_spread), 0.3, 15.0)
    else:
        spread = np.full(n_rows, 2.5)

    pattern = np.linspace(-1.0, 1.0, n_forecasters) if n_forecasters > 1 else np.zeros(1)
    offsets = rng.permuted(np.tile(pattern, (n_rows, 1)), axis=1)
    forecasts = signal[:, None] + spread[:, None] * offsets
    if heteroscedastic:
        forecasts = forecasts + rng.normal(0.0, 0.05, (n_rows, n_forecasters))
    y = signal + noise_scale * spread * rng.standard_normal(n_rows)

    return ForecastPanel(
        timestamps=pd.date_range(start, periods=n_rows, freq="h"),
        y=y,
        forecasts=forecasts,
        group_key=hours,
    )


def two_regime_stream(
    length: int,
    seed: int = 0,
    alpha: float = 0.2,
    switch_prob: float = 0.02,
) -> Tuple[IntervalStream, np.ndarray]:
    """
    两区制区间流

    区制 A：区间长度约 4，实际噪声 N(0,1)，系统性过覆盖；
    区制 B：区间长度约 10，实际噪声 N(0,6)，系统性欠覆盖。
    长度带 ±5% 的随机抖动，区制按 switch_prob 的马尔可夫链切换。返回区间流和区制标签（0=A，1=B）。
    """
    rng = np.random.default_rng(seed)
    regime = _regime_switches(rng.random(length), switch_prob)
    in_b = regime == 1
    jitter = 1.0 + rng.uniform(-0.05, 0.05, length)
    half_width = np.where(in_b, 5.0, 2.0) * jitter
    y = np.where(in_b, 6.0, 1.0) * rng.standard_normal(length)
    stream = IntervalStream(
        t_index=np.arange(length),
        lower=-half_width,
        upper=half_width,
        y=y,
        alpha=alpha,
        point=np.zeros(length),
    )
    return stream, regime


def _regime_switches(u: np.ndarray, switch_prob: float) -> np.ndarray:
    flips = (u < switch_prob).astype(np.int64)
    flips[0] = 0
    return (np.cumsum(flips) % 2).astype(np.int8)
