#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
hqr-waci - 由点预测集合构造、校准并评估自适应预测区间
子命令:
  synth        两状态合成实验（三张结果表与逐步轨迹）
  epf          电价数据回测：QRA/HQR/HQR_W × none/ACI/WACI，逐小时校准
  sigma-sweep  WACI 高斯核宽度 σ 的扫描，附 ACI 参照行
  coef-trace   标准差特征系数在滚动窗口上的轨迹

退出码: 0 成功, 1 使用错误, 2 数据错误, 3 数值计算失败
"""

import sys
import os
import argparse
import traceback
import logging
import concurrent.futures
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

# 添加项目根目录到Python路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

# 导入项目模块
from config_loader import build_run_config, load_config
from conformal import ConformalMethod, ConformalParams, ConformalResult, WeightScheme, run_conformal_stream
from metrics import SYNTHETIC_METRICS, BootstrapConfig, MetricsReport, evaluate, replacement_from_base
from models import ForecastPanel, IntervalStream, RunConfig
from panel_io import ingest_panel
from pinball_qr import ModelKind, RollingConfig, coefficient_trace, first_predictable_index, rolling_intervals
from report_generator import format_table, metrics_table, write_excel_workbook, write_table
from synthgen import SyntheticConfig, generate_ensemble_panel, run_experiment
from utils import HqrWaciError, InsufficientDataError, UsageError, ensure_dir, get_error_explanation

# ==========================================================

class CustomLogger(logging.Logger):
    def success(self, msg: str, *args: Any, **kwargs: Any) -> None:
        self.info(f"[SUCCESS] {msg}", *args, **kwargs)

logging.setLoggerClass(CustomLogger)

# ==========================================================

DEFAULTS = RunConfig()
TOY_PANEL_DAYS = 90


def setup_logging(quiet: bool = False) -> CustomLogger:
    """
    初始化日志：控制台 + logs/ 下带时间戳的日志文件

    处理器挂在根记录器上，各模块的 logging.getLogger(__name__) 都会输出到这里。
    """
    logger: CustomLogger = logging.getLogger("hqr_waci")  # type: ignore
    root = logging.getLogger()
    root.setLevel(logging.INFO)

    # 如果之前安装过处理器，先清除
    for handler in list(root.handlers):
        if getattr(handler, '_hqr_waci', False):
            root.removeHandler(handler)
            handler.close()

    formatter = logging.Formatter('[%(asctime)s] [%(levelname)s] %(message)s', datefmt='%H:%M:%S')

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(logging.WARNING if quiet else logging.INFO)
    console_handler.setFormatter(formatter)
    console_handler._hqr_waci = True  # type: ignore[attr-defined]
    root.addHandler(console_handler)

    try:
        logs_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'logs')
        os.makedirs(logs_dir, exist_ok=True)
        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        log_file = os.path.join(logs_dir, f'hqr_waci_{timestamp}.log')

        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(formatter)
        file_handler._hqr_waci = True  # type: ignore[attr-defined]
        root.addHandler(file_handler)
        logger.info(f"日志文件已创建: {log_file}")
    except OSError as e:
        # 如果文件日志失败，只使用控制台日志
        logger.warning(f"无法创建文件日志，仅使用控制台日志: {e}")

    return logger


# --- 公共步骤 ---

def load_panel(cfg: RunConfig, days: int = TOY_PANEL_DAYS) -> ForecastPanel:
    """--synthetic 时生成合成面板，否则读取 --input 指定的CSV"""
    if cfg.synthetic:
        logging.getLogger("hqr_waci").info(f"使用合成预测面板: {days} 天, M=3, seed={cfg.seed}")
        return generate_ensemble_panel(days, n_forecasters=3, seed=cfg.seed)
    if not cfg.input_csv:
        raise UsageError("需要通过 --input（或 config.ini 的 [Paths] input_csv）指定数据文件，或使用 --synthetic")
    return ingest_panel(cfg.input_csv)


def rolling_config(cfg: RunConfig, alpha: float) -> RollingConfig:
    return RollingConfig(
        window_size=cfg.window_days * 24,
        alpha=alpha,
        refit_step=cfg.refit_step,
        max_workers=cfg.max_workers,
    )


def conformal_params(cfg: RunConfig, alpha: float, sigma: Optional[float] = None) -> ConformalParams:
    return ConformalParams(
        alpha_star=alpha,
        gamma=cfg.gamma,
        sigma=cfg.sigma if sigma is None else sigma,
        weight_scheme=WeightScheme(cfg.weight_scheme),
        decay=cfg.decay,
        grid_step=cfg.grid_step,
        grid_min=cfg.grid_min,
        grid_max=cfg.grid_max,
        calibration_size=cfg.calibration_size,
    )


def check_history(panel: ForecastPanel, cfg: RunConfig) -> None:
    """可预测行需要覆盖每个分组的预热期并至少留出一条评估记录"""
    n_groups = 1 if panel.group_key is None else len(np.unique(panel.group_key))
    first = first_predictable_index(ModelKind.HQR_W, panel)
    required = first + n_groups * (cfg.calibration_warmup + 1)
    if len(panel) < required:
        raise InsufficientDataError(
            f"历史数据不足: 需要至少 {required} 行（首个可预测行 {first} + {n_groups} 个分组 × "
            f"{cfg.calibration_warmup + 1} 行），实际 {len(panel)} 行"
        )


def evaluate_result(
    result: ConformalResult,
    alpha: float,
    bootstrap: Optional[BootstrapConfig] = None,
) -> MetricsReport:
    """在非预热记录上评估；替代区间取基础模型在预热段上的界"""
    base = result.base
    replacement = replacement_from_base(base.lower[result.warmup], base.upper[result.warmup])
    return evaluate(result.evaluation_record(), alpha, replacement, bootstrap)


def method_label(kind: ModelKind, method: ConformalMethod) -> str:
    name = kind.value.replace('_', '-')
    return name if method is ConformalMethod.NONE else f"{name} ({method.value})"


# --- 子命令 ---

def cmd_synth(cfg: RunConfig, quiet: bool = False) -> Dict[str, pd.DataFrame]:
    """合成实验：写出 table1/2/3.csv 和前 trace_runs 次运行的逐步轨迹"""
    synth_cfg = SyntheticConfig(
        length=cfg.synth_length,
        alpha=cfg.alpha,
        n_runs=cfg.n_runs,
        seed=cfg.seed,
        warmup=cfg.synth_warmup,
        calibration_size=cfg.synth_calibration_size,
        grid_step=cfg.synth_grid_step,
        gamma=cfg.synth_gamma,
        sigma=cfg.synth_sigma,
        trace_runs=cfg.trace_runs,
        max_workers=cfg.max_workers,
    )
    result = run_experiment(synth_cfg, show_progress=not quiet)

    tables: Dict[str, pd.DataFrame] = {}
    for name, table in result.tables.items():
        formatted = format_table(table, SYNTHETIC_METRICS, paper_style=cfg.paper_style)
        write_table(formatted, os.path.join(cfg.output_dir, f"{name}.csv"), cfg.json_mirror)
        tables[name] = formatted
    for index, trace in result.traces.items():
        write_table(trace, os.path.join(cfg.output_dir, f"synth_trace_run{index}.csv"), cfg.json_mirror)
    return tables


def cmd_epf(cfg: RunConfig, panel: ForecastPanel, quiet: bool = False) -> Dict[str, pd.DataFrame]:
    """
    电价回测：每个 α 一张表，3 个分位数回归模型 × cfg.methods（默认 none, ACI, WACI，共 9 行）

    每个模型先滚动拟合得到未校准区间流，再按小时分组独立校准；指标附平稳自助法标准误。
    """
    logger = logging.getLogger("hqr_waci")
    check_history(panel, cfg)
    tables: Dict[str, pd.DataFrame] = {}
    methods = [ConformalMethod.parse(name) for name in cfg.methods]
    for alpha in cfg.alphas:
        bootstrap = BootstrapConfig(
            n_samples=cfg.bootstrap_samples,
            sample_size=cfg.bootstrap_size,
            mean_block_length=cfg.block_length,
            seed=cfg.seed,
            max_workers=cfg.max_workers,
        )
        reports: List[Tuple[str, MetricsReport]] = []
        for kind in ModelKind:
            stream = rolling_intervals(kind, panel, rolling_config(cfg, alpha))
            if stream.crossings:
                logger.warning(f"{kind.value} α={alpha}: {stream.crossings} 次分位数交叉")
            for method in methods:
                result = run_conformal_stream(stream, method, conformal_params(cfg, alpha),
                                              cfg.calibration_warmup, cfg.max_workers)
                reports.append((method_label(kind, method), evaluate_result(result, alpha, bootstrap)))
                if method is not ConformalMethod.NONE:
                    trace_name = f"trace_{kind.value}_{method.value}_alpha_{alpha:.2f}.csv"
                    write_table(result.trace, os.path.join(cfg.output_dir, trace_name), cfg.json_mirror)
        table = metrics_table(reports, paper_style=cfg.paper_style)
        name = f"epf_alpha_{alpha:.2f}"
        write_table(table, os.path.join(cfg.output_dir, f"{name}.csv"), cfg.json_mirror)
        tables[name] = table
    return tables


def sigma_grid(sigma_range: Sequence[float]) -> np.ndarray:
    start, stop, step = sigma_range
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(count), 10)


def sigma_sweep(stream: IntervalStream, cfg: RunConfig, sigmas: np.ndarray, quiet: bool = False) -> pd.DataFrame:
    """每个 σ 一行 WACI 结果，外加一行 ACI 参照（相当于 σ=∞）"""
    alpha = cfg.alpha
    columns = ['coverage', 'mean_length', 'ils', 'mcd', 'pearson']

    def run_one(sigma: Optional[float]) -> Dict[str, object]:
        method = ConformalMethod.ACI if sigma is None else ConformalMethod.WACI
        result = run_conformal_stream(stream, method, conformal_params(cfg, alpha, sigma), cfg.calibration_warmup)
        values = evaluate_result(result, alpha).values()
        row: Dict[str, object] = {'method': method.value, 'sigma': 'inf' if sigma is None else float(sigma)}
        row.update({name: values[name] for name in columns})
        return row

    candidates: List[Optional[float]] = [float(s) for s in sigmas] + [None]
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
        rows = list(tqdm(executor.map(run_one, candidates), total=len(candidates),
                         desc="σ 扫描", disable=quiet))
    table = pd.DataFrame(rows)
    formatted = format_table(table, columns)
    formatted.insert(1, 'sigma', table['sigma'])
    return formatted


def cmd_sigma_sweep(cfg: RunConfig, panel: ForecastPanel, quiet: bool = False) -> pd.DataFrame:
    check_history(panel, cfg)
    kind = ModelKind.parse(cfg.model_kind)
    stream = rolling_intervals(kind, panel, rolling_config(cfg, cfg.alpha))
    table = sigma_sweep(stream, cfg, sigma_grid(cfg.sigma_range), quiet)
    write_table(table, os.path.join(cfg.output_dir, "sigma_sweep.csv"), cfg.json_mirror)
    return table


def cmd_coef_trace(cfg: RunConfig, panel: ForecastPanel) -> pd.DataFrame:
    kind = ModelKind.parse(cfg.model_kind)
    table = coefficient_trace(kind, panel, rolling_config(cfg, cfg.alpha), cfg.levels)
    write_table(table, os.path.join(cfg.output_dir, "coef_trace.csv"), cfg.json_mirror)
    return table


def dispatch_command(args: argparse.Namespace, cfg: RunConfig) -> Dict[str, pd.DataFrame]:
    """命令分派器 - 根据子命令调用相应的处理函数，返回本次写出的结果表"""
    ensure_dir(cfg.output_dir)
    quiet = bool(args.quiet)
    if args.command == 'synth':
        return cmd_synth(cfg, quiet)
    panel = load_panel(cfg, args.days)
    if args.command == 'epf':
        return cmd_epf(cfg, panel, quiet)
    if args.command == 'sigma-sweep':
        return {'sigma_sweep': cmd_sigma_sweep(cfg, panel, quiet)}
    if args.command == 'coef-trace':
        return {'coef_trace': cmd_coef_trace(cfg, panel)}
    raise UsageError(f"未知子命令: {args.command}")


# --- 命令行 ---

class HqrWaciArgumentParser(argparse.ArgumentParser):
    """参数错误按使用错误处理，退出码为 1"""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = HqrWaciArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None,
                        help='配置文件路径（默认: 当前目录的 config.ini，不存在时使用内置默认值）')
    common.add_argument('--seed', type=int, default=None, help=f'主随机种子（默认: {DEFAULTS.seed}）')
    common.add_argument('--alpha', type=float, default=None, help=f'目标误覆盖率 α（默认: {DEFAULTS.alpha}）')
    common.add_argument('--gamma', type=float, default=None,
                        help=f'ACI/WACI 步长 γ（默认: 电价 {DEFAULTS.gamma}，合成实验 {DEFAULTS.synth_gamma}）')
    common.add_argument('--sigma', type=float, default=None,
                        help=f'WACI 高斯核宽度 σ（默认: 电价 {DEFAULTS.sigma}，合成实验 {DEFAULTS.synth_sigma}）')
    common.add_argument('--grid-step', type=float, default=None,
                        help=f'WACI 长度网格步长 δ（默认: 电价 {DEFAULTS.grid_step}，合成实验 {DEFAULTS.synth_grid_step}）')
    common.add_argument('--out', type=str, default=None, help=f'输出目录（默认: {DEFAULTS.output_dir}）')
    common.add_argument('--max-workers', type=int, default=None, help=f'并发线程数（默认: {DEFAULTS.max_workers}）')
    common.add_argument('--json', action='store_true', help='为每个CSV额外写出同名JSON镜像')
    common.add_argument('--paper-style', action='store_true', help='结果表写成 "值 (标准差)" 形式')
    common.add_argument('--excel', action='store_true', help='额外写出包含所有结果表的 results.xlsx')
    common.add_argument('--quiet', action='store_true', help='控制台只输出警告和错误，不显示进度条')

    data = HqrWaciArgumentParser(add_help=False)
    data.add_argument('--input', type=str, default=None, help='预测面板CSV（表头 timestamp,y,f1,...,fM）')
    data.add_argument('--synthetic', action='store_true', help='使用内置的合成预测面板代替 --input')
    data.add_argument('--days', type=int, default=TOY_PANEL_DAYS, help=f'合成面板的天数（默认: {TOY_PANEL_DAYS}）')
    data.add_argument('--window-days', type=int, default=None,
                      help=f'滚动训练窗口天数，每天 24 行（默认: {DEFAULTS.window_days}）')

    parser = HqrWaciArgumentParser(
        description="hqr-waci - 由点预测集合构造、校准并评估自适应预测区间",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest='command', metavar='<子命令>')
    subparsers.required = True

    synth = subparsers.add_parser('synth', parents=[common], help='两状态合成实验')
    synth.add_argument('--n-runs', type=int, default=None, help=f'蒙特卡洛运行次数（默认: {DEFAULTS.n_runs}）')
    synth.add_argument('--length', type=int, default=None, help=f'每次运行的序列长度（默认: {DEFAULTS.synth_length}）')

    epf = subparsers.add_parser('epf', parents=[common, data], help='分位数回归模型 × 校准方法的电价回测')
    epf.add_argument('--alphas', type=str, default=None,
                     help=f'逗号分隔的 α 列表（默认: {",".join(str(a) for a in DEFAULTS.alphas)}）')
    epf.add_argument('--methods', type=str, default=None,
                     help=f'逗号分隔的校准方法，可选 none/ACI/WACI/CQR（默认: {",".join(DEFAULTS.methods)}）')
    epf.add_argument('--weight-scheme', type=str, default=None, choices=['gaussian', 'geometric'],
                     help=f'WACI 权重（默认: {DEFAULTS.weight_scheme}）')

    sweep = subparsers.add_parser('sigma-sweep', parents=[common, data], help='WACI 的 σ 扫描')
    sweep.add_argument('--sigma-range', type=str, default=None,
                       help='start:stop:step（默认: {0}:{1}:{2}）'.format(*DEFAULTS.sigma_range))
    sweep.add_argument('--model', type=str, default=None, help=f'QRA / HQR / HQR_W（默认: {DEFAULTS.model_kind}）')

    trace = subparsers.add_parser('coef-trace', parents=[common, data], help='标准差系数轨迹')
    trace.add_argument('--levels', type=str, default=None,
                       help=f'逗号分隔的 α 列表（默认: {",".join(str(a) for a in DEFAULTS.levels)}）')
    trace.add_argument('--model', type=str, default=None, help=f'HQR / HQR_W（默认: {DEFAULTS.model_kind}）')

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，处理命令行参数并返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, 'days', None) is None:
        args.days = TOY_PANEL_DAYS
    logger = setup_logging(args.quiet)

    try:
        config = load_config(args.config)
        cfg = build_run_config(config, args)
        tables = dispatch_command(args, cfg)
        if cfg.excel and write_excel_workbook(tables, os.path.join(cfg.output_dir, 'results.xlsx')) is None:
            logger.warning("Excel工作簿未写出，CSV结果不受影响")
        logger.success(f"{args.command} 完成，结果已写入 {cfg.output_dir}")
        return 0
    except HqrWaciError as e:
        logger.error(f"{args.command} 失败: {e}")
        logger.error(get_error_explanation(e.keyword))
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("用户中断程序")
        return 1
    except Exception as e:
        logger.error(f"程序运行失败: {e}")
        logger.error("=" * 60)
        logger.error("详细错误信息:")
        logger.error(traceback.format_exc())
        logger.error("=" * 60)
        logger.error(get_error_explanation("unknown"))
        return 1


if __name__ == "__main__":
    sys.exit(main())
