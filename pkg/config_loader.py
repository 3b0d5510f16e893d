import argparse
import configparser
import os
import logging
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv  # type: ignore

from config_validator import ConfigValidationError, validate_all_config
from models import RunConfig
from utils import UsageError

# 设置模块级logger
logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = 'config.ini'

# 环境变量 -> (段, 键)
ENV_OVERRIDES: Dict[str, Tuple[str, str]] = {
    'HQR_WACI_OUTPUT_PATH': ('Paths', 'output_path'),
    'HQR_WACI_SEED': ('Run', 'seed'),
    'HQR_WACI_MAX_WORKERS': ('Performance', 'max_workers'),
}


class ConfigDict(dict[str, Dict[str, str]]):
    """一个类似字典的配置对象，增加了对getint/getfloat/getstr方法的支持。空字符串视为未设置。"""
    def get_value(self, section: str, option: str) -> Optional[str]:
        value = self.get(section, {}).get(option)
        if value is None or str(value).strip() == '':
            return None
        return str(value).strip()

    def getint(self, section: str, option: str, fallback: int) -> int:
        value = self.get_value(section, option)
        return fallback if value is None else int(value)

    def getoptionalint(self, section: str, option: str, fallback: Optional[int]) -> Optional[int]:
        """留空表示不限（例如不设上限的校准集合）"""
        value = self.get_value(section, option)
        return fallback if value is None else int(value)

    def getfloat(self, section: str, option: str, fallback: Optional[float]) -> Optional[float]:
        value = self.get_value(section, option)
        return fallback if value is None else float(value)

    def getstr(self, section: str, option: str, fallback: Optional[str]) -> Optional[str]:
        value = self.get_value(section, option)
        return fallback if value is None else value

    def set_value(self, section: str, option: str, value: Any) -> None:
        self.setdefault(section, {})[option] = str(value)


def load_config(config_path: Optional[str] = None) -> 'ConfigDict':
    """
    读取配置文件并返回一个ConfigDict对象，再用环境变量(.env文件)覆盖输出目录、种子与线程数。

    未指定路径且默认的 config.ini 不存在时，使用内置默认值；
    显式指定的路径不存在时视为使用错误。

    Args:
        config_path: 配置文件路径，为 None 时尝试 'config.ini'

    Returns:
        ConfigDict: 包含所有配置项的类字典对象

    Raises:
        UsageError: 显式指定的配置文件不存在、过大或格式错误
        ConfigValidationError: 配置项取值不合法
    """
    explicit = config_path is not None
    config_path = os.path.normpath(config_path or DEFAULT_CONFIG_PATH)

    config_dict: Dict[str, Dict[str, str]] = {}
    if os.path.exists(config_path):
        # 检查文件大小，防止处理异常大的配置文件
        file_size: int = os.path.getsize(config_path)
        if file_size > 1024 * 1024:  # 1MB限制
            raise UsageError(f"配置文件过大({file_size}字节)，超过1MB限制")

        config: configparser.ConfigParser = configparser.ConfigParser()
        try:
            config.read(config_path, encoding='utf-8')
        except configparser.Error as e:
            raise UsageError(f"读取配置文件失败: {e}")
        except UnicodeDecodeError as e:
            raise UsageError(f"配置文件编码错误，请使用UTF-8编码: {e}")

        for section_name in config.sections():
            config_dict[section_name] = dict(config[section_name])
        logger.info(f"已加载配置文件: {config_path}")
    elif explicit:
        raise UsageError(f"配置文件 '{config_path}' 不存在")
    else:
        logger.info("未找到 config.ini，使用内置默认配置")

    # ===== 使用标准化的 python-dotenv 加载环境变量 =====
    load_dotenv()  # 自动加载 .env 文件

    for env_var, (section_name, option) in ENV_OVERRIDES.items():
        value: Optional[str] = os.getenv(env_var)
        if value:
            config_dict.setdefault(section_name, {})[option] = value
            logger.info(f"从环境变量 {env_var} 加载 [{section_name}] {option}")
    # ===================================================

    result = ConfigDict(config_dict)
    check_config(result)
    return result


def check_config(config: ConfigDict) -> None:
    """验证配置；有错误时抛出 ConfigValidationError，警告写入日志"""
    errors: List[str]
    warnings_list: List[str]
    errors, warnings_list = validate_all_config(config)
    for warning in warnings_list:
        logger.warning(warning)
    if errors:
        raise ConfigValidationError("配置验证失败:\n  " + "\n  ".join(errors))


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(item.strip()) for item in text.split(',') if item.strip())


def _parse_names(text: str) -> Tuple[str, ...]:
    return tuple(item.strip() for item in text.split(',') if item.strip())


# 命令行参数名 -> (段, 键)
_CLI_OVERRIDES: Dict[str, Tuple[str, str]] = {
    'input': ('Paths', 'input_csv'),
    'out': ('Paths', 'output_path'),
    'model': ('Model', 'model_kind'),
    'window_days': ('Model', 'window_days'),
    'alpha': ('Model', 'alpha'),
    'alphas': ('Model', 'alphas'),
    'methods': ('Conformal', 'methods'),
    'gamma': ('Conformal', 'gamma'),
    'sigma': ('Conformal', 'sigma'),
    'grid_step': ('Conformal', 'grid_step'),
    'weight_scheme': ('Conformal', 'weight_scheme'),
    'length': ('Synthetic', 'length'),
    'n_runs': ('Synthetic', 'n_runs'),
    'levels': ('Sweep', 'levels'),
    'sigma_range': ('Sweep', 'sigma_range'),
    'max_workers': ('Performance', 'max_workers'),
    'seed': ('Run', 'seed'),
}

# synth 子命令中 --gamma/--sigma/--grid-step 作用于 [Synthetic] 段
_SYNTH_REDIRECTS = {'gamma', 'sigma', 'grid_step'}


def build_run_config(config: ConfigDict, args: argparse.Namespace) -> RunConfig:
    """
    合并配置文件、环境变量与命令行参数，得到不可变的 RunConfig

    优先级：命令行 > 环境变量 > 配置文件 > 内置默认值。合并后的配置会再验证一次。
    """
    merged = ConfigDict({section: dict(values) for section, values in config.items()})
    command = getattr(args, 'command', None)
    for arg_name, (section, option) in _CLI_OVERRIDES.items():
        value = getattr(args, arg_name, None)
        if value is None:
            continue
        if command == 'synth' and arg_name in _SYNTH_REDIRECTS:
            section = 'Synthetic'
        merged.set_value(section, option, value)
    # epf 只给了 --alpha 时只跑这一个水平
    if command == 'epf' and getattr(args, 'alpha', None) is not None and getattr(args, 'alphas', None) is None:
        merged.set_value('Model', 'alphas', args.alpha)
    check_config(merged)

    defaults = RunConfig()
    sigma_range = merged.getstr('Sweep', 'sigma_range', None)
    try:
        return RunConfig(
            input_csv=merged.getstr('Paths', 'input_csv', defaults.input_csv),
            synthetic=bool(getattr(args, 'synthetic', False)),
            model_kind=merged.getstr('Model', 'model_kind', defaults.model_kind).upper().replace('-', '_'),  # type: ignore[union-attr]
            window_days=merged.getint('Model', 'window_days', defaults.window_days),
            refit_step=merged.getint('Model', 'refit_step', defaults.refit_step),
            alpha=merged.getfloat('Model', 'alpha', defaults.alpha),  # type: ignore[arg-type]
            alphas=_parse_floats(merged.getstr('Model', 'alphas', None) or '') or defaults.alphas,
            methods=_parse_names(merged.getstr('Conformal', 'methods', None) or '') or defaults.methods,
            gamma=merged.getfloat('Conformal', 'gamma', defaults.gamma),  # type: ignore[arg-type]
            sigma=merged.getfloat('Conformal', 'sigma', defaults.sigma),  # type: ignore[arg-type]
            weight_scheme=merged.getstr('Conformal', 'weight_scheme', defaults.weight_scheme).lower(),  # type: ignore[union-attr]
            decay=merged.getfloat('Conformal', 'decay', defaults.decay),  # type: ignore[arg-type]
            grid_step=merged.getfloat('Conformal', 'grid_step', defaults.grid_step),  # type: ignore[arg-type]
            grid_min=merged.getfloat('Conformal', 'grid_min', defaults.grid_min),
            grid_max=merged.getfloat('Conformal', 'grid_max', defaults.grid_max),
            calibration_size=merged.getint('Conformal', 'calibration_size', defaults.calibration_size),
            calibration_warmup=merged.getint('Conformal', 'calibration_warmup', defaults.calibration_warmup),
            bootstrap_samples=merged.getint('Bootstrap', 'n_samples', defaults.bootstrap_samples),
            bootstrap_size=merged.getint('Bootstrap', 'sample_size', defaults.bootstrap_size),
            block_length=merged.getfloat('Bootstrap', 'mean_block_length', defaults.block_length),  # type: ignore[arg-type]
            synth_length=merged.getint('Synthetic', 'length', defaults.synth_length),
            n_runs=merged.getint('Synthetic', 'n_runs', defaults.n_runs),
            synth_warmup=merged.getint('Synthetic', 'warmup', defaults.synth_warmup),
            synth_calibration_size=merged.getoptionalint('Synthetic', 'calibration_size', defaults.synth_calibration_size),
            synth_grid_step=merged.getfloat('Synthetic', 'grid_step', defaults.synth_grid_step),  # type: ignore[arg-type]
            synth_gamma=merged.getfloat('Synthetic', 'gamma', defaults.synth_gamma),  # type: ignore[arg-type]
            synth_sigma=merged.getfloat('Synthetic', 'sigma', defaults.synth_sigma),  # type: ignore[arg-type]
            trace_runs=merged.getint('Synthetic', 'trace_runs', defaults.trace_runs),
            levels=_parse_floats(merged.getstr('Sweep', 'levels', None) or '') or defaults.levels,
            sigma_range=tuple(float(p) for p in sigma_range.split(':')) if sigma_range else defaults.sigma_range,  # type: ignore[arg-type]
            output_dir=merged.getstr('Paths', 'output_path', defaults.output_dir),  # type: ignore[arg-type]
            seed=merged.getint('Run', 'seed', defaults.seed),
            max_workers=merged.getint('Performance', 'max_workers', defaults.max_workers),
            json_mirror=bool(getattr(args, 'json', False)),
            paper_style=bool(getattr(args, 'paper_style', False)),
            excel=bool(getattr(args, 'excel', False)),
        )
    except ValueError as e:
        raise ConfigValidationError(f"配置取值无法解析: {e}")
