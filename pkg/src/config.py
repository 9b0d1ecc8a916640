"""运行配置：JSON 配置文件 + 命令行覆盖（命令行优先）"""
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

from errors import ConfigError
from kernel_design import KernelKind

logger = logging.getLogger("Config")

PROCEDURES = ("naive", "bonferroni", "wald", "max", "max_studentized")

Bandwidths = Union[str, Tuple[float, ...]]


@dataclass(frozen=True)
class RunConfig:
    """联合诊断检验的运行配置，seed 必须显式给出"""
    seed: int
    cutoff: float = 0.0
    kernel: KernelKind = KernelKind.TRIANGULAR
    l: int = 2
    p: int = 3
    bandwidths: Bandwidths = "auto"
    h_f: Union[str, float] = "auto"
    alpha: float = 0.05
    neighbors_M: int = 3
    mc_draws: int = 100000
    procedures: Tuple[str, ...] = PROCEDURES
    workers: int = 1

    def __post_init__(self):
        validate_run_config(self)

    def to_dict(self) -> Dict[str, Any]:
        values = {}
        for item in fields(self):
            value = getattr(self, item.name)
            if isinstance(value, KernelKind):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            values[item.name] = value
        return values


def _positive_int(name: str, value: Any, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"必须是整数，实际为 {value!r}")
    if value < minimum:
        raise ConfigError(name, f"必须 >= {minimum}，实际为 {value}")
    return value


def _positive_float(name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"必须是数值，实际为 {value!r}")
    if not value > 0:
        raise ConfigError(name, f"必须为正数，实际为 {value}")
    return float(value)


def validate_run_config(config: RunConfig) -> None:
    """按字段校验，错误信息带字段名"""
    _positive_int("seed", config.seed, minimum=0)
    if isinstance(config.cutoff, bool) or not isinstance(config.cutoff, (int, float)):
        raise ConfigError("cutoff", f"必须是数值，实际为 {config.cutoff!r}")
    try:
        object.__setattr__(config, "kernel", KernelKind(config.kernel))
    except ValueError:
        raise ConfigError("kernel", f"未知的核函数 {config.kernel!r}，可选 triangular / uniform")
    _positive_int("l", config.l)
    _positive_int("p", config.p)
    _positive_int("neighbors_M", config.neighbors_M)
    _positive_int("mc_draws", config.mc_draws)
    _positive_int("workers", config.workers)

    if isinstance(config.alpha, bool) or not isinstance(config.alpha, (int, float)) \
            or not 0 < config.alpha < 1:
        raise ConfigError("alpha", f"必须在 (0, 1) 内，实际为 {config.alpha!r}")

    if isinstance(config.bandwidths, str):
        if config.bandwidths != "auto":
            raise ConfigError("bandwidths", f"只能是 'auto' 或正数列表，实际为 {config.bandwidths!r}")
    else:
        values = config.bandwidths
        if isinstance(values, (int, float)):
            values = (values,)
        checked = tuple(_positive_float(f"bandwidths[{i}]", v) for i, v in enumerate(values))
        object.__setattr__(config, "bandwidths", checked)

    if isinstance(config.h_f, str):
        if config.h_f != "auto":
            raise ConfigError("h_f", f"只能是 'auto' 或正数，实际为 {config.h_f!r}")
    else:
        object.__setattr__(config, "h_f", _positive_float("h_f", config.h_f))

    procedures = tuple(config.procedures)
    if not procedures:
        raise ConfigError("procedures", "至少需要一个检验方法")
    for i, name in enumerate(procedures):
        if name not in PROCEDURES:
            raise ConfigError(f"procedures[{i}]", f"未知的检验方法 {name!r}，可选 {', '.join(PROCEDURES)}")
    object.__setattr__(config, "procedures", procedures)


def load_json_file(path: Optional[Union[str, Path]]) -> Dict[str, Any]:
    """读取 JSON 配置文件，顶层必须是对象"""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"配置文件不存在: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"无效的JSON格式: {e}")
    if not isinstance(data, dict):
        raise ConfigError("config", "顶层必须是 JSON 对象")
    return data


def merge_sources(known: Sequence[str], file_values: Mapping[str, Any],
                  flag_values: Mapping[str, Any]) -> Tuple[Dict[str, Any], Dict[str, str]]:
    """
    合并配置文件与命令行参数

    Returns:
        (values, provenance): provenance 中每个字段为 file / flag
    """
    values: Dict[str, Any] = {}
    provenance: Dict[str, str] = {}
    for key, value in file_values.items():
        if key not in known:
            raise ConfigError(key, "未知的配置字段")
        values[key] = value
        provenance[key] = "file"
    for key, value in flag_values.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(key, "未知的配置字段")
        if key in values:
            logger.info(f"命令行参数覆盖配置文件字段 {key}: {values[key]!r} -> {value!r}")
        values[key] = value
        provenance[key] = "flag"
    return values, provenance


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> Tuple[RunConfig, Dict[str, str]]:
    """
    读取运行配置

    Returns:
        (config, provenance): 未出现在文件和命令行中的字段标记为 default
    """
    known = [item.name for item in fields(RunConfig)]
    values, provenance = merge_sources(known, load_json_file(path), overrides or {})
    if "seed" not in values:
        raise ConfigError("seed", "必须显式给出随机种子")
    for key in ("bandwidths", "procedures"):
        if isinstance(values.get(key), list):
            values[key] = tuple(values[key])
    config = RunConfig(**values)
    for key in known:
        provenance.setdefault(key, "default")
    return config, provenance
