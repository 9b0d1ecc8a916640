"""蒙特卡洛实验：数据生成过程、经验检验水平、功效曲线与检验水平调整后的功效

每次重复的随机数流由 (master_seed, 重复序号) 决定，结果与进程数无关。
"""
import logging
from concurrent import futures
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from boundary_estimators import Sample
from config import PROCEDURES, load_json_file, merge_sources
from covariance import assemble_V, covariance_block_Z, jackknife_variance_f
from errors import (ConfigError, DegenerateSample, ExperimentAborted, InputError,
                    InsufficientNeighbors, SingularDesign)
from joint_tests import (StatisticVector, TestResult, estimate_jumps, resolve_bandwidths,
                         run_procedures, scale_statistics)
from kernel_design import KernelKind

logger = logging.getLogger("Simulation")

DEFAULT_LAMBDA = (1.27, 7.18, 20.21, 21.54, 7.33)
DEFAULT_SIGMA_X = 0.12
MAX_FAILURE_RATE = 0.01

# 与表格列名的对应关系
TABLE_COLUMNS = {"naive": "naive", "bonferroni": "bonfe", "wald": "chisq",
                 "max": "max", "max_studentized": "max_inv"}

# 估计阶段出现这些错误时本次重复不产生任何决策，不计入分母
REPLICATION_FAILURES = (SingularDesign, DegenerateSample, InsufficientNeighbors)


@dataclass(frozen=True)
class DgpConfig:
    """
    数据生成过程参数

    Attributes:
        n: 样本量
        d: 协变量个数
        rho: 协变量噪声两两相关系数，[0, 1)
        p_manip: 操纵概率，<= 0.5
        a: 第 d 个协变量的跳跃
        lambda_coeffs: λ(x) 在 x^1..x^k 上的系数（无常数项）
        sigma_x: 截断正态的尺度
        seed: 随机种子
    """
    n: int
    d: int
    rho: float = 0.0
    p_manip: float = 0.5
    a: float = 0.0
    lambda_coeffs: Tuple[float, ...] = DEFAULT_LAMBDA
    sigma_x: float = DEFAULT_SIGMA_X
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, int) or self.n < 2:
            raise ConfigError("n", f"必须是 >= 2 的整数，实际为 {self.n!r}")
        if isinstance(self.d, bool) or not isinstance(self.d, int) or self.d < 0:
            raise ConfigError("d", f"必须是非负整数，实际为 {self.d!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("rho", f"必须在 [0, 1) 内，实际为 {self.rho!r}")
        if not 0.0 <= self.p_manip <= 0.5:
            raise ConfigError("p_manip", f"必须在 [0, 0.5] 内，实际为 {self.p_manip!r}")
        if not self.a >= 0.0:
            raise ConfigError("a", f"必须 >= 0，实际为 {self.a!r}")
        if self.d == 0 and self.a != 0.0:
            raise ConfigError("a", f"d = 0 时没有协变量可以跳跃，a 必须为 0，实际为 {self.a!r}")
        if not self.sigma_x > 0.0:
            raise ConfigError("sigma_x", f"必须为正数，实际为 {self.sigma_x!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"必须是非负整数，实际为 {self.seed!r}")
        object.__setattr__(self, "lambda_coeffs", tuple(float(c) for c in self.lambda_coeffs))

    @property
    def is_null(self) -> bool:
        """联合原假设成立当且仅当 p_manip = 0.5 且 a = 0"""
        return self.p_manip == 0.5 and self.a == 0.0

    def to_dict(self) -> Dict[str, Any]:
        values = {item.name: getattr(self, item.name) for item in fields(self)}
        values["lambda_coeffs"] = list(self.lambda_coeffs)
        return values


@dataclass(frozen=True)
class ExperimentSettings:
    replications: int = 1000
    alpha: float = 0.05
    procedures: Tuple[str, ...] = PROCEDURES
    kernel: KernelKind = KernelKind.TRIANGULAR
    l: int = 2
    p: int = 3
    bandwidths: Union[str, Tuple[float, ...]] = "auto"
    h_f: Union[str, float] = "auto"
    neighbors_M: int = 3
    mc_draws: int = 100000
    workers: int = 1
    keep_replications: bool = True

    def __post_init__(self):
        for name in ("replications", "l", "p", "neighbors_M", "mc_draws", "workers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(name, f"必须是正整数，实际为 {value!r}")
        # 实验允许 alpha = 1 的极限情形
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha", f"必须在 (0, 1] 内，实际为 {self.alpha!r}")
        try:
            object.__setattr__(self, "kernel", KernelKind(self.kernel))
        except ValueError:
            raise ConfigError("kernel", f"未知的核函数 {self.kernel!r}")
        procedures = tuple(self.procedures)
        for i, name in enumerate(procedures):
            if name not in PROCEDURES:
                raise ConfigError(f"procedures[{i}]", f"未知的检验方法 {name!r}")
        object.__setattr__(self, "procedures", procedures)
        if not isinstance(self.bandwidths, str):
            values = self.bandwidths
            if isinstance(values, (int, float)):
                values = (values,)
            object.__setattr__(self, "bandwidths", tuple(float(b) for b in values))

    def to_dict(self) -> Dict[str, Any]:
        values = {item.name: getattr(self, item.name) for item in fields(self)}
        values["kernel"] = self.kernel.value
        values["procedures"] = list(self.procedures)
        if isinstance(self.bandwidths, tuple):
            values["bandwidths"] = list(self.bandwidths)
        return values


@dataclass(frozen=True)
class ReplicationOutcome:
    """单次重复的结果；failed 时 decisions 为空"""
    index: int
    seed: int
    status: str
    cause: Optional[str] = None
    decisions: Dict[str, Optional[bool]] = field(default_factory=dict)
    statistics: Dict[str, Optional[float]] = field(default_factory=dict)
    taus: Tuple[float, ...] = ()


@dataclass
class ExperimentResult:
    """
    一组重复实验的汇总

    rates[name] = rejections[name] / decisions[name]；
    某次重复中单个检验无法计算时，该检验的分母减一并计入 unavailable。
    """
    config: DgpConfig
    settings: ExperimentSettings
    rates: Dict[str, float]
    rejections: Dict[str, int]
    decisions: Dict[str, int]
    unavailable: Dict[str, int]
    failures: int
    failure_causes: List[str]
    component_names: Tuple[str, ...]
    mean_tau: Tuple[float, ...]
    tau_mc_se: Tuple[float, ...]
    outcomes: Optional[List[ReplicationOutcome]] = None

    @property
    def replications(self) -> int:
        return self.settings.replications

    @property
    def alpha(self) -> float:
        return self.settings.alpha

    def rate_se(self, procedure: str) -> float:
        """拒绝率的蒙特卡洛标准误"""
        count = self.decisions[procedure]
        if count == 0:
            return float("nan")
        rate = self.rates[procedure]
        return float(np.sqrt(rate * (1.0 - rate) / count))

    def statistics(self, procedure: str) -> np.ndarray:
        """
        逐次重复的检验统计量（naive / bonferroni 为 max|z|）

        Raises:
            InputError: 实验没有保留逐次结果
        """
        if self.outcomes is None:
            raise InputError("实验没有保留逐次重复的统计量 (keep_replications=False)")
        values = [o.statistics.get(procedure) for o in self.outcomes if o.status == "ok"]
        return np.array([v for v in values if v is not None], dtype=float)


def lambda_eval(coeffs: Sequence[float], x):
    """λ(x) = c₁x + c₂x² + ...，Horner 法求值，λ(0) = 0"""
    x = np.asarray(x, dtype=float)
    result = np.zeros_like(x)
    for c in reversed(tuple(coeffs)):
        result = (result + c) * x
    return result if result.ndim else float(result)


def _boundary_density(sigma_x: float) -> float:
    """tN(0, σ²; [0, 1]) 在 0⁺ 处的密度"""
    return float(stats.norm.pdf(0.0) / (sigma_x * (stats.norm.cdf(1.0 / sigma_x) - 0.5)))


def density_jump(p_manip: float, sigma_x: float = DEFAULT_SIGMA_X) -> float:
    """操纵概率对应的密度跳跃 τ_f = f(0⁺) - f(0⁻) = (1 - 2p)·c₀"""
    return (1.0 - 2.0 * p_manip) * _boundary_density(sigma_x)


def p_manip_for_density_jump(tau_f: float, sigma_x: float = DEFAULT_SIGMA_X) -> float:
    """
    density_jump 的反函数

    Raises:
        ConfigError: 目标跳跃无法用 p ∈ [0, 0.5] 实现
    """
    c0 = _boundary_density(sigma_x)
    p_manip = 0.5 * (1.0 - tau_f / c0)
    if not 0.0 <= p_manip <= 0.5:
        raise ConfigError("tau_f", f"密度跳跃 {tau_f} 超出可实现范围 [0, {c0:.4f}]")
    return p_manip


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def replication_seed(master_seed: int, index: int) -> int:
    """以 (master_seed, index) 为键派生单次重复的种子"""
    state = np.random.SeedSequence(master_seed, spawn_key=(index,)).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def simulate_sample(cfg: DgpConfig) -> Sample:
    """
    按数据生成过程抽取一个样本

    X⁺ ~ tN(0, σ²; [0,1])，X⁻ 与 -X⁺ 同分布，M = 1{U >= p}，X = (1-M)X⁻ + M·X⁺；
    Z_k = λ(X) + Z̃_k，第 d 个协变量另加 a·M。
    """
    rng = _generator(cfg.seed)
    upper = 1.0 / cfg.sigma_x
    x_plus = stats.truncnorm.rvs(0.0, upper, scale=cfg.sigma_x, size=cfg.n, random_state=rng)
    x_minus = -stats.truncnorm.rvs(0.0, upper, scale=cfg.sigma_x, size=cfg.n, random_state=rng)
    manipulated = (rng.uniform(size=cfg.n) >= cfg.p_manip).astype(float)
    x = np.where(manipulated == 1.0, x_plus, x_minus)

    if cfg.d == 0:
        return Sample(x=x, z=np.empty((cfg.n, 0)))
    sigma = np.full((cfg.d, cfg.d), cfg.rho)
    np.fill_diagonal(sigma, 1.0)
    noise = rng.multivariate_normal(np.zeros(cfg.d), sigma, size=cfg.n, method="cholesky")
    z = lambda_eval(cfg.lambda_coeffs, x)[:, None] + noise
    z[:, -1] += cfg.a * manipulated
    return Sample(x=x, z=z)


def _replicate(task: Tuple[DgpConfig, ExperimentSettings, int]) -> ReplicationOutcome:
    cfg, settings, index = task
    seed = replication_seed(cfg.seed, index)
    sample = simulate_sample(replace(cfg, seed=seed))
    try:
        bandwidths, _ = resolve_bandwidths(sample, settings.bandwidths, settings.h_f,
                                           settings.l, settings.p)
        jumps = estimate_jumps(sample, bandwidths, settings.l, settings.p, settings.kernel)
        vz = covariance_block_Z(sample.x, sample.z, bandwidths[:-1], settings.l,
                                settings.neighbors_M, settings.kernel)
        vf = jackknife_variance_f(sample.x, bandwidths[-1], settings.p, settings.kernel,
                                  jumps[-1].plus_fit, jumps[-1].minus_fit)
    except REPLICATION_FAILURES as e:
        return ReplicationOutcome(index=index, seed=seed, status="failed",
                                  cause=f"{type(e).__name__}: {e}")

    taus = tuple(float(j.tau) for j in jumps)
    V = assemble_V(vz, vf, settings.neighbors_M, (settings.l, settings.p), bandwidths)
    T = StatisticVector(t=scale_statistics(taus, bandwidths, sample.n),
                        names=tuple(sample.names) + ("density",), n=sample.n,
                        bandwidths=tuple(bandwidths))
    results = run_procedures(T, V, settings.procedures, settings.alpha, settings.mc_draws, seed)
    decisions: Dict[str, Optional[bool]] = {}
    statistics: Dict[str, Optional[float]] = {}
    for name, result in results.items():
        if isinstance(result, TestResult):
            decisions[name] = result.reject
            statistic = result.statistic
            statistics[name] = float(max(statistic)) if isinstance(statistic, tuple) else float(statistic)
        else:
            decisions[name] = None
            statistics[name] = None
    return ReplicationOutcome(index=index, seed=seed, status="ok", decisions=decisions,
                              statistics=statistics, taus=taus)


def _run_replications(cfg: DgpConfig, settings: ExperimentSettings) -> List[ReplicationOutcome]:
    tasks = [(cfg, settings, index) for index in range(settings.replications)]
    if settings.workers > 1:
        chunksize = max(1, len(tasks) // (4 * settings.workers))
        with futures.ProcessPoolExecutor(max_workers=settings.workers) as pool:
            outcomes = list(pool.map(_replicate, tasks, chunksize=chunksize))
    else:
        outcomes = [_replicate(task) for task in tasks]
    return sorted(outcomes, key=lambda o: o.index)


def run_experiment(cfg: DgpConfig, settings: ExperimentSettings) -> ExperimentResult:
    """
    执行 replications 次重复并汇总拒绝率

    Raises:
        ExperimentAborted: 估计失败的重复次数达到 1%
    """
    logger.info(f"开始实验: n={cfg.n}, d={cfg.d}, rho={cfg.rho}, p_manip={cfg.p_manip:.4f}, "
                f"a={cfg.a}, 重复 {settings.replications} 次, workers={settings.workers}")
    outcomes = _run_replications(cfg, settings)

    failed = [o for o in outcomes if o.status == "failed"]
    if len(failed) >= MAX_FAILURE_RATE * settings.replications:
        raise ExperimentAborted(
            f"{len(failed)}/{settings.replications} 次重复估计失败，达到 1% 上限；首个原因: {failed[0].cause}")
    for outcome in failed:
        logger.warning(f"第 {outcome.index} 次重复估计失败，不计入分母: {outcome.cause}")

    ok = [o for o in outcomes if o.status == "ok"]
    rates, rejections, decisions, unavailable = {}, {}, {}, {}
    for name in settings.procedures:
        made = [o.decisions[name] for o in ok if o.decisions.get(name) is not None]
        rejections[name] = int(sum(made))
        decisions[name] = len(made)
        unavailable[name] = len(ok) - len(made)
        rates[name] = rejections[name] / decisions[name] if made else float("nan")
        if unavailable[name]:
            logger.warning(f"检验 {name} 在 {unavailable[name]} 次重复中无法计算")

    names = tuple(f"z{k + 1}" for k in range(cfg.d)) + ("density",)
    if ok:
        taus = np.array([o.taus for o in ok], dtype=float)
        mean_tau = tuple(float(v) for v in taus.mean(axis=0))
        if len(ok) > 1:
            tau_se = tuple(float(v) for v in taus.std(axis=0, ddof=1) / np.sqrt(len(ok)))
        else:
            tau_se = tuple(float("nan") for _ in names)
    else:
        mean_tau = tau_se = tuple(float("nan") for _ in names)

    result = ExperimentResult(
        config=cfg, settings=settings, rates=rates, rejections=rejections, decisions=decisions,
        unavailable=unavailable, failures=len(failed),
        failure_causes=[o.cause for o in failed], component_names=names,
        mean_tau=mean_tau, tau_mc_se=tau_se,
        outcomes=outcomes if settings.keep_replications else None)
    logger.info("拒绝率: " + ", ".join(f"{k}={v:.3f}" for k, v in rates.items()))
    return result


def empirical_size(cfg: DgpConfig, settings: ExperimentSettings) -> ExperimentResult:
    """
    原假设下的经验检验水平

    Raises:
        ConfigError: cfg 不满足原假设
    """
    if cfg.p_manip != 0.5:
        raise ConfigError("p_manip", f"经验检验水平要求 p_manip = 0.5，实际为 {cfg.p_manip}")
    if cfg.a != 0.0:
        raise ConfigError("a", f"经验检验水平要求 a = 0，实际为 {cfg.a}")
    return run_experiment(cfg, settings)


def power_curve(cfg: DgpConfig, a_grid: Sequence[float], settings: ExperimentSettings,
                tau_f: Optional[float] = None) -> List[ExperimentResult]:
    """
    在 a 的网格上计算功效

    Args:
        tau_f: 目标密度跳跃；给出时 p_manip 由 p_manip_for_density_jump 决定
    """
    if tau_f is not None:
        p_manip = p_manip_for_density_jump(tau_f, cfg.sigma_x)
        logger.info(f"目标密度跳跃 tau_f={tau_f} 对应 p_manip={p_manip:.6f} "
                    f"(sigma_x={cfg.sigma_x})")
        cfg = replace(cfg, p_manip=p_manip)
    # 先构造全部配置，网格中的非法取值在运行任何重复之前报错
    configs = [replace(cfg, a=float(a)) for a in a_grid]
    return [run_experiment(config, settings) for config in configs]


@dataclass(frozen=True)
class SizeAdjustedPower:
    rates: Dict[str, float]
    critical_values: Dict[str, float]
    degenerate: Tuple[str, ...] = ()


def size_adjusted_power(null_statistics: Mapping[str, Sequence[float]],
                        alt_statistics: Mapping[str, Sequence[float]],
                        alpha: float = 0.05) -> SizeAdjustedPower:
    """
    用原假设下统计量的经验 1-α 分位数作为临界值，计算备择假设下的拒绝率

    原假设下统计量全部相等时分位数退化，该检验记入 degenerate。

    Raises:
        InputError: 缺少某个检验的逐次统计量
    """
    rates: Dict[str, float] = {}
    critical: Dict[str, float] = {}
    degenerate: List[str] = []
    for name, alt in alt_statistics.items():
        null = np.asarray(null_statistics.get(name, ()), dtype=float)
        alt = np.asarray(alt, dtype=float)
        if null.size == 0 or alt.size == 0:
            raise InputError(f"检验 {name} 缺少逐次重复的统计量，无法计算调整后的功效")
        critical[name] = float(np.quantile(null, 1.0 - alpha))
        if np.ptp(null) == 0:
            logger.warning(f"检验 {name} 在原假设下的统计量全部相等，分位数退化")
            degenerate.append(name)
        rates[name] = float(np.mean(alt > critical[name]))
    return SizeAdjustedPower(rates=rates, critical_values=critical, degenerate=tuple(degenerate))


def size_adjusted_power_from_results(null_result: ExperimentResult,
                                     alt_result: ExperimentResult) -> SizeAdjustedPower:
    procedures = alt_result.settings.procedures
    return size_adjusted_power({name: null_result.statistics(name) for name in procedures},
                               {name: alt_result.statistics(name) for name in procedures},
                               alt_result.alpha)


def size_table(base: DgpConfig, settings: ExperimentSettings, dims: Sequence[int],
               ns: Sequence[int]) -> pd.DataFrame:
    """
    经验检验水平表，列为 dim, n, naive, bonfe, chisq, max, max_inv

    每个 (dim, n) 一行；未请求的检验列为空。
    """
    rows = []
    for n in ns:
        for dim in dims:
            result = empirical_size(replace(base, n=int(n), d=int(dim)), settings)
            row = {"dim": int(dim), "n": int(n)}
            for name, column in TABLE_COLUMNS.items():
                row[column] = result.rates.get(name, np.nan)
            rows.append(row)
    return pd.DataFrame(rows, columns=["dim", "n"] + list(TABLE_COLUMNS.values()))


def power_table(null_result: ExperimentResult, results: Sequence[ExperimentResult]) -> pd.DataFrame:
    """
    功效表：每个 a 一行，各检验的原始功效与调整后功效（列名加 _adj）
    """
    rows = []
    for result in results:
        adjusted = size_adjusted_power_from_results(null_result, result)
        row = {"a": result.config.a, "p_manip": result.config.p_manip,
               "tau_f": density_jump(result.config.p_manip, result.config.sigma_x)}
        for name in result.settings.procedures:
            row[name] = result.rates[name]
            row[f"{name}_se"] = result.rate_se(name)
            row[f"{name}_adj"] = adjusted.rates[name]
        rows.append(row)
    return pd.DataFrame(rows)


def load_experiment_config(path: Optional[str] = None,
                           overrides: Optional[Mapping[str, Any]] = None,
                           extra: Sequence[str] = ()) -> Tuple[DgpConfig, ExperimentSettings,
                                                               Dict[str, Any], Dict[str, str]]:
    """
    读取实验配置（JSON + 命令行覆盖），字段按 DgpConfig / ExperimentSettings 拆分

    Args:
        extra: 允许出现的其他字段（如网格参数），原样返回

    Returns:
        (dgp, settings, extra_values, provenance)
    """
    dgp_fields = [item.name for item in fields(DgpConfig)]
    settings_fields = [item.name for item in fields(ExperimentSettings)]
    known = dgp_fields + settings_fields + list(extra)
    values, provenance = merge_sources(known, load_json_file(path), overrides or {})
    if "seed" not in values:
        raise ConfigError("seed", "必须显式给出随机种子")
    for key in ("lambda_coeffs", "procedures", "bandwidths"):
        if isinstance(values.get(key), list):
            values[key] = tuple(values[key])
    dgp_values = {k: values[k] for k in dgp_fields if k in values}
    dgp_values.setdefault("n", 1000)
    dgp_values.setdefault("d", 1)
    dgp = DgpConfig(**dgp_values)
    settings = ExperimentSettings(**{k: values[k] for k in settings_fields if k in values})
    for key in known:
        provenance.setdefault(key, "default")
    return dgp, settings, {k: values[k] for k in extra if k in values}, provenance
