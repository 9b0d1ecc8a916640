"""
断点回归联合诊断检验命令行

子命令:
    test            数据集 -> 联合诊断报告
    simulate-size   原假设下的经验检验水平表
    simulate-power  功效曲线（原始功效与调整后功效）
    critical-value  给定 V̂ 计算 max 检验的蒙特卡洛临界值

退出码: 0 运行完成，2 输入错误，3 估计失败。检验是否拒绝不影响退出码。
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import stats

from config import PROCEDURES, load_run_config
from covariance import CovarianceEstimate
from dataset_reader import DatasetReader
from errors import EstimatorError, InputError, NotPSD
from joint_tests import mc_critical_value, run_joint_diagnostics
from log_utils import log_run_info, setup_logging
from report import FORMATS, emit_report
from simulation import (density_jump, empirical_size, load_experiment_config,
                        p_manip_for_density_jump, power_curve, power_table, size_table)

logger = logging.getLogger("CLI")

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_ESTIMATOR_ERROR = 3


def _banner(title: str):
    print("\n" + "=" * 60, file=sys.stderr)
    print(title, file=sys.stderr)
    print("=" * 60, file=sys.stderr)


def _bandwidth_flag(values: Optional[List[str]]):
    """--bandwidths auto 或一个以上的正数"""
    if values is None:
        return None
    if values == ["auto"]:
        return "auto"
    try:
        return tuple(float(v) for v in values)
    except ValueError:
        raise InputError(f"--bandwidths 只能是 auto 或数值列表: {values}")


def _h_f_flag(value: Optional[str]):
    if value is None or value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise InputError(f"--h-f 只能是 auto 或数值: {value}")


def _estimation_flags(args) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "kernel": args.kernel,
        "l": args.l,
        "p": args.p,
        "bandwidths": _bandwidth_flag(args.bandwidths),
        "h_f": _h_f_flag(args.h_f),
        "alpha": args.alpha,
        "neighbors_M": args.neighbors_M,
        "mc_draws": args.mc_draws,
        "procedures": tuple(args.procedures) if args.procedures else None,
        "workers": args.workers,
    }


def _write_output(data: bytes, output: Optional[str]):
    if output:
        Path(output).write_bytes(data)
        logger.info(f"结果已写入: {output}")
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def run_test(args) -> int:
    overrides = _estimation_flags(args)
    overrides["cutoff"] = args.cutoff
    config, provenance = load_run_config(args.config, overrides)
    log_run_info("test", config.to_dict())

    reader = DatasetReader(delimiter=args.delimiter)
    sample = reader.read(args.data, args.x_column, args.z_columns or [], cutoff=config.cutoff)

    _banner(f"联合诊断检验: n={sample.n}, d={sample.d}")
    report = run_joint_diagnostics(sample, config,
                                   config_echo={"values": config.to_dict(), "provenance": provenance})
    report.warnings[:0] = reader.warnings
    for component in report.components:
        if component.h is not None:
            print(f"带宽 {component.name}: h={component.h:.6g} ({component.h_source})", file=sys.stderr)

    _write_output(emit_report(report, args.format), args.output)
    if report.failed:
        logger.error("没有任何分量可以估计，联合检验无法进行")
        return EXIT_ESTIMATOR_ERROR
    return EXIT_OK


def _experiment_flags(args) -> Dict[str, Any]:
    flags = _estimation_flags(args)
    flags.pop("workers")
    flags.update({
        "n": args.n, "d": args.d, "rho": args.rho, "p_manip": args.p_manip, "a": args.a,
        "sigma_x": args.sigma_x, "replications": args.replications, "workers": args.workers,
    })
    return flags


def run_simulate_size(args) -> int:
    flags = _experiment_flags(args)
    flags.update({"dims": args.dims, "ns": args.ns, "rhos": args.rhos})
    dgp, settings, grid, _ = load_experiment_config(args.config, flags, extra=("dims", "ns", "rhos"))
    log_run_info("simulate-size", {**dgp.to_dict(), **settings.to_dict(), **grid})

    dims = grid.get("dims") or [dgp.d]
    ns = grid.get("ns") or [dgp.n]
    rhos = grid.get("rhos") or [dgp.rho]
    tables = []
    for rho in rhos:
        _banner(f"经验检验水平: rho={rho}, 重复 {settings.replications} 次")
        table = size_table(replace(dgp, rho=float(rho)), settings, dims, ns)
        if len(rhos) > 1:
            table.insert(0, "rho", float(rho))
        print(table.to_string(index=False), file=sys.stderr)
        tables.append(table)
    frame = pd.concat(tables, ignore_index=True)
    _write_output(frame.to_csv(index=False, lineterminator="\n").encode("utf-8"), args.output)
    return EXIT_OK


def run_simulate_power(args) -> int:
    flags = _experiment_flags(args)
    flags.update({"a_grid": args.a_grid, "tau_f": args.tau_f})
    dgp, settings, grid, _ = load_experiment_config(args.config, flags, extra=("a_grid", "tau_f"))
    a_grid = grid.get("a_grid") or [0.0, 0.5, 1.0, 1.5, 2.0]
    tau_f = grid.get("tau_f", 0.15)
    log_run_info("simulate-power", {**dgp.to_dict(), **settings.to_dict(), "a_grid": a_grid,
                                    "tau_f": tau_f})

    p_manip = p_manip_for_density_jump(tau_f, dgp.sigma_x)
    _banner(f"功效曲线: tau_f={tau_f} -> p_manip={p_manip:.6f} "
            f"(tau_f = (1 - 2p)·{density_jump(0.0, dgp.sigma_x):.4f})")
    null_result = empirical_size(replace(dgp, p_manip=0.5, a=0.0),
                                 replace(settings, keep_replications=True))
    results = power_curve(dgp, a_grid, replace(settings, keep_replications=True), tau_f=tau_f)
    frame = power_table(null_result, results)
    print(frame.to_string(index=False), file=sys.stderr)
    _write_output(frame.to_csv(index=False, lineterminator="\n").encode("utf-8"), args.output)
    return EXIT_OK


def load_covariance_file(path: str) -> np.ndarray:
    """读取 V̂：JSON（行列表，或带 v 字段的对象）或无表头 CSV"""
    path = Path(path)
    if not path.exists():
        raise InputError(f"文件不存在: {path}")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise InputError(f"无效的JSON格式: {e}")
        if isinstance(data, dict):
            data = data.get("v", data.get("statistic_vector", {}).get("v"))
        try:
            matrix = np.asarray(data, dtype=float)
        except (TypeError, ValueError) as e:
            raise InputError(f"协方差矩阵含非数值元素: {e}")
    else:
        try:
            matrix = pd.read_csv(path, header=None, encoding="utf-8").to_numpy(dtype=float)
        except (ValueError, UnicodeDecodeError) as e:
            # ParserError 与 EmptyDataError 都是 ValueError 的子类
            raise InputError(f"无法读取协方差矩阵 {path}: {e}")
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] == 0:
        raise InputError(f"协方差矩阵必须是非空方阵，实际形状 {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InputError("协方差矩阵含 NaN 或无穷值")
    if not np.allclose(matrix, matrix.T):
        raise NotPSD("协方差矩阵不对称")
    return matrix


def run_critical_value(args) -> int:
    if args.seed is None:
        raise InputError("必须显式给出 --seed")
    if not 0 < args.alpha < 1:
        raise InputError(f"alpha 必须在 (0, 1) 内: {args.alpha}")
    if args.mc_draws < 1:
        raise InputError(f"--mc-draws 必须至少为 1: {args.mc_draws}")
    if args.workers < 1:
        raise InputError(f"--workers 必须至少为 1: {args.workers}")
    matrix = load_covariance_file(args.cov)
    log_run_info("critical-value", {"cov": args.cov, "alpha": args.alpha,
                                    "mc_draws": args.mc_draws, "seed": args.seed})
    V = CovarianceEstimate(v=matrix, vz=matrix[:-1, :-1], vf=float(matrix[-1, -1]))
    result = {
        "dim": int(matrix.shape[0]),
        "alpha": args.alpha,
        "mc_draws": args.mc_draws,
        "seed": args.seed,
        "max": mc_critical_value(V, args.alpha, args.mc_draws, args.seed, False, args.workers),
        "max_studentized": mc_critical_value(V, args.alpha, args.mc_draws, args.seed, True,
                                             args.workers),
        "chisq": float(stats.chi2.ppf(1.0 - args.alpha, matrix.shape[0])),
    }
    _banner("max 检验临界值")
    text = json.dumps(result, ensure_ascii=False, indent=2) + "\n"
    _write_output(text.encode("utf-8"), args.output)
    return EXIT_OK


def _add_estimation_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='JSON 配置文件')
    parser.add_argument('--seed', type=int, help='随机种子（必须在配置文件或命令行中给出）')
    parser.add_argument('--kernel', choices=['triangular', 'uniform'], help='核函数 (默认: triangular)')
    parser.add_argument('--l', type=int, help='协变量局部多项式阶数 (默认: 2)')
    parser.add_argument('--p', type=int, help='密度局部多项式阶数 (默认: 3)')
    parser.add_argument('--bandwidths', nargs='+', help='协变量带宽: auto 或每个协变量一个数')
    parser.add_argument('--h-f', dest='h_f', help='密度带宽: auto 或数值')
    parser.add_argument('--alpha', type=float, help='检验水平 (默认: 0.05)')
    parser.add_argument('--neighbors-M', dest='neighbors_M', type=int, help='最近邻个数 (默认: 3)')
    parser.add_argument('--mc-draws', dest='mc_draws', type=int, help='蒙特卡洛次数 (默认: 100000)')
    parser.add_argument('--procedures', nargs='+', choices=PROCEDURES, help='检验方法')
    parser.add_argument('--workers', type=int, help='并行数 (默认: 1)')
    parser.add_argument('--output', help='输出文件（默认写到标准输出）')


def _add_dgp_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--n', type=int, help='样本量 (默认: 1000)')
    parser.add_argument('--d', type=int, help='协变量个数 (默认: 1)')
    parser.add_argument('--rho', type=float, help='协变量相关系数 (默认: 0)')
    parser.add_argument('--p-manip', dest='p_manip', type=float, help='操纵概率 (默认: 0.5)')
    parser.add_argument('--a', type=float, help='第 d 个协变量的跳跃 (默认: 0)')
    parser.add_argument('--sigma-x', dest='sigma_x', type=float, help='截断正态尺度 (默认: 0.12)')
    parser.add_argument('--replications', type=int, help='重复次数 (默认: 1000)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='断点回归联合诊断检验（操纵 + 协变量平衡）')
    parser.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='日志级别 (默认: INFO)')
    subparsers = parser.add_subparsers(dest='command', required=True)

    test = subparsers.add_parser('test', help='对数据集执行联合诊断检验')
    test.add_argument('--data', required=True, help='数据文件（带表头的分隔文本）')
    test.add_argument('--x-column', dest='x_column', required=True, help='驱动变量列名')
    test.add_argument('--z-columns', dest='z_columns', nargs='*', help='协变量列名')
    test.add_argument('--cutoff', type=float, help='断点 (默认: 0)')
    test.add_argument('--delimiter', default=',', help='分隔符 (默认: ,)')
    test.add_argument('--format', choices=FORMATS, default='human', help='报告格式 (默认: human)')
    _add_estimation_arguments(test)
    test.set_defaults(handler=run_test)

    size = subparsers.add_parser('simulate-size', help='经验检验水平表')
    _add_estimation_arguments(size)
    _add_dgp_arguments(size)
    size.add_argument('--dims', nargs='+', type=int, help='协变量个数网格')
    size.add_argument('--ns', nargs='+', type=int, help='样本量网格')
    size.add_argument('--rhos', nargs='+', type=float, help='相关系数网格')
    size.set_defaults(handler=run_simulate_size)

    power = subparsers.add_parser('simulate-power', help='功效曲线')
    _add_estimation_arguments(power)
    _add_dgp_arguments(power)
    power.add_argument('--a-grid', dest='a_grid', nargs='+', type=float,
                       help='a 的网格 (默认: 0 0.5 1 1.5 2)')
    power.add_argument('--tau-f', dest='tau_f', type=float, help='目标密度跳跃 (默认: 0.15)')
    power.set_defaults(handler=run_simulate_power)

    critical = subparsers.add_parser('critical-value', help='max 检验的蒙特卡洛临界值')
    critical.add_argument('--cov', required=True, help='V̂ 文件（JSON 或 CSV）')
    critical.add_argument('--alpha', type=float, default=0.05, help='检验水平 (默认: 0.05)')
    critical.add_argument('--mc-draws', dest='mc_draws', type=int, default=100000,
                          help='蒙特卡洛次数 (默认: 100000)')
    critical.add_argument('--seed', type=int, help='随机种子（必须给出）')
    critical.add_argument('--workers', type=int, default=1, help='线程数 (默认: 1)')
    critical.add_argument('--output', help='输出文件（默认写到标准输出）')
    critical.set_defaults(handler=run_critical_value)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(getattr(logging, args.log_level))

    try:
        return args.handler(args)
    except InputError as e:
        logger.error(f"输入错误: {e}")
        return EXIT_INPUT_ERROR
    except EstimatorError as e:
        logger.error(f"估计失败: {e}")
        return EXIT_ESTIMATOR_ERROR


if __name__ == '__main__':
    sys.exit(main())
