"""诊断报告的输出（human / json / csv）与 JSON 读回"""
import io
import json
from dataclasses import asdict, fields
from typing import Any, Dict, Union

import pandas as pd

from errors import InputError
from joint_tests import (SCHEMA_VERSION, ComponentSummary, DiagnosticsReport, TestResult,
                         UnavailableProcedure)

FORMATS = ("human", "json", "csv")
CSV_COLUMNS = ["procedure", "status", "statistic", "critical_value", "p_value", "reject",
               "alpha", "mc_draws", "seed", "notes"]


def _procedure_to_dict(result: Union[TestResult, UnavailableProcedure]) -> Dict[str, Any]:
    if isinstance(result, UnavailableProcedure):
        return {"status": "unavailable", "cause": result.cause}
    data = asdict(result)
    data.pop("procedure")
    if isinstance(result.statistic, tuple):
        data["statistic"] = list(result.statistic)
    data["notes"] = list(result.notes)
    return {"status": "ok", **data}


def report_to_dict(report: DiagnosticsReport) -> Dict[str, Any]:
    data = {
        "schema_version": report.schema_version,
        "config_echo": report.config_echo,
        "components": [asdict(c) for c in report.components],
        "procedures": {name: _procedure_to_dict(r) for name, r in report.procedures.items()},
        "warnings": list(report.warnings),
        "failed": report.failed,
    }
    if report.statistic_vector is not None:
        data["statistic_vector"] = report.statistic_vector
    return data


def _procedure_from_dict(name: str, data: Dict[str, Any]) -> Union[TestResult, UnavailableProcedure]:
    if data.get("status") == "unavailable":
        return UnavailableProcedure(procedure=name, cause=data["cause"])
    statistic = data["statistic"]
    if isinstance(statistic, list):
        statistic = tuple(statistic)
    return TestResult(procedure=name, statistic=statistic,
                      critical_value=data["critical_value"], p_value=data.get("p_value"),
                      reject=data["reject"], alpha=data["alpha"],
                      mc_draws=data.get("mc_draws"), seed=data.get("seed"),
                      notes=tuple(data.get("notes", ())))


def report_from_json(text: Union[str, bytes]) -> DiagnosticsReport:
    """
    从 JSON 读回报告

    Raises:
        InputError: schema_version 不匹配或缺少必需字段
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"无效的JSON格式: {e}")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"不支持的 schema_version: {data.get('schema_version')!r}")
    try:
        known = {item.name for item in fields(ComponentSummary)}
        components = [ComponentSummary(**{k: v for k, v in c.items() if k in known})
                      for c in data["components"]]
        procedures = {name: _procedure_from_dict(name, value)
                      for name, value in data["procedures"].items()}
        return DiagnosticsReport(config_echo=data["config_echo"], components=components,
                                 procedures=procedures, warnings=list(data["warnings"]),
                                 statistic_vector=data.get("statistic_vector"),
                                 schema_version=data["schema_version"])
    except (KeyError, TypeError) as e:
        raise InputError(f"报告 JSON 缺少字段或字段类型错误: {e}")


def _fmt(value, spec: str = ".4f") -> str:
    if value is None:
        return "-"
    return format(value, spec)


def _human(report: DiagnosticsReport) -> str:
    out = io.StringIO()
    out.write("=" * 60 + "\n")
    out.write("断点回归联合诊断检验（操纵 + 协变量平衡）\n")
    out.write("=" * 60 + "\n")
    out.write(f"{'分量':<16}{'状态':<12}{'tau':>12}{'se':>12}{'h':>10}  来源\n")
    for c in report.components:
        out.write(f"{c.name:<16}{c.status:<12}{_fmt(c.tau):>12}{_fmt(c.se):>12}"
                  f"{_fmt(c.h):>10}  {c.h_source or '-'}\n")
    out.write("-" * 60 + "\n")
    for name, result in report.procedures.items():
        if isinstance(result, UnavailableProcedure):
            out.write(f"{name:<16}无法计算: {result.cause}\n")
            continue
        statistic = result.statistic
        if isinstance(statistic, tuple):
            statistic = max(statistic) if statistic else 0.0
            label = "max|z|"
        else:
            label = "stat"
        decision = "拒绝" if result.reject else "不拒绝"
        p_value = _fmt(result.p_value)
        out.write(f"{name:<16}{label}={statistic:.4f}  crit={result.critical_value:.4f}  "
                  f"p={p_value}  {decision}\n")
    if report.warnings:
        out.write("-" * 60 + "\n")
        out.write(f"警告 ({len(report.warnings)}):\n")
        for message in report.warnings:
            out.write(f"  - {message}\n")
    out.write("=" * 60 + "\n")
    return out.getvalue()


def _csv(report: DiagnosticsReport) -> str:
    rows = []
    for name, result in report.procedures.items():
        if isinstance(result, UnavailableProcedure):
            rows.append({"procedure": name, "status": "unavailable", "notes": result.cause})
            continue
        statistic = result.statistic
        if isinstance(statistic, tuple):
            statistic = ";".join(repr(float(v)) for v in statistic)
        rows.append({"procedure": name, "status": "ok", "statistic": statistic,
                     "critical_value": result.critical_value, "p_value": result.p_value,
                     "reject": result.reject, "alpha": result.alpha,
                     "mc_draws": result.mc_draws, "seed": result.seed,
                     "notes": ";".join(result.notes)})
    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    return frame.to_csv(index=False, lineterminator="\n")


def emit_report(report: DiagnosticsReport, format: str = "human") -> bytes:
    """按指定格式输出报告，UTF-8 编码"""
    if format == "json":
        text = json.dumps(report_to_dict(report), ensure_ascii=False, indent=2) + "\n"
    elif format == "csv":
        text = _csv(report)
    elif format == "human":
        text = _human(report)
    else:
        raise InputError(f"未知的输出格式 {format!r}，可选 {', '.join(FORMATS)}")
    return text.encode("utf-8")
