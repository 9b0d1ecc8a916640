"""诊断检验的异常层次

InputError 系列对应命令行退出码 2（输入错误），
EstimatorError 系列对应退出码 3（估计失败）。
"""
from typing import Optional


class DiagnosticsError(Exception):
    """所有诊断错误的基类"""


class InputError(DiagnosticsError, ValueError):
    """输入数据或配置不合法"""


class EstimatorError(DiagnosticsError):
    """估计量无法计算"""


class LengthMismatch(InputError):
    pass


class MissingColumn(InputError):
    def __init__(self, column: str):
        super().__init__(f"数据集中缺少列: {column}")
        self.column = column


class NonNumericCell(InputError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"第 {row} 条数据记录 列 '{column}' 不是数值: {value!r}")
        self.row = row
        self.column = column
        self.value = value


class EmptyAfterFiltering(InputError):
    pass


class ConfigError(InputError):
    def __init__(self, field: str, message: str):
        super().__init__(f"配置字段 '{field}' 无效: {message}")
        self.field = field


class NotPSD(InputError):
    """协方差矩阵不是半正定"""


class SingularDesign(EstimatorError):
    def __init__(self, message: str, side: Optional[str] = None, component: Optional[str] = None):
        label = ""
        if component is not None:
            label += f"[{component}] "
        if side is not None:
            label += f"({side}) "
        super().__init__(f"{label}{message}")
        self.detail = message
        self.side = side
        self.component = component

    def with_component(self, component: str) -> "SingularDesign":
        """返回带分量名称的新异常"""
        return SingularDesign(self.detail, side=self.side, component=component)


class DegenerateSample(EstimatorError):
    pass


class InsufficientNeighbors(EstimatorError):
    pass


class NotPositiveDefinite(EstimatorError):
    pass


class ComponentDegenerate(EstimatorError):
    def __init__(self, message: str, component: Optional[str] = None):
        super().__init__(message if component is None else f"[{component}] {message}")
        self.component = component


class ExperimentAborted(EstimatorError):
    pass
