from pathlib import Path
from typing import List, Optional, Sequence
import logging

import numpy as np
import pandas as pd

from boundary_estimators import Sample
from errors import EmptyAfterFiltering, InputError, MissingColumn, NonNumericCell


class DatasetReader:
    """
    断点回归数据集读取工具类
    读取带表头的分隔文本（默认逗号分隔），选出驱动变量列和协变量列
    """

    def __init__(self, delimiter: str = ",", log_level=logging.INFO):
        """
        初始化数据集读取器

        Args:
            delimiter: 分隔符
            log_level: 日志级别
        """
        self.logger = self._setup_logger(log_level)
        self.delimiter = delimiter
        self.column_names: List[str] = []
        self.dropped_rows = 0
        self.warnings: List[str] = []

    def _setup_logger(self, level):
        """设置日志器"""
        logger = logging.getLogger("DatasetReader")
        logger.setLevel(level)
        return logger

    def _to_numeric(self, frame: pd.DataFrame, column: str) -> np.ndarray:
        """逐列转换为数值，空单元格保留为 nan，其余非数值单元格报错"""
        raw = frame[column]
        values = pd.to_numeric(raw, errors="coerce")
        blank = raw.isna() | (raw.str.strip() == "")
        bad = values.isna() & ~blank
        if bad.any():
            position = int(np.flatnonzero(bad.to_numpy())[0])
            # 数据记录序号从 1 开始，不含表头和被跳过的空行
            raise NonNumericCell(position + 1, column, raw.iloc[position])
        return values.to_numpy(dtype=float)

    def read(self, file_path: str, x_column: str, z_columns: Sequence[str] = (),
             cutoff: float = 0.0) -> Sample:
        """
        读取数据集并返回断点归一化后的样本

        Args:
            file_path: 数据文件路径
            x_column: 驱动变量列名
            z_columns: 协变量列名
            cutoff: 断点，读入后从驱动变量中减去

        Returns:
            Sample

        Raises:
            MissingColumn: 列不存在
            NonNumericCell: 单元格不是数值
            EmptyAfterFiltering: 删除缺失行后没有数据
        """
        file_path = Path(file_path)
        if not file_path.exists():
            raise InputError(f"文件不存在: {file_path}")

        self.logger.info(f"开始读取文件: {file_path}")
        try:
            frame = pd.read_csv(file_path, sep=self.delimiter, dtype=str, keep_default_na=False,
                                na_values=[""], encoding="utf-8", skipinitialspace=True)
        except pd.errors.EmptyDataError:
            raise EmptyAfterFiltering(f"文件为空: {file_path}")
        except pd.errors.ParserError as e:
            raise InputError(f"无法解析数据文件 {file_path}: {e}")
        except UnicodeDecodeError as e:
            raise InputError(f"数据文件不是 UTF-8 编码 {file_path}: {e}")
        frame.columns = [str(c).strip() for c in frame.columns]
        self.column_names = list(frame.columns)
        self.logger.info(f"检测到列名: {self.column_names[:5]}...")
        self.logger.info(f"总列数: {len(self.column_names)}")

        selected = [x_column] + list(z_columns)
        for column in selected:
            if column not in frame.columns:
                raise MissingColumn(column)

        columns = {column: self._to_numeric(frame, column) for column in selected}
        table = np.column_stack([columns[c] for c in selected]) if len(frame) else np.empty((0, len(selected)))
        complete = ~np.isnan(table).any(axis=1)
        self.dropped_rows = int(np.count_nonzero(~complete))
        self.warnings = []
        if self.dropped_rows:
            message = f"删除了 {self.dropped_rows} 行含缺失值的数据"
            self.logger.warning(message)
            self.warnings.append(message)

        table = table[complete]
        if table.shape[0] == 0:
            raise EmptyAfterFiltering(f"删除缺失行后没有剩余数据: {file_path}")

        self.logger.info(f"成功读取 {table.shape[0]} 行数据，{len(z_columns)} 个协变量")
        return Sample.from_arrays(table[:, 0], table[:, 1:], names=list(z_columns), cutoff=cutoff)


def parse_dataset(path: str, x_column: str, z_columns: Sequence[str] = (),
                  cutoff: float = 0.0, delimiter: str = ",",
                  reader: Optional[DatasetReader] = None) -> Sample:
    """读取数据集的便捷函数"""
    reader = reader or DatasetReader(delimiter=delimiter)
    return reader.read(path, x_column, z_columns, cutoff)
