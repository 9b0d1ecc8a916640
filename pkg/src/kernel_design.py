"""核函数与单侧加权设计矩阵（Gram 矩阵）

所有估计量共用的基础对象。断点已归一化到 0：右侧为 X >= 0，左侧为 X < 0。
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from errors import SingularDesign

logger = logging.getLogger("KernelDesign")

# Gram 矩阵倒数条件数下限
RCOND_BOUND = 1e-12


class KernelKind(str, Enum):
    TRIANGULAR = "triangular"
    UNIFORM = "uniform"


class Side(str, Enum):
    RIGHT = "right"
    LEFT = "left"


def kernel_eval(kind: KernelKind, u: float) -> float:
    """
    计算单点核权重，|u| > 1 时恰为 0
    """
    return float(kernel_weights(kind, np.asarray([u], dtype=float))[0])


def kernel_weights(kind: KernelKind, u: np.ndarray) -> np.ndarray:
    """向量化的核权重，支撑集固定为 [-1, 1]"""
    kind = KernelKind(kind)
    u = np.asarray(u, dtype=float)
    abs_u = np.abs(u)
    if kind is KernelKind.TRIANGULAR:
        return np.maximum(1.0 - abs_u, 0.0)
    return np.where(abs_u <= 1.0, 0.5, 0.0)


def side_mask(x: np.ndarray, side: Side) -> np.ndarray:
    """右侧 X >= 0，左侧 X < 0"""
    side = Side(side)
    x = np.asarray(x, dtype=float)
    if side is Side.RIGHT:
        return x >= 0.0
    return x < 0.0


def poly_basis(u: np.ndarray, order: int) -> np.ndarray:
    """r_q(u) = (1, u, ..., u^q)，按行排列"""
    return np.vander(np.asarray(u, dtype=float), order + 1, increasing=True)


def side_design(x: np.ndarray, h: float, side: Side, order: int,
                kind: KernelKind) -> Tuple[np.ndarray, np.ndarray]:
    """
    返回缩放后的多项式设计矩阵 X_q(h) 以及单侧权重 1{side}·K(X/h)/h

    Returns:
        (basis, weights): basis 形状 (n, q+1)，weights 形状 (n,)
    """
    x = np.asarray(x, dtype=float)
    u = x / h
    weights = side_mask(x, side) * kernel_weights(kind, u) / h
    return poly_basis(u, order), weights


@dataclass(frozen=True)
class SideGram:
    """单侧加权多项式矩 Γ = X'WX / n"""
    gamma: np.ndarray
    side: Side
    order: int
    bandwidth: float
    effective_n: int
    n: int

    @property
    def rcond(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.linalg.cond(self.gamma)
        if not np.isfinite(cond):
            return 0.0
        return float(1.0 / cond)

    def inverse_row(self, index: int) -> np.ndarray:
        """e_index' Γ^{-1}"""
        unit = np.zeros(self.order + 1)
        unit[index] = 1.0
        return np.linalg.solve(self.gamma, unit)


def side_gram(x: np.ndarray, h: float, side: Side, order: int,
              kind: KernelKind = KernelKind.TRIANGULAR,
              check: bool = True, rcond_bound: float = RCOND_BOUND) -> SideGram:
    """
    构造单侧 Gram 矩阵

    Args:
        x: 已减去断点的驱动变量
        h: 带宽
        side: right / left
        order: 多项式阶数 q >= 1
        kind: 核函数
        check: 是否检查奇异性
        rcond_bound: 倒数条件数下限

    Raises:
        SingularDesign: 有效样本数不足 q+1 或矩阵数值奇异
    """
    if not h > 0:
        raise ValueError(f"带宽必须为正数: {h}")
    if order < 1:
        raise ValueError(f"多项式阶数必须 >= 1: {order}")

    x = np.asarray(x, dtype=float)
    side = Side(side)
    n = x.shape[0]
    basis, weights = side_design(x, h, side, order, kind)
    effective_n = int(np.count_nonzero(weights > 0))

    if n == 0:
        gamma = np.zeros((order + 1, order + 1))
    else:
        gamma = (basis * weights[:, None]).T @ basis / n
        gamma = 0.5 * (gamma + gamma.T)

    gram = SideGram(gamma=gamma, side=side, order=order, bandwidth=float(h),
                    effective_n=effective_n, n=n)

    if check:
        if effective_n < order + 1:
            raise SingularDesign(
                f"核支撑内只有 {effective_n} 个观测，少于 {order + 1}（带宽 {h:.4g} 过小或数据过稀）",
                side=side.value)
        rcond = gram.rcond
        if rcond < rcond_bound:
            raise SingularDesign(f"Gram 矩阵数值奇异 (rcond={rcond:.3g})", side=side.value)
        if rcond < 1e3 * rcond_bound:
            logger.warning(f"{side.value} 侧 Gram 矩阵接近奇异 (rcond={rcond:.3g}, h={h:.4g})")

    return gram
