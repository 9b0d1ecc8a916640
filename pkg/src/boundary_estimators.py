"""单侧局部多项式估计量

协变量条件均值用截距估计，驱动变量密度用经验分布函数回归的斜率估计。
系数以自然单位返回：beta[s] 是 X^s 的系数。
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from errors import DegenerateSample, LengthMismatch
from kernel_design import KernelKind, Side, SideGram, side_design, side_gram

logger = logging.getLogger("BoundaryEstimators")

DEFAULT_MEAN_ORDER = 2
DEFAULT_DENSITY_ORDER = 3
RULE_OF_THUMB_CONSTANT = 2.5
UNDERSMOOTHING_EXPONENT = 0.05


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Sample:
    """
    断点归一化后的样本

    Attributes:
        x: 驱动变量（已减去断点）
        z: 协变量矩阵，形状 (n, d)
        names: 协变量名称
    """
    x: np.ndarray
    z: np.ndarray
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        x = _readonly(np.ravel(self.x))
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1) if z.size else np.empty((x.shape[0], 0))
        if z.shape[0] != x.shape[0]:
            raise LengthMismatch(f"驱动变量长度 {x.shape[0]} 与协变量行数 {z.shape[0]} 不一致")
        names = tuple(self.names) if self.names else tuple(f"z{k + 1}" for k in range(z.shape[1]))
        if len(names) != z.shape[1]:
            raise LengthMismatch(f"协变量名称数 {len(names)} 与列数 {z.shape[1]} 不一致")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "names", names)

    @classmethod
    def from_arrays(cls, x, z=None, names: Optional[Sequence[str]] = None,
                    cutoff: float = 0.0) -> "Sample":
        x = np.asarray(x, dtype=float) - cutoff
        if z is None:
            z = np.empty((x.shape[0], 0))
        return cls(x=x, z=np.asarray(z, dtype=float), names=tuple(names or ()))

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def d(self) -> int:
        return int(self.z.shape[1])

    @cached_property
    def ecdf(self) -> np.ndarray:
        """F̃(X_i) = n^{-1} Σ_j 1{X_j <= X_i}，只读缓存"""
        return _readonly(empirical_cdf(self.x))

    def drop_covariates(self, keep: Sequence[int]) -> "Sample":
        keep = list(keep)
        return Sample(x=self.x, z=self.z[:, keep], names=tuple(self.names[k] for k in keep))


def empirical_cdf(x: np.ndarray) -> np.ndarray:
    """全样本经验分布函数，弱不等式处理结"""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return np.empty(0)
    return np.searchsorted(np.sort(x), x, side="right") / x.shape[0]


@dataclass(frozen=True)
class BoundaryFit:
    """单侧局部多项式拟合结果"""
    beta: np.ndarray
    side: Side
    target: str
    gram: SideGram
    bandwidth: float
    component: Optional[str] = None

    @property
    def boundary_value(self) -> float:
        """均值取截距，密度取斜率"""
        return float(self.beta[1] if self.target == "density" else self.beta[0])

    @property
    def negative_density(self) -> bool:
        return self.target == "density" and self.beta[1] < 0


@dataclass(frozen=True)
class JumpEstimate:
    tau: float
    plus_fit: BoundaryFit
    minus_fit: BoundaryFit
    warnings: Tuple[str, ...] = field(default=())


def _weighted_fit(x: np.ndarray, y: np.ndarray, h: float, order: int, side: Side,
                  kind: KernelKind, gram: Optional[SideGram] = None) -> Tuple[np.ndarray, SideGram]:
    if gram is None:
        gram = side_gram(x, h, side, order, kind)
    basis, weights = side_design(x, h, side, order, kind)
    # 只有核支撑内的观测参与，避免支撑外的 nan/inf 污染
    active = weights > 0
    rhs = (basis[active] * weights[active, None]).T @ y[active] / x.shape[0]
    scaled = np.linalg.solve(gram.gamma, rhs)
    beta = scaled / h ** np.arange(order + 1)
    return beta, gram


def fit_mean_boundary(x, z, h: float, l: int = DEFAULT_MEAN_ORDER,
                      side: Side = Side.RIGHT,
                      kind: KernelKind = KernelKind.TRIANGULAR,
                      component: Optional[str] = None) -> BoundaryFit:
    """
    单侧局部多项式回归，截距为边界均值估计

    Raises:
        LengthMismatch: x 与 z 长度不同
        SingularDesign: 该侧设计矩阵奇异
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise LengthMismatch(f"x 长度 {x.shape} 与 z 长度 {z.shape} 不一致")
    side = Side(side)
    beta, gram = _weighted_fit(x, z, h, l, side, kind)
    return BoundaryFit(beta=beta, side=side, target="mean", gram=gram,
                       bandwidth=float(h), component=component)


def fit_density_boundary(x, h_f: float, p: int = DEFAULT_DENSITY_ORDER,
                         side: Side = Side.RIGHT,
                         kind: KernelKind = KernelKind.TRIANGULAR,
                         ecdf: Optional[np.ndarray] = None) -> BoundaryFit:
    """
    对全样本经验分布函数做单侧局部多项式回归，斜率为边界密度估计

    Args:
        ecdf: 可选的预先计算好的 F̃(X_i)

    Raises:
        SingularDesign: 该侧设计矩阵奇异
        DegenerateSample: 该侧观测少于 p+2
    """
    x = np.asarray(x, dtype=float)
    side = Side(side)
    if ecdf is None:
        ecdf = empirical_cdf(x)
    gram = side_gram(x, h_f, side, p, kind)
    side_count = gram.effective_n
    if side_count < p + 2:
        raise DegenerateSample(f"{side.value} 侧核支撑内只有 {side_count} 个观测，少于 p+2={p + 2}")
    beta, gram = _weighted_fit(x, np.asarray(ecdf, dtype=float), h_f, p, side, kind, gram)
    fit = BoundaryFit(beta=beta, side=side, target="density", gram=gram,
                      bandwidth=float(h_f), component="density")
    if fit.negative_density:
        logger.warning(f"{side.value} 侧密度估计为负: {beta[1]:.4g} (h_f={h_f:.4g})")
    return fit


def tau_z(x, z, h: float, l: int = DEFAULT_MEAN_ORDER,
          kind: KernelKind = KernelKind.TRIANGULAR,
          component: Optional[str] = None) -> JumpEstimate:
    """协变量条件均值在断点处的跳跃 μ̂₊ - μ̂₋"""
    plus_fit = fit_mean_boundary(x, z, h, l, Side.RIGHT, kind, component)
    minus_fit = fit_mean_boundary(x, z, h, l, Side.LEFT, kind, component)
    return JumpEstimate(tau=plus_fit.boundary_value - minus_fit.boundary_value,
                        plus_fit=plus_fit, minus_fit=minus_fit)


def tau_f(x, h_f: float, p: int = DEFAULT_DENSITY_ORDER,
          kind: KernelKind = KernelKind.TRIANGULAR,
          ecdf: Optional[np.ndarray] = None) -> JumpEstimate:
    """密度在断点处的跳跃 f̂₊ - f̂₋"""
    x = np.asarray(x, dtype=float)
    if ecdf is None:
        ecdf = empirical_cdf(x)
    plus_fit = fit_density_boundary(x, h_f, p, Side.RIGHT, kind, ecdf)
    minus_fit = fit_density_boundary(x, h_f, p, Side.LEFT, kind, ecdf)
    warnings = tuple(
        f"{fit.side.value} 侧密度估计为负 ({fit.beta[1]:.4g})"
        for fit in (plus_fit, minus_fit) if fit.negative_density
    )
    return JumpEstimate(tau=plus_fit.boundary_value - minus_fit.boundary_value,
                        plus_fit=plus_fit, minus_fit=minus_fit, warnings=warnings)


def rule_of_thumb_bandwidth(x, order: int, target: str = "mean",
                            constant: float = RULE_OF_THUMB_CONSTANT) -> float:
    """
    经验带宽 h = c·σ̂_X·n^(-1/rate)·n^(-0.05)

    均值估计 rate = 2l+3，密度估计 rate = 2p+1；额外的 n^(-0.05) 用于欠光滑。
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise DegenerateSample(f"样本量 {n} 不足以计算经验带宽")
    sigma = float(np.std(x, ddof=1))
    if not sigma > 0:
        raise DegenerateSample("驱动变量没有变化，无法计算经验带宽")
    rate = 2 * order + 3 if target == "mean" else 2 * order + 1
    return constant * sigma * n ** (-1.0 / rate) * n ** (-UNDERSMOOTHING_EXPONENT)
