"""统计量向量的联合协方差估计

协变量跳跃部分用最近邻方差估计，密度跳跃部分用 jackknife 方差估计，
两块按块对角拼接（交叉项固定为 0）。
"""
import logging
from concurrent import futures
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from boundary_estimators import BoundaryFit
from errors import DegenerateSample, InsufficientNeighbors, LengthMismatch
from kernel_design import KernelKind, Side, side_design, side_gram, side_mask

logger = logging.getLogger("Covariance")

DEFAULT_NEIGHBORS = 3
JACKKNIFE_CHUNK_ROWS = 1024


@dataclass(frozen=True)
class CovarianceEstimate:
    """V̂ = diag(V̂_Z, V̂_f)"""
    v: np.ndarray
    vz: np.ndarray
    vf: float
    neighbors_M: int = DEFAULT_NEIGHBORS
    orders: Tuple[int, int] = (2, 3)
    bandwidths: Tuple[float, ...] = ()
    provenance: Dict[str, str] = field(default_factory=lambda: {
        "vz": "nearest_neighbor", "vf": "jackknife", "cross": "zero"})

    @property
    def dim(self) -> int:
        return int(self.v.shape[0])


def _nearest_exhaustive(x_side: np.ndarray, i: int, M: int) -> np.ndarray:
    """对单个单元做穷举最近邻搜索，距离相同时取较小下标"""
    candidates = np.delete(np.arange(x_side.shape[0]), i)
    dist = np.abs(x_side[candidates] - x_side[i])
    order = np.lexsort((candidates, dist))
    return candidates[order[:M]]


def nearest_neighbors(x_side: np.ndarray, M: int) -> np.ndarray:
    """
    同侧每个单元的 M 个最近邻（不含自身）

    Args:
        x_side: 同侧单元的驱动变量，按原始顺序排列
        M: 近邻个数

    Returns:
        形状 (m, M) 的下标矩阵，下标指向 x_side
    """
    x_side = np.asarray(x_side, dtype=float)
    m = x_side.shape[0]
    if m - 1 < M:
        raise InsufficientNeighbors(f"同侧只有 {m} 个单元，不足 {M} 个近邻")

    order = np.lexsort((np.arange(m), x_side))
    xs = x_side[order]
    offsets = np.concatenate([np.arange(-M, 0), np.arange(1, M + 1)])
    pos = np.arange(m)[:, None] + offsets[None, :]
    valid = (pos >= 0) & (pos < m)
    pos = np.clip(pos, 0, m - 1)
    dist = np.where(valid, np.abs(xs[pos] - xs[:, None]), np.inf)
    cand = np.where(valid, order[pos], m)
    rank = np.lexsort((cand, dist), axis=-1)[:, :M]
    chosen_sorted = np.take_along_axis(cand, rank, axis=1)
    d_m = np.take_along_axis(dist, rank[:, -1:], axis=1)[:, 0]

    neighbors = np.empty((m, M), dtype=int)
    neighbors[order] = chosen_sorted

    # 窗口边缘距离等于第 M 近距离时，窗口外可能有下标更小的并列单元
    edge_tie = (valid[:, 0] & (dist[:, 0] == d_m)) | (valid[:, -1] & (dist[:, -1] == d_m))
    for position in np.flatnonzero(edge_tie):
        unit = order[position]
        neighbors[unit] = _nearest_exhaustive(x_side, unit, M)
    return neighbors


def nn_sigma_pair(x, zj, zk, i: int, side: Side, M: int = DEFAULT_NEIGHBORS) -> float:
    """
    单元 i 处条件协方差的最近邻估计
    (M/(M+1))·(zj_i - 近邻均值)·(zk_i - 近邻均值)
    """
    x = np.asarray(x, dtype=float)
    zj = np.asarray(zj, dtype=float)
    zk = np.asarray(zk, dtype=float)
    if not (x.shape == zj.shape == zk.shape):
        raise LengthMismatch("x、zj、zk 长度不一致")
    members = np.flatnonzero(side_mask(x, side))
    location = np.flatnonzero(members == i)
    if location.size == 0:
        raise ValueError(f"单元 {i} 不在 {Side(side).value} 侧")
    if members.shape[0] - 1 < M:
        raise InsufficientNeighbors(f"同侧只有 {members.shape[0] - 1} 个其他单元，不足 {M} 个近邻")
    nbr = members[_nearest_exhaustive(x[members], int(location[0]), M)]
    return M / (M + 1.0) * (zj[i] - zj[nbr].mean()) * (zk[i] - zk[nbr].mean())


def nn_residuals(x: np.ndarray, Z: np.ndarray, side: Side, M: int) -> np.ndarray:
    """同侧单元的 z_i 减去近邻均值，其他行为 0"""
    members = np.flatnonzero(side_mask(x, side))
    resid = np.zeros_like(Z, dtype=float)
    if Z.shape[1] == 0:
        return resid
    neighbors = nearest_neighbors(x[members], M)
    Z_side = Z[members]
    resid[members] = Z_side - Z_side[neighbors].mean(axis=1)
    return resid


def covariance_block_Z(x, Z, h: Sequence[float], l: int = 2, M: int = DEFAULT_NEIGHBORS,
                       kind: KernelKind = KernelKind.TRIANGULAR) -> np.ndarray:
    """
    协变量跳跃的 d×d 协方差块 V̂_Z = Ĉ₊ + Ĉ₋

    Raises:
        SingularDesign: 某侧设计矩阵奇异
        InsufficientNeighbors: 同侧单元不足 M+1 个
    """
    x = np.asarray(x, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z.reshape(-1, 1)
    n, d = Z.shape
    if x.shape[0] != n:
        raise LengthMismatch(f"x 长度 {x.shape[0]} 与 Z 行数 {n} 不一致")
    h = np.asarray(h, dtype=float)
    if h.shape != (d,):
        raise LengthMismatch(f"带宽个数 {h.shape} 与协变量个数 {d} 不一致")

    vz = np.zeros((d, d))
    if d == 0:
        return vz
    for side in (Side.RIGHT, Side.LEFT):
        resid = nn_residuals(x, Z, side, M)
        A = np.zeros((n, d))
        for k in range(d):
            gram = side_gram(x, h[k], side, l, kind)
            basis, weights = side_design(x, h[k], side, l, kind)
            A[:, k] = np.sqrt(h[k]) * (basis @ gram.inverse_row(0)) * weights * resid[:, k]
        vz += M / (M + 1.0) * (A.T @ A) / n
    return 0.5 * (vz + vz.T)


def _jackknife_side_variance(x: np.ndarray, h_f: float, p: int, kind: KernelKind,
                             fit: BoundaryFit, chunk_rows: int, workers: int) -> float:
    side = fit.side
    n = x.shape[0]
    on_side = side_mask(x, side)
    if np.count_nonzero(on_side) < 2:
        raise DegenerateSample(f"{side.value} 侧观测少于 2 个，无法构造成对项")

    basis, weights = side_design(x, h_f, side, p, kind)
    beta = np.array(fit.beta, dtype=float)
    if side is Side.RIGHT:
        # 截距改为对应单侧累积分布 n^{-1}Σ 1{X_j>=0}1[X_j<=X_i]，斜率不变
        beta[0] -= np.count_nonzero(~on_side) / n
    fitted = basis @ (beta * h_f ** np.arange(p + 1))

    support = np.flatnonzero(weights > 0)
    rk = basis[support] * weights[support, None]
    x_support = x[support]
    total = rk.T @ fitted[support]
    counts = np.searchsorted(np.sort(x[on_side]), x, side="right") - on_side
    own = basis * (weights * fitted)[:, None]
    first = basis * (weights * (counts - (n - 1) * fitted))[:, None]

    row_sums = np.empty((n, p + 1))

    def fill(start: int):
        stop = min(start + chunk_rows, n)
        rows = np.arange(start, stop)
        pair = (x[rows, None] <= x_support[None, :]) & (rows[:, None] != support[None, :])
        pair &= on_side[rows, None]
        second = pair.astype(float) @ rk - total[None, :] + own[rows]
        row_sums[rows] = first[rows] + second

    starts = range(0, n, chunk_rows)
    if workers > 1 and n > chunk_rows:
        with futures.ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for start in starts:
            fill(start)

    row_avg = row_sums / (n - 1)
    grand = 2.0 / (n * (n - 1)) * row_sums.sum(axis=0)
    psi = row_avg.T @ row_avg / n - np.outer(grand, grand)
    e1_gamma = fit.gram.inverse_row(1)
    # Γ、Ψ 都在 h_f 缩放坐标下，除以 h_f 得到 √(n·h_f)·f̂ 的方差
    return float(e1_gamma @ psi @ e1_gamma) / h_f


def jackknife_variance_f(x, h_f: float, p: int, kind: KernelKind,
                         fit_plus: BoundaryFit, fit_minus: BoundaryFit,
                         chunk_rows: int = JACKKNIFE_CHUNK_ROWS, workers: int = 1) -> float:
    """
    密度跳跃的 jackknife 方差 v̂f = v̂f₊ + v̂f₋

    成对项按行分块计算，分块边界与线程数无关，结果对线程数逐位稳定。

    Raises:
        DegenerateSample: 某侧观测少于 2 个
    """
    x = np.asarray(x, dtype=float)
    if fit_plus.side is not Side.RIGHT or fit_minus.side is not Side.LEFT:
        raise ValueError("fit_plus 必须是右侧拟合，fit_minus 必须是左侧拟合")
    vf_plus = _jackknife_side_variance(x, h_f, p, kind, fit_plus, chunk_rows, workers)
    vf_minus = _jackknife_side_variance(x, h_f, p, kind, fit_minus, chunk_rows, workers)
    logger.debug(f"jackknife 方差: 右侧 {vf_plus:.6g}, 左侧 {vf_minus:.6g} (h_f={h_f:.4g}, workers={workers})")
    return vf_plus + vf_minus


def assemble_V(vz, vf: float, neighbors_M: int = DEFAULT_NEIGHBORS,
               orders: Tuple[int, int] = (2, 3),
               bandwidths: Sequence[float] = ()) -> CovarianceEstimate:
    """按块对角拼接，不检查正定性"""
    vz = np.asarray(vz, dtype=float)
    vz = np.atleast_2d(vz) if vz.size else np.zeros((0, 0))
    if vz.shape[0] != vz.shape[1]:
        raise LengthMismatch(f"vz 必须是方阵: {vz.shape}")
    d = vz.shape[0]
    v = np.zeros((d + 1, d + 1))
    v[:d, :d] = vz
    v[d, d] = float(vf)
    return CovarianceEstimate(v=v, vz=vz, vf=float(vf), neighbors_M=neighbors_M,
                              orders=tuple(orders), bandwidths=tuple(float(b) for b in bandwidths))
